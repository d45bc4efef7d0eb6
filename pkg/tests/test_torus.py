import struct

import numpy as np
import pytest

from qma.torus import (
    FieldFormatError, GridSpec, PeriodicField, crf_d, crf_dbar, d_real, d_z, d_zbar,
    dealiased_product, laplacian, mixed_hessian, project_band, random_field, read_field,
    solve_quarter_laplacian, write_field,
)

TWO_PI = 2 * np.pi


def trig(grid, fn):
    return PeriodicField.from_function(grid, fn)


def test_grid_validation():
    for bad in [(0, 8), (1, 3), (1, 7), (1, 2)]:
        with pytest.raises(ValueError):
            GridSpec(*bad)
    g = GridSpec(1, 8)
    assert g.dim == 4 and g.shape == (8,) * 4 and g.size == 8**4


def test_real_derivative_of_trig_polynomial():
    g = GridSpec(1, 8)
    f = trig(g, lambda x: np.sin(TWO_PI * 2 * x[0]) * np.cos(TWO_PI * x[3]))
    ref = TWO_PI * 2 * np.cos(TWO_PI * 2 * g.coords(0)) * np.cos(TWO_PI * g.coords(3))
    assert np.allclose(d_real(f, 0).values, np.broadcast_to(ref, g.shape), atol=1e-12)
    assert d_real(f, 0).real


def test_nyquist_mode_has_zero_derivative():
    g = GridSpec(1, 8)
    f = trig(g, lambda x: np.cos(np.pi * 8 * x[1]) + 0 * x[0])
    assert np.max(np.abs(d_real(f, 1).values)) < 1e-12
    assert np.max(np.abs(project_band(f).values)) < 1e-12


def test_holomorphic_derivatives_match_real_combinations(rng):
    g = GridSpec(1, 6)
    f = random_field(g, rng)
    D = [d_real(f, a).values for a in range(4)]
    assert np.allclose(d_z(f, 0).values, 0.5 * (D[0] - 1j * D[1]), atol=1e-10)
    assert np.allclose(d_z(f, 1).values, 0.5 * (D[2] + 1j * D[3]), atol=1e-10)
    assert np.allclose(d_zbar(f, 0).values, 0.5 * (D[0] + 1j * D[1]), atol=1e-10)
    assert np.allclose(d_zbar(f, 1).values, 0.5 * (D[2] - 1j * D[3]), atol=1e-10)


def test_mixed_hessian_single_mode():
    g = GridSpec(1, 8)
    f = trig(g, lambda x: np.sin(TWO_PI * x[0]) * np.sin(TWO_PI * x[1]))
    # phi_{0 0bar} = (D0^2 + D1^2) phi / 4 = -2 (2 pi)^2 phi / 4
    assert np.allclose(mixed_hessian(f, 0, 0).values, -0.5 * TWO_PI**2 * f.values, atol=1e-10)


def test_quarter_laplacian_inverse(rng):
    g = GridSpec(1, 8)
    u = random_field(g, rng)
    back = solve_quarter_laplacian(PeriodicField(g, 0.25 * laplacian(u).values))
    assert np.allclose(back.values, u.values, atol=1e-12)


def _series_on_fine_grid(field, M):
    """Evaluate the trigonometric interpolant of ``field`` on an M-point grid."""
    g = field.grid
    N = g.N
    h = np.array(field.hat)
    k = np.rint(np.fft.fftfreq(N) * N).astype(int)
    x = np.arange(M) / M
    E = np.exp(2j * np.pi * np.outer(k, x))  # (N, M)
    v = h
    for ax in range(g.dim):
        v = np.tensordot(v, E, axes=([0], [0]))
    return v


def test_dealiased_product_matches_fine_grid_quadrature(rng):
    g = GridSpec(1, 8)
    a = random_field(g, rng, kmax=3)
    b = random_field(g, rng, kmax=3)
    M = 4 * g.N
    fine = (_series_on_fine_grid(a, M) * _series_on_fine_grid(b, M)).real
    H = np.fft.fftn(fine) / fine.size
    idx = np.r_[0 : g.N // 2, M - g.N // 2 + 1 : M]  # non-Nyquist band of the coarse grid
    ref = H[np.ix_(idx, idx, idx, idx)]
    got = dealiased_product(a, b).hat
    keep = np.r_[0 : g.N // 2, g.N // 2 + 1 : g.N]
    assert np.max(np.abs(got[np.ix_(keep, keep, keep, keep)] - ref)) < 1e-13


def test_random_field_properties(rng):
    g = GridSpec(1, 8)
    f = random_field(g, rng, kmax=2, amplitude=0.3)
    assert np.isclose(f.sup_norm(), 0.3)
    assert abs(f.mean()) < 1e-15
    k = np.abs(np.rint(np.fft.fftfreq(8) * 8))
    big = np.zeros((8,) * 4, dtype=bool)
    for ax in range(4):
        shape = [1] * 4
        shape[ax] = 8
        big |= (k > 2).reshape(shape)
    assert np.max(np.abs(f.hat[big])) < 1e-15


def test_conjugation_in_both_representations(rng):
    g = GridSpec(1, 6)
    z = d_z(random_field(g, rng), 0)  # complex, coefficient form
    assert np.allclose(z.conj().values, np.conj(z.values), atol=1e-13)


def test_fields_on_different_grids_do_not_mix():
    with pytest.raises(ValueError):
        PeriodicField.constant(GridSpec(1, 4), 1.0) + PeriodicField.constant(GridSpec(1, 6), 1.0)


def test_crf_derivatives_place_units_on_the_correct_side():
    g = GridSpec(1, 8)
    f = trig(g, lambda x: np.sin(TWO_PI * x[1]) + np.sin(TWO_PI * x[2]) + 0 * x[0])
    c1 = np.broadcast_to(TWO_PI * np.cos(TWO_PI * g.coords(1)), g.shape)
    c2 = np.broadcast_to(TWO_PI * np.cos(TWO_PI * g.coords(2)), g.shape)
    dbar = crf_dbar(f, 0).values()
    d = crf_d(f, 0).values()
    assert np.allclose(dbar[..., 1], c1) and np.allclose(dbar[..., 2], c2)
    assert np.allclose(d[..., 1], -c1) and np.allclose(d[..., 2], -c2)
    assert np.allclose(dbar[..., 0], 0) and np.allclose(d[..., 3], 0)


@pytest.mark.parametrize("complex_field", [False, True])
def test_qmaf_round_trip_is_bitwise(tmp_path, rng, complex_field):
    g = GridSpec(1, 6)
    f = random_field(g, rng)
    if complex_field:
        f = d_z(f, 1)
    p = tmp_path / "f.qmaf"
    write_field(p, f)
    back = read_field(p)
    assert back.grid == g and back.real == f.real
    assert back.values.tobytes() == np.ascontiguousarray(f.values).tobytes()
    q = tmp_path / "g.qmaf"
    write_field(q, back)
    assert p.read_bytes() == q.read_bytes()


def test_qmaf_header_layout(tmp_path):
    g = GridSpec(1, 4)
    p = tmp_path / "c.qmaf"
    write_field(p, PeriodicField.constant(g, 2.5))
    raw = p.read_bytes()
    assert raw[:4] == b"QMAF"
    assert struct.unpack_from("<IIIB", raw, 4) == (1, 1, 4, 0)
    assert len(raw) == struct.calcsize("<4sIIIB") + 8 * 4**4


def test_qmaf_rejects_damaged_files(tmp_path):
    g = GridSpec(1, 4)
    good = tmp_path / "ok.qmaf"
    write_field(good, PeriodicField.constant(g, 1.0))
    raw = good.read_bytes()
    cases = {
        "magic": b"XXXX" + raw[4:],
        "version": raw[:4] + struct.pack("<I", 9) + raw[8:],
        "dtype": raw[:16] + bytes([7]) + raw[17:],
        "truncated": raw[:-8],
        "header": raw[:5],
    }
    for name, blob in cases.items():
        p = tmp_path / f"{name}.qmaf"
        p.write_bytes(blob)
        with pytest.raises(FieldFormatError):
            read_field(p)
