import csv

import numpy as np
import pytest

from qma import verification as ver
from qma.hkt import assemble_omega_phi
from qma.torus import GridSpec, PeriodicField, random_field


def test_trivial_case():
    case = ver.make_case(1, 4, 0.0)
    assert np.all(case.phi_star.values == 0) and np.all(case.f_star.values == 0)


def test_default_cases_are_positive_and_normalized():
    for n, N, amp in ((1, 8, 0.05), (2, 4, 0.02)):
        case = ver.make_case(n, N, amp)
        assert case.margin > 0
        assert abs(np.exp(case.f_star.values).mean() - 1.0) < 1e-11
        assert abs(case.phi_star.values.mean()) < 1e-15


def test_one_dimensional_margin_estimate():
    # phi = a sin sin has eigenvalue 1 - a (2 pi)^2 / 2 at its worst point
    case = ver.make_case(1, 8, 0.05)
    assert np.isclose(case.margin, 1 - 0.05 * (2 * np.pi) ** 2 / 2, atol=1e-12)


def test_large_amplitude_rejected():
    with pytest.raises(ver.PositivityViolation):
        ver.make_case(1, 8, 1.0)
    with pytest.raises(ValueError):
        ver.make_case(1, 8, 0.01, mode_set=[((9, "sin"),)])


def test_accumulated_sum_matches_assembly(rng):
    phi = random_field(GridSpec(2, 4), rng, amplitude=0.02)
    dense = ver.accumulated_omega_phi(phi)
    omega = assemble_omega_phi(phi)
    for p in range(4):
        for q in range(4):
            assert np.allclose(dense[..., p, q], omega.entry(p, q), atol=1e-14)


def test_identity_suite_small():
    rows = ver.run_identity_suite(1, 4, trials=2, seed=3)
    names = {r.identity for r in rows}
    assert "d^2 [1-form]" in names and "mean Pf(Omega_phi) = 1" in names
    assert all(r.passed for r in rows)


def test_constant_field_has_zero_violations():
    g = GridSpec(1, 4)
    from qma.forms import FormField

    F = FormField.function(PeriodicField.constant(g, 3.0))
    for fn in ver._operator_identities(F).values():
        assert fn().sup_bound() == 0.0


def test_fault_injection_is_caught():
    rows = ver.det_pf_battery((2, 4), trials=5, fault="pf_sign_flip")
    failed = {r.identity for r in rows if not r.passed}
    assert "pfaffian_normalization" in failed
    suite = ver.run_identity_suite(1, 4, trials=1, fault="pf_sign_flip")
    assert [r.identity for r in suite if not r.passed] == ["mean Pf(Omega_phi) = 1"]


def test_batteries_pass():
    assert all(r.passed for r in ver.det_pf_battery((2, 4, 6), trials=20))
    assert all(r.passed for r in ver.pf_calculus_battery(trials=10))
    cases = ver.route_cases(seed=1, count=2)
    assert all(r.passed for r in ver.route_battery(cases))
    assert all(r.passed for r in ver.linearization_battery(1, 6, trials=1))


def test_linearization_check_zero_direction(rng):
    g = GridSpec(1, 6)
    phi = random_field(g, rng, amplitude=0.01)
    assert ver.finite_difference_linearization_check(phi, PeriodicField(g, np.zeros(g.shape))) == 0.0


def test_flat_linearization_taylor_remainder(rng):
    # at phi = 0 the discrepancy is a pure O(eps^2) Taylor remainder
    g = GridSpec(1, 6)
    zero = PeriodicField(g, np.zeros(g.shape))
    psi = random_field(g, rng, kmax=1, amplitude=0.05)
    e1 = ver.finite_difference_linearization_check(zero, psi, eps=1e-2)
    e2 = ver.finite_difference_linearization_check(zero, psi, eps=5e-3)
    assert 3.0 < e1 / e2 < 5.0


def test_results_csv(tmp_path):
    rows = [ver.CheckResult("a", 1e-12, 1e-10), ver.CheckResult("b", 1.0, 1e-10)]
    path = tmp_path / "v.csv"
    ver.write_results_csv(rows, path)
    with open(path, newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0][:2] == ["identity", "max_violation"]
    assert [r[0] for r in got[1:]] == ["a", "b"]
    text = ver.format_results(rows)
    assert "FAIL" in text and "ok" in text
