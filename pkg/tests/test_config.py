import numpy as np
import pytest

from qma.config import ConfigError, build_f, build_sigma, load_config, parse_config, parse_term


def test_defaults_and_comments():
    cfg = parse_config("# nothing but a comment\n\nn = 2   # trailing\n", "solve")
    assert cfg["n"] == 2 and cfg["points_per_axis"] == 6
    assert cfg.grid.N == 6 and cfg["f_term"] == []
    assert parse_config("", "verify")["points_per_axis"] == 16


@pytest.mark.parametrize(
    "text, command, fragment",
    [
        ("bogus = 1", "solve", "unknown key"),
        ("n = 1\nn = 1", "solve", "duplicate"),
        ("trials = 3", "solve", "does not apply"),
        ("f_term = sin 1,0,0,0 0.1", "verify", "does not apply"),
        ("n = zero", "solve", "bad value"),
        ("points_per_axis = 5", "solve", "even"),
        ("no equals sign", "solve", "expected"),
        ("batteries = identities, nope", "verify", "unknown batteries"),
        ("det_sizes = 3", "verify", "even"),
        ("f_term = sin 1,0 0.1", "solve", "4 entries"),
        ("f_term = tan 1,0,0,0 0.1", "solve", "sin or cos"),
        ("f_term = sin 1,0,0,0 0.1\nmanufactured_amplitude = 0.01", "solve", "at most one"),
        ("fault_injection = everything", "verify", "expected one of"),
        ("newton_tol = -1", "solve", "must be > 0"),
    ],
)
def test_rejections(text, command, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text, command)


def test_repeatable_terms_and_field_builders():
    cfg = parse_config("n = 1\npoints_per_axis = 8\nf_term = sin 1,0,0,0 0.2\nf_term = cos 0,1,1,0 0.1",
                       "solve")
    f = build_f(cfg)
    x = [cfg.grid.coords(a) for a in range(4)]
    ref = 0.2 * np.sin(2 * np.pi * x[0]) + 0.1 * np.cos(2 * np.pi * (x[1] + x[2]))
    assert np.allclose(f.values, np.broadcast_to(ref, f.values.shape))
    vol = parse_config("points_per_axis = 8\nsigma_term = cos 1,0,0,0 0.3", "volume")
    assert np.isclose(build_sigma(vol).values.mean(), 1.0)


def test_log1p_form_needs_positive_argument():
    bad = parse_config("points_per_axis = 4\nf_form = log1p\nf_term = cos 1,0,0,0 2.0", "solve")
    with pytest.raises(ConfigError):
        build_f(bad)


def test_solver_overrides_and_paths(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("max_newton = 7\nkrylov_tol = 1e-9\nf_file = data/f.qmaf\n")
    cfg = load_config(p, "solve")
    assert cfg.solver_overrides() == {"max_newton": 7, "krylov_tol": 1e-9}
    assert cfg.resolve(cfg["f_file"]) == tmp_path / "data" / "f.qmaf"


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/run.cfg", "solve")


def test_parse_term():
    assert parse_term("cos 1,0,0,-1 0.5", 1) == ("cos", (1, 0, 0, -1), 0.5)
