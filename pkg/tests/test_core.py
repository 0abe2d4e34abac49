import math

import numpy as np
import pytest

from delayqed.core import (
    LambertSeriesContext,
    SystemParams,
    TimeSeries,
    ValidationError,
    config_to_text,
    lambert_parameter,
    make_params,
    parse_config_text,
    params_from_config,
    resolve_config,
    write_csv,
)


def test_make_params_valid():
    p = make_params(1.0, 0.895, math.pi, 10, 400)
    assert p.gamma == 1.0 and p.tau == 0.895
    assert abs(p.phi - math.pi) < 1e-15
    assert p.n_samples == 400


def test_make_params_coincident():
    p = make_params(1.0, 0.0, 0.0, 10, 400)
    assert p.tau == 0.0 and p.phi == 0.0


@pytest.mark.parametrize("bad", [
    dict(gamma=-1.0), dict(gamma=0.0), dict(tau=-0.5), dict(t_max=0.0),
    dict(t_max=-3.0), dict(n_samples=1), dict(gamma=float("nan")),
    dict(phi=float("inf")),
])
def test_make_params_rejects(bad):
    kw = dict(gamma=1.0, tau=0.5, phi=0.0, t_max=10.0, n_samples=100)
    kw.update(bad)
    with pytest.raises(ValidationError):
        make_params(**kw)


def test_phi_reduced_mod_2pi():
    p = make_params(1.0, 0.5, 5 * math.pi, 10, 100)
    assert abs(p.phi - math.pi) < 1e-12
    p = make_params(1.0, 0.5, -math.pi / 2, 10, 100)
    assert abs(p.phi - 1.5 * math.pi) < 1e-12


def test_phi_pi_index():
    assert make_params(1, 0.5, 0.0, 10, 10).phi_pi_index() == 0
    assert make_params(1, 0.5, math.pi, 10, 10).phi_pi_index() == 1
    assert make_params(1, 0.5, math.pi + 1e-12, 10, 10).phi_pi_index() == 1
    assert make_params(1, 0.5, math.pi / 2, 10, 10).phi_pi_index() is None


def test_lambert_parameter_invariant():
    p = make_params(1.0, 0.895, math.pi, 10, 100)
    r = lambert_parameter(p)
    x = 0.5 * p.gamma * p.tau
    assert abs(abs(r) - x * math.exp(x)) < 1e-14
    assert abs((np.angle(r) - p.phi + math.pi) % (2 * math.pi) - math.pi) < 1e-12
    ctx = LambertSeriesContext.from_params(p)
    ctx.check_matches(p)


def test_config_round_trip(tmp_path):
    cfg = resolve_config({"tau": 0.375, "phi": math.pi, "engine": "oracle",
                          "oracle_dt": 2e-3, "delay_disabled": True, "n_samples": 17})
    text = config_to_text(cfg)
    back = parse_config_text(text)
    full = resolve_config(base=back)
    assert full == cfg
    p1 = params_from_config(cfg)
    p2 = params_from_config(full)
    assert p1 == p2


def test_config_unknown_key_rejected():
    with pytest.raises(ValidationError):
        parse_config_text("gamma = 1.0\nbogus = 3\n")


def test_config_pi_shorthand():
    cfg = parse_config_text("phi = 0.5pi\n")
    assert abs(cfg["phi"] - math.pi / 2) < 1e-15
    cfg = parse_config_text("phi = pi\n")
    assert abs(cfg["phi"] - math.pi) < 1e-15


def test_config_bad_value():
    with pytest.raises(ValidationError):
        parse_config_text("gamma = fast\n")
    with pytest.raises(ValidationError):
        parse_config_text("gamma 1.0\n")


def test_csv_deterministic(tmp_path):
    ts = TimeSeries(times=np.linspace(0, 1, 5),
                    columns={"y": np.arange(5.0)})
    f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(ts, f1)
    write_csv(ts, f2)
    b1, b2 = f1.read_bytes(), f2.read_bytes()
    assert b1 == b2
    assert b1.startswith(b"t,y\n")
    assert b"\r" not in b1
    # 17 significant digits, scientific
    assert b"0.0000000000000000e+00" in b1
