import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubble_toolkit.config import (
    ConfigError, ShapeError, atom_arrays, build_config, config_from_dict, dumps,
    lattice_points, loads, min_center_distance, q_bounds, validate,
)


def test_n4_scalings():
    cfg = build_config(4, 10, q=2.5, delta=0.1)
    assert cfg.lam[0] == pytest.approx(1e-2, rel=1e-15)
    assert cfg.tau[0] == pytest.approx(10 ** (-1 / 3), rel=1e-15)
    assert cfg.R[0] == pytest.approx(math.sqrt(1 - 1e-4), rel=1e-15)
    assert cfg.p == 3.0 and cfg.gamma == 2.0


def test_n3_scalings():
    cfg = build_config(3, 10)
    assert cfg.lam[0] == pytest.approx(1.8861e-3, rel=1e-4)
    assert cfg.lam[0] == pytest.approx(1 / (100 * math.log(10) ** 2), rel=1e-15)
    # 1/sqrt(ln 10) = 0.659010...; the commonly quoted 0.65904 is a rounding slip
    assert cfg.tau[0] == pytest.approx(0.659010, abs=1e-6)


def test_q_ranges():
    build_config(4, 10, q=3.5)
    with pytest.raises(ConfigError, match="strict"):
        build_config(4, 10, q=3.5, strict_q=True)
    assert q_bounds(4, True) == pytest.approx((2.0, 3.0))
    with pytest.raises(ConfigError, match=r"\(2.0, 4.0\)"):
        build_config(4, 10, q=4.5)


@pytest.mark.parametrize("kw", [dict(n=2, k=4), dict(n=4, k=1), dict(n=4, k=8, ell=(200.0,)),
                                dict(n=4, k=8, t=(0.001,)), dict(n=4, k=8, delta=0.0),
                                dict(n=4, k=8, pattern="triple")])
def test_out_of_range_rejected(kw):
    with pytest.raises(ConfigError):
        build_config(**kw)


def test_shape_errors():
    with pytest.raises(ShapeError):
        build_config(4, 8, pattern="double", ell=(1.0, 2.0))
    with pytest.raises(ShapeError):
        build_config(4, 8, pattern="odd", m=1, ell=(1.0,), t=(1.0,))
    build_config(4, 8, pattern="odd", m=1, ell=(1.0, 1.0), t=(1.0,))
    build_config(4, 8, pattern="even", m=2, ell=(1.0, 2.0), t=(1.0, 0.5))


def test_k2_double_lattice():
    cfg = build_config(3, 2, t=(0.5,))  # t = 1 puts tau = 1/sqrt(ln 2) above 1
    R, tau = cfg.R[0], cfg.tau[0]
    atoms = lattice_points(cfg)
    assert len(atoms) == 5
    rho = R * math.sqrt(1 - tau**2)
    np.testing.assert_allclose(atoms[1].center, (rho, 0, R * tau), atol=1e-15)
    np.testing.assert_allclose(atoms[2].center, (-rho, 0, R * tau), atol=1e-15)
    np.testing.assert_allclose(atoms[3].center, (rho, 0, -R * tau), atol=1e-15)
    assert atoms[0].sign == 1 and atoms[0].scale == 1.0
    assert all(a.sign == -1 for a in atoms[1:])


def test_odd_pattern_count_and_scales():
    cfg = build_config(4, 3, pattern="odd", m=1, ell=(1.0, 2.0), t=(1.0,))
    atoms = lattice_points(cfg)
    assert len(atoms) == 10
    assert all(a.scale == cfg.mu for a in atoms[1:4])
    assert all(a.scale == cfg.lam[0] for a in atoms[4:])


@pytest.mark.parametrize("pattern,kw", [("double", {}), ("even", dict(m=2, ell=(1, 2), t=(1, 0.5))),
                                        ("odd", dict(m=1, ell=(0.5, 1), t=(1,)))])
def test_kelvin_compatibility(pattern, kw):
    s, c, a = atom_arrays(build_config(4, 7, pattern=pattern, **kw))
    r2 = (c[1:] ** 2).sum(axis=1) + a[1:] ** 2
    np.testing.assert_allclose(r2, 1.0, atol=1e-14)


def test_rotation_and_reflection_permute_centers():
    cfg = build_config(4, 9)
    _, c, _ = atom_arrays(cfg)
    th = 2 * math.pi / 9
    Q = np.eye(4)
    Q[:2, :2] = [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
    for M in (Q, np.diag([1.0, 1.0, -1.0, 1.0])):
        img = c[1:] @ M.T
        d = np.linalg.norm(img[:, None, :] - c[None, 1:, :], axis=2)
        assert d.min(axis=1).max() < 1e-14


def test_validate_reports():
    cfg = build_config(4, 10)
    assert all(d.passed for d in validate(cfg) if d.kind == "invariant")
    object.__setattr__(cfg, "R", (cfg.R[0] + 1e-9,))
    bad = [d for d in validate(cfg) if not d.passed]
    assert any("R_1" in d.name and d.measured > 1e-12 for d in bad)
    small = validate(build_config(3, 2, t=(0.5,)))
    assert any(d.kind == "warning" and not d.passed for d in small)
    assert not validate(object())[0].passed  # never raises


def test_delta_shrinks_with_warning():
    with pytest.warns(UserWarning, match="shrinking delta"):
        cfg = build_config(4, 8, delta=5.0)
    assert cfg.delta_eff / cfg.k < 0.5 * min_center_distance(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert build_config(4, 8).delta_eff == 0.1


def test_config_file_keys():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"n": 4, "k": 8, "colour": 1})
    with pytest.raises(ConfigError, match="malformed"):
        loads("{not json")
    with pytest.raises(ConfigError, match="missing"):
        config_from_dict({"n": 4})


@given(n=st.integers(3, 6), k=st.integers(8, 200),
       ell=st.floats(0.05, 5.0), t=st.floats(0.05, 1.5), q_frac=st.floats(0.05, 0.95),
       pattern=st.sampled_from(["double", "even", "odd"]))
def test_serialization_roundtrip(n, k, ell, t, q_frac, pattern):
    lo, hi = q_bounds(n, False)
    kw = dict(ell=(ell,), t=(t,))
    if pattern == "odd":
        kw = dict(ell=(ell, ell), t=(t,), m=1)
    elif pattern == "even":
        kw["m"] = 1
    try:
        cfg = build_config(n, k, pattern=pattern, q=lo + q_frac * (hi - lo), **kw)
    except ConfigError:
        return  # derived tau or lambda outside (0, 1) for this draw
    again = loads(dumps(cfg))
    assert again == cfg
    assert json.loads(dumps(again)) == json.loads(dumps(cfg))


@given(k1=st.integers(8, 10_000), k2=st.integers(8, 10_000), ell=st.floats(0.05, 5.0))
def test_scale_invariants(k1, k2, ell):
    a, b = build_config(4, k1, ell=(ell,)), build_config(4, k2, ell=(ell,))
    assert a.lam[0] * k1**2 == pytest.approx(b.lam[0] * k2**2, rel=1e-13)
    a, b = build_config(3, k1, ell=(ell,), t=(0.5,)), build_config(3, k2, ell=(ell,), t=(0.5,))
    assert a.lam[0] * (k1 * math.log(k1)) ** 2 == pytest.approx(b.lam[0] * (k2 * math.log(k2)) ** 2,
                                                                rel=1e-13)
