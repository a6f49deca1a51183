import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubble_toolkit.bubble import AtomSet, standard_bubble
from bubble_toolkit.config import atom_arrays, build_config
from bubble_toolkit.error_field import error_field, smoothstep
from bubble_toolkit.quadrature import (
    QuadratureSpec, ToleranceNotMet, bubble_energy, bubble_energy_closed_form, composite_gauss,
    energy, integrate, project_on_kernel, radial_integral, refine_until, same_circle_parity,
    self_consistency, sphere_rule, sphere_volume, sup_weighted_norm, weighted_lq_norm,
)
from scipy import integrate as sci_integrate
from scipy.special import beta

COARSE = QuadratureSpec(radial_nodes=3, angular_nodes=3, near_bubble_nodes=4)


@given(deg=st.integers(0, 11), m=st.integers(6, 8))
def test_composite_gauss_exact_on_polynomials(deg, m):
    x, w = composite_gauss([0.0, 0.3, 1.0, 2.5], m)
    assert np.sum(w * x**deg) == pytest.approx(2.5 ** (deg + 1) / (deg + 1), rel=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_sphere_rule_moments(n):
    # Gauss nodes in the polar angles are not exact for sin^k weights; the
    # error must fall quickly with the node count
    area = sphere_volume(n)
    for na, tol in ((4, 5e-3), (16, 1e-10)):
        d, w = sphere_rule(n, na)
        assert np.sum(w) == pytest.approx(area, rel=tol)
        for a in range(n):
            assert np.sum(w * d[:, a] ** 2) == pytest.approx(area / n, rel=tol)
            assert abs(np.sum(w * d[:, a])) < 1e-13


@pytest.mark.parametrize("n", [3, 4])
def test_radial_oracle_for_weighted_norm(n):
    cfg = build_config(n, 8)
    q = cfg.q
    a = n + 2.0 - 2.0 * n / q

    def field(Y):
        r = np.linalg.norm(Y, axis=1)
        return (1.0 + r) ** (-a) * smoothstep(r)

    got = weighted_lq_norm(field, q, cfg)
    ref = (sphere_volume(n) * sci_integrate.quad(lambda r: smoothstep(r) ** q * r ** (n - 1), 0, 2,
                                                 points=[1.0], epsabs=1e-13)[0]) ** (1 / q)
    assert got == pytest.approx(ref, rel=1e-3)


@pytest.mark.parametrize("n", [3, 4])
def test_integral_of_bubble_power_converges(n):
    cfg = build_config(n, 8)
    p = (n + 2) / (n - 2)
    U = standard_bubble(n)
    oracle = radial_integral(lambda r: (2 / (1 + r * r)) ** ((n + 2) / 2), n, 24)
    # closed form: 2^{(n+2)/2} |S| B(n/2, 1) / 2
    assert oracle == pytest.approx(2 ** ((n + 2) / 2) * sphere_volume(n) * beta(n / 2, 1) / 2, rel=1e-8)
    res = refine_until(COARSE, lambda sp: integrate(cfg, lambda X: U(X) ** p, sp), rel_tol=1e-4)
    assert res.achieved and res.value == pytest.approx(oracle, rel=1e-6)


def test_refine_zero_and_borderline():
    cfg = build_config(3, 8)
    z = refine_until(COARSE, lambda sp: integrate(cfg, lambda X: np.zeros(len(X)), sp))
    assert z.value == 0.0 and z.steps == 1
    tail = lambda sp: integrate(cfg, lambda X: (1 + np.linalg.norm(X, axis=1)) ** -3.0, sp)
    with pytest.raises(ToleranceNotMet) as info:
        refine_until(COARSE, tail, rel_tol=1e-6, max_steps=2)
    assert info.value.last > info.value.previous  # the log-divergent tail keeps growing


def test_fundamental_domain_matches_full_domain():
    cfg = build_config(3, 6)
    E = error_field(cfg)
    f = lambda X: np.abs(E(X)) ** cfg.q
    red = integrate(cfg, f)
    full = integrate(cfg, f, invariant=False)
    assert red == pytest.approx(full, rel=2e-3)


def test_norm_monotone_in_region():
    cfg = build_config(4, 8)
    E = error_field(cfg)
    whole = weighted_lq_norm(E, cfg.q, cfg)
    for idx in (1, 5, 9):
        assert weighted_lq_norm(E, cfg.q, cfg, region="interior", atom_index=idx) <= whole


def test_bitwise_determinism_and_threads(monkeypatch):
    cfg = build_config(3, 8)
    E = error_field(cfg)
    a = weighted_lq_norm(E, cfg.q, cfg, COARSE)
    b = weighted_lq_norm(E, cfg.q, cfg, COARSE)
    monkeypatch.setenv("BT_THREADS", "3")
    c = weighted_lq_norm(E, cfg.q, cfg, COARSE)
    assert a == b == c


def test_sup_norm():
    for n in (3, 4):
        r = np.linspace(0, 50, 200001)
        oracle = np.max((1 + r ** (n - 2)) * (2 / (1 + r * r)) ** ((n - 2) / 2))
        got = sup_weighted_norm(standard_bubble(n), n=n).value
        assert got == pytest.approx(oracle, rel=1e-3)
        assert sup_weighted_norm(lambda X: np.zeros(len(X)), n=n).value == 0.0
        U = standard_bubble(n)
        assert sup_weighted_norm(lambda X: -2.5 * U(X), n=n).value == pytest.approx(2.5 * got, rel=1e-15)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_bubble_energy(n):
    assert bubble_energy(n) == pytest.approx(bubble_energy_closed_form(n), rel=1e-12)


def test_energy_self_consistent_and_permutation_invariant():
    cfg = build_config(4, 8)
    a, b, rel = self_consistency(COARSE, lambda sp: energy(cfg, sp))
    assert rel < 1e-3
    s, c, w = atom_arrays(cfg)
    perm = np.r_[0, np.random.default_rng(0).permutation(np.arange(1, len(s)))]
    shuffled = AtomSet(4, s[perm], c[perm], w[perm])
    assert energy(cfg, COARSE, shuffled) == pytest.approx(a, rel=1e-12)


def test_projection_sign_flip():
    cfg = build_config(4, 8)
    E = error_field(cfg)
    neg = E.scaled(-1.0)
    for alpha in (3, 5):
        p = project_on_kernel(cfg, 1, alpha, COARSE)
        m = project_on_kernel(cfg, 1, alpha, COARSE, field=neg)
        assert m.full == -p.full and m.localized == -p.localized
    with pytest.raises(ValueError):
        project_on_kernel(cfg, 1, 2, COARSE)


def test_projection_same_for_every_satellite_of_the_orbit():
    cfg = build_config(4, 8)
    a = project_on_kernel(cfg, 1, 5, COARSE)
    b = project_on_kernel(cfg, 4, 5, COARSE)
    assert a.localized == pytest.approx(b.localized, rel=1e-12)
    up = project_on_kernel(cfg, 1, 3, COARSE)
    down = project_on_kernel(cfg, 1 + cfg.k, 3, COARSE)
    assert up.localized == pytest.approx(-down.localized, rel=1e-12)


@pytest.mark.parametrize("n,k", [(3, 16), (4, 16), (5, 8)])
def test_parity_cancellation(n, k):
    assert same_circle_parity(build_config(n, k)).ratio <= 1e-10
