import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bubble_toolkit.bubble import AtomSet, rank_count, standard_bubble
from bubble_toolkit.config import ConfigError, build_config
from bubble_toolkit.rank_check import (
    RANK_TOL, asymptotic_abc, c_excess_closed_form, gram_matrix, independence_probe,
    jacobi_eigenvalues, numerical_rank, single_bubble_gram,
)


@settings(max_examples=30)
@given(arrays(np.float64, (7, 7), elements=st.floats(-10, 10)))
def test_jacobi_matches_lapack(B):
    A = B + B.T
    ev = jacobi_eigenvalues(A)
    ref = np.linalg.eigvalsh(A)
    assert np.allclose(ev, ref, atol=1e-11 * max(1.0, np.abs(ref).max()))


def test_jacobi_rejects_bad_input():
    with pytest.raises(ValueError):
        jacobi_eigenvalues(np.ones((2, 3)))
    with pytest.raises(ValueError):
        jacobi_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_jacobi_spread_spectrum():
    Q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((10, 10)))
    lam = np.logspace(-12, 0, 10)
    ev = jacobi_eigenvalues(Q @ np.diag(lam) @ Q.T)
    assert np.allclose(ev, lam, rtol=0, atol=1e-14)


def test_numerical_rank_threshold():
    assert numerical_rank([1.0, 2e-8, 5e-9]) == 2
    assert numerical_rank([0.0, 0.0]) == 0
    assert numerical_rank([1.0, 1e-3], tol=1e-2) == 1


@pytest.fixture(scope="module")
def gram_n3k4():
    return gram_matrix(build_config(3, 4))


def test_gram_rank_n3(gram_n3k4):
    g = gram_n3k4
    assert g.dim == rank_count(3) == 10
    assert g.rank == 10 and g.margin >= RANK_TOL
    assert np.allclose(g.eigenvalues, g.eigenvalues_check, atol=1e-12 * g.eigenvalues.max())
    assert np.allclose(g.matrix, g.matrix.T)


def test_gram_rank_invariant_under_rescaling(gram_n3k4):
    scales = np.linspace(0.5, 3.0, 10)
    g = gram_matrix(build_config(3, 4), scales=scales)
    assert g.rank == gram_n3k4.rank
    assert np.allclose(g.matrix, gram_n3k4.matrix * np.outer(scales, scales), rtol=1e-12,
                       atol=1e-13 * g.matrix.max())
    with pytest.raises(ValueError):
        gram_matrix(build_config(3, 4), scales=-np.ones(10))


def test_gram_relabel_invariance(gram_n3k4):
    cfg = build_config(3, 4)
    atoms = AtomSet.from_config(cfg)
    perm = np.random.default_rng(0).permutation(len(atoms))
    shuffled = AtomSet(3, atoms.signs[perm], atoms.centers[perm], atoms.scales[perm])
    g = gram_matrix(cfg, u=shuffled.field())
    assert np.allclose(g.matrix, gram_n3k4.matrix, rtol=1e-10, atol=1e-13)


def test_single_bubble_control():
    g = single_bubble_gram(build_config(3, 4))
    assert g.rank == 4
    assert g.eigenvalues.max() == pytest.approx(np.pi**2 / 4, rel=1e-3)


def test_probe_on_ansatz_and_bubble():
    cfg = build_config(3, 4)
    rep = independence_probe(cfg)
    assert rep.all_nonsingular
    assert rep.coefficients_covered == set(range(10))
    bub = independence_probe(cfg, u=standard_bubble(3))
    assert not {b.name: b for b in bub.blocks}["plane12"].nonsingular


def test_probe_n4_covers_all():
    rep = independence_probe(build_config(4, 8))
    assert rep.all_nonsingular and rep.coefficients_covered == set(range(rank_count(4)))


@pytest.mark.parametrize("radii", [(2.0, 2.0, 5.0), (1.0, 2.0), (-1.0, 2.0, 3.0)])
def test_probe_rejects_radii(radii):
    with pytest.raises(ConfigError):
        independence_probe(build_config(3, 4), radii=radii)


@pytest.mark.parametrize("k", [4, 5, 6])
def test_probe_agrees_with_gram(k):
    cfg = build_config(3, k)
    assert independence_probe(cfg).all_nonsingular == (gram_matrix(cfg).rank == 10)


def test_probe_agrees_with_gram_on_bubble():
    cfg = build_config(3, 4)
    assert not independence_probe(cfg, u=standard_bubble(3)).all_nonsingular
    assert single_bubble_gram(cfg).rank < 10


@pytest.mark.parametrize("n", [3, 4, 5])
def test_far_field_of_bubble(n):
    rep = asymptotic_abc(None, u=standard_bubble(n), n=n)
    assert rep.a == pytest.approx(1.0, rel=1e-2)
    assert rep.b == pytest.approx(2.0, rel=1e-2)
    assert abs(rep.c) < 1e-2
    assert rep.c_far == pytest.approx(2.0, rel=1e-2)


@pytest.mark.parametrize("n,k", [(4, 8), (4, 16), (3, 4)])
def test_c_excess_closed_form(n, k):
    cfg = build_config(n, k)
    rep = asymptotic_abc(cfg)
    assert rep.c_excess == pytest.approx(c_excess_closed_form(cfg), rel=1e-3)
    h = 0.5 * (n - 2)
    assert rep.a == pytest.approx(1 - 2 * k * cfg.lam[0] ** h, rel=1e-2)


def test_far_field_radius_guard():
    with pytest.raises(ConfigError):
        asymptotic_abc(build_config(3, 4), radii=(5.0, 100.0, 1000.0))
    with pytest.raises(ConfigError):
        c_excess_closed_form(build_config(4, 8, pattern="even", m=2, ell=(1.0, 1.0), t=(1.0, 0.5)))
