import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubble_toolkit.bubble import (
    AtomSet, ansatz, bubble, bubble_grad, kelvin_pullback, kernel_Z, kernel_Z_scaled,
    maximal_rank, rank_count, rank_function, rank_functions, standard_bubble,
)
from bubble_toolkit.config import atom_arrays, build_config
from bubble_toolkit.error_field import _rotation
from helpers import fd_gradient, fd_laplacian, random_points


def test_bubble_values():
    assert bubble(np.zeros(3)) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert bubble(np.array([1.0, 0, 0, 0])) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        bubble(np.zeros(3), alpha=0.0)
    with pytest.raises(ValueError):
        bubble_grad(np.zeros(3), alpha=-1.0)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_bubble_scaling_identity(n, rng):
    Y = rng.standard_normal((20, n))
    for alpha in (0.1, 0.7, 3.0):
        lhs = bubble(Y, alpha)
        rhs = alpha ** (-(n - 2) / 2) * bubble(Y / alpha)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-14)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_bubble_solves_equation(n, rng):
    Y = rng.uniform(-2, 2, (10, n))
    c = rng.standard_normal(n) * 0.3
    f = lambda X: bubble(X, 0.8, c)
    gamma, p = n * (n - 2) / 4, (n + 2) / (n - 2)
    res = -fd_laplacian(f, Y) - gamma * f(Y) ** p
    assert np.max(np.abs(res) / (gamma * f(Y) ** p)) < 1e-5


def test_ansatz_at_origin():
    for n, k in ((3, 6), (4, 8), (5, 5)):
        cfg = build_config(n, k)
        _, c, a = atom_arrays(cfg)
        h = (n - 2) / 2
        R2 = (c[1:] ** 2).sum(axis=1)
        expect = 2**h - np.sum(a[1:] ** (-h) * (2 / (1 + R2 / a[1:] ** 2)) ** h)
        assert ansatz(cfg)(np.zeros(n)) == pytest.approx(expect, rel=1e-13)


def test_ansatz_negative_at_satellite():
    cfg = build_config(3, 8)
    _, c, _ = atom_arrays(cfg)
    assert ansatz(cfg)(c[1]) < 0


@pytest.mark.parametrize("n,k", [(3, 8), (4, 8)])
def test_ansatz_far_field(n, k):
    cfg = build_config(n, k)
    u = ansatz(cfg)
    y = np.zeros(n)
    y[0], y[-1] = 600.0, 800.0
    assert 1e3 ** (n - 2) * u(y) == pytest.approx(u(np.zeros(n)), rel=1e-2)


def test_kelvin_pullback(rng):
    for n in (3, 4):
        Y = random_points(rng, n, 50)
        U = standard_bubble(n)
        np.testing.assert_allclose(kelvin_pullback(U, Y), U(Y), rtol=1e-14)
        u = ansatz(build_config(n, 8))
        np.testing.assert_allclose(kelvin_pullback(u, Y), u(Y), rtol=1e-12)
        one = lambda X: np.ones(len(X))
        r = np.linalg.norm(Y, axis=1)
        np.testing.assert_allclose(kelvin_pullback(one, Y), r ** (2.0 - n), rtol=1e-14)
        with pytest.raises(ValueError):
            kelvin_pullback(U, np.zeros(n))


@pytest.mark.parametrize("n", [3, 4, 5])
def test_kernel_values_and_parity(n, rng):
    z = np.zeros(n)
    for a in range(1, n + 1):
        assert kernel_Z(a, z) == 0.0
    h = (n - 2) / 2
    assert kernel_Z(n + 1, z) == pytest.approx(h * 2**h, rel=1e-15)
    Y = rng.standard_normal((20, n))
    for a in range(n):
        F = Y.copy()
        F[:, a] *= -1
        np.testing.assert_allclose(kernel_Z(n + 1, F), kernel_Z(n + 1, Y), rtol=1e-14)
    F = Y.copy()
    F[:, 2] *= -1
    np.testing.assert_allclose(kernel_Z(3, F), -kernel_Z(3, Y), rtol=1e-14)
    with pytest.raises(IndexError):
        kernel_Z(n + 2, Y)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_kernel_solves_linearized_equation(n, rng):
    Y = rng.uniform(-1.5, 1.5, (10, n))
    gamma, p = n * (n - 2) / 4, (n + 2) / (n - 2)
    U = bubble(Y)
    for a in range(1, n + 2):
        f = lambda X: kernel_Z(a, X)
        res = fd_laplacian(f, Y) + p * gamma * U ** (p - 1) * f(Y)
        scale = np.max(np.abs(p * gamma * U ** (p - 1) * f(Y))) + 1.0
        assert np.max(np.abs(res)) / scale < 1e-5


def test_scaled_kernel():
    c = np.array([0.3, 0.1, 0.0])
    y = np.array([0.5, -0.2, 0.4])
    assert kernel_Z_scaled(4, y, 0.2, c) == pytest.approx(0.2 ** -0.5 * kernel_Z(4, (y - c) / 0.2))


def test_rank_function_counts():
    assert rank_count(3) == 10 == maximal_rank(3)
    for n in (4, 5, 6):
        assert rank_count(n) < maximal_rank(n)
    with pytest.raises(IndexError):
        rank_function(build_config(3, 4), 10, np.ones(3))


@pytest.mark.parametrize("n", [3, 4])
def test_rank_functions_of_single_bubble(n, rng):
    Y = rng.standard_normal((30, n))
    U = standard_bubble(n)
    Z = rank_functions(U, Y)
    np.testing.assert_allclose(Z[:, 0], kernel_Z(n + 1, Y), rtol=1e-13, atol=1e-15)
    # every rotation generator vanishes for a radial field
    assert np.max(np.abs(Z[:, n + 4:])) < 1e-14


@pytest.mark.parametrize("n,k", [(3, 5), (4, 8)])
def test_ansatz_symmetries(n, k, rng):
    cfg = build_config(n, k)
    u = ansatz(cfg)
    Y = random_points(rng, n, 100)
    v = u(Y)
    np.testing.assert_allclose(u(Y @ _rotation(k, n).T), v, rtol=1e-12, atol=1e-14)
    for a in range(1, n):
        F = Y.copy()
        F[:, a] *= -1
        np.testing.assert_allclose(u(F), v, rtol=1e-12, atol=1e-14)


@given(n=st.integers(3, 5), k=st.integers(3, 12), seed=st.integers(0, 2**31))
def test_gradient_matches_differences(n, k, seed):
    cfg = build_config(n, k)
    atoms = AtomSet.from_config(cfg)
    u = ansatz(cfg)
    rng = np.random.default_rng(seed)
    Y = rng.uniform(-3, 3, (20, n))
    Y = Y[np.linalg.norm(Y, axis=1) <= 3]
    d = np.linalg.norm(Y[:, None, :] - atoms.centers[None, 1:, :], axis=2)
    Y = Y[(d >= 10 * atoms.scales[None, 1:]).all(axis=1)]
    if len(Y) == 0:
        return
    g = u.gradient(Y)
    fd = fd_gradient(u, Y)
    scale = np.linalg.norm(g, axis=1) + np.abs(u(Y)) + 1e-12
    assert np.max(np.linalg.norm(g - fd, axis=1) / scale) < 1e-6
