"""Finite-difference oracles shared by the test modules."""

import numpy as np


def fd_gradient(f, Y, h=1e-4):
    Y = np.atleast_2d(Y)
    out = np.empty_like(Y)
    for a in range(Y.shape[1]):
        e = np.zeros(Y.shape[1])
        e[a] = h
        out[:, a] = (f(Y + e) - f(Y - e)) / (2 * h)
    return out


def fd_laplacian(f, Y, h=1e-3):
    Y = np.atleast_2d(Y)
    f0 = f(Y)
    out = np.zeros(len(Y))
    for a in range(Y.shape[1]):
        e = np.zeros(Y.shape[1])
        e[a] = h
        out += (f(Y + e) - 2 * f0 + f(Y - e)) / h**2
    return out


def random_points(rng, n, count, rmin=0.2, rmax=5.0):
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * np.exp(rng.uniform(np.log(rmin), np.log(rmax), count))[:, None]
