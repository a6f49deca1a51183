"""Closed-form bubbles, the signed multi-bubble ansatz and derived fields.

All evaluators accept a single point of shape ``(n,)`` or a batch of shape
``(N, n)`` and return a scalar / ``(N,)`` array (gradients: ``(n,)`` /
``(N, n)``).  Nothing here uses numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ProblemConfig, atom_arrays

_CHUNK = 4096


def _as_batch(y) -> tuple[np.ndarray, bool]:
    a = np.asarray(y, dtype=float)
    if a.ndim == 1:
        return a[None, :], True
    return a, False


def _unbatch(v: np.ndarray, single: bool):
    return v[0] if single else v


def _power(base: np.ndarray, n: int, numerator: int) -> np.ndarray:
    """``base ** (numerator/2)`` with integer powers and one sqrt when possible."""
    if numerator % 2 == 0:
        return base ** (numerator // 2)
    return np.sqrt(base) * base ** (numerator // 2)


def bubble(y, alpha: float = 1.0, y0=None):
    """Scaled and translated standard bubble ``alpha^{-(n-2)/2} U((y - y0)/alpha)``."""
    if not alpha > 0:
        raise ValueError(f"bubble scale must be positive, got {alpha}")
    Y, single = _as_batch(y)
    n = Y.shape[1]
    c = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float)
    d2 = ((Y - c) ** 2).sum(axis=1)
    base = 2.0 * alpha / (alpha * alpha + d2)
    return _unbatch(_power(base, n, n - 2), single)


def bubble_grad(y, alpha: float = 1.0, y0=None):
    if not alpha > 0:
        raise ValueError(f"bubble scale must be positive, got {alpha}")
    Y, single = _as_batch(y)
    n = Y.shape[1]
    c = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float)
    z = Y - c
    den = alpha * alpha + (z**2).sum(axis=1)
    val = _power(2.0 * alpha / den, n, n - 2)
    g = (-(n - 2) * val / den)[:, None] * z
    return _unbatch(g, single)


class ScalarField:
    """An evaluatable real function on R^n with an analytic gradient.

    ``kelvin_weight`` is the homogeneity ``w`` of the Kelvin covariance
    ``f(y) = |y|^w f(y/|y|^2)`` when the field has one (``2-n`` for the
    ansatz, ``-(n+2)`` for its error), otherwise ``None``.
    """

    def __init__(
        self,
        n: int,
        value: Callable[[np.ndarray], np.ndarray],
        grad: Callable[[np.ndarray], np.ndarray] | None = None,
        kind: str = "field",
        kelvin_weight: float | None = None,
        description: str = "",
    ) -> None:
        self.n = n
        self._value = value
        self._grad = grad
        self.kind = kind
        self.kelvin_weight = kelvin_weight
        self.description = description

    def __call__(self, y):
        Y, single = _as_batch(y)
        return _unbatch(self._value(Y), single)

    def value(self, y):
        return self(y)

    def gradient(self, y):
        if self._grad is None:
            raise NotImplementedError(f"field {self.kind!r} has no analytic gradient")
        Y, single = _as_batch(y)
        return _unbatch(self._grad(Y), single)

    @property
    def has_gradient(self) -> bool:
        return self._grad is not None

    def scaled(self, c: float) -> "ScalarField":
        g = None if self._grad is None else (lambda Y: c * self._grad(Y))
        return ScalarField(self.n, lambda Y: c * self._value(Y), g, self.kind,
                           self.kelvin_weight, f"{c}*{self.description}")

    def __repr__(self) -> str:
        return f"ScalarField(kind={self.kind!r}, n={self.n}, {self.description})"


@dataclass(frozen=True)
class AtomSet:
    """Vectorized lattice: signs, centers and scales of all bubbles."""

    n: int
    signs: np.ndarray
    centers: np.ndarray
    scales: np.ndarray

    @classmethod
    def from_config(cls, cfg: ProblemConfig) -> "AtomSet":
        s, c, a = atom_arrays(cfg)
        return cls(cfg.n, s, c, a)

    @classmethod
    def single(cls, n: int) -> "AtomSet":
        return cls(n, np.ones(1), np.zeros((1, n)), np.ones(1))

    def __len__(self) -> int:
        return len(self.signs)

    def terms(self, Y: np.ndarray, grad: bool = False, power: bool = False):
        """Per-atom bubble values ``(N, M)`` and optionally gradients / p-th powers.

        Returns ``(val, dval, powv)`` where ``dval`` is ``(N, M, n)`` or None
        and ``powv = val**p`` (or None).
        """
        n = self.n
        z = Y[:, None, :] - self.centers[None, :, :]
        s = self.scales[None, :]
        den = s * s + np.einsum("ijk,ijk->ij", z, z)
        base = 2.0 * s / den
        val = _power(base, n, n - 2)
        dval = None
        if grad:
            dval = (-(n - 2) * val / den)[:, :, None] * z
        powv = _power(base, n, n + 2) if power else None
        return val, dval, powv

    def value(self, Y: np.ndarray) -> np.ndarray:
        out = np.empty(len(Y))
        for a in range(0, len(Y), _CHUNK):
            val, _, _ = self.terms(Y[a:a + _CHUNK])
            out[a:a + _CHUNK] = val @ self.signs
        return out

    def gradient(self, Y: np.ndarray) -> np.ndarray:
        out = np.empty(Y.shape)
        for a in range(0, len(Y), _CHUNK):
            _, dval, _ = self.terms(Y[a:a + _CHUNK], grad=True)
            out[a:a + _CHUNK] = np.einsum("ijk,j->ik", dval, self.signs)
        return out

    def field(self, kind: str = "ansatz") -> ScalarField:
        return ScalarField(self.n, self.value, self.gradient, kind, 2.0 - self.n,
                           f"{len(self)} signed bubbles")


def standard_bubble(n: int) -> ScalarField:
    return AtomSet.single(n).field("bubble")


def ansatz(cfg: ProblemConfig) -> ScalarField:
    """Central positive bubble minus all satellite bubbles of the lattice."""
    return AtomSet.from_config(cfg).field("ansatz")


def kelvin_pullback(field, y, weight: float | None = None):
    """``|y|^w field(y/|y|^2)`` with ``w = 2-n`` unless given."""
    Y, single = _as_batch(y)
    r2 = (Y**2).sum(axis=1)
    if np.any(r2 == 0.0):
        raise ValueError("Kelvin transform is undefined at the origin")
    n = Y.shape[1]
    w = (2.0 - n) if weight is None else weight
    vals = np.asarray(field(Y / r2[:, None]), dtype=float)
    return _unbatch(r2 ** (0.5 * w) * vals, single)


def kernel_Z(alpha: int, y, n: int | None = None):
    """Kernel element ``Z_alpha`` of the linearization around the standard bubble."""
    Y, single = _as_batch(y)
    n = Y.shape[1] if n is None else n
    if not 1 <= alpha <= n + 1:
        raise IndexError(f"kernel index must lie in 1..{n + 1}, got {alpha}")
    r2 = (Y**2).sum(axis=1)
    U = _power(2.0 / (1.0 + r2), n, n - 2)
    if alpha <= n:
        out = -(n - 2) * Y[:, alpha - 1] / (1.0 + r2) * U
    else:
        out = 0.5 * (n - 2) * U * (1.0 - r2) / (1.0 + r2)
    return _unbatch(out, single)


def kernel_Z_scaled(alpha: int, y, scale: float, center):
    """``scale^{-(n-2)/2} Z_alpha((y - center)/scale)``."""
    Y, single = _as_batch(y)
    n = Y.shape[1]
    z = (Y - np.asarray(center, dtype=float)) / scale
    return _unbatch(scale ** (-0.5 * (n - 2)) * kernel_Z(alpha, z, n), single)


def kernel_Z_field(alpha: int, n: int, scale: float = 1.0, center=None) -> ScalarField:
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    return ScalarField(n, lambda Y: kernel_Z_scaled(alpha, Y, scale, c), None,
                       "kernel", None, f"Z_{alpha} scale={scale}")


def rank_count(n: int) -> int:
    return 4 * n - 2


def maximal_rank(n: int) -> int:
    return 2 * n + 1 + n * (n - 1) // 2


def rank_index_table(n: int) -> list[tuple[str, int, int]]:
    """Description ``(family, a, b)`` of each rank function ``z_0 .. z_{4n-3}``.

    Families: ``dil`` (z_0), ``trans`` (a = alpha), ``kelv`` (a = alpha),
    ``rot`` (a < b: ``-y_b z_a + y_a z_b``).
    """
    table: list[tuple[str, int, int]] = [("dil", 0, 0)]
    table += [("trans", a, 0) for a in range(1, n + 1)]
    table += [("kelv", a, 0) for a in (1, 2, 3)]
    for first in (1, 2, 3):
        table += [("rot", first, b) for b in range(first + 1, n + 1)]
    assert len(table) == 4 * n - 2
    return table


def rank_functions(u: ScalarField, Y: np.ndarray) -> np.ndarray:
    """All ``4n-2`` rank functions of ``u`` at the points ``Y``; shape ``(N, 4n-2)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[1]
    val = np.asarray(u(Y))
    g = np.asarray(u.gradient(Y))
    z0 = 0.5 * (n - 2) * val + (g * Y).sum(axis=1)
    r2 = (Y**2).sum(axis=1)
    cols = []
    for fam, a, b in rank_index_table(n):
        if fam == "dil":
            cols.append(z0)
        elif fam == "trans":
            cols.append(g[:, a - 1])
        elif fam == "kelv":
            cols.append(-2.0 * Y[:, a - 1] * z0 + r2 * g[:, a - 1])
        else:
            cols.append(-Y[:, b - 1] * g[:, a - 1] + Y[:, a - 1] * g[:, b - 1])
    return np.stack(cols, axis=1)


def rank_function(u, j: int, y):
    """Rank function ``z_j`` (``0 <= j <= 4n-3``) of a field or configuration."""
    if isinstance(u, ProblemConfig):
        u = ansatz(u)
    Y, single = _as_batch(y)
    n = Y.shape[1]
    if not 0 <= j < 4 * n - 2:
        raise IndexError(f"rank function index must lie in 0..{4 * n - 3}, got {j}")
    return _unbatch(rank_functions(u, Y)[:, j], single)
