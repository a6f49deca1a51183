"""Linear independence of the rank functions ``z_0 .. z_{4n-3}``.

Two routes: the weighted Gram matrix with its eigenvalues, and a
structured-point probe that evaluates the candidate identity
``sum_j c_j z_j = 0`` on point families where most ``z_j`` vanish by
symmetry, leaving small square blocks in a few coefficients each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bubble import ScalarField, ansatz, rank_count, rank_functions, rank_index_table, standard_bubble
from .config import ConfigError, ProblemConfig
from .quadrature import QuadratureSpec, integrate

RANK_TOL = 1e-8


class JacobiError(RuntimeError):
    """The cyclic Jacobi sweep did not reach the off-diagonal target."""


def jacobi_eigenvalues(A, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues (ascending) of a real symmetric matrix by cyclic Jacobi rotations.

    Stops once the off-diagonal Frobenius norm drops below ``tol`` times the
    Frobenius norm of the input.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(A).max(initial=0.0)))):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    m = A.shape[0]
    target = tol * float(np.linalg.norm(A))

    mask = ~np.eye(m, dtype=bool)

    def off(M: np.ndarray) -> float:
        return float(np.linalg.norm(M[mask]))

    for _ in range(max_sweeps):
        if off(A) <= target:
            return np.sort(np.diag(A))
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                A[p, q] = A[q, p] = 0.0
    if off(A) <= target:
        return np.sort(np.diag(A))
    raise JacobiError(f"off-diagonal norm {off(A):.3e} above target {target:.3e}")


def numerical_rank(eigenvalues, tol: float = RANK_TOL) -> int:
    ev = np.asarray(eigenvalues, dtype=float)
    top = float(ev.max())
    if top <= 0.0:
        return 0
    return int(np.sum(ev > tol * top))


# ---------------------------------------------------------------------------
# Gram matrix


@dataclass
class GramReport:
    dim: int
    matrix: np.ndarray
    eigenvalues: np.ndarray
    rank: int
    tolerance: float
    weight: str
    eigenvalues_check: np.ndarray = field(repr=False, default=None)

    @property
    def smallest_retained(self) -> float:
        ev = self.eigenvalues
        kept = ev[ev > self.tolerance * ev.max()]
        return float(kept.min()) if len(kept) else 0.0

    @property
    def margin(self) -> float:
        """Smallest retained eigenvalue relative to the largest."""
        return self.smallest_retained / float(self.eigenvalues.max())


def _weight_power(n: int) -> float:
    return 4.0 / (n - 2.0)


def gram_matrix(cfg: ProblemConfig, spec: QuadratureSpec | None = None,
                u: ScalarField | None = None, mode: str = "weighted",
                scales=None) -> GramReport:
    """Gram matrix of the rank functions of ``u`` (default: the ansatz of ``cfg``).

    ``mode='weighted'`` pairs ``z_i z_j U^{p-1}``; ``mode='dirichlet'``
    pairs ``grad z_i . grad z_j`` by central differences of the analytic
    rank functions (a cross-check, valid where the pairing converges).
    ``scales`` optionally multiplies each ``z_j`` by a positive constant.
    """
    n = cfg.n
    m = rank_count(n)
    u = ansatz(cfg) if u is None else u
    w = np.ones(m) if scales is None else np.asarray(scales, dtype=float)
    if np.any(w <= 0):
        raise ValueError("rank function scales must be positive")
    iu = np.triu_indices(m)

    if mode == "weighted":
        pw = _weight_power(n)

        def integrand(X: np.ndarray) -> np.ndarray:
            Z = rank_functions(u, X) * w
            weight = (2.0 / (1.0 + (X**2).sum(axis=1))) ** (0.5 * (n - 2) * pw)
            return (Z[:, iu[0]] * Z[:, iu[1]]) * weight[:, None]

        label = "U^(p-1)"
    elif mode == "dirichlet":
        def integrand(X: np.ndarray) -> np.ndarray:
            grads = []
            for a in range(n):
                e = np.zeros(n)
                hstep = 1e-5 * (1.0 + np.abs(X[:, a]))
                e[a] = 1.0
                Zp = rank_functions(u, X + hstep[:, None] * e)
                Zm = rank_functions(u, X - hstep[:, None] * e)
                grads.append((Zp - Zm) / (2.0 * hstep[:, None]))
            G = np.stack(grads, axis=2) * w[None, :, None]
            return np.einsum("nia,nia->ni", G[:, iu[0], :], G[:, iu[1], :])

        label = "dirichlet"
    else:
        raise ValueError(f"unknown pairing mode {mode!r}")

    vals = np.asarray(integrate(cfg, integrand, spec, invariant=False))
    M = np.zeros((m, m))
    M[iu] = vals
    M = M + np.triu(M, 1).T
    ev = jacobi_eigenvalues(M)
    check = np.linalg.eigvalsh(M)
    return GramReport(m, M, ev, numerical_rank(ev), RANK_TOL, label, check)


def single_bubble_gram(cfg: ProblemConfig, spec: QuadratureSpec | None = None) -> GramReport:
    """Control: the rank functions of the standard bubble (rank ``n+1``)."""
    return gram_matrix(cfg, spec, u=standard_bubble(cfg.n))


# ---------------------------------------------------------------------------
# structured-point probe


@dataclass
class ProbeBlock:
    name: str
    coefficients: tuple[int, ...]
    matrix: np.ndarray
    sigma_ratio: float  # smallest / largest singular value after column scaling
    nonsingular: bool


@dataclass
class ProbeReport:
    blocks: list[ProbeBlock]
    radii: tuple[float, ...]
    tolerance: float

    @property
    def all_nonsingular(self) -> bool:
        return all(b.nonsingular for b in self.blocks)

    @property
    def coefficients_covered(self) -> set[int]:
        return {c for b in self.blocks for c in b.coefficients}


def _index_of(n: int) -> dict[tuple[str, int, int], int]:
    return {key: i for i, key in enumerate(rank_index_table(n))}


def _sigma_ratio(M: np.ndarray) -> float:
    norms = np.linalg.norm(M, axis=0)
    if np.any(norms == 0.0):
        return 0.0
    ev = jacobi_eigenvalues((M / norms).T @ (M / norms), tol=1e-14)
    ev = np.clip(ev, 0.0, None)
    return math.sqrt(float(ev[0]) / float(ev[-1]))


def _block(name, u, n, cols, points, tol) -> ProbeBlock:
    Z = rank_functions(u, np.asarray(points, dtype=float))[:, cols]
    ratio = _sigma_ratio(Z)
    return ProbeBlock(name, tuple(cols), Z, ratio, ratio > tol)


def _check_radii(radii) -> tuple[float, ...]:
    radii = tuple(float(r) for r in radii)
    if len(radii) < 3:
        raise ConfigError("the probe needs three radii")
    if any(r <= 0 for r in radii):
        raise ConfigError("probe radii must be positive")
    if len(set(radii)) != len(radii):
        raise ConfigError(f"probe radii must be distinct, got {radii}")
    return radii


def independence_probe(cfg: ProblemConfig, radii=(2.0, 3.0, 5.0), u: ScalarField | None = None,
                       tol: float = 1e-6) -> ProbeReport:
    """Square blocks of the candidate identity on symmetry-adapted point families.

    Each block keeps the coefficients that survive on its family and stacks
    one row per point, using as many points as coefficients (plus extra
    generic rows where the family alone leaves a coefficient unseen).  A
    block is nonsingular when its column-normalized smallest singular value
    exceeds ``tol`` times the largest.
    """
    n = cfg.n
    radii = _check_radii(radii)
    u = ansatz(cfg) if u is None else u
    idx = _index_of(n)
    r1, r2, r3 = radii[:3]
    blocks: list[ProbeBlock] = []

    def pt(**coords) -> np.ndarray:
        y = np.zeros(n)
        for key, v in coords.items():
            y[int(key[1:]) - 1] = v
        return y

    # axis points: c_0, c_1, c_{n+1}
    cols = [idx[("dil", 0, 0)], idx[("trans", 1, 0)], idx[("kelv", 1, 0)]]
    blocks.append(_block("axis", u, n, cols, [pt(y1=r) for r in (r1, r2, r3)], tol))

    # (y1, y2)-plane: c_2, c_{n+2}, c_{n+4}; the rotation witness needs a
    # generic angle, the other two rows sit on rotated copies of the axis
    th = 2.0 * math.pi / cfg.k
    cols = [idx[("trans", 2, 0)], idx[("kelv", 2, 0)], idx[("rot", 1, 2)]]
    pts = [pt(y1=r * math.cos(th), y2=r * math.sin(th)) for r in (r1, r2)]
    pts.append(pt(y1=r3 * math.cos(0.37 * th), y2=r3 * math.sin(0.37 * th)))
    blocks.append(_block("plane12", u, n, cols, pts, tol))

    # (y1, y3)-plane: c_3, c_{n+3}, c_{n+5}
    cols = [idx[("trans", 3, 0)], idx[("kelv", 3, 0)], idx[("rot", 1, 3)]]
    pts = [pt(y1=0.6 * r, y3=0.8 * r) for r in (r1, r2)] + [pt(y1=0.3 * r3, y3=0.95 * r3)]
    blocks.append(_block("plane13", u, n, cols, pts, tol))

    # (y2, y3)-plane: c_{2n+3}
    cols = [idx[("rot", 2, 3)]]
    blocks.append(_block("plane23", u, n, cols, [pt(y2=0.6 * r1, y3=0.8 * r1)], tol))

    for ell in range(4, n + 1):
        cols = [idx[("trans", ell, 0)], idx[("rot", 1, ell)]]
        pts = [pt(y1=0.6 * r1, **{f"y{ell}": 0.8 * r1}), pt(y1=0.3 * r2, **{f"y{ell}": 0.95 * r2})]
        blocks.append(_block(f"plane1{ell}", u, n, cols, pts, tol))
        cols = [idx[("rot", 2, ell)]]
        blocks.append(_block(f"plane2{ell}", u, n, cols, [pt(y2=0.6 * r1, **{f"y{ell}": 0.8 * r1})], tol))
    if n >= 4:
        cols = [idx[("rot", 3, j)] for j in range(4, n + 1)]
        pts = []
        for j in range(4, n + 1):
            pts.append(pt(y3=0.6 * r1, **{f"y{j}": 0.8 * r1}))
        blocks.append(_block("planes3j", u, n, cols, pts, tol))
    return ProbeReport(blocks, radii, tol)


# ---------------------------------------------------------------------------
# far-field constants along the first axis


@dataclass
class ABCReport:
    """Far-field constants of ``z_0``, ``z_1`` and ``z_{n+1}`` on the ``y_1`` axis.

    All values are divided by ``-(n-2)/2 * 2^{(n-2)/2}``.  ``c`` uses the
    weight ``r^{n-3}``; since ``z_{n+1}`` of a Kelvin-invariant field decays
    like ``r^{1-n}`` this limit is 0.  ``c_far`` is the ``r^{n-1}`` limit,
    and ``c_excess`` its departure from the standard bubble's value 2.
    """

    a: float
    b: float
    c: float
    c_far: float
    c_excess: float
    radii: tuple[float, ...]
    table: np.ndarray  # rows (r, a(r), b(r), c(r), c_far(r))
    pre_asymptotic: dict[str, bool]


def asymptotic_abc(cfg: ProblemConfig | None, radii=(10.0, 100.0, 1000.0),
                   u: ScalarField | None = None, n: int | None = None) -> ABCReport:
    if cfg is None and u is None:
        raise ValueError("need a configuration or a field")
    n = cfg.n if cfg is not None else (n if n is not None else u.n)
    u = ansatz(cfg) if u is None else u
    radii = tuple(sorted(float(r) for r in radii))
    if radii[0] < 10.0:
        raise ConfigError(f"far-field radii must be at least 10, got {radii[0]}")
    norm = -0.5 * (n - 2) * 2.0 ** (0.5 * (n - 2))
    idx = _index_of(n)
    i0, i1, ik = idx[("dil", 0, 0)], idx[("trans", 1, 0)], idx[("kelv", 1, 0)]

    def at(r: float) -> np.ndarray:
        y = np.zeros((1, n))
        y[0, 0] = r
        z = rank_functions(u, y)[0]
        return np.array([
            r ** (n - 2) * z[i0] / norm,
            r ** (n - 1) * z[i1] / norm,
            r ** (n - 3) * z[ik] / norm,
            r ** (n - 1) * z[ik] / norm,
        ])

    table = np.array([[r, *at(r)] for r in radii])
    last = table[-1, 1:]
    doubled = at(2.0 * radii[-1])
    floor = 1e-3 * max(abs(last[0]), abs(last[1]))
    flags = {}
    for name, v, w in zip(("a", "b", "c", "c_far"), last, doubled):
        flags[name] = bool(abs(w - v) > 0.1 * max(abs(v), abs(w), floor))
    a, b, c, c_far = (float(x) for x in last)
    return ABCReport(a, b, c, c_far, c_far - 2.0, radii, table, flags)


def c_excess_closed_form(cfg: ProblemConfig) -> float:
    """Leading value of ``c_excess`` for the double-circle ansatz.

    Kelvin invariance gives ``r^{n-1} z_{n+1}(r e_1) -> -d_11 u(0)``; the
    satellites on the two circles of radius ``rho`` contribute
    ``4 k s^{(n-2)/2} ((n/2) rho^2 - 1)`` after normalization.
    """
    if cfg.pattern != "double":
        raise ConfigError("the closed form covers the double pattern only")
    h = 0.5 * (cfg.n - 2)
    lam, R, tau = cfg.lam[0], cfg.R[0], cfg.tau[0]
    rho2 = R * R * (1.0 - tau * tau)
    return 4.0 * cfg.k * lam**h * ((h + 1.0) * rho2 - 1.0)
