"""Symmetry-aware integration over R^n for multi-bubble fields.

Space is covered by three kinds of cells:

* balls around bubble centers, in polar coordinates centered at the bubble
  with radial nodes graded logarithmically in ``r / scale``;
* the bulk ``|y| <= 2`` in coordinates ``(r, beta, phi, omega)`` with
  ``y = (r cos(beta) cos(phi), r cos(beta) sin(phi), r sin(beta) omega)``,
  ``omega`` in the unit sphere of R^{n-2}; composite Gauss panels are graded
  geometrically towards every bubble center;
* the exterior ``|y| > 2``, mapped onto a bounded set.

Balls and bulk are glued by a smooth partition of unity, so no cell sees a
sharp boundary except the interior balls of region-wise norms.  For
integrands invariant under the symmetry group of the lattice (rotation by
2 pi / k in the (y1, y2) plane, reflections of y2..yn) the bulk is reduced
to the fundamental wedge and only one ball per orbit is integrated.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np

from .bubble import AtomSet, ScalarField, kernel_Z_scaled, standard_bubble
from .config import ProblemConfig, lattice_points, min_center_distance
from .error_field import cutoff_distance, error_field, error_values, smoothstep

Integrand = Callable[[np.ndarray], np.ndarray]

# bulk cells extend to |y| = 2; beyond that the exterior map takes over
_BULK_RADIUS = 2.0
# width of one logarithmic radial panel inside balls, in ln(1 + r/scale)
_LOG_PANEL = 0.5
_BLOCK = 60000


class DivergenceError(RuntimeError):
    """The integral grows under refinement: the integrand is not integrable."""


class ToleranceNotMet(RuntimeError):
    def __init__(self, message: str, previous: float, last: float) -> None:
        super().__init__(message)
        self.previous = previous
        self.last = last


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts and layout switches for every integral.

    ``radial_nodes`` and ``angular_nodes`` are Gauss orders per panel in the
    bulk/exterior cells; ``near_bubble_nodes`` is the radial Gauss order per
    panel inside balls (whose sphere rules use ``angular_nodes`` as base).
    ``seed`` drives the rank-1 lattice rule on the direction sphere used for
    n >= 5.
    """

    radial_nodes: int = 4
    angular_nodes: int = 4
    near_bubble_nodes: int = 6
    use_fundamental_domain: bool = True
    exterior_map: str = "kelvin"
    seed: int = 0
    target_rel_tol: float = 1e-3

    def doubled(self) -> "QuadratureSpec":
        return replace(
            self,
            radial_nodes=2 * self.radial_nodes,
            angular_nodes=2 * self.angular_nodes,
            near_bubble_nodes=2 * self.near_bubble_nodes,
        )

    def __post_init__(self) -> None:
        if self.exterior_map not in ("kelvin", "radial-compactify"):
            raise ValueError(f"unknown exterior map {self.exterior_map!r}")
        for name in ("radial_nodes", "angular_nodes", "near_bubble_nodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("BT_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# one-dimensional building blocks


@lru_cache(maxsize=None)
def _gl(m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(m)
    return x, w


def composite_gauss(breaks, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule of order ``m`` on every panel between breakpoints."""
    b = np.asarray(breaks, dtype=float)
    x, w = _gl(m)
    a, c = b[:-1], b[1:]
    half = 0.5 * (c - a)
    nodes = (0.5 * (a + c))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def graded_breaks(lo: float, hi: float, features, h: float, ratio: float = 2.0,
                  max_width: float | None = None) -> np.ndarray:
    """Breakpoints on ``[lo, hi]`` refined geometrically towards each feature."""
    pts = {lo, hi}
    for x0 in features:
        if not (lo - 1e-12 <= x0 <= hi + 1e-12):
            continue
        pts.add(min(max(x0, lo), hi))
        step = h
        while step < (hi - lo):
            for x in (x0 - step, x0 + step):
                if lo < x < hi:
                    pts.add(x)
            step *= ratio
    b = np.array(sorted(pts))
    keep = [b[0]]
    for x in b[1:]:
        if x - keep[-1] > 1e-3 * h:
            keep.append(x)
    if keep[-1] != hi:
        keep[-1] = hi
    b = np.array(keep)
    if max_width is not None:
        out = [b[0]]
        for a, c in zip(b[:-1], b[1:]):
            m = max(1, int(math.ceil((c - a) / max_width)))
            out.extend(a + (c - a) * np.arange(1, m + 1) / m)
        b = np.array(out)
    return b


def sphere_volume(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def sphere_rule(n: int, na: int) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on the unit sphere of R^n (hyperspherical angles)."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    nphi = 4 * na
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    w = np.full(nphi, 2.0 * np.pi / nphi)
    # add polar angles one dimension at a time: x = (cos t, sin t * previous)
    th, wt = composite_gauss(np.linspace(0.0, np.pi, 3), na)
    for d in range(3, n + 1):
        jac = np.sin(th) ** (d - 2)
        new_dirs = np.concatenate(
            [np.cos(th)[:, None, None] * np.ones((1, len(dirs), 1)),
             np.sin(th)[:, None, None] * dirs[None, :, :]], axis=2)
        dirs = new_dirs.reshape(-1, d)
        w = (wt * jac)[:, None] * w[None, :]
        w = w.ravel()
    return dirs, w


def radial_integral(profile: Callable[[np.ndarray], np.ndarray], n: int, m: int = 16,
                    scale: float = 1.0) -> float:
    """``int_{R^n} f(|y|) dy`` for a radial profile, via ``r = scale * tan(theta)``
    composite rules on [0, pi/2) graded towards both ends."""
    b = graded_breaks(0.0, 0.5 * np.pi, [0.0, 0.5 * np.pi], 1e-3, ratio=2.0)
    th, w = composite_gauss(b, m)
    r = scale * np.tan(th)
    dr = scale / np.cos(th) ** 2
    vals = profile(r) * r ** (n - 1) * dr
    return sphere_volume(n) * float(np.sum(vals * w))


# ---------------------------------------------------------------------------
# geometry of a configuration


@dataclass(frozen=True)
class Orbit:
    rep: int  # atom index of the representative
    members: tuple[int, ...]
    signs3: tuple[int, ...]  # +1/-1: sign picked up by y3-odd kernels


@dataclass
class Geometry:
    """Lattice data shared by all integrals of one configuration."""

    cfg: ProblemConfig
    atoms: AtomSet
    orbits: list[Orbit]
    partition_outer: float  # balls and bulk are glued on this radius
    partition_inner: float
    group_order: int

    @classmethod
    def build(cls, cfg: ProblemConfig) -> "Geometry":
        atoms = AtomSet.from_config(cfg)
        lat = lattice_points(cfg)
        orbits: list[Orbit] = []
        keys = sorted({a.circle for a in lat[1:]})
        for c in keys:
            members = [i for i, a in enumerate(lat) if i > 0 and a.circle == c]
            rep = [i for i in members if lat[i].j == 0 and lat[i].level in (0, 1)][0]
            signs3 = tuple(1 if lat[i].level >= 0 else -1 for i in members)
            orbits.append(Orbit(rep, tuple(members), signs3))
        dmin = min_center_distance(cfg)
        outer = min(0.5 * dmin, 0.25)
        inner = max(0.25 * outer, cfg.ball_radius)
        if inner >= outer:
            inner = 0.9 * outer
        order = 2 * cfg.k * 2 ** (cfg.n - 2)
        return cls(cfg, atoms, orbits, outer, inner, order)

    def chi(self, r: np.ndarray) -> np.ndarray:
        """Smooth radial bump: 1 up to ``partition_inner``, 0 beyond ``partition_outer``."""
        a, b = self.partition_inner, self.partition_outer
        x = np.clip((b - r) / (b - a), 0.0, 1.0)
        return _smooth_transition(x)

    def bulk_weight(self, Y: np.ndarray) -> np.ndarray:
        s = np.zeros(len(Y))
        b2 = self.partition_outer**2
        for c in self.atoms.centers[1:]:
            d2 = ((Y - c) ** 2).sum(axis=1)
            near = d2 < b2
            if np.any(near):
                s[near] += self.chi(np.sqrt(d2[near]))
        return 1.0 - s


def _smooth_transition(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 at x <= 0, 1 at x >= 1."""
    x = np.asarray(x, dtype=float)
    f = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    g = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return f / (f + g)


# ---------------------------------------------------------------------------
# cell rules; each yields blocks of (points, weights)


Block = tuple[np.ndarray, np.ndarray]


def ball_blocks(center: np.ndarray, scale: float, r0: float, r1: float, n: int,
                spec: QuadratureSpec, chi: Callable[[np.ndarray], np.ndarray] | None = None,
                transition: tuple[float, float] | None = None) -> Iterator[Block]:
    """Polar rule on the shell ``r0 <= |y - center| <= r1``."""
    s0, s1 = math.log1p(r0 / scale), math.log1p(r1 / scale)
    top = s1
    lin: list[float] = []
    if transition is not None:
        a, b = transition
        a = max(a, r0)
        if a < r1:
            top = math.log1p(a / scale)
            lin = list(np.linspace(a, min(b, r1), 5)[1:])
    npan = max(1, int(math.ceil((top - s0) / _LOG_PANEL)))
    sb = np.linspace(s0, top, npan + 1)
    rb = list(scale * np.expm1(sb)) + lin
    rb[0] = r0
    s_nodes, s_w = composite_gauss(np.log1p(np.array(rb) / scale), spec.near_bubble_nodes)
    r = scale * np.expm1(s_nodes)
    dr = scale * np.exp(s_nodes) * s_w
    wr = r ** (n - 1) * dr
    if chi is not None:
        wr = wr * chi(r)
    dirs, wd = sphere_rule(n, spec.angular_nodes)
    per = max(1, _BLOCK // len(dirs))
    for a in range(0, len(r), per):
        rr, ww = r[a:a + per], wr[a:a + per]
        X = center[None, None, :] + rr[:, None, None] * dirs[None, :, :]
        W = ww[:, None] * wd[None, :]
        yield X.reshape(-1, n), W.ravel()


def _omega_rule(n: int, reduced: bool, spec: QuadratureSpec, features_psi, h_psi) -> tuple[np.ndarray, np.ndarray]:
    """Directions of the (y3..yn) component and their weights."""
    m = n - 2
    if m == 1:
        if reduced:
            return np.array([[1.0]]), np.array([1.0])
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if m == 2:
        hi = 0.5 * np.pi if reduced else 2.0 * np.pi
        feats = [0.0] if reduced else [0.0, np.pi, 2.0 * np.pi]
        b = graded_breaks(0.0, hi, feats, h_psi, max_width=np.pi / 4)
        psi, w = composite_gauss(b, spec.angular_nodes)
        return np.stack([np.cos(psi), np.sin(psi)], axis=1), w
    # m >= 3: graded first angle, rank-1 lattice on the remaining sphere
    hi = 0.5 * np.pi if reduced else np.pi
    b = graded_breaks(0.0, hi, [0.0] if reduced else [0.0, np.pi], h_psi, max_width=np.pi / 4)
    psi, w = composite_gauss(b, spec.angular_nodes)
    sub, wsub = _lattice_sphere(m - 1, 8 * spec.angular_nodes ** 2, spec.seed, positive=reduced)
    dirs = np.concatenate(
        [np.cos(psi)[:, None, None] * np.ones((1, len(sub), 1)),
         np.sin(psi)[:, None, None] * sub[None, :, :]], axis=2).reshape(-1, m)
    ww = ((w * np.sin(psi) ** (m - 2))[:, None] * wsub[None, :]).ravel()
    return dirs, ww


def _lattice_sphere(d: int, npts: int, seed: int, positive: bool) -> tuple[np.ndarray, np.ndarray]:
    """Rank-1 (Korobov) lattice on the cube mapped to the sphere in R^d."""
    rng = np.random.default_rng(seed)
    gen = np.array([1] + [int(rng.integers(1, npts)) for _ in range(d - 2)])
    i = np.arange(npts)[:, None]
    u = (i * gen[None, :] / npts + 0.5 / npts) % 1.0
    # hyperspherical angles: first d-2 in [0, pi] (or [0, pi/2]), last in [0, 2 pi) (or [0, pi/2])
    span = 0.5 * np.pi if positive else np.pi
    ang = u * span
    if not positive:
        ang[:, -1] = u[:, -1] * 2.0 * np.pi
    dirs = np.ones((npts, d))
    jac = np.ones(npts)
    s = np.ones(npts)
    for j in range(d - 1):
        dirs[:, j] = s * np.cos(ang[:, j])
        if j < d - 2:
            jac *= np.sin(ang[:, j]) ** (d - 2 - j)
        s = s * np.sin(ang[:, j])
    dirs[:, d - 1] = s
    vol = span ** (d - 2) * (0.5 * np.pi if positive else 2.0 * np.pi)
    return dirs, jac * vol / npts


def _wedge_coordinates(geom: Geometry, reduced: bool):
    """Feature locations of all bubbles in the (r, beta, phi, psi) coordinates."""
    C = geom.atoms.centers[1:]
    rr = np.linalg.norm(C, axis=1)
    rho = np.hypot(C[:, 0], C[:, 1])
    wn = np.linalg.norm(C[:, 2:], axis=1)
    beta = np.arctan2(wn, rho)
    phi = np.mod(np.arctan2(C[:, 1], C[:, 0]), 2.0 * np.pi)
    return rr, rho, wn, beta, phi


def bulk_blocks(geom: Geometry, spec: QuadratureSpec, reduced: bool, r_lo: float = 0.0,
                r_hi: float = _BULK_RADIUS, graded: bool = True) -> Iterator[Block]:
    """Bulk rule on ``r_lo <= |y| <= r_hi``; weights include the Jacobian only."""
    cfg = geom.cfg
    n, k = cfg.n, cfg.k
    h = geom.partition_inner
    rr, rho, wn, beta, phi = _wedge_coordinates(geom, reduced)
    phi_hi = np.pi / k if reduced else 2.0 * np.pi
    if graded:
        rb = graded_breaks(r_lo, r_hi, sorted(set(np.round(rr, 14))), h, max_width=0.25)
        bb = graded_breaks(0.0, 0.5 * np.pi, sorted(set(np.round(beta, 14))), h / max(rr.min(), 1e-3),
                           max_width=np.pi / 8)
        if reduced:
            fphi = [0.0]
        else:
            fphi = sorted(set(np.round(phi, 14)) | {2.0 * np.pi})
        hphi = h / max(rho.min(), 1e-3)
        fb = graded_breaks(0.0, phi_hi, fphi, hphi, max_width=np.pi / 8)
        wpos = wn[wn > 0]
        hpsi = h / wpos.min() if len(wpos) else np.pi / 8
    else:
        rb = np.linspace(r_lo, r_hi, 3)
        bb = np.linspace(0.0, 0.5 * np.pi, 3)
        fb = np.linspace(0.0, phi_hi, 2 if reduced else 9)
        hpsi = np.pi / 4
    rn, rw = composite_gauss(rb, spec.radial_nodes)
    bn, bw = composite_gauss(bb, spec.angular_nodes)
    fn, fw = composite_gauss(fb, spec.angular_nodes)
    om, ow = _omega_rule(n, reduced, spec, [0.0], min(hpsi, np.pi / 8))
    # angular product (beta, phi, omega) -> unit directions
    cb, sb = np.cos(bn), np.sin(bn)
    D = np.empty((len(bn), len(fn), len(om), n))
    D[..., 0] = cb[:, None, None] * np.cos(fn)[None, :, None]
    D[..., 1] = cb[:, None, None] * np.sin(fn)[None, :, None]
    D[..., 2:] = sb[:, None, None, None] * om[None, None, :, :]
    jac = (bw * cb * sb ** (n - 3))[:, None, None] * fw[None, :, None] * ow[None, None, :]
    D = D.reshape(-1, n)
    jac = jac.ravel()
    per = max(1, _BLOCK // len(D))
    for a in range(0, len(rn), per):
        r, w = rn[a:a + per], rw[a:a + per]
        X = (r[:, None, None] * D[None, :, :]).reshape(-1, n)
        W = ((w * r ** (n - 1))[:, None] * jac[None, :]).ravel()
        yield X, W


def exterior_blocks(geom: Geometry, spec: QuadratureSpec, reduced: bool) -> Iterator[Block]:
    """Rule for ``|y| > 2``: points are in the exterior, weights include the map Jacobian."""
    n = geom.cfg.n
    if spec.exterior_map == "kelvin":
        # x in the ball |x| < 1/2, y = x/|x|^2, dy = |x|^{-2n} dx
        for X, W in bulk_blocks(geom, spec, reduced, 0.0, 1.0 / _BULK_RADIUS, graded=False):
            r2 = (X**2).sum(axis=1)
            ok = r2 > 0
            yield X[ok] / r2[ok, None], W[ok] * r2[ok] ** (-n)
    else:
        # y = (2/(1-u)) * direction, u in [0, 1)
        for X, W in bulk_blocks(geom, spec, reduced, 0.0, 1.0, graded=False):
            u = np.linalg.norm(X, axis=1)
            ok = (u > 0) & (u < 1)
            d = X[ok] / u[ok, None]
            r = _BULK_RADIUS / (1.0 - u[ok])
            dr = _BULK_RADIUS / (1.0 - u[ok]) ** 2
            # bulk weights carry u^{n-1}; replace by r^{n-1} dr/du
            yield d * r[:, None], W[ok] / u[ok] ** (n - 1) * r ** (n - 1) * dr


# ---------------------------------------------------------------------------
# assembly


def _fsum(parts):
    """Correctly rounded sum of scalars or, componentwise, of equal-shape arrays."""
    arrs = [np.atleast_1d(np.asarray(p, dtype=float)) for p in parts]
    if not arrs:
        return 0.0
    if arrs[0].size == 1 and np.ndim(parts[0]) == 0:
        return math.fsum(float(a[0]) for a in arrs)
    stack = np.stack(arrs)
    out = np.array([math.fsum(stack[:, i]) for i in range(stack.shape[1])])
    return out


def _sum_blocks(blocks: Iterator[Block], integrand: Integrand,
                weight_fn: Callable[[np.ndarray], np.ndarray] | None = None):
    """Ordered, reproducible sum over blocks (optionally evaluated in parallel).

    Integrands may return ``(N,)`` values or ``(N, m)`` vectors.
    """

    def one(block: Block):
        X, W = block
        if weight_fn is not None:
            W = W * weight_fn(X)
            keep = W != 0.0
            X, W = X[keep], W[keep]
        if len(W) == 0:
            return None
        v = np.asarray(integrand(X))
        if v.ndim == 1:
            return float(np.sum(v * W))
        return np.sum(v * W[:, None], axis=0)

    threads = thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(one, blocks))
    else:
        parts = [one(b) for b in blocks]
    return _fsum([p for p in parts if p is not None])


def integrate(cfg: ProblemConfig, integrand: Integrand, spec: QuadratureSpec | None = None,
              region: str = "all", atom_index: int | None = None, invariant: bool = True,
              geom: Geometry | None = None) -> float:
    """Integral of ``integrand`` over R^n or one of its regions.

    ``region``: ``all``, ``exterior`` (outside every interior ball
    ``B(center, delta/k)``) or ``interior`` (the ball of ``atom_index``).
    With ``invariant`` and ``spec.use_fundamental_domain`` the integrand is
    assumed invariant under the lattice symmetry group.
    """
    spec = spec or QuadratureSpec()
    geom = geom or Geometry.build(cfg)
    n = cfg.n
    rb = cfg.ball_radius
    centers, scales = geom.atoms.centers, geom.atoms.scales
    transition = (geom.partition_inner, geom.partition_outer)
    if region == "interior":
        if atom_index is None or not 1 <= atom_index < len(geom.atoms):
            raise IndexError("interior region needs a satellite atom index")
        return _sum_blocks(ball_blocks(centers[atom_index], scales[atom_index], 0.0, rb, n, spec),
                           integrand)
    if region not in ("all", "exterior"):
        raise ValueError(f"unknown region {region!r}")
    r0 = 0.0 if region == "all" else rb
    reduced = invariant and spec.use_fundamental_domain
    parts = []
    if reduced:
        for orb in geom.orbits:
            i = orb.rep
            parts.append(len(orb.members) * _sum_blocks(
                ball_blocks(centers[i], scales[i], r0, geom.partition_outer, n, spec, geom.chi, transition),
                integrand))
        mult = geom.group_order
    else:
        for i in range(1, len(geom.atoms)):
            parts.append(_sum_blocks(
                ball_blocks(centers[i], scales[i], r0, geom.partition_outer, n, spec, geom.chi, transition),
                integrand))
        mult = 1
    parts.append(mult * _sum_blocks(bulk_blocks(geom, spec, reduced), integrand, geom.bulk_weight))
    parts.append(mult * _sum_blocks(exterior_blocks(geom, spec, reduced), integrand))
    return _fsum(parts)


# ---------------------------------------------------------------------------
# norms


def _norm_weight_exponent(n: int, q: float) -> float:
    return n + 2.0 - 2.0 * n / q


def weighted_lq_norm(field, q: float, cfg: ProblemConfig, spec: QuadratureSpec | None = None,
                     region: str = "all", atom_index: int | None = None, frame: str = "original",
                     invariant: bool = True) -> float:
    """``|| (1+|y|)^{n+2-2n/q} field ||_{L^q(region)}``.

    ``frame='expanded'`` (interior region only) measures
    ``scale^{(n+2)/2} field(center + scale*y)`` in the local variable ``y``
    on ``|y| < delta/(scale k)``, the form used for the interior estimates.
    """
    n = cfg.n
    a = _norm_weight_exponent(n, q)
    if frame == "expanded":
        if region != "interior":
            raise ValueError("the expanded frame is only defined on interior balls")
        geom = Geometry.build(cfg)
        c = geom.atoms.centers[atom_index]
        s = geom.atoms.scales[atom_index]
        amp = s ** (0.5 * (n + 2))
        jac = s ** (-n)

        def g(X: np.ndarray) -> np.ndarray:
            y = np.linalg.norm(X - c, axis=1) / s
            return jac * np.abs((1.0 + y) ** a * amp * field(X)) ** q

        val = integrate(cfg, g, spec, "interior", atom_index, geom=geom)
    else:
        def g(X: np.ndarray) -> np.ndarray:
            y = np.linalg.norm(X, axis=1)
            return np.abs((1.0 + y) ** a * field(X)) ** q

        val = integrate(cfg, g, spec, region, atom_index, invariant=invariant)
    return float(val) ** (1.0 / q)


@dataclass
class MergedNorm:
    """Interior balls in expanded variables plus the exterior in original ones."""

    total: float
    interior_per_ball: dict[int, float]
    interior_sum: float
    exterior: float


def error_norm_merged(cfg: ProblemConfig, spec: QuadratureSpec | None = None,
                      q: float | None = None) -> MergedNorm:
    """Error norm assembled the way the interior/exterior estimates combine.

    Each interior ball contributes its expanded-variable norm (all balls of
    one orbit contribute equally), the exterior region its original-variable
    norm, and the pieces are added.
    """
    q = cfg.q if q is None else q
    E = error_field(cfg)
    geom = Geometry.build(cfg)
    per: dict[int, float] = {}
    total_int = []
    for orb in geom.orbits:
        v = weighted_lq_norm(E, q, cfg, spec, "interior", orb.rep, frame="expanded")
        per[orb.rep] = v
        total_int.append(len(orb.members) * v)
    ext = weighted_lq_norm(E, q, cfg, spec, "exterior")
    s = math.fsum(total_int)
    return MergedNorm(s + ext, per, s, ext)


@dataclass
class SupReport:
    value: float
    argmax: np.ndarray


def sup_sample(cfg: ProblemConfig | None, n: int, n_radii: int = 400, n_dirs: int = 64,
               seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    r = np.concatenate([[0.0], np.geomspace(1e-3, 1e4, n_radii)])
    d = rng.standard_normal((n_dirs, n))
    d /= np.linalg.norm(d, axis=1)[:, None]
    pts = [np.zeros((1, n)), (r[1:, None, None] * d[None, :, :]).reshape(-1, n)]
    if cfg is not None:
        atoms = AtomSet.from_config(cfg)
        for c, s in zip(atoms.centers[1:], atoms.scales[1:]):
            rr = s * np.concatenate([[0.0], np.geomspace(1e-2, 1e3, 60)])
            pts.append(c + (rr[:, None, None] * d[None, :8, :]).reshape(-1, n))
    return np.vstack(pts)


def sup_weighted_norm(field, cfg: ProblemConfig | None = None, n: int | None = None,
                      sample: np.ndarray | None = None) -> SupReport:
    """``sup (1+|y|^{n-2}) |field(y)|`` over a deterministic graded sample."""
    n = cfg.n if cfg is not None else n
    X = sup_sample(cfg, n) if sample is None else sample
    v = (1.0 + np.linalg.norm(X, axis=1) ** (n - 2)) * np.abs(np.asarray(field(X)))
    i = int(np.argmax(v))
    return SupReport(float(v[i]), X[i])


# ---------------------------------------------------------------------------
# energy


def energy_density(atoms: AtomSet, Y: np.ndarray) -> np.ndarray:
    n = atoms.n
    two_star = 2.0 * n / (n - 2.0)
    gamma = n * (n - 2.0) / 4.0
    u = atoms.value(Y)
    g = atoms.gradient(Y)
    return 0.5 * (g**2).sum(axis=1) - gamma * (n - 2.0) / (2.0 * n) * np.abs(u) ** two_star


def interaction_density(atoms: AtomSet, Y: np.ndarray) -> np.ndarray:
    """Energy density of the sum minus the densities of the separate bubbles."""
    n = atoms.n
    two_star = 2.0 * n / (n - 2.0)
    c = (n - 2.0) ** 2 / 8.0  # gamma (n-2)/(2n)
    out = np.empty(len(Y))
    for a in range(0, len(Y), 4096):
        val, dval, _ = atoms.terms(Y[a:a + 4096], grad=True)
        u = val @ atoms.signs
        du = np.einsum("ijk,j->ik", dval, atoms.signs)
        grad_cross = 0.5 * ((du**2).sum(axis=1) - np.einsum("ijk,ijk->i", dval, dval))
        pot = np.abs(u) ** two_star - (val**two_star).sum(axis=1)
        out[a:a + 4096] = grad_cross - c * pot
    return out


def bubble_energy(n: int, m: int = 24) -> float:
    """Energy of one bubble by a one-dimensional radial rule."""
    gamma = n * (n - 2.0) / 4.0

    def dens(r: np.ndarray) -> np.ndarray:
        U = (2.0 / (1.0 + r * r)) ** (0.5 * (n - 2))
        dU = -(n - 2) * r / (1.0 + r * r) * U
        return 0.5 * dU**2 - gamma * (n - 2.0) / (2.0 * n) * U ** (2.0 * n / (n - 2.0))

    return radial_integral(dens, n, m)


def bubble_energy_closed_form(n: int) -> float:
    """``(gamma/n) int U^{2n/(n-2)}`` with the beta-function value of the integral."""
    gamma = n * (n - 2.0) / 4.0
    integral = 2.0**n * sphere_volume(n) * 0.5 * math.gamma(n / 2.0) ** 2 / math.gamma(n)
    return gamma / n * integral


def energy(cfg: ProblemConfig, spec: QuadratureSpec | None = None,
           atoms: AtomSet | None = None) -> float:
    """Energy of the ansatz: ``(#bubbles) a_n`` plus the integrated interaction density.

    ``atoms`` may carry the same bubbles in another order; the integrand is
    unchanged, so the symmetric layout of ``cfg`` still applies.
    """
    atoms = atoms or AtomSet.from_config(cfg)
    a_n = bubble_energy(cfg.n)
    inter = integrate(cfg, lambda X: interaction_density(atoms, X), spec)
    return len(atoms) * a_n + inter


def energy_interaction(cfg: ProblemConfig, spec: QuadratureSpec | None = None) -> float:
    atoms = AtomSet.from_config(cfg)
    return integrate(cfg, lambda X: interaction_density(atoms, X), spec)


# ---------------------------------------------------------------------------
# kernel projections


@dataclass
class Projection:
    full: float
    localized: float
    alpha: int
    atom_index: int


def _orbit_of(geom: Geometry, atom_index: int) -> tuple[Orbit, int]:
    for orb in geom.orbits:
        if atom_index in orb.members:
            return orb, orb.signs3[orb.members.index(atom_index)]
    raise IndexError(f"atom {atom_index} is not a satellite")


def _orbit_kernel(geom: Geometry, orb: Orbit, alpha: int, with_cutoff: bool) -> Integrand:
    """Average over the orbit of the (signed) rescaled kernel element."""
    cfg = geom.cfg
    n = cfg.n
    C = geom.atoms.centers[list(orb.members)]
    s = geom.atoms.scales[orb.rep]
    sg = np.array(orb.signs3, dtype=float) if alpha == 3 else np.ones(len(orb.members))
    inv = 1.0 / len(orb.members)
    reach = 2.5 * cfg.ball_radius

    def K(X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X))
        for c, e in zip(C, sg):
            if with_cutoff:
                d = cutoff_distance(c, X)
                near = d < reach
                if not np.any(near):
                    continue
                z = kernel_Z_scaled(alpha, X[near], s, c)
                out[near] += e * smoothstep(cfg.k / cfg.delta_eff * d[near]) * z
            else:
                out += e * kernel_Z_scaled(alpha, X, s, c)
        return inv * out

    return K


def project_on_kernel(cfg: ProblemConfig, atom_index: int, alpha: int,
                      spec: QuadratureSpec | None = None, field=None) -> Projection:
    """``int E Zbar_alpha`` over R^n and with the cutoff of the chosen satellite.

    The integrand is symmetrized over the lattice group, so only the
    fundamental wedge and one ball per orbit are integrated.
    """
    n = cfg.n
    if alpha not in (3, n + 1):
        raise ValueError(f"alpha must be 3 or n+1 = {n + 1}")
    geom = Geometry.build(cfg)
    orb, sign = _orbit_of(geom, atom_index)
    E = field if field is not None else error_field(cfg)
    out = []
    for loc in (False, True):
        K = _orbit_kernel(geom, orb, alpha, loc)
        val = integrate(cfg, lambda X: E(X) * K(X), spec, geom=geom)
        out.append(sign * val if alpha == 3 else val)
    return Projection(out[0], out[1], alpha, atom_index)


@dataclass
class ParityReport:
    integral: float
    l1_mass: float

    @property
    def ratio(self) -> float:
        return abs(self.integral) / self.l1_mass if self.l1_mass > 0 else 0.0


def same_circle_parity(cfg: ProblemConfig, spec: QuadratureSpec | None = None) -> ParityReport:
    """``int U^{p-1} sum_j Ubar_j(s y + xi_1) Z_3(y)`` over ``|y| < delta/(s k)``.

    The other bubbles of the first upper circle share the height of
    ``xi_1``, so their sum is even in ``y_3`` while ``Z_3`` is odd; the
    integral vanishes and the quadrature (reflection-symmetric in every
    coordinate) must reproduce that up to rounding.
    """
    spec = spec or QuadratureSpec()
    n, p = cfg.n, cfg.p
    pts = lattice_points(cfg)
    first = next(i for i, a in enumerate(pts) if a.circle == 1 and a.level == 1 and a.j == 0)
    c1, s = np.asarray(pts[first].center), pts[first].scale
    same = [a for i, a in enumerate(pts) if a.circle == 1 and a.level == 1 and i != first]
    others = AtomSet(n, np.ones(len(same)), np.array([a.center for a in same]),
                     np.array([a.scale for a in same]))
    U = standard_bubble(n)

    def f(Y: np.ndarray) -> np.ndarray:
        return U(Y) ** (p - 1.0) * others.value(c1 + s * Y) * kernel_Z_scaled(3, Y, 1.0, np.zeros(n))

    radius = cfg.delta_eff / (s * cfg.k)
    blocks = list(ball_blocks(np.zeros(n), 1.0, 0.0, radius, n, spec))
    total = _sum_blocks(iter(blocks), f)
    mass = _sum_blocks(iter(blocks), lambda Y: np.abs(f(Y)))
    return ParityReport(float(total), float(mass))


# ---------------------------------------------------------------------------
# refinement


@dataclass
class Refined:
    value: float
    previous: float
    achieved: bool
    spec: QuadratureSpec
    steps: int


def refine_until(spec: QuadratureSpec, thunk: Callable[[QuadratureSpec], float],
                 rel_tol: float | None = None, max_steps: int = 3, abs_floor: float = 1e-300,
                 raise_on_fail: bool = True) -> Refined:
    """Double node counts until successive values agree to ``rel_tol``."""
    rel_tol = spec.target_rel_tol if rel_tol is None else rel_tol
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")
    prev = thunk(spec)
    cur_spec = spec
    for step in range(1, max_steps + 1):
        cur_spec = cur_spec.doubled()
        val = thunk(cur_spec)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite integral after {step} refinements")
        if abs(val - prev) <= rel_tol * max(abs(val), abs_floor) or (val == 0.0 and prev == 0.0):
            return Refined(val, prev, True, cur_spec, step)
        prev_old, prev = prev, val
    if raise_on_fail:
        raise ToleranceNotMet(
            f"relative change {abs(val - prev_old) / max(abs(val), abs_floor):.3e} above {rel_tol:.1e}",
            prev_old, val)
    return Refined(val, prev_old, False, cur_spec, max_steps)


def self_consistency(spec: QuadratureSpec, thunk: Callable[[QuadratureSpec], float]) -> tuple[float, float, float]:
    """Value, doubled-node value and their relative difference."""
    a = thunk(spec)
    b = thunk(spec.doubled())
    return a, b, abs(a - b) / max(abs(b), 1e-300)
