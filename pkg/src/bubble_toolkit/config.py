"""Parameters of the multi-bubble construction and the lattice of bubble centers.

A configuration fixes the dimension ``n``, the number ``k`` of points per
circle, the circle pattern and the free parameters ``ell``/``t``.  Every
derived scalar (scales, heights, radii, exponents) is computed once in
:func:`build_config` and stored on an immutable :class:`ProblemConfig`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

ETA_DEFAULT = 1e-2
DELTA_DEFAULT = 0.1
PATTERNS = ("double", "even", "odd")
CONFIG_KEYS = frozenset({"n", "k", "pattern", "m", "ell", "t", "q", "delta", "strict_q"})

# largest admissible ball radius delta/k, as a fraction of the minimal
# distance between two centers
_DELTA_FRACTION = 0.45


class ConfigError(ValueError):
    """A parameter violates one of the admissible ranges."""


class ShapeError(ConfigError):
    """The parameter sequences do not match the requested pattern."""


@dataclass(frozen=True)
class BubbleAtom:
    """One signed copy ``sign * scale^{-(n-2)/2} U((y - center)/scale)``.

    ``circle`` is -1 for the central bubble, 0 for the equatorial circle of
    the odd pattern and ``i >= 1`` for the i-th doubled circle.  ``level`` is
    +1 (upper circle), -1 (lower circle) or 0 (equator / center).
    """

    sign: int
    center: tuple[float, ...]
    scale: float
    circle: int = -1
    level: int = 0
    j: int = 0


@dataclass(frozen=True)
class ProblemConfig:
    n: int
    k: int
    pattern: str
    m: int
    ell: tuple[float, ...]
    t: tuple[float, ...]
    q: float
    delta: float
    strict_q: bool = False
    eta: float = ETA_DEFAULT
    # derived
    p: float = field(init=False)
    gamma: float = field(init=False)
    lam: tuple[float, ...] = field(init=False)
    tau: tuple[float, ...] = field(init=False)
    R: tuple[float, ...] = field(init=False)
    mu: float | None = field(init=False)
    R_eq: float | None = field(init=False)
    delta_eff: float = field(init=False)

    def __post_init__(self) -> None:
        n, k = self.n, self.k
        set_ = object.__setattr__
        set_(self, "p", (n + 2.0) / (n - 2.0))
        set_(self, "gamma", n * (n - 2.0) / 4.0)
        circle_ell = self.ell[1:] if self.pattern == "odd" else self.ell
        lam = tuple(scale_from_ell(n, k, e) for e in circle_ell)
        tau = tuple(height_from_t(n, k, s) for s in self.t)
        set_(self, "lam", lam)
        set_(self, "tau", tau)
        set_(self, "R", tuple(math.sqrt(1.0 - x * x) for x in lam))
        if self.pattern == "odd":
            mu = scale_from_ell(n, k, self.ell[0])
            set_(self, "mu", mu)
            set_(self, "R_eq", math.sqrt(1.0 - mu * mu))
        else:
            set_(self, "mu", None)
            set_(self, "R_eq", None)
        for x in lam + tau + ((self.mu,) if self.mu is not None else ()):
            if not (0.0 < x < 1.0):
                raise ConfigError(f"derived scale/height {x} outside (0, 1); decrease ell/t or increase k")
        set_(self, "delta_eff", _effective_delta(self))

    @property
    def circles(self) -> int:
        """Number of doubled circle pairs (m, or 1 for the double pattern)."""
        return len(self.t)

    @property
    def ball_radius(self) -> float:
        """Radius ``delta/k`` of the interior balls (after any shrinking)."""
        return self.delta_eff / self.k

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "k": self.k,
            "pattern": self.pattern,
            "m": self.m,
            "ell": list(self.ell),
            "t": list(self.t),
            "q": self.q,
            "delta": self.delta,
            "strict_q": self.strict_q,
        }

    def replace(self, **changes: Any) -> "ProblemConfig":
        d = self.to_dict()
        d.update(changes)
        return build_config(eta=self.eta, **d)


def scale_from_ell(n: int, k: int, ell: float) -> float:
    if n >= 4:
        return ell ** (2.0 / (n - 2)) / k**2
    lk = math.log(k)
    return ell**2 / (k**2 * lk**2)


def height_from_t(n: int, k: int, t: float) -> float:
    if n >= 4:
        return t / k ** (1.0 - 2.0 / (n - 1))
    return t / math.sqrt(math.log(k))


def q_bounds(n: int, strict: bool) -> tuple[float, float]:
    upper = n / (2.0 - 2.0 / (n - 1)) if strict else float(n)
    return n / 2.0, min(float(n), upper)


def build_config(
    n: int,
    k: int,
    pattern: str = "double",
    ell: Any = (1.0,),
    t: Any = (1.0,),
    q: float | None = None,
    delta: float = DELTA_DEFAULT,
    m: int | None = None,
    strict_q: bool = False,
    eta: float = ETA_DEFAULT,
) -> ProblemConfig:
    """Validate the parameters and return a configuration with derived scalars."""
    if int(n) != n or n < 3:
        raise ConfigError(f"n must be an integer >= 3, got {n}")
    if int(k) != k or k < 2:
        raise ConfigError(f"k must be an integer >= 2, got {k}")
    n, k = int(n), int(k)
    if pattern not in PATTERNS:
        raise ConfigError(f"pattern must be one of {PATTERNS}, got {pattern!r}")
    if not (0.0 < eta < 1.0):
        raise ConfigError(f"eta must lie in (0, 1), got {eta}")
    ell_t = tuple(float(x) for x in np.atleast_1d(np.asarray(ell, dtype=float)))
    t_t = tuple(float(x) for x in np.atleast_1d(np.asarray(t, dtype=float)))
    if pattern == "double":
        if m not in (None, 1):
            raise ShapeError("pattern 'double' has exactly one pair of circles (m = 1)")
        m = 1
    elif m is None:
        m = len(t_t)
    if int(m) != m or m < 1:
        raise ConfigError(f"m must be an integer >= 1, got {m}")
    m = int(m)
    n_ell = m + 1 if pattern == "odd" else m
    if len(ell_t) != n_ell:
        raise ShapeError(f"pattern {pattern!r} with m={m} needs {n_ell} ell values, got {len(ell_t)}")
    if len(t_t) != m:
        raise ShapeError(f"pattern {pattern!r} with m={m} needs {m} t values, got {len(t_t)}")
    for name, seq in (("ell", ell_t), ("t", t_t)):
        for x in seq:
            if not (eta < x < 1.0 / eta):
                raise ConfigError(f"{name} = {x} outside ({eta}, {1.0 / eta})")
    if q is None:
        lo, hi = q_bounds(n, True)
        q = 0.5 * (lo + hi)
    q = float(q)
    lo, hi = q_bounds(n, False)
    if not (lo < q < hi):
        raise ConfigError(f"q = {q} outside ({lo}, {hi})")
    if strict_q:
        _, hi_s = q_bounds(n, True)
        if not q < hi_s:
            raise ConfigError(f"q = {q} violates the strict bound q < n/(2 - 2/(n-1)) = {hi_s}")
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    cfg = ProblemConfig(
        n=n, k=k, pattern=pattern, m=m, ell=ell_t, t=t_t, q=q,
        delta=float(delta), strict_q=bool(strict_q), eta=float(eta),
    )
    return cfg


def lattice_points(cfg: ProblemConfig) -> list[BubbleAtom]:
    """Central atom first, then satellites: equator (odd), then each circle upper/lower."""
    n, k = cfg.n, cfg.k
    theta = 2.0 * np.pi * np.arange(k) / k
    c, s = np.cos(theta), np.sin(theta)
    atoms = [BubbleAtom(1, (0.0,) * n, 1.0)]
    if cfg.pattern == "odd":
        R = cfg.R_eq
        for j in range(k):
            ctr = np.zeros(n)
            ctr[0], ctr[1] = R * c[j], R * s[j]
            atoms.append(BubbleAtom(-1, tuple(ctr), cfg.mu, circle=0, level=0, j=j))
    for i, (lam, tau, R) in enumerate(zip(cfg.lam, cfg.tau, cfg.R), start=1):
        rho = R * math.sqrt(1.0 - tau * tau)
        for level in (1, -1):
            for j in range(k):
                ctr = np.zeros(n)
                ctr[0], ctr[1], ctr[2] = rho * c[j], rho * s[j], level * R * tau
                atoms.append(BubbleAtom(-1, tuple(ctr), lam, circle=i, level=level, j=j))
    return atoms


def atom_arrays(cfg: ProblemConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lattice as arrays ``(signs[M], centers[M, n], scales[M])``."""
    atoms = lattice_points(cfg)
    signs = np.array([a.sign for a in atoms], dtype=float)
    centers = np.array([a.center for a in atoms], dtype=float)
    scales = np.array([a.scale for a in atoms], dtype=float)
    return signs, centers, scales


def min_center_distance(cfg: ProblemConfig) -> float:
    """Smallest distance between two satellite centers."""
    _, centers, _ = atom_arrays(cfg)
    d, _ = cKDTree(centers[1:]).query(centers[1:], k=2)
    return float(d[:, 1].min())


def _effective_delta(cfg: ProblemConfig) -> float:
    dmin = min_center_distance(cfg)
    cap = _DELTA_FRACTION * dmin * cfg.k
    if cfg.delta / cfg.k < 0.5 * dmin:
        return cfg.delta
    warnings.warn(
        f"delta/k = {cfg.delta / cfg.k:.3g} is not below half the minimal center distance "
        f"{0.5 * dmin:.3g}; shrinking delta to {cap:.3g}",
        stacklevel=3,
    )
    return cap


@dataclass
class Diagnostic:
    name: str
    passed: bool
    measured: float
    threshold: float
    kind: str = "invariant"  # or "warning"


def validate(cfg: Any, tol: float = 1e-12) -> list[Diagnostic]:
    """Report every invariant with its measured residual; never raises."""
    out: list[Diagnostic] = []

    def add(name: str, ok: bool, meas: float, thr: float, kind: str = "invariant") -> None:
        out.append(Diagnostic(name, bool(ok), float(meas), float(thr), kind))

    try:
        n, k = cfg.n, cfg.k
        add("n >= 3", n >= 3, n, 3)
        add("k >= 2", k >= 2, k, 2)
        eta = getattr(cfg, "eta", ETA_DEFAULT)
        for name, seq in (("ell", cfg.ell), ("t", cfg.t)):
            for x in seq:
                add(f"{name} in (eta, 1/eta)", eta < x < 1 / eta, x, eta)
        lo, hi = q_bounds(n, False)
        add("n/2 < q < n", lo < cfg.q < hi, cfg.q, hi)
        if cfg.strict_q:
            _, hs = q_bounds(n, True)
            add("q < n/(2-2/(n-1))", cfg.q < hs, cfg.q, hs)
        for i, (lam, R, tau) in enumerate(zip(cfg.lam, cfg.R, cfg.tau), start=1):
            res = abs(lam * lam + R * R - 1.0)
            add(f"|lambda_{i}^2 + R_{i}^2 - 1|", res <= tol, res, tol)
            add(f"lambda_{i} in (0,1)", 0 < lam < 1, lam, 1)
            add(f"tau_{i} in (0,1)", 0 < tau < 1, tau, 1)
            ell_i = cfg.ell[i] if cfg.pattern == "odd" else cfg.ell[i - 1]
            rel = abs(lam / scale_from_ell(n, k, ell_i) - 1.0)
            add(f"lambda_{i} reproduces the scaling law", rel <= tol, rel, tol)
        if cfg.mu is not None:
            res = abs(cfg.mu**2 + cfg.R_eq**2 - 1.0)
            add("|mu^2 + R^2 - 1|", res <= tol, res, tol)
        if k < 8:
            add("k large enough for asymptotic claims", False, k, 8, kind="warning")
    except Exception as exc:  # a hand-edited object may lack fields
        add(f"malformed config: {exc}", False, float("nan"), float("nan"))
    return out


def config_from_dict(d: dict[str, Any], eta: float = ETA_DEFAULT) -> ProblemConfig:
    unknown = set(d) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = {"n", "k"} - set(d)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    return build_config(
        n=d["n"], k=d["k"], pattern=d.get("pattern", "double"), m=d.get("m"),
        ell=d.get("ell", (1.0,)), t=d.get("t", (1.0,)), q=d.get("q"),
        delta=d.get("delta", DELTA_DEFAULT), strict_q=d.get("strict_q", False), eta=eta,
    )


def dumps(cfg: ProblemConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)


def loads(text: str) -> ProblemConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON config: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(d)
