"""Pointwise error of the ansatz, its interior split and the ball cutoffs.

Each bubble solves the equation exactly, so ``Delta u = -gamma * sum_j
sign_j U_j^p`` and the error ``E = Delta u + gamma |u|^{p-1} u`` is evaluated
algebraically as ``gamma * (sign(u)|u|^p - sum_j sign_j U_j^p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bubble import AtomSet, ScalarField, _as_batch, _unbatch, _CHUNK
from .config import ProblemConfig, lattice_points


class DomainError(ValueError):
    """A point lies outside the region where an operation is defined."""


def _signed_power(u: np.ndarray, p: float) -> np.ndarray:
    ip = int(round(p))
    if abs(p - ip) < 1e-15 and ip % 2 == 1:
        return u**ip
    return np.sign(u) * np.abs(u) ** p


def error_values(atoms: AtomSet, Y: np.ndarray) -> np.ndarray:
    n = atoms.n
    p = (n + 2.0) / (n - 2.0)
    gamma = n * (n - 2.0) / 4.0
    out = np.empty(len(Y))
    for a in range(0, len(Y), _CHUNK):
        val, _, _ = atoms.terms(Y[a:a + _CHUNK])
        u = val @ atoms.signs
        # same power routine on both sides, so a lone bubble gives exactly 0
        out[a:a + _CHUNK] = gamma * (_signed_power(u, p) - _signed_power(val, p) @ atoms.signs)
    return out


def error_gradient(atoms: AtomSet, Y: np.ndarray) -> np.ndarray:
    n = atoms.n
    p = (n + 2.0) / (n - 2.0)
    gamma = n * (n - 2.0) / 4.0
    out = np.empty(Y.shape)
    for a in range(0, len(Y), _CHUNK):
        val, dval, _ = atoms.terms(Y[a:a + _CHUNK], grad=True)
        u = val @ atoms.signs
        du = np.einsum("ijk,j->ik", dval, atoms.signs)
        coef = p * np.abs(u) ** (p - 1.0)
        own = p * val ** (p - 1.0) * atoms.signs[None, :]
        out[a:a + _CHUNK] = gamma * (coef[:, None] * du - np.einsum("ijk,ij->ik", dval, own))
    return out


def error_field_from_atoms(atoms: AtomSet) -> ScalarField:
    return ScalarField(
        atoms.n,
        lambda Y: error_values(atoms, Y),
        lambda Y: error_gradient(atoms, Y),
        "error",
        -(atoms.n + 2.0),
        f"error of {len(atoms)} signed bubbles",
    )


def error_field(cfg: ProblemConfig) -> ScalarField:
    return error_field_from_atoms(AtomSet.from_config(cfg))


def error_eval(cfg: ProblemConfig, y):
    Y, single = _as_batch(y)
    return _unbatch(error_values(AtomSet.from_config(cfg), Y), single)


# ---------------------------------------------------------------------------
# interior split around a representative satellite


@dataclass
class ErrorSplit:
    """Error at ``center + scale * y`` split into an even part and a remainder.

    ``e_s`` and ``e_star`` are values of the (unscaled) error; multiply by
    ``scale**((n+2)/2)`` for the expanded-variable form.
    """

    e_s: np.ndarray
    e_star: np.ndarray
    local_point: np.ndarray
    full: np.ndarray
    scale: float
    center: np.ndarray


def representative_index(cfg: ProblemConfig, circle_index: int) -> int:
    """Atom index of the first upper atom of a circle (0 = equator, odd pattern)."""
    for idx, a in enumerate(lattice_points(cfg)):
        if a.circle == circle_index and a.j == 0 and a.level in (0, 1) and idx > 0:
            return idx
    raise IndexError(f"no circle with index {circle_index} in pattern {cfg.pattern!r}")


@dataclass(frozen=True)
class SplitConstants:
    """Constant ingredients of the even part at one satellite."""

    scale: float
    center: np.ndarray
    interaction: float  # sum over other satellites of 2^{(n-2)/2} s^{(n-2)/2} / |c - c_j|^{n-2}
    interaction_p: float  # same terms raised to the power p, summed
    central: float  # U(center)


def split_constants(cfg: ProblemConfig, atom_index: int) -> SplitConstants:
    n, p = cfg.n, cfg.p
    atoms = AtomSet.from_config(cfg)
    c = atoms.centers[atom_index]
    s = atoms.scales[atom_index]
    others = np.array([i for i in range(1, len(atoms)) if i != atom_index])
    d = np.sqrt(((atoms.centers[others] - c) ** 2).sum(axis=1))
    terms = (2.0 * atoms.scales[others]) ** (0.5 * (n - 2)) / d ** (n - 2)
    # summation in a fixed (sorted) order for reproducibility
    terms = np.sort(terms)
    central = (2.0 / (1.0 + float(c @ c))) ** (0.5 * (n - 2))
    return SplitConstants(s, c, float(math.fsum(terms)), float(math.fsum(terms**p)), central)


def symmetric_part(cfg: ProblemConfig, const: SplitConstants, y_local: np.ndarray) -> np.ndarray:
    """Even part ``E^s(center + scale*y)``; depends on ``y`` only through ``U(y)``.

    Leading terms of the interior expansion: the first bracket collects the
    constant values of the other bubbles and of the central bubble at the
    center of the chosen satellite, the second their p-th powers.
    """
    n, p, gamma = cfg.n, cfg.p, cfg.gamma
    s = const.scale
    r2 = (y_local**2).sum(axis=1)
    U = (2.0 / (1.0 + r2)) ** (0.5 * (n - 2))
    h = 0.5 * (n - 2)
    first = p * U ** (p - 1.0) * s**h * (const.central - const.interaction)
    second = s ** (0.5 * (n + 2)) * (const.interaction_p - const.central**p)
    return gamma * (first + second) / s ** (0.5 * (n + 2))


def error_split_interior(cfg: ProblemConfig, circle_index: int, y_local) -> ErrorSplit:
    Y, single = _as_batch(y_local)
    idx = representative_index(cfg, circle_index)
    const = split_constants(cfg, idx)
    s = const.scale
    radius = cfg.delta_eff / (s * cfg.k)
    if np.any(np.sqrt((Y**2).sum(axis=1)) >= radius):
        raise DomainError(f"local point outside the interior ball |y| < {radius:.6g}")
    X = const.center + s * Y
    full = error_values(AtomSet.from_config(cfg), X)
    es = symmetric_part(cfg, const, Y)
    return ErrorSplit(
        _unbatch(es, single), _unbatch(full - es, single), _unbatch(Y, single),
        _unbatch(full, single), s, const.center,
    )


# ---------------------------------------------------------------------------
# cutoffs


def smoothstep(s) -> np.ndarray:
    """1 for s <= 1, 0 for s >= 2, C^1 cubic in between."""
    s = np.asarray(s, dtype=float)
    u = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - (3.0 * u**2 - 2.0 * u**3)


def smoothstep_derivative(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    u = np.clip(s - 1.0, 0.0, 1.0)
    return -6.0 * u * (1.0 - u)


def cutoff_distance(center: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Distance to ``center``, measured on the Kelvin image for ``|y| > 1``."""
    r2 = (Y**2).sum(axis=1)
    outer = r2 > 1.0
    Z = np.where(outer[:, None], Y / np.where(outer, r2, 1.0)[:, None], Y)
    return np.sqrt(((Z - center) ** 2).sum(axis=1))


def cutoff(cfg: ProblemConfig, atom_index: int, y):
    atoms = lattice_points(cfg)
    if not 1 <= atom_index < len(atoms):
        raise IndexError(f"satellite index must lie in 1..{len(atoms) - 1}")
    Y, single = _as_batch(y)
    c = np.asarray(atoms[atom_index].center)
    s = cfg.k / cfg.delta_eff * cutoff_distance(c, Y)
    return _unbatch(smoothstep(s), single)


# ---------------------------------------------------------------------------
# symmetry residuals


def _rotation(k: int, n: int) -> np.ndarray:
    th = 2.0 * np.pi / k
    Q = np.eye(n)
    Q[0, 0] = Q[1, 1] = math.cos(th)
    Q[0, 1], Q[1, 0] = -math.sin(th), math.sin(th)
    return Q


def symmetry_sample(cfg: ProblemConfig, n_points: int = 200, seed: int = 0) -> np.ndarray:
    """Deterministic sample: half in the shell 0.2 < |y| < 5, half near satellite cores."""
    rng = np.random.default_rng(seed)
    n = cfg.n
    atoms = AtomSet.from_config(cfg)
    half = n_points // 2
    d = rng.standard_normal((half, n))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = np.exp(rng.uniform(math.log(0.2), math.log(5.0), half))
    shell = d * r[:, None]
    rest = n_points - half
    pick = rng.integers(1, len(atoms), rest)
    off = rng.standard_normal((rest, n))
    near = atoms.centers[pick] + atoms.scales[pick, None] * 3.0 * off
    return np.vstack([shell, near])


def symmetry_residual(field, cfg: ProblemConfig, n_points: int = 200, seed: int = 0,
                      kelvin_weight: float | None = None, detail: bool = False):
    """Largest relative defect of the rotation, reflection and Kelvin symmetries.

    The defect at a point is ``|f(y) - f(g y)| / max(|f(y)|, |f(g y)|, floor)``
    with ``floor`` equal to 1e-3 of the RMS of ``|f|`` over the sample.
    """
    n = cfg.n
    Y = symmetry_sample(cfg, n_points, seed)
    f0 = np.asarray(field(Y), dtype=float)
    floor = 1e-3 * math.sqrt(float(np.mean(f0**2))) + 1e-300
    res: dict[str, float] = {}

    def measure(name: str, a: np.ndarray, b: np.ndarray) -> None:
        den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        res[name] = float(np.max(np.abs(a - b) / den))

    measure("rotation", f0, np.asarray(field(Y @ _rotation(cfg.k, n).T)))
    for a in range(1, n):
        Z = Y.copy()
        Z[:, a] *= -1.0
        measure(f"reflection_y{a + 1}", f0, np.asarray(field(Z)))
    w = kelvin_weight if kelvin_weight is not None else getattr(field, "kelvin_weight", None)
    if w is not None:
        r2 = (Y**2).sum(axis=1)
        measure("kelvin", f0, r2 ** (0.5 * w) * np.asarray(field(Y / r2[:, None])))
    worst = max(res.values())
    return (worst, res) if detail else worst


# ---------------------------------------------------------------------------
# pointwise bound of the remainder


@dataclass
class RemainderBound:
    """Sup of the normalized remainder over a radial sample of the interior ball."""

    constant: float
    argmax: np.ndarray
    normalization: float


def remainder_bound_constant(cfg: ProblemConfig, circle_index: int = 1, n_radii: int = 60,
                             n_dirs: int = 24, seed: int = 0) -> RemainderBound:
    """``sup |s^{(n+2)/2} e_star(y)| (1+|y|^3) / B`` over ``|y| < delta/(s k)``.

    ``B = s^{(n-2)/2}/k`` for n >= 4 and ``s^{1/2}/(k (ln k)^3)`` for n = 3,
    so a k-independent constant means the remainder obeys the expected
    pointwise decay.
    """
    n, k = cfg.n, cfg.k
    idx = representative_index(cfg, circle_index)
    s = AtomSet.from_config(cfg).scales[idx]
    radius = cfg.delta_eff / (s * k)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n_dirs, n))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = np.concatenate([[0.0], np.geomspace(1e-2, 0.999 * radius, n_radii)])
    Y = (r[:, None, None] * d[None, :, :]).reshape(-1, n)
    split = error_split_interior(cfg, circle_index, Y)
    if n == 3:
        B = s**0.5 / (k * math.log(k) ** 3)
    else:
        B = s ** (0.5 * (n - 2)) / k
    v = np.abs(s ** (0.5 * (n + 2)) * split.e_star) * (1.0 + r.repeat(n_dirs) ** 3) / B
    i = int(np.argmax(v))
    return RemainderBound(float(v[i]), Y[i], B)
