"""Lattice interaction sums, their closed-form asymptotics and the reduced system.

The reduced system is the pair of scalar equations obtained from the
leading terms of the projections of the error onto ``Zbar_{n+1}`` and
``Zbar_3`` at the first satellite.  With ``h = (n-2)/2`` they read

    lambda^h U(xi) - 2^h lambda^{n-2} (S_same + S_cross) = 0
    (n-2) U(xi) R / (1+R^2) - 2 (n-2) 2^h R lambda^h S_cross^{(n)} = 0

where ``S_same``/``S_cross`` are the same-circle and cross-circle sums of
``|xi_1 - xi_j|^{2-n}`` and ``S_cross^{(n)}`` the cross sum with power ``n``.
Replacing the sums by their closed forms gives the k-independent
coefficients; keeping the exact sums gives the finite-k system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .config import ProblemConfig, build_config, height_from_t, scale_from_ell
from .quadrature import radial_integral


class FixedPointError(RuntimeError):
    """The nested fixed-point iteration did not settle."""


# ---------------------------------------------------------------------------
# constants


def A_const(n: int) -> float:
    if n == 3:
        return 1.0 / math.pi
    return 2.0 * float(special.zeta(n - 2)) / (2.0 * math.pi) ** (n - 2)


def _line_integral(power: float) -> float:
    val, _ = integrate.quad(lambda s: (1.0 + s * s) ** (-0.5 * power), 0.0, np.inf,
                            epsabs=1e-13, epsrel=1e-12)
    return val


def B_const(n: int) -> float:
    if n < 4:
        raise ValueError("B_n is defined for n >= 4 (n = 3 uses the logarithmic branch)")
    return 2.0 / (2.0 ** (n - 2) * math.pi) * _line_integral(n - 2)


def C_const(n: int) -> float:
    return 2.0 / (2.0**n * math.pi) * _line_integral(n)


def sigma_same(n: int, k: int) -> float:
    if n > 5:
        return k**-2.0
    if n == 5:
        return math.log(k) / k**2
    if n == 4:
        return 1.0 / k
    return 1.0 / math.log(k)


def sigma_cross(n: int, k: int, tau: float, power: int) -> float:
    if power == n:
        return (tau * k) ** -2.0 if n >= 5 else tau ** (n - 1)
    if n >= 5:
        return (tau * k) ** -2.0
    if n == 4:
        return tau
    return 1.0 / abs(math.log(tau))


# ---------------------------------------------------------------------------
# exact sums


def _chord2(k: int) -> np.ndarray:
    """``2(1 - cos theta_j) = 4 sin^2(pi (j-1)/k)`` for j = 1..k.

    The integer ``j-1`` is reduced to ``min(j-1, k-j+1)`` before scaling so
    that the sine is never evaluated near pi, where rounding of the angle
    would cost relative accuracy in the small chords.
    """
    m = np.arange(k)
    m = np.minimum(m, k - m)
    return 4.0 * np.sin(np.pi * m / k) ** 2


def same_terms(k: int, R: float, tau: float, power: float) -> np.ndarray:
    d2 = R * R * (1.0 - tau * tau) * _chord2(k)[1:]
    return d2 ** (-0.5 * power)


def cross_terms(k: int, R: float, tau: float, power: float) -> np.ndarray:
    d2 = R * R * (4.0 * tau * tau + (1.0 - tau * tau) * _chord2(k))
    return d2 ** (-0.5 * power)


def _fold_same(terms: np.ndarray, k: int) -> float:
    # terms[i] belongs to j = i + 2; j and k + 2 - j give equal chords
    if k % 2 == 0:
        half = terms[: k // 2 - 1]
        return math.fsum(np.concatenate([2.0 * half, [terms[k // 2 - 1]]]))
    return math.fsum(2.0 * terms[: (k - 1) // 2])


def _fold_cross(terms: np.ndarray, k: int) -> float:
    # terms[i] belongs to j = i + 1
    if k % 2 == 0:
        return math.fsum(np.concatenate([[terms[0]], 2.0 * terms[1: k // 2], [terms[k // 2]]]))
    return math.fsum(np.concatenate([[terms[0]], 2.0 * terms[1: (k + 1) // 2]]))


@dataclass
class SumReport:
    exact: float
    asymptotic: float
    naive: float
    k: int
    n: int
    tau: float
    power: int
    sigma: float
    kind: str

    @property
    def rel_error(self) -> float:
        return abs(self.exact / self.asymptotic - 1.0)

    @property
    def fold_defect(self) -> float:
        return abs(self.exact - self.naive) / abs(self.naive)


def _circle_params(cfg: ProblemConfig) -> tuple[float, float]:
    return cfg.R[0], cfg.tau[0]


def sum_same_circle(cfg: ProblemConfig, power: int | None = None) -> SumReport:
    """``sum_{j=2}^k |xi_1 - xi_j|^{-power}`` on the first circle."""
    n, k = cfg.n, cfg.k
    power = n - 2 if power is None else power
    if power not in (n - 2, n - 1, n):
        raise ValueError(f"power must be one of {n - 2}, {n - 1}, {n}")
    R, tau = _circle_params(cfg)
    terms = same_terms(k, R, tau, power)
    exact = _fold_same(terms, k)
    naive = math.fsum(terms)
    if power == 1:
        asym = A_const(3) * k * math.log(k)
    else:
        asym = 2.0 * float(special.zeta(power)) / (2.0 * math.pi) ** power * k**power
    return SumReport(exact, asym, naive, k, n, tau, power, sigma_same(n, k), "same")


def sum_cross_circle(cfg: ProblemConfig, power: int | None = None) -> SumReport:
    """``sum_{j=1}^k |xi_upper_1 - xi_lower_j|^{-power}`` on the first circle."""
    n, k = cfg.n, cfg.k
    power = n - 2 if power is None else power
    if power not in (n - 2, n):
        raise ValueError(f"power must be {n - 2} or {n}")
    R, tau = _circle_params(cfg)
    terms = cross_terms(k, R, tau, power)
    exact = _fold_cross(terms, k)
    naive = math.fsum(terms)
    if power == n:
        asym = C_const(n) * k / tau ** (n - 1)
    elif n == 3:
        asym = A_const(3) * k * math.log(math.pi / tau)
    else:
        asym = B_const(n) * k / tau ** (n - 3)
    return SumReport(exact, asym, naive, k, n, tau, power, sigma_cross(n, k, tau, power), "cross")


def calibrated_band(reports: list[SumReport], factor: float = 3.0) -> list[bool]:
    """Check ``rel_error <= factor * C * sigma_k`` with C fitted at the first report."""
    c = reports[0].rel_error / reports[0].sigma
    return [r.rel_error <= factor * c * r.sigma * (1 + 1e-12) for r in reports]


# ---------------------------------------------------------------------------
# moments


def moments(n: int, m: int = 24) -> tuple[float, float]:
    """``I1 = int U^{p-1} Z_{n+1}`` and ``I2 = int U^{p-1} y_3 Z_3`` by radial rules."""
    if n < 3:
        raise ValueError("n must be >= 3")
    p = (n + 2.0) / (n - 2.0)

    def U(r):
        return (2.0 / (1.0 + r * r)) ** (0.5 * (n - 2))

    def f1(r):
        return U(r) ** p * 0.5 * (n - 2) * (1.0 - r * r) / (1.0 + r * r)

    def f2(r):
        # y3 Z_3 averaged over the sphere: (1/n) r * (-(n-2) r / (1+r^2)) U
        return U(r) ** p * (-(n - 2)) * r * r / (1.0 + r * r) / n

    i1 = radial_integral(f1, n, m)
    i2 = radial_integral(f2, n, m)
    if not (math.isfinite(i1) and math.isfinite(i2)):
        raise ArithmeticError("moment integrals diverged")
    return i1, i2


def moments_closed_form(n: int) -> tuple[float, float]:
    """Both moments as multiples of ``int U^p`` (integration by parts)."""
    p = (n + 2.0) / (n - 2.0)
    up = radial_integral(lambda r: (2.0 / (1.0 + r * r)) ** (0.5 * (n + 2)), n, 24)
    return -0.5 * (n - 2) / p * up, -up / p


# ---------------------------------------------------------------------------
# reduced system


@dataclass
class ReducedCoefficients:
    """Coefficients of the reduced system in the forms ``e ell^2 = 1`` and
    ``d ell / t^{n-1} = 1`` (n = 3: ``g ell^2 = 1``, ``f ell / t^2 = 1``).

    ``mode='asymptotic'`` stores k-independent constants; ``mode='finite'``
    stores the effective coefficients evaluated at ``at=(ell, t)`` from exact
    lattice sums, and ``evaluate`` recomputes them at other points.
    """

    n: int
    I1: float
    I2: float
    same_circle_const: float
    cross_circle_const: float
    power_n_const: float
    assembled: tuple[float, float]
    mode: str = "asymptotic"
    k: int | None = None
    at: tuple[float, float] | None = None
    correction: float | None = None
    recipe: dict = field(default_factory=dict)

    @property
    def e_coef(self) -> float:
        return self.assembled[0]

    @property
    def d_coef(self) -> float:
        return self.assembled[1]

    def evaluate(self, ell: float, t: float) -> tuple[float, float]:
        if self.mode == "asymptotic":
            return self.assembled
        return finite_k_coefficients(self.n, self.k, ell, t)


def _recipe(n: int) -> dict:
    h = "2^{(n-2)/2}"
    if n == 3:
        return {
            "g": f"({h} A_3)^2 with A_3 = 1/pi, from lambda^h U(xi) = {h} lambda (A_3 k ln k)",
            "f": f"4 {h} C_3, from (n-2)U R/(1+R^2) = 2(n-2){h} R lambda^h C_3 k/tau^2 at R = U = 1",
            "moments": "I1, I2 multiply both projections and cancel from the vanishing conditions",
        }
    return {
        "e": f"({h} A_n)^2, from lambda^h U(xi) = {h} lambda^(n-2) A_n k^(n-2) at U = 1",
        "d": f"4 {h} C_n, from (n-2)U R/(1+R^2) = 2(n-2){h} R lambda^h C_n k/tau^(n-1) at R = U = 1",
        "moments": "I1, I2 multiply both projections and cancel from the vanishing conditions",
        "cross_circle": "B_n k/tau^(n-3) is lower order than A_n k^(n-2) and drops out",
    }


def reduced_coefficients(n: int, cfg: ProblemConfig | None = None, mode: str = "asymptotic",
                         m: int = 24) -> ReducedCoefficients:
    if n < 3:
        raise ValueError("n must be >= 3")
    i1, i2 = moments(n, m)
    h2 = 2.0 ** (0.5 * (n - 2))
    A = A_const(n)
    B = A_const(3) if n == 3 else B_const(n)
    C = C_const(n)
    e_lin = h2 * A
    d = 4.0 * h2 * C
    corr = None
    k = cfg.k if cfg is not None else None
    if n == 3 and k is not None:
        corr = math.log(2.0 * math.pi / math.sqrt(math.log(k))) / math.log(k)
    if mode == "asymptotic":
        return ReducedCoefficients(n, i1, i2, A, B, C, (e_lin**2, d), "asymptotic", k, None, corr,
                                   _recipe(n))
    if mode != "finite":
        raise ValueError(f"unknown mode {mode!r}")
    if cfg is None:
        raise ValueError("finite-k coefficients need a configuration")
    at = (cfg.ell[0], cfg.t[0])
    rec = dict(_recipe(n))
    rec["finite"] = ("exact lattice sums, exact U(xi_1), R and lambda at (ell, t); "
                     "effective coefficients defined so that the two conditions keep the same form")
    return ReducedCoefficients(n, i1, i2, A, B, C, finite_k_coefficients(n, cfg.k, *at), "finite",
                               cfg.k, at, corr, rec)


def projection_brackets(n: int, k: int, ell: float, t: float) -> tuple[float, float]:
    """Leading-order brackets of the ``Z_{n+1}`` and ``Z_3`` projections.

    Multiply the first by ``gamma p I1`` and the second by ``gamma p I2 lambda tau``
    to get the leading terms of the two projections.
    """
    h = 0.5 * (n - 2)
    lam = scale_from_ell(n, k, ell)
    tau = height_from_t(n, k, t)
    R = math.sqrt(1.0 - lam * lam)
    Uxi = (2.0 / (1.0 + R * R)) ** h
    same = _fold_same(same_terms(k, R, tau, n - 2), k)
    cross = _fold_cross(cross_terms(k, R, tau, n - 2), k)
    cross_n = _fold_cross(cross_terms(k, R, tau, n), k)
    h2 = 2.0**h
    first = lam**h * Uxi - h2 * lam ** (n - 2) * (same + cross)
    ctil = -(n - 2) * Uxi * R / (1.0 + R * R)
    cn = -2.0 * (n - 2) * h2 * R
    second = ctil * lam**h - cn * lam ** (n - 2) * cross_n
    return first, second


def finite_k_coefficients(n: int, k: int, ell: float, t: float) -> tuple[float, float]:
    """Effective ``(e, d)`` at ``(ell, t)`` from exact sums (n = 3: ``(g, f)``)."""
    h = 0.5 * (n - 2)
    lam = scale_from_ell(n, k, ell)
    tau = height_from_t(n, k, t)
    R = math.sqrt(1.0 - lam * lam)
    Uxi = (2.0 / (1.0 + R * R)) ** h
    h2 = 2.0**h
    same = _fold_same(same_terms(k, R, tau, n - 2), k)
    cross = _fold_cross(cross_terms(k, R, tau, n - 2), k)
    cross_n = _fold_cross(cross_terms(k, R, tau, n), k)
    e_lin = h2 * lam**h * (same + cross) / (Uxi * ell)
    d = 2.0 * h2 * (1.0 + R * R) * lam**h * cross_n * t ** (n - 1) / (Uxi * ell)
    return e_lin**2, d


@dataclass
class ReducedSolution:
    ell: float
    t: float
    iterations: int
    residuals: tuple[float, float]
    in_bounds: bool
    eta_bound: float


def solve_reduced(n: int, k: int, coefficients: ReducedCoefficients, eta_bound: float = 1e-2,
                  tol: float = 1e-12, max_iter: int = 1000) -> ReducedSolution:
    """Nested fixed point in ``eta = ell^2`` and ``rho = t^2``.

    ``eta <- 1/e``, then ``t <- (d ell)^{1/(n-1)}`` (equivalently
    ``rho <- f ell`` when n = 3), with the coefficients re-evaluated at the
    current point in finite-k mode.
    """
    if min(coefficients.assembled) <= 0:
        raise ValueError("reduced coefficients must be positive")
    e, d = coefficients.evaluate(1.0, 1.0) if coefficients.mode == "finite" else coefficients.assembled
    eta = 1.0 / e
    rho = (d * math.sqrt(eta)) ** (2.0 / (n - 1))
    it = 0
    for it in range(1, max_iter + 1):
        ell, t = math.sqrt(eta), math.sqrt(rho)
        e, d = coefficients.evaluate(ell, t)
        eta_new = 1.0 / e
        rho_new = (d * math.sqrt(eta_new)) ** (2.0 / (n - 1))
        moved = max(abs(eta_new - eta), abs(rho_new - rho))
        eta, rho = eta_new, rho_new
        # iterate well past ``tol`` so that the algebraic residuals land below it
        if moved < 1e-3 * tol * max(1.0, eta, rho) or moved == 0.0:
            break
    else:
        raise FixedPointError(f"no convergence in {max_iter} iterations (last move {moved:.3e})")
    ell, t = math.sqrt(eta), math.sqrt(rho)
    e, d = coefficients.evaluate(ell, t)
    res = (abs(e * ell * ell - 1.0), abs(d * ell / t ** (n - 1) - 1.0))
    if max(res) > tol:
        raise FixedPointError(f"fixed point reached but residuals {res} exceed {tol:.1e}")
    ok = all(eta_bound < v < 1.0 / eta_bound for v in (ell, t))
    return ReducedSolution(ell, t, it, res, ok, eta_bound)


def reduced_solution_config(cfg: ProblemConfig, sol: ReducedSolution) -> ProblemConfig:
    """Configuration with the solved parameters on every circle."""
    return build_config(cfg.n, cfg.k, cfg.pattern, ell=(sol.ell,) * len(cfg.ell),
                        t=(sol.t,) * len(cfg.t), q=cfg.q, delta=cfg.delta, m=cfg.m,
                        strict_q=cfg.strict_q, eta=cfg.eta)


def leading_projection(cfg: ProblemConfig, alpha: int) -> float:
    """Leading term of the projection of the error on ``Zbar_alpha`` at the first satellite.

    ``alpha = n+1``: ``gamma p I1`` times the first bracket; ``alpha = 3``:
    ``gamma p I2 lambda tau`` times the second.
    """
    n = cfg.n
    i1, i2 = moments(n)
    first, second = projection_brackets(n, cfg.k, cfg.ell[0], cfg.t[0])
    if alpha == n + 1:
        return cfg.gamma * cfg.p * i1 * first
    if alpha == 3:
        return cfg.gamma * cfg.p * i2 * cfg.lam[0] * cfg.tau[0] * second
    raise ValueError(f"leading terms are available for alpha in (3, {n + 1}), got {alpha}")


# ---------------------------------------------------------------------------
# energy expansion


def energy_basis(cfg: ProblemConfig, with_log: bool = False) -> np.ndarray:
    """Basis of the per-``k`` interaction energy model for ``n >= 4``.

    ``(e(u) - (2k+1) a_n) / k ~ b lam^h - c lam^h tau^2 - d lam^{n-2} k^{n-2}
    - e lam^{n-2} / tau^{n-3}``.  ``with_log`` appends ``-lam^{n-2} ln(1/(k lam))``,
    the self-interaction of the core bubbles that is logarithmic at ``n = 4``.
    """
    n, k = cfg.n, cfg.k
    if n < 4:
        raise ValueError("the energy expansion is stated for n >= 4")
    lam, tau = cfg.lam[0], cfg.tau[0]
    h = 0.5 * (n - 2)
    row = [lam**h, -(lam**h) * tau**2, -(lam * k) ** (n - 2), -(lam ** (n - 2)) / tau ** (n - 3)]
    if with_log:
        row.append(-(lam ** (n - 2)) * math.log(1.0 / (k * lam)))
    return np.array(row)


def fit_energy_expansion(cfgs, values, with_log: bool = False) -> tuple[np.ndarray, float]:
    """Least-squares coefficients and the largest relative fit residual."""
    X = np.array([energy_basis(c, with_log) for c in cfgs])
    y = np.asarray(values, dtype=float)
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    return coef, float(np.max(np.abs(X @ coef / y - 1.0)))
