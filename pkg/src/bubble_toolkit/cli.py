"""Batch studies over a k-list, written as CSV or JSON.

    bt <study> --config cfg.json --out result.csv --format csv [--k-list 8,16,32]

The config file holds the problem keys (``n``, ``k``, ``pattern``, ``ell``,
``t``, ``q``, ``delta``, ...) plus optional ``k_list`` and ``quadrature``
(node counts).  Exit status: 0 when every verdict passes, 1 when one
fails (the report is still written), 2 for usage errors.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from . import asymptotics as asy
from . import quadrature as quad
from .bubble import AtomSet, ansatz
from .config import CONFIG_KEYS, ConfigError, ProblemConfig, config_from_dict
from .error_field import error_field, symmetry_residual
from .rank_check import gram_matrix

STUDIES = ("scaling", "sums", "energy", "project", "reduce", "rank", "symmetry")
EXTRA_KEYS = frozenset({"k_list", "quadrature", "patterns", "alpha", "mode"})


class StudyError(click.UsageError):
    """Bad study name or configuration (exit status 2)."""


@dataclass
class Verdict:
    id: int
    passed: bool
    measured: float
    threshold: float
    note: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "pass": self.passed, "measured": self.measured,
                "threshold": self.threshold, "note": self.note}


@dataclass
class StudyResult:
    study: str
    config: dict[str, Any]
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_json(self) -> dict[str, Any]:
        return {
            "study": self.study,
            "config": self.config,
            "rows": [dict(zip(self.columns, r)) for r in self.rows],
            "verdicts": [v.to_json() for v in self.verdicts],
        }


# ---------------------------------------------------------------------------
# formatting


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def to_csv(result: StudyResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for r in result.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_safe(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return x if math.isfinite(x) else repr(x)
    return v


def to_json(result: StudyResult) -> str:
    return json.dumps(_json_safe(result.to_json()), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# fitting


def fit_loglog(pairs) -> tuple[float, float, float]:
    """Least squares of ``ln value`` against ``ln k``: ``(slope, intercept, r2)``."""
    pairs = [(float(k), float(v)) for k, v in pairs]
    if len(pairs) < 3:
        raise ValueError(f"a log-log fit needs at least 3 pairs, got {len(pairs)}")
    if any(k <= 0 or v <= 0 for k, v in pairs):
        raise ValueError("log-log fit needs positive k and values")
    x = np.log([k for k, _ in pairs])
    y = np.log([v for _, v in pairs])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# studies


def _configs(base: dict[str, Any], k_list) -> list[ProblemConfig]:
    return [config_from_dict({**base, "k": int(k)}) for k in k_list]


def _study_scaling(base, k_list, spec, opts) -> StudyResult:
    cfgs = _configs(base, k_list)
    n = cfgs[0].n
    res = StudyResult("scaling", {}, ["k", "norm", "interior", "exterior", "norm_times_lnk"])
    pairs = []
    for cfg in cfgs:
        m = quad.error_norm_merged(cfg, spec)
        res.rows.append([cfg.k, m.total, m.interior_sum, m.exterior, m.total * math.log(cfg.k)])
        pairs.append((cfg.k, m.total))
    if len(pairs) >= 3:
        slope, _, r2 = fit_loglog(pairs)
        res.columns.append("slope_fit")
        for r in res.rows:
            r.append(slope)
        if n >= 4:
            target = 1.0 - n / cfgs[0].q
            res.verdicts.append(Verdict(3, abs(slope - target) <= 0.15, slope, target,
                                        "log-log slope within 0.15 of 1-n/q"))
    if n == 3 and len(pairs) >= 2:
        scaled = [r[4] for r in res.rows]
        ratio = max(scaled) / min(scaled)
        res.verdicts.append(Verdict(3, ratio < 2.0, ratio, 2.0, "spread of norm*ln k"))
    return res


def _study_sums(base, k_list, spec, opts) -> StudyResult:
    res = StudyResult("sums", {}, ["k", "kind", "power", "exact", "asymptotic", "naive",
                                   "rel_error", "sigma", "fold_defect"])
    worst = 0.0
    for cfg in _configs(base, k_list):
        n = cfg.n
        reports = [asy.sum_same_circle(cfg, n - 2)]
        reports.append(asy.sum_cross_circle(cfg, n - 2))
        reports.append(asy.sum_cross_circle(cfg, n))
        for r in reports:
            res.rows.append([r.k, r.kind, r.power, r.exact, r.asymptotic, r.naive,
                             r.rel_error, r.sigma, r.fold_defect])
            worst = max(worst, r.fold_defect)
    res.verdicts.append(Verdict(5, worst <= 1e-14, worst, 1e-14, "folded sums equal naive sums"))
    return res


def _study_energy(base, k_list, spec, opts) -> StudyResult:
    res = StudyResult("energy", {}, ["k", "energy", "interaction", "bubbles_times_a_n"])
    n = int(base["n"])
    a_n = quad.bubble_energy(n)
    for cfg in _configs(base, k_list):
        inter = quad.energy_interaction(cfg, spec)
        count = len(AtomSet.from_config(cfg))
        res.rows.append([cfg.k, count * a_n + inter, inter, count * a_n])
    coarse, fine = quad.bubble_energy(n, 12), quad.bubble_energy(n, 24)
    drift = abs(fine / coarse - 1.0)
    res.verdicts.append(Verdict(9, drift <= 1e-3, drift, 1e-3, "a_n under node doubling"))
    return res


def _study_project(base, k_list, spec, opts) -> StudyResult:
    res = StudyResult("project", {}, ["k", "alpha", "full", "localized", "leading",
                                      "localized_over_leading", "full_over_leading"])
    for cfg in _configs(base, k_list):
        alpha = int(opts.get("alpha", cfg.n + 1))
        pr = quad.project_on_kernel(cfg, 1, alpha, spec)
        lead = asy.leading_projection(cfg, alpha)
        ratio = pr.localized / lead
        res.rows.append([cfg.k, alpha, pr.full, pr.localized, lead, ratio, pr.full / lead])
        res.verdicts.append(Verdict(6, abs(ratio - 1.0) <= 0.15, ratio, 0.15,
                                    f"localized/leading at k={cfg.k}, alpha={alpha}"))
    return res


def _study_reduce(base, k_list, spec, opts) -> StudyResult:
    mode = opts.get("mode", "finite")
    res = StudyResult("reduce", {}, ["k", "ell", "t", "residual_e", "residual_d", "alpha",
                                     "projection_start", "projection_solved", "shrink"])
    for cfg in _configs(base, k_list):
        coef = asy.reduced_coefficients(cfg.n, cfg, mode=mode)
        sol = asy.solve_reduced(cfg.n, cfg.k, coef)
        solved = asy.reduced_solution_config(cfg, sol)
        start = asy.reduced_solution_config(
            cfg, asy.ReducedSolution(1.0, 1.0, 0, (0.0, 0.0), True, sol.eta_bound))
        res.verdicts.append(Verdict(7, max(sol.residuals) <= 1e-12, max(sol.residuals), 1e-12,
                                    f"algebraic residuals at k={cfg.k}"))
        for alpha in (cfg.n + 1, 3):
            p0 = quad.project_on_kernel(start, 1, alpha, spec).localized
            p1 = quad.project_on_kernel(solved, 1, alpha, spec).localized
            shrink = abs(p0) / abs(p1) if p1 != 0.0 else math.inf
            res.rows.append([cfg.k, sol.ell, sol.t, sol.residuals[0], sol.residuals[1], alpha,
                             p0, p1, shrink])
            res.verdicts.append(Verdict(7, shrink >= 4.0, shrink, 4.0,
                                        f"projection shrink at k={cfg.k}, alpha={alpha}"))
    return res


def _study_rank(base, k_list, spec, opts) -> StudyResult:
    res = StudyResult("rank", {}, ["k", "index", "eigenvalue", "rank", "dim"])
    for cfg in _configs(base, k_list):
        g = gram_matrix(cfg, spec)
        for i, ev in enumerate(g.eigenvalues):
            res.rows.append([cfg.k, i, ev, g.rank, g.dim])
        if cfg.n == 3 and cfg.k % 2 == 0:
            res.verdicts.append(Verdict(8, g.rank == 10 and g.margin >= 1e-8, float(g.rank), 10.0,
                                        f"Gram rank at k={cfg.k}, margin {g.margin:.3e}"))
    return res


def _study_symmetry(base, k_list, spec, opts) -> StudyResult:
    res = StudyResult("symmetry", {}, ["k", "pattern", "field", "residual"])
    patterns = opts.get("patterns", [base.get("pattern", "double")])
    worst = 0.0
    for pattern in patterns:
        d = dict(base)
        if pattern != base.get("pattern", "double"):
            # other patterns fall back to one circle pair with unit parameters
            for key in ("m", "ell", "t"):
                d.pop(key, None)
            d.update(pattern=pattern, t=[1.0], ell=[1.0, 1.0] if pattern == "odd" else [1.0])
        for cfg in _configs(d, k_list):
            for name, f in (("ansatz", ansatz(cfg)), ("error", error_field(cfg))):
                r = symmetry_residual(f, cfg)
                res.rows.append([cfg.k, pattern, name, r])
                worst = max(worst, r)
    res.verdicts.append(Verdict(1, worst <= 1e-10, worst, 1e-10, "largest symmetry residual"))
    return res


_RUNNERS: dict[str, Callable] = {
    "scaling": _study_scaling,
    "sums": _study_sums,
    "energy": _study_energy,
    "project": _study_project,
    "reduce": _study_reduce,
    "rank": _study_rank,
    "symmetry": _study_symmetry,
}


def load_study_config(text: str) -> tuple[dict[str, Any], dict[str, Any]]:
    """Split a config file into problem keys and study options."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON config: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - CONFIG_KEYS - EXTRA_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = {k: v for k, v in d.items() if k in CONFIG_KEYS}
    opts = {k: v for k, v in d.items() if k in EXTRA_KEYS}
    if "k_list" not in opts:
        if "k" not in base:
            raise ConfigError("config needs 'k' or 'k_list'")
        opts["k_list"] = [base["k"]]
    base.setdefault("k", opts["k_list"][0])
    config_from_dict(base)  # validate before any work
    return base, opts


def run_study(name: str, config_file, out_format: str = "csv", k_list=None,
              spec: quad.QuadratureSpec | None = None) -> StudyResult:
    """Run a named study on a config file path or an already-parsed config dict."""
    if name not in _RUNNERS:
        raise StudyError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}")
    if out_format not in ("csv", "json"):
        raise StudyError(f"unknown format {out_format!r}")
    if isinstance(config_file, dict):
        text = json.dumps(config_file)
    else:
        try:
            text = Path(config_file).read_text()
        except OSError as exc:
            raise StudyError(f"cannot read config {config_file!r}: {exc}") from exc
    try:
        base, opts = load_study_config(text)
    except ConfigError as exc:
        raise StudyError(str(exc)) from exc
    if k_list is not None:
        opts["k_list"] = list(k_list)
    if spec is None:
        spec = quad.QuadratureSpec(**opts.get("quadrature", {}))
    try:
        result = _RUNNERS[name](base, opts["k_list"], spec, opts)
    except ConfigError as exc:
        raise StudyError(str(exc)) from exc
    result.config = {**base, **opts, "quadrature": asdict(spec)}
    result.config.pop("k", None)
    return result


def render(result: StudyResult, out_format: str) -> str:
    return to_csv(result) if out_format == "csv" else to_json(result)


def _parse_k_list(_ctx, _param, value):
    if value is None:
        return None
    try:
        ks = [int(x) for x in value.split(",") if x.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from exc
    if not ks:
        raise click.BadParameter("empty k-list")
    return ks


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("study", type=click.Choice(STUDIES))
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "out_format", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("--k-list", callback=_parse_k_list, default=None, help="e.g. 8,16,32,64")
def main(study, config_path, out_path, out_format, k_list):
    """Run STUDY and write its table to --out."""
    result = run_study(study, config_path, out_format, k_list)
    Path(out_path).write_text(render(result, out_format))
    for v in result.verdicts:
        mark = "PASS" if v.passed else "FAIL"
        click.echo(f"[{mark}] criterion {v.id}: measured {_fmt(v.measured)} "
                   f"threshold {_fmt(v.threshold)}  {v.note}")
    sys.exit(0 if result.passed else 1)


if __name__ == "__main__":
    main()
