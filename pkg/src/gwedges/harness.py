"""Replicate farms and goodness-of-fit checks against the limit laws.

Counts are compared with the mixed-Poisson limits at ``l = alpha* t + x``
and order statistics ``L^(k) - alpha* t`` with the limit CDFs, both
conditioned on ``N_t > 0``.  All randomness is keyed by the master seed, so
a report is a pure function of its configuration.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import stats as sps

from .analytics import (
    LimitLaw,
    alpha_star,
    limit_cdf_kth,
    limit_pmf_table,
    logistic_location,
    mean_all_count,
    mean_interior_count,
    mean_pendant_count,
    second_moment_pendant,
)
from .model import BirthDeathParams, ModelParams, as_model, birth_death_model
from .rng import derive_seed
from .simulator import DEFAULT_PARTICLE_CAP, EDGE_CLASSES, EdgeClass, simulate_batch

MIN_REPLICATES = 100
MIN_SURVIVORS = 100
CAP_HEADROOM = 10.0
M_INFTY_MIN_SIZE = 1e3
UNDEFINED_FLAG_FRACTION = 0.01
LAW_AUTO = "auto"
LAW_KINDS = (LAW_AUTO, LimitLaw.CLOSED_FORM, LimitLaw.MIXTURE)


class ConfigError(ValueError):
    """An experiment configuration violates a precondition."""


class TooFewSurvivors(RuntimeError):
    """Fewer than ``MIN_SURVIVORS`` replicates survived to the horizon."""


# ---------------------------------------------------------------- distances


def tv_distance(p, q) -> float:
    """Total variation ``0.5 * sum |p - q|``; missing support counts as zero mass."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.size == 0 or q.size == 0:
        raise ValueError("tv_distance of an empty pmf")
    n = max(p.size, q.size)
    p = np.pad(p, (0, n - p.size))
    q = np.pad(q, (0, n - q.size))
    return 0.5 * math.fsum(np.abs(p - q))


def ks_distance(samples, cdf) -> float:
    """Two-sided Kolmogorov-Smirnov statistic of ``samples`` against ``cdf``.

    ``cdf`` maps an array of points to reference probabilities.  The
    supremum is attained at a sample point, from the left or the right.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("ks_distance of an empty sample")
    f = np.asarray(cdf(x), dtype=np.float64)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def standard_error(samples) -> float:
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 2:
        raise ValueError("standard error needs at least two samples")
    return float(s.std(ddof=1) / math.sqrt(s.size))


def mean_z_score(samples, exact_mean: float, exact_second_moment: float | None = None) -> float:
    """``(sample mean - exact mean) / SE``.

    The SE uses the exact variance when the second moment is known,
    otherwise the sample variance.
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ValueError("mean_z_score of an empty sample")
    diff = s.mean() - exact_mean
    if exact_second_moment is None:
        se = standard_error(s)
    else:
        se = math.sqrt(max(exact_second_moment - exact_mean**2, 0.0) / s.size)
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return float(diff / se)


def empirical_pmf(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=np.int64)
    if c.size == 0:
        raise ValueError("empirical pmf of an empty sample")
    return np.bincount(c) / c.size


# ------------------------------------------------------------------- config


def describe_model(model: ModelParams | BirthDeathParams) -> dict:
    if isinstance(model, BirthDeathParams):
        return {"birth_death": {"lambda": model.lam, "mu": model.mu}}
    off = model.offspring
    out = {"beta": model.beta, "m": model.m, "v": model.v, "max_offspring": off.max_offspring}
    if off.name:
        out["name"] = off.name
    if off.max_offspring <= 64:
        out["table"] = {str(k): p for k, p in off.as_mapping().items()}
    return out


def expected_population(model: ModelParams | BirthDeathParams, t: float) -> float:
    g = as_model(model).growth_rate * t
    return math.exp(g) if g < 700.0 else math.inf


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment report.

    ``law`` selects the predicted limit law: ``auto`` uses the closed form
    for birth-death models and the empirical mixture otherwise.  Mixtures
    take ``m_infty_samples`` replicates of ``M_s`` at ``s = m_infty_horizon``
    (defaulting to ``horizon_t``).
    """

    model: ModelParams | BirthDeathParams
    horizon_t: float
    offsets_x: tuple[float, ...] = (0.0,)
    ks: tuple[int, ...] = (1,)
    replicates: int = 20_000
    master_seed: int = 0
    particle_cap: int = DEFAULT_PARTICLE_CAP
    m_infty_horizon: float | None = None
    m_infty_samples: int = 100_000
    law: str = LAW_AUTO
    classes: tuple[EdgeClass, ...] = EDGE_CLASSES
    tv_threshold: float = 0.03
    ks_threshold: float = 0.03
    z_threshold: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "offsets_x", tuple(float(x) for x in self.offsets_x))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        object.__setattr__(self, "classes", tuple(EdgeClass(c) for c in self.classes))

    @property
    def params(self) -> ModelParams:
        return as_model(self.model)

    @property
    def m_infty_s(self) -> float:
        return self.horizon_t if self.m_infty_horizon is None else float(self.m_infty_horizon)

    def resolved_law(self) -> str:
        if self.law != LAW_AUTO:
            return self.law
        return LimitLaw.CLOSED_FORM if isinstance(self.model, BirthDeathParams) else LimitLaw.MIXTURE

    def validate(self, statistical: bool = True) -> ExperimentConfig:
        p = self.params
        if not p.m > 1.0:
            raise ConfigError(f"offspring mean m={p.m:.6g} must exceed 1 (supercritical)")
        if not (math.isfinite(self.horizon_t) and self.horizon_t > 0.0):
            raise ConfigError("horizon_t must be positive")
        lo = MIN_REPLICATES if statistical else 1
        if self.replicates < lo:
            raise ConfigError(f"replicates={self.replicates} below the minimum {lo}")
        if self.particle_cap < 1:
            raise ConfigError("particle_cap must be >= 1")
        _check_feasible(self.model, self.horizon_t, self.particle_cap, "horizon_t")
        if not self.offsets_x:
            raise ConfigError("offsets_x must be nonempty")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be nonempty positive integers")
        if not self.classes:
            raise ConfigError("classes must be nonempty")
        if self.law not in LAW_KINDS:
            raise ConfigError(f"law must be one of {LAW_KINDS}")
        if self.resolved_law() == LimitLaw.CLOSED_FORM and not isinstance(self.model, BirthDeathParams):
            raise ConfigError("closed-form limit laws exist only for birth-death models")
        if self.resolved_law() == LimitLaw.MIXTURE:
            if self.m_infty_samples < 1:
                raise ConfigError("m_infty_samples must be positive")
            if not self.m_infty_s > 0.0:
                raise ConfigError("m_infty_horizon must be positive")
            _check_feasible(self.model, self.m_infty_s, self.particle_cap, "m_infty_horizon")
        for name in ("tv_threshold", "ks_threshold", "z_threshold"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive")
        return self

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["model"] = describe_model(self.model)
        out["offsets_x"] = list(self.offsets_x)
        out["ks"] = list(self.ks)
        out["classes"] = [c.value for c in self.classes]
        return out


def _check_feasible(model, t: float, cap: int, what: str) -> None:
    expected = expected_population(model, t)
    if expected > cap / CAP_HEADROOM:
        raise ConfigError(
            f"{what}={t:g}: expected population {expected:.3g} exceeds particle_cap/10 "
            f"= {cap / CAP_HEADROOM:.3g}; lower the horizon or raise particle_cap"
        )


# ------------------------------------------------------------------ M_infty


def estimate_m_infty(
    params: ModelParams | BirthDeathParams,
    s: float,
    n: int,
    master_seed: int,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
    threads: int = 1,
) -> np.ndarray:
    """``M_s = exp(-(m-1) beta s) N_s`` over the surviving replicates among ``n``."""
    params = as_model(params)
    if not s > 0.0:
        raise ValueError("s must be positive")
    if n < 1:
        raise ValueError("n must be positive")
    if params.growth_rate * s < math.log(M_INFTY_MIN_SIZE):
        warnings.warn(
            f"exp(beta (m-1) s) < {M_INFTY_MIN_SIZE:g}: M_s is a poor proxy for M_infinity",
            stacklevel=2,
        )
    batch = simulate_batch(params, [s], n, master_seed, particle_cap=particle_cap, threads=threads)
    alive = batch.alive[:, 0]
    return math.exp(-params.growth_rate * s) * alive[alive > 0].astype(np.float64)


# ------------------------------------------------------------------- report


@dataclass
class CountCell:
    edge_class: str
    x: float
    threshold: float
    empirical_pmf: list
    predicted_pmf: list
    tv: float
    tv_threshold: float
    mean: float
    exact_mean: float
    z_score: float
    z_threshold: float

    @property
    def passed(self) -> bool:
        return self.tv <= self.tv_threshold and abs(self.z_score) <= self.z_threshold


@dataclass
class LengthCell:
    edge_class: str
    k: int
    n_defined: int
    undefined: int
    undefined_flag: bool
    ks: float
    ks_threshold: float
    x_grid: list
    empirical_cdf: list
    predicted_cdf: list
    logistic_ks: float | None = None

    @property
    def passed(self) -> bool:
        ok = self.ks <= self.ks_threshold
        if self.logistic_ks is not None:
            ok = ok and self.logistic_ks <= self.ks_threshold
        return ok


@dataclass
class ExperimentReport:
    """Outcome of a count and/or length experiment.

    Counts and lengths are conditioned on survival to the horizon; the mean
    z-scores use all replicates, since the exact means are unconditional.
    ``wall_clock_s`` is never serialized unless asked for.
    """

    config: dict
    law_kind: str
    alpha_star: float
    replicates: int
    survivors: int
    survival_fraction: float
    overflow: int
    particles: int
    m_infty_seed: int | None
    m_infty_survivors: int | None
    counts: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.counts) and all(c.passed for c in self.lengths)

    def to_dict(self, include_timing: bool = False) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_clock_s")
        out["passed"] = self.passed
        for cell, src in zip(out["counts"], self.counts):
            cell["passed"] = src.passed
        for cell, src in zip(out["lengths"], self.lengths):
            cell["passed"] = src.passed
        return out

    def to_json(self, include_timing: bool = False) -> str:
        doc = _finite(self.to_dict(include_timing))
        return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        """One row per (class, x, k) cell."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.counts:
            w.writerow(_csv_row(section="count", edge_class=c.edge_class, x=c.x, k="",
                                n=self.survivors, statistic="tv", value=c.tv,
                                threshold=c.tv_threshold, mean=c.mean, exact_mean=c.exact_mean,
                                z_score=c.z_score, undefined="", passed=c.passed))
        for c in self.lengths:
            w.writerow(_csv_row(section="length", edge_class=c.edge_class, x="", k=c.k,
                                n=c.n_defined, statistic="ks", value=c.ks,
                                threshold=c.ks_threshold, mean="", exact_mean="", z_score="",
                                undefined=c.undefined, passed=c.passed))
            if c.logistic_ks is not None:
                w.writerow(_csv_row(section="length_logistic", edge_class=c.edge_class, x="",
                                    k=c.k, n=c.n_defined, statistic="ks", value=c.logistic_ks,
                                    threshold=c.ks_threshold, mean="", exact_mean="",
                                    z_score="", undefined=c.undefined,
                                    passed=c.logistic_ks <= c.ks_threshold))
        return buf.getvalue()


CSV_COLUMNS = ("section", "edge_class", "x", "k", "n", "statistic", "value", "threshold",
               "mean", "exact_mean", "z_score", "undefined", "passed")


def format_float(v: float) -> str:
    return format(float(v), ".17g")


def _csv_row(**cells) -> list:
    row = []
    for name in CSV_COLUMNS:
        v = cells[name]
        if isinstance(v, bool):
            row.append("true" if v else "false")
        elif isinstance(v, float):
            row.append(format_float(v))
        else:
            row.append(v)
    return row


def _finite(obj):
    # JSON has no NaN/inf; map them to null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


# -------------------------------------------------------------- experiments


def limit_laws(config: ExperimentConfig, threads: int = 1):
    """Base law per class (at ``x = 0``), mixture seed and sample count."""
    p = config.params
    if config.resolved_law() == LimitLaw.CLOSED_FORM:
        return {c: LimitLaw.birth_death(config.model, c) for c in config.classes}, None, None
    seed = derive_seed(config.master_seed, "m_infty")
    samples = estimate_m_infty(p, config.m_infty_s, config.m_infty_samples, seed,
                               config.particle_cap, threads)
    return {c: LimitLaw.mixture(samples, c, p.m) for c in config.classes}, seed, len(samples)


def _exact_moments(edge_class: EdgeClass, t: float, l: float, p: ModelParams):
    l = max(l, 0.0)
    if edge_class is EdgeClass.PENDANT:
        mean = mean_pendant_count(t, l, p.beta, p.m)
        second = second_moment_pendant(t, l, p.beta, p.m, p.v) if l <= t else 0.0
        return mean, second
    if edge_class is EdgeClass.INTERIOR:
        return mean_interior_count(t, l, p.beta, p.m), None
    return mean_all_count(t, l, p.beta, p.m), None


def run_experiment(config: ExperimentConfig, threads: int = 1, counts: bool = True,
                   lengths: bool = True) -> ExperimentReport:
    """Simulate once and evaluate count and/or length cells."""
    config.validate()
    started = time.perf_counter()
    p = config.params
    t = config.horizon_t
    a = alpha_star(p.m)
    xs = sorted(set(config.offsets_x))
    thresholds = [a * t + x for x in xs] if counts else []
    kmax = max(config.ks) if lengths else 0
    batch = simulate_batch(p, [t], config.replicates, config.master_seed, thresholds, kmax,
                           config.particle_cap, threads)
    surv = batch.alive[:, 0] > 0
    n_surv = int(surv.sum())
    if n_surv < MIN_SURVIVORS:
        raise TooFewSurvivors(
            f"{n_surv} of {config.replicates} replicates survived to t={t:g} "
            f"(need {MIN_SURVIVORS})"
        )
    laws, m_seed, m_n = limit_laws(config, threads)
    report = ExperimentReport(
        config=config.to_dict(),
        law_kind=config.resolved_law(),
        alpha_star=a,
        replicates=config.replicates,
        survivors=n_surv,
        survival_fraction=n_surv / config.replicates,
        overflow=0,
        particles=int(batch.particles.sum()),
        m_infty_seed=m_seed,
        m_infty_survivors=m_n,
    )
    for c in config.classes:
        law = laws[c]
        if counts:
            for j, x in enumerate(xs):
                report.counts.append(
                    _count_cell(config, c, x, thresholds[j], batch.counts[:, 0, c.index, j],
                                surv, law.at(x), p)
                )
        if lengths:
            for k in config.ks:
                top = batch.top[surv, 0, c.index, k - 1] - a * t
                report.lengths.append(_length_cell(config, c, k, top, law, p, xs))
    report.wall_clock_s = time.perf_counter() - started
    return report


def run_count_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    return run_experiment(config, threads, counts=True, lengths=False)


def run_length_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    return run_experiment(config, threads, counts=False, lengths=True)


def _count_cell(config, c, x, l, counts_all, surv, law, p) -> CountCell:
    emp = empirical_pmf(counts_all[surv])
    pred = limit_pmf_table(law, p.beta, p.m)
    mean, second = _exact_moments(c, config.horizon_t, l, p)
    return CountCell(
        edge_class=c.value,
        x=x,
        threshold=l,
        empirical_pmf=emp.tolist(),
        predicted_pmf=pred.tolist(),
        tv=tv_distance(emp, pred),
        tv_threshold=config.tv_threshold,
        mean=float(counts_all.mean()),
        exact_mean=mean,
        z_score=mean_z_score(counts_all, mean, second),
        z_threshold=config.z_threshold,
    )


def _length_cell(config, c, k, top, law, p, xs) -> LengthCell:
    defined = top[~np.isnan(top)]
    undefined = int(top.size - defined.size)

    def ref(z):
        return limit_cdf_kth(law, k, z, p.beta, p.m)

    grid = np.asarray(xs, dtype=np.float64)
    logistic = None
    if k == 1 and law.kind == LimitLaw.CLOSED_FORM:
        scale = 1.0 / (p.m * p.beta)
        loc = logistic_location(law.bd, c)
        logistic = ks_distance(defined, lambda z: sps.logistic.cdf(z, loc=loc, scale=scale))
    return LengthCell(
        edge_class=c.value,
        k=k,
        n_defined=int(defined.size),
        undefined=undefined,
        undefined_flag=undefined > UNDEFINED_FLAG_FRACTION * top.size,
        ks=ks_distance(defined, ref),
        ks_threshold=config.ks_threshold,
        x_grid=grid.tolist(),
        empirical_cdf=[float(np.mean(defined <= g)) for g in grid],
        predicted_cdf=np.atleast_1d(ref(grid)).tolist(),
        logistic_ks=logistic,
    )


def mixture_crosscheck(config: ExperimentConfig, threads: int = 1) -> dict:
    """TV between closed-form and empirical-mixture predicted pmfs per (class, x).

    Only defined for birth-death models; the mixture uses the configured
    ``M_s`` sample.
    """
    if not isinstance(config.model, BirthDeathParams):
        raise ConfigError("the cross-check needs a birth-death model")
    closed = {c: LimitLaw.birth_death(config.model, c) for c in config.classes}
    mixed, _, _ = limit_laws(replace(config, law=LimitLaw.MIXTURE), threads)
    p = birth_death_model(config.model)
    out = {}
    for c in config.classes:
        for x in config.offsets_x:
            out[(c.value, x)] = tv_distance(
                limit_pmf_table(closed[c].at(x), p.beta, p.m),
                limit_pmf_table(mixed[c].at(x), p.beta, p.m),
            )
    return out


# -------------------------------------------------------------- convergence


QUANTILES = (0.5, 0.9, 0.95, 0.99)


@dataclass
class ConvergenceTable:
    """Per-time summaries of ``|L^(k)_t / t - alpha*|`` over surviving trajectories.

    A trajectory survives when ``N > 0`` at the last grid time.  Monotonicity
    tallies count violations between consecutive grid times.
    """

    times: list
    k: int
    alpha_star: float
    tolerance: float
    survivors: int
    quantiles: dict
    within_tolerance: dict
    undefined: dict
    nondecreasing_violations: dict
    pendant_increment_violations: int

    def rows(self) -> list[dict]:
        out = []
        for c, per_t in self.quantiles.items():
            for i, t in enumerate(self.times):
                row = {"edge_class": c, "t": t}
                for q, v in zip(QUANTILES, per_t[i]):
                    row[f"q{round(100 * q)}"] = v
                row["within_tolerance"] = self.within_tolerance[c][i]
                row["undefined"] = self.undefined[c][i]
                out.append(row)
        return out

    def to_json(self) -> str:
        return json.dumps(_finite(asdict(self)), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = list(rows[0]) if rows else ["edge_class", "t"]
        w.writerow(header)
        for r in rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in r.values()])
        return buf.getvalue()


def run_convergence_diagnostic(config: ExperimentConfig, time_grid, k: int = 1,
                               tolerance: float = 0.05, threads: int = 1) -> ConvergenceTable:
    """Trajectories of ``L^(k)_t / t`` from snapshots of one run per replicate."""
    grid = np.asarray(time_grid, dtype=np.float64)
    if grid.size == 0 or grid[0] <= 0.0 or np.any(np.diff(grid) <= 0.0):
        raise ConfigError("time_grid must be positive and strictly ascending")
    if k < 1:
        raise ConfigError("k must be >= 1")
    replace(config, horizon_t=float(grid[-1])).validate()
    p = config.params
    a = alpha_star(p.m)
    batch = simulate_batch(p, grid, config.replicates, config.master_seed, (), k,
                           config.particle_cap, threads)
    surv = batch.alive[:, -1] > 0
    n_surv = int(surv.sum())
    if n_surv < MIN_SURVIVORS:
        raise TooFewSurvivors(f"{n_surv} trajectories survived to t={grid[-1]:g}")
    quantiles, within, undefined, nondec = {}, {}, {}, {}
    pendant_viol = 0
    for c in config.classes:
        traj = batch.top[surv, :, c.index, k - 1]
        dev = np.abs(traj / grid - a)
        q, wt, ud = [], [], []
        for g in range(grid.size):
            col = dev[:, g]
            ok = col[~np.isnan(col)]
            q.append([float(np.quantile(ok, qq)) if ok.size else math.nan for qq in QUANTILES])
            # undefined order statistics count as outside the tolerance
            wt.append(float(np.sum(ok <= tolerance) / n_surv))
            ud.append(int(col.size - ok.size))
        quantiles[c.value], within[c.value], undefined[c.value] = q, wt, ud
        step = np.diff(traj, axis=1)
        both = ~np.isnan(step)
        if c is not EdgeClass.PENDANT:
            # an edge set only grows and each edge only lengthens over time
            nondec[c.value] = int(np.sum(step[both] < 0.0))
        else:
            slack = np.diff(grid) * (1.0 + 1e-12) + 1e-12
            pendant_viol = int(np.sum((step > slack)[both]))
    return ConvergenceTable(
        times=grid.tolist(),
        k=k,
        alpha_star=a,
        tolerance=tolerance,
        survivors=n_surv,
        quantiles=quantiles,
        within_tolerance=within,
        undefined=undefined,
        nondecreasing_violations=nondec,
        pendant_increment_violations=pendant_viol,
    )
