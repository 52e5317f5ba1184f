"""Closed-form quantities for long edges of supercritical GW trees.

Notation: ``beta`` branching rate, ``m`` and ``v`` the first and second
moments of the offspring law, ``t`` the horizon and ``l`` a length
threshold.  Exponentials are evaluated from the combined exponent
``beta*(m*l - (m-1)*t)`` so that large ``t`` does not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .model import BirthDeathParams, birth_death_model
from .simulator import EdgeClass

PMF_TAIL = 1e-9
PMF_KMAX_CAP = 10_000


def _check_supercritical(m: float) -> None:
    if not m > 1.0:
        raise ValueError(f"offspring mean m={m} must exceed 1")


def _check_rate(beta: float) -> None:
    if not beta > 0.0:
        raise ValueError("beta must be positive")


def _check_nonnegative(**values: float) -> None:
    for name, value in values.items():
        if value < 0.0:
            raise ValueError(f"{name} must be nonnegative, got {value}")


def alpha_star(m: float) -> float:
    """Linear growth rate ``1 - 1/m`` of every longest edge."""
    _check_supercritical(m)
    return 1.0 - 1.0 / m


def _decay(t: float, l: float, beta: float, m: float) -> float:
    return math.exp(-beta * (m * l - (m - 1.0) * t))


def mean_population(tau: float, beta: float, m: float) -> float:
    return math.exp(beta * (m - 1.0) * tau)


def factorial_moment_population(tau: float, beta: float, m: float, v: float) -> float:
    """``E[N(N-1)]`` of the population at time ``tau`` (finite ``v``)."""
    _check_supercritical(m)
    g = beta * (m - 1.0) * tau
    return (v - m) / (m - 1.0) * (math.exp(2.0 * g) - math.exp(g))


def mean_pendant_count(t: float, l: float, beta: float, m: float) -> float:
    _check_rate(beta)
    _check_supercritical(m)
    _check_nonnegative(t=t, l=l)
    if l > t:
        return 0.0
    return _decay(t, l, beta, m)


def _interior_core(t: float, l: float, beta: float, m: float) -> float:
    # e^{-beta l} (e^{beta(m-1)(t-l)} - 1), accurate for small and large t-l
    g = beta * (m - 1.0) * (t - l)
    if g < 1.0:
        return math.exp(-beta * l) * math.expm1(g)
    return _decay(t, l, beta, m) - math.exp(-beta * l)


def mean_interior_count(t: float, l: float, beta: float, m: float) -> float:
    _check_rate(beta)
    _check_supercritical(m)
    _check_nonnegative(t=t, l=l)
    if t <= l:
        return 0.0
    return _interior_core(t, l, beta, m) / (m - 1.0)


def mean_all_count(t: float, l: float, beta: float, m: float) -> float:
    # at t == l the only candidate is the unbranched root, so the value is e^{-beta t}
    _check_rate(beta)
    _check_supercritical(m)
    _check_nonnegative(t=t, l=l)
    if t < l:
        return 0.0
    return (m * _decay(t, l, beta, m) - math.exp(-beta * l)) / (m - 1.0)


def second_moment_pendant(t: float, l: float, beta: float, m: float, v: float) -> float:
    """``E[(N_t^l)^2]`` for pendant edges; requires ``0 <= l <= t``."""
    _check_rate(beta)
    _check_supercritical(m)
    _check_nonnegative(t=t, l=l)
    if l > t:
        raise ValueError(f"threshold l={l} exceeds horizon t={t}")
    d = _decay(t, l, beta, m)
    c = (v - m) / (m - 1.0)
    return d * (1.0 + c * d - c * math.exp(-beta * l))


def variance_bound_interior(t: float, l: float, beta: float, m: float, v: float) -> float:
    """Upper bound on ``E[(interior count)^2]``, valid for ``t >= l``."""
    _check_rate(beta)
    _check_supercritical(m)
    _check_nonnegative(t=t, l=l)
    if t < l:
        raise ValueError(f"bound requires t >= l (t={t}, l={l})")
    d = _decay(t, l, beta, m)
    bracket = (
        1.0
        + 2.0 * beta * m * (t - l) * math.exp(-beta * m * l)
        + (v - m) / (m - 1.0) ** 2 * d
    )
    return d * bracket / (m - 1.0)


def variance_bound_all(t: float, l: float, beta: float, m: float, v: float) -> float:
    """Published upper bound on ``E[(all-edge count)^2]`` for ``t >= l``.

    It equals the interior bound plus the exact pendant second moment and so
    omits the cross term ``2 E[pendant * interior]``. Near ``ml = (m-1)t`` the
    true moment exceeds it (Yule, t=8, l=4: about 9.4 against 6.0).
    """
    _check_rate(beta)
    _check_supercritical(m)
    _check_nonnegative(t=t, l=l)
    if t < l:
        raise ValueError(f"bound requires t >= l (t={t}, l={l})")
    d = _decay(t, l, beta, m)
    bracket = (
        1.0
        + 2.0 * beta * (t - l) * math.exp(-beta * m * l)
        + (v - m) * (m * m - 2.0 * m + 2.0) / (m * (m - 1.0) ** 2) * d
    )
    return m * d * bracket / (m - 1.0)


def asymptotic_hit_probability(t: float, l: float, beta: float, m: float,
                               edge_class: EdgeClass | str) -> float:
    """Asymptote of ``P(count > 0)`` when ``l - alpha* t`` grows."""
    base = math.exp(-beta * m * (l - alpha_star(m) * t))
    return base * rate_prefactor(edge_class, m)


def rate_prefactor(edge_class: EdgeClass | str, m: float) -> float:
    edge_class = EdgeClass(edge_class)
    if edge_class is EdgeClass.PENDANT:
        return 1.0
    if edge_class is EdgeClass.INTERIOR:
        return 1.0 / (m - 1.0)
    return m / (m - 1.0)


def geometric_parameter(bd: BirthDeathParams, edge_class: EdgeClass | str, x: float) -> float:
    """Success probability of the geometric limit law of birth-death counts."""
    model = birth_death_model(bd)
    m, beta = model.m, model.beta
    # c/a where c is the Poisson rate factor and M_inf ~ Exp(a), a = 1 - mu/lambda
    ratio = bd.lam / (bd.lam - bd.mu) * rate_prefactor(edge_class, m) * math.exp(-m * beta * x)
    return 1.0 / (1.0 + ratio)


def logistic_location(bd: BirthDeathParams, edge_class: EdgeClass | str) -> float:
    """Location of the logistic law of the centred longest birth-death edge."""
    model = birth_death_model(bd)
    m, beta = model.m, model.beta
    return math.log(rate_prefactor(edge_class, m) * bd.lam / (bd.lam - bd.mu)) / (m * beta)


class EmptyMixture(ValueError):
    """An empirical mixture law without mixing samples."""


@dataclass(frozen=True, eq=False)
class LimitLaw:
    """Mixed-Poisson limit of the class count above ``alpha* t + x``.

    ``closed_form_birth_death`` laws are geometric; ``empirical_mixture``
    laws average Poisson pmfs over samples of the martingale limit
    conditioned to be positive.
    """

    kind: str
    edge_class: EdgeClass
    x: float
    rate_prefactor: float
    mix_samples: np.ndarray
    bd: BirthDeathParams | None = None

    CLOSED_FORM = "closed_form_birth_death"
    MIXTURE = "empirical_mixture"

    @classmethod
    def birth_death(cls, bd: BirthDeathParams, edge_class, x: float = 0.0) -> LimitLaw:
        edge_class = EdgeClass(edge_class)
        m = birth_death_model(bd).m
        return cls(cls.CLOSED_FORM, edge_class, float(x), rate_prefactor(edge_class, m),
                   np.zeros(0), bd)

    @classmethod
    def mixture(cls, samples, edge_class, m: float, x: float = 0.0) -> LimitLaw:
        edge_class = EdgeClass(edge_class)
        s = np.asarray(samples, dtype=np.float64)
        s = s[s > 0.0]
        return cls(cls.MIXTURE, edge_class, float(x), rate_prefactor(edge_class, m), s)

    def at(self, x: float) -> LimitLaw:
        return replace(self, x=float(x))

    def _geometric_p(self) -> float:
        return geometric_parameter(self.bd, self.edge_class, self.x)

    def _rates(self, beta: float, m: float) -> np.ndarray:
        if self.mix_samples.size == 0:
            raise EmptyMixture("empirical mixture law has no samples")
        return self.rate_prefactor * math.exp(-m * beta * self.x) * self.mix_samples


def _check_law(law: LimitLaw, beta: float, m: float) -> None:
    if law.kind == LimitLaw.CLOSED_FORM:
        model = birth_death_model(law.bd)
        if not (math.isclose(model.beta, beta, rel_tol=1e-12)
                and math.isclose(model.m, m, rel_tol=1e-12)):
            raise ValueError("beta/m do not match the birth-death law")
    elif law.kind != LimitLaw.MIXTURE:
        raise ValueError(f"unknown limit law kind {law.kind!r}")


def _poisson_mixture_pmf(rates: np.ndarray, ks: np.ndarray) -> np.ndarray:
    out = np.empty(len(ks))
    log_rates = np.log(rates)
    for i, k in enumerate(ks):
        out[i] = np.mean(np.exp(k * log_rates - rates - gammaln(k + 1.0)))
    return out


def limit_pmf(law: LimitLaw, k: int, beta: float, m: float) -> float:
    if k < 0:
        return 0.0
    _check_law(law, beta, m)
    if law.kind == LimitLaw.CLOSED_FORM:
        p = law._geometric_p()
        return p * (1.0 - p) ** k
    return float(_poisson_mixture_pmf(law._rates(beta, m), np.array([k]))[0])


def limit_pmf_table(law: LimitLaw, beta: float, m: float) -> np.ndarray:
    """``pmf[0..k_max]`` with ``k_max`` the first index reaching mass ``1 - 1e-9``."""
    _check_law(law, beta, m)
    if law.kind == LimitLaw.CLOSED_FORM:
        p = law._geometric_p()
        # (1-p)^(k+1) <= tail
        kmax = PMF_KMAX_CAP if p <= 0.0 else (
            0 if p >= 1.0 else int(math.ceil(math.log(PMF_TAIL) / math.log1p(-p))) - 1)
        kmax = min(max(kmax, 0), PMF_KMAX_CAP)
        ks = np.arange(kmax + 1)
        return p * (1.0 - p) ** ks
    rates = law._rates(beta, m)
    pieces = []
    total = 0.0
    k = 0
    block = 16
    while k <= PMF_KMAX_CAP:
        ks = np.arange(k, min(k + block, PMF_KMAX_CAP + 1))
        vals = _poisson_mixture_pmf(rates, ks)
        csum = total + np.cumsum(vals)
        hit = np.flatnonzero(csum >= 1.0 - PMF_TAIL)
        if hit.size:
            pieces.append(vals[: hit[0] + 1])
            break
        pieces.append(vals)
        total = csum[-1]
        k += block
        block *= 2
    return np.concatenate(pieces)


def limit_cdf_kth(law: LimitLaw, k: int, x, beta: float, m: float):
    """``P(W^(k) <= x)``: probability of fewer than ``k`` class edges above ``alpha* t + x``.

    ``x`` may be a scalar or an array.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_law(law, beta, m)
    xs = np.asarray(x, dtype=np.float64)
    if law.kind == LimitLaw.CLOSED_FORM:
        bd = law.bd
        # 1 - (1-p)^k with 1 - p = 1 / (1 + ((lam-mu)/lam) e^{m beta x} / prefactor)
        z = (bd.lam - bd.mu) / bd.lam / law.rate_prefactor * np.exp(m * beta * xs)
        out = 1.0 - (1.0 + z) ** (-float(k))
    else:
        if law.mix_samples.size == 0:
            raise EmptyMixture("empirical mixture law has no samples")
        out = _mixture_cdf(law, k, xs.ravel(), beta, m).reshape(xs.shape)
    return float(out) if out.ndim == 0 else out


def _mixture_cdf(law: LimitLaw, k: int, xs: np.ndarray, beta: float, m: float) -> np.ndarray:
    base = law.rate_prefactor * law.mix_samples
    log_base = np.log(base)
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        rates = base * math.exp(-m * beta * x)
        log_rates = log_base - m * beta * x
        acc = np.zeros_like(rates)
        for j in range(k):
            acc += np.exp(j * log_rates - rates - gammaln(j + 1.0))
        out[i] = acc.mean()
    return out
