"""Classical survival estimators and scoring rules.

Kaplan-Meier and censoring-distribution Kaplan-Meier, Cox proportional
hazards (Newton iterations, Breslow tie handling and baseline), the
accelerated-failure-time hazard transform, and the three scores used for
model comparison: right-censored log-likelihood (the proper scoring rule
used for both training and evaluation), time-dependent concordance, and
the censored Brier score.

A "model" here is anything exposing ``survival(t, x)`` and, where a score
needs it, ``density(t, x)``, both evaluated at exact observed times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RCLL_FLOOR = 1e-12  # applied inside the log; recorded in results metadata


class SurvivalStatsError(ValueError):
    pass


class ConvergenceError(SurvivalStatsError):
    def __init__(self, msg: str, grad_norm: float):
        super().__init__(f"{msg} (gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


def _as_zd(z, delta) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    delta = np.asarray(delta, dtype=int)
    if z.size == 0:
        raise SurvivalStatsError("empty sample set")
    if z.shape != delta.shape:
        raise SurvivalStatsError("z and delta shapes differ")
    if np.any(z <= 0):
        raise SurvivalStatsError("observed times must be positive")
    if not np.all((delta == 0) | (delta == 1)):
        raise SurvivalStatsError("delta must be 0 or 1")
    return z, delta


@dataclass(frozen=True)
class KMCurve:
    """Product-limit estimate: S(t) = prod over event times t_i <= t of
    (1 - k_i / n_i)."""

    times: np.ndarray  # distinct event times, sorted
    events: np.ndarray  # k_i, events at each time
    at_risk: np.ndarray  # n_i, subjects at risk just before each time
    surv: np.ndarray  # S(t_i), stepwise values

    def survival(self, t, x=None) -> np.ndarray | float:
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t_arr, side="right")
        vals = np.concatenate([[1.0], self.surv])[idx]
        return float(vals) if np.isscalar(t) or t_arr.ndim == 0 else vals


def kaplan_meier(z, delta) -> KMCurve:
    """Kaplan-Meier estimate from right-censored observations.

    Censored observations never produce a drop; they only shrink later
    risk sets.
    """
    z, delta = _as_zd(z, delta)
    order = np.argsort(z, kind="stable")
    z, delta = z[order], delta[order]
    n = z.size
    times, events, at_risk, surv = [], [], [], []
    # exact integer products; one correctly-rounded division per step
    num, den = 1, 1
    i = 0
    while i < n:
        t = z[i]
        j = i
        k = 0
        while j < n and z[j] == t:
            k += int(delta[j])
            j += 1
        if k > 0:
            n_i = n - i
            num *= n_i - k
            den *= n_i
            times.append(t)
            events.append(k)
            at_risk.append(n_i)
            surv.append(num / den)
        i = j
    return KMCurve(
        np.array(times), np.array(events, dtype=int), np.array(at_risk, dtype=int),
        np.array(surv),
    )


def censoring_km(z, delta) -> KMCurve:
    """Kaplan-Meier estimate of the censoring distribution (delta flipped)."""
    z, delta = _as_zd(z, delta)
    return kaplan_meier(z, 1 - delta)


# -- Cox proportional hazards -------------------------------------------------


@dataclass(frozen=True)
class CoxModel:
    """Fitted proportional-hazards model with a Breslow baseline."""

    beta: np.ndarray
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray  # H0 at the baseline event times

    def cumhaz0(self, t) -> np.ndarray | float:
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.baseline_times, t_arr, side="right")
        vals = np.concatenate([[0.0], self.baseline_cumhaz])[idx]
        return float(vals) if t_arr.ndim == 0 else vals

    def survival(self, t, x) -> np.ndarray | float:
        risk = np.exp(np.asarray(x, dtype=float) @ self.beta)
        return np.exp(-self.cumhaz0(t) * risk)


def cox_partial_loglik(beta, z, delta, x) -> float:
    """Breslow partial log-likelihood; exposed for oracle tests."""
    z = np.asarray(z, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eta = x @ beta
    ll = 0.0
    for i in np.flatnonzero(np.asarray(delta) == 1):
        at_risk = z >= z[i]
        ll += eta[i] - math.log(np.sum(np.exp(eta[at_risk])))
    return float(ll)


def cox_fit(z, delta, x, max_iter: int = 50, tol: float = 1e-9) -> CoxModel:
    """Maximum partial likelihood via Newton iterations (Breslow ties)."""
    z, delta = _as_zd(z, delta)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if z.size < 2 or delta.sum() < 1:
        raise SurvivalStatsError("need >= 2 samples with >= 1 event")
    p = x.shape[1]
    beta = np.zeros(p)
    order = np.argsort(z, kind="stable")
    z_s, d_s, x_s = z[order], delta[order], x[order]
    for _ in range(max_iter):
        grad = np.zeros(p)
        hess = np.zeros((p, p))
        eta = x_s @ beta
        w = np.exp(eta)
        # suffix sums over the risk set {j: z_j >= z_i}
        for i in np.flatnonzero(d_s == 1):
            risk = slice(np.searchsorted(z_s, z_s[i], side="left"), None)
            wr = w[risk]
            xr = x_s[risk]
            s0 = wr.sum()
            s1 = wr @ xr
            mu = s1 / s0
            grad += x_s[i] - mu
            s2 = (wr[:, None] * xr).T @ xr
            hess -= s2 / s0 - np.outer(mu, mu)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Hessian in Cox fit", gnorm) from None
        beta = beta - step
        if not np.all(np.isfinite(beta)):
            raise ConvergenceError("Cox coefficients diverged", gnorm)
    else:
        raise ConvergenceError("Cox fit did not converge", gnorm)
    # Breslow baseline cumulative hazard
    eta = x_s @ beta
    w = np.exp(eta)
    times, cumhaz = [], []
    h = 0.0
    i = 0
    n = z_s.size
    while i < n:
        t = z_s[i]
        j = i
        k = 0
        while j < n and z_s[j] == t:
            k += int(d_s[j])
            j += 1
        if k > 0:
            h += k / w[i:].sum()
            times.append(t)
            cumhaz.append(h)
        i = j
    return CoxModel(beta, np.array(times), np.array(cumhaz))


def aft_hazard(t, x, phi, h0):
    """Accelerated failure time hazard: phi(x) * h0(phi(x) * t).

    Evaluation only; ``phi`` maps covariates to a positive acceleration
    factor and ``h0`` is the baseline hazard function.
    """
    factor = phi(x)
    if np.any(np.asarray(factor) <= 0):
        raise SurvivalStatsError("acceleration factor must be positive")
    return factor * h0(factor * np.asarray(t, dtype=float))


# -- scoring rules -------------------------------------------------------------


def rcll(model, z, delta, x=None) -> float:
    """Mean right-censored log-likelihood: delta*log f + (1-delta)*log S.

    Higher is better (proper scoring rule); report the negative for
    comparison tables. Values are floored at ``RCLL_FLOOR`` inside the
    log; nonpositive survival or density values are an error.
    """
    z, delta = _as_zd(z, delta)
    terms = []
    for i in range(z.size):
        xi = None if x is None else x[i]
        if delta[i] == 1:
            v = float(model.density(z[i], xi))
        else:
            v = float(model.survival(z[i], xi))
        if v <= 0 or not math.isfinite(v):
            raise SurvivalStatsError(
                f"nonpositive model value {v!r} at z={z[i]}; floor the model"
            )
        terms.append(math.log(max(v, RCLL_FLOOR)))
    return math.fsum(terms) / z.size


def neg_rcll(model, z, delta, x=None) -> float:
    return -rcll(model, z, delta, x)


def c_td(model, z, delta, x) -> float:
    """Time-dependent concordance over comparable pairs.

    Pair (i, j) is comparable when i is uncensored and z_i < z_j; it is
    concordant when S(z_i | x_i) < S(z_i | x_j).
    """
    z, delta = _as_zd(z, delta)
    n = z.size
    concordant = 0
    comparable = 0
    for i in range(n):
        if delta[i] != 1:
            continue
        s_ii = float(model.survival(z[i], x[i]))
        for j in range(n):
            if j == i or not z[i] < z[j]:
                continue
            comparable += 1
            if s_ii < float(model.survival(z[i], x[j])):
                concordant += 1
    if comparable == 0:
        raise SurvivalStatsError("no comparable pairs")
    return concordant / comparable


def brier(model, z, delta, x, t: float, G: KMCurve | None = None) -> float:
    """Censored Brier score at horizon t with inverse-censoring weights.

    ``G`` defaults to the censoring-distribution Kaplan-Meier estimate
    from the same samples. Weights divide by G at the observed time z.
    """
    z, delta = _as_zd(z, delta)
    if G is None:
        G = censoring_km(z, delta)
    terms = []
    for i in range(z.size):
        xi = None if x is None else x[i]
        s_t = float(model.survival(t, xi))
        if z[i] <= t and delta[i] == 1:
            g = float(G.survival(z[i]))
            if g <= 0:
                raise SurvivalStatsError(f"censoring weight G({z[i]})=0")
            terms.append(s_t * s_t / g)
        elif z[i] > t:
            g = float(G.survival(z[i]))
            if g <= 0:
                raise SurvivalStatsError(f"censoring weight G({z[i]})=0")
            terms.append((1.0 - s_t) ** 2 / g)
        else:
            terms.append(0.0)
    return math.fsum(terms) / z.size
