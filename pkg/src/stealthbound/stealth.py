"""Chi-squared residue detector and the stealthy-bias budget.

Under attack the windowed statistic ``g = sum z_i^T Sigma^-1 z_i`` is
noncentral chi-squared with ``m*T`` degrees of freedom and noncentrality
equal to the windowed bias energy.  The largest energy that keeps the alarm
probability at ``p_d`` is the bias budget ``lambda_bar``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matcore as mc
from .errors import DimensionError, DomainError, InfeasibleStealthinessError

_EPS = 1e-14
_TINY = 1e-300
_MAX_TERMS = 100_000


def gammainc_pair(a: float, x: float) -> tuple[float, float]:
    """Regularised lower and upper incomplete gamma ``(P(a, x), Q(a, x))``.

    Series expansion for ``x < a + 1``, Lentz continued fraction otherwise;
    the branch that is computed directly avoids cancellation in the other.
    """
    if a <= 0.0:
        raise DomainError("incomplete gamma needs a > 0")
    if x < 0.0:
        raise DomainError("incomplete gamma needs x >= 0")
    if x == 0.0:
        return 0.0, 1.0
    log_pref = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(_MAX_TERMS):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        p = min(1.0, total * math.exp(log_pref))
        return p, 1.0 - p
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    q = min(1.0, math.exp(log_pref) * h)
    return 1.0 - q, q


def chi2_cdf(x: float, dof: float) -> float:
    return gammainc_pair(dof / 2.0, x / 2.0)[0] if x > 0 else 0.0


def chi2_sf(x: float, dof: float) -> float:
    return gammainc_pair(dof / 2.0, x / 2.0)[1] if x > 0 else 1.0


def chi2_quantile(dof: float, prob: float) -> float:
    """Threshold ``eta`` with ``P(chi2_dof <= eta) = prob`` (bracket + bisection)."""
    if not 0.0 < prob < 1.0:
        raise DomainError("probability must lie in (0, 1)")
    if dof <= 0:
        raise DomainError("degrees of freedom must be positive")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < prob:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < prob:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * hi:
            break
    return 0.5 * (lo + hi)


def _poisson_logpmf(j: int, mu: float) -> float:
    if mu == 0.0:
        return 0.0 if j == 0 else -math.inf
    return -mu + j * math.log(mu) - math.lgamma(j + 1.0)


def marcum_q(half_dof: float, lam: float, eta: float) -> float:
    """Generalised Marcum Q ``Q_{half_dof}(sqrt(lam), sqrt(eta))``.

    This is the survival function of a noncentral chi-squared variable with
    ``2*half_dof`` degrees of freedom and noncentrality ``lam``, evaluated at
    ``eta``: a Poisson(lam/2) mixture of central upper tails.  Terms are
    summed outward from the modal Poisson index until the accumulated weight
    exceeds ``1 - 1e-14``.
    """
    if lam < 0.0 or eta < 0.0:
        raise DomainError("marcum_q needs lam >= 0 and eta >= 0")
    if half_dof <= 0.0:
        raise DomainError("marcum_q needs half_dof > 0")
    if eta == 0.0:
        return 1.0
    mu = lam / 2.0
    x = eta / 2.0
    mode = int(math.floor(mu))
    weight_sum = 0.0
    total = 0.0
    lo, hi = mode - 1, mode
    lo_done = False
    hi_done = False
    while weight_sum < 1.0 - 1e-14:
        progressed = False
        if not hi_done:
            w = math.exp(_poisson_logpmf(hi, mu))
            total += w * gammainc_pair(half_dof + hi, x)[1]
            weight_sum += w
            hi += 1
            progressed = True
            if w == 0.0 and hi > mode:
                hi_done = True
        if not lo_done:
            if lo < 0:
                lo_done = True
            else:
                w = math.exp(_poisson_logpmf(lo, mu))
                total += w * gammainc_pair(half_dof + lo, x)[1]
                weight_sum += w
                lo -= 1
                progressed = True
                if w == 0.0:
                    lo_done = True
        if not progressed or hi - mode > _MAX_TERMS:
            break
    return min(1.0, max(0.0, total))


@dataclass(frozen=True)
class DetectorConfig:
    """Window length ``T``, output dimension ``m`` and target false-alarm rate."""

    T: int
    m: int
    false_alarm: float
    eta: float = field(init=False)

    def __post_init__(self):
        if self.T < 1 or self.m < 1:
            raise DomainError("window length and output dimension must be positive")
        if not 0.0 < self.false_alarm < 1.0:
            raise DomainError("false-alarm rate must lie in (0, 1)")
        object.__setattr__(self, "eta", chi2_quantile(self.dof, 1.0 - self.false_alarm))

    @property
    def dof(self) -> int:
        return self.m * self.T


@dataclass(frozen=True)
class StealthBudget:
    p_d: float
    lambda_bar: float
    horizon: Optional[int] = None  # None: stealthy for all time


def detector_stat(residues, Sigma, T: Optional[int] = None) -> float:
    """Windowed statistic ``sum_i z_i^T Sigma^-1 z_i``; alarm when it exceeds eta."""
    Z = np.atleast_2d(np.asarray(residues, dtype=float))
    Sigma = mc.symmetrize(Sigma, "Sigma")
    if Z.shape[1] != Sigma.shape[0]:
        raise DimensionError("residue dimension does not match Sigma")
    if T is not None and Z.shape[0] != T:
        raise DimensionError(f"expected a window of {T} residues, got {Z.shape[0]}")
    W = mc.solve(Sigma, Z.T)
    return float(max(0.0, np.sum(Z.T * W)))


def solve_lambda_bar(cfg: DetectorConfig, p_d: float, horizon: Optional[int] = None) -> StealthBudget:
    """Largest windowed bias energy whose detection probability is ``p_d``.

    The detection probability is strictly increasing in the noncentrality,
    so the root is bracketed by doubling from ``[0, mT]`` and then bisected
    to ``1e-10`` absolute.
    """
    if not 0.0 < p_d < 1.0:
        raise DomainError("p_d must lie in (0, 1)")
    nu = cfg.dof / 2.0
    q0 = marcum_q(nu, 0.0, cfg.eta)
    if p_d < q0 - 1e-9:
        raise InfeasibleStealthinessError(
            f"p_d={p_d} is below the false-alarm probability {q0:.6g}; no bias budget exists"
        )
    if p_d <= q0 + 1e-9:
        return StealthBudget(p_d=p_d, lambda_bar=0.0, horizon=horizon)
    lo, hi = 0.0, float(cfg.dof)
    while marcum_q(nu, hi, cfg.eta) < p_d:
        lo, hi = hi, 2.0 * hi
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if marcum_q(nu, mid, cfg.eta) < p_d:
            lo = mid
        else:
            hi = mid
    return StealthBudget(p_d=p_d, lambda_bar=0.5 * (lo + hi), horizon=horizon)


def _slack(budget: StealthBudget) -> float:
    return 1e-12 * max(1.0, budget.lambda_bar)


def bias_energy(dz, Sigma) -> float:
    dz = np.asarray(dz, dtype=float).ravel()
    return float(dz @ mc.solve(Sigma, dz))


def in_stealthy_set(dz, Sigma, budget: StealthBudget) -> bool:
    """Membership in the per-step projection ``{dz : dz^T Sigma^-1 dz <= lambda_bar}``."""
    return bias_energy(dz, Sigma) <= budget.lambda_bar + _slack(budget)


def window_budget_ok(dz_window, Sigma, budget: StealthBudget) -> bool:
    """True iff the windowed bias energy stays within ``lambda_bar``."""
    Z = np.atleast_2d(np.asarray(dz_window, dtype=float))
    total = sum(bias_energy(z, Sigma) for z in Z)
    return total <= budget.lambda_bar + _slack(budget)


def alternate_budget(cfg: DetectorConfig, p_d: float) -> float:
    """Markov-inequality budget ``eta * p_d - m*T``; negative means empty."""
    return cfg.eta * p_d - cfg.dof


def markov_detection_bound(cfg: DetectorConfig, window_energy: float) -> float:
    return (cfg.dof + window_energy) / cfg.eta
