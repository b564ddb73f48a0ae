"""Ellipsoidal safety analysis and response-schedule timing.

The attack-driven component lies in ``E1(k, Ta) = {x : x^T P1 x <= level}``
with ``level = max(1, gamma^(k-Ta) gamma_a^Ta)``; the noise-driven component
lies in ``E2(p) = {x : x^T P2 x <= 1/(1-p)}`` with probability ``p``.  A
half-space constraint ``|c^T x| <= b`` holds on the Minkowski sum iff the
sum of the two support functions is at most ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import matcore as mc
from .errors import DomainError, ZeroMarginError
from .lmi import InvarianceCertificate, RateCertificate


@dataclass(frozen=True)
class EllipsoidE1:
    P1: np.ndarray
    level: float

    def __post_init__(self):
        if self.level < 1.0:
            raise DomainError("E1 level must be >= 1")


@dataclass(frozen=True)
class EllipsoidE2:
    P2: np.ndarray
    p: float

    @property
    def level(self) -> float:
        return 1.0 / (1.0 - self.p)


@dataclass(frozen=True)
class SafetySpec:
    """Half-space pairs ``(c, b)`` meaning ``|c^T x| <= b``."""

    directions: tuple
    bounds: tuple

    def __post_init__(self):
        dirs = tuple(np.asarray(c, dtype=float).ravel() for c in self.directions)
        if len(dirs) != len(self.bounds) or not dirs:
            raise DomainError("need one bound per direction")
        for c, b in zip(dirs, self.bounds):
            if b <= 0 or not np.any(c):
                raise DomainError("bounds must be positive and directions nonzero")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))

    @classmethod
    def box(cls, dim: int, coords: Sequence[int], bound: float) -> "SafetySpec":
        """``|x_i| <= bound`` for each listed coordinate, zero-padded to ``dim``."""
        dirs = []
        for i in coords:
            c = np.zeros(dim)
            c[i] = 1.0
            dirs.append(c)
        return cls(tuple(dirs), tuple([bound] * len(dirs)))


@dataclass(frozen=True)
class ResponseSchedule:
    """Periodic pattern of attack-vulnerable steps (``True`` = vulnerable)."""

    period: int
    vulnerable_pattern: tuple

    def __post_init__(self):
        pat = tuple(bool(v) for v in self.vulnerable_pattern)
        if self.period < 1 or len(pat) != self.period:
            raise DomainError("pattern length must equal the period (>= 1)")
        object.__setattr__(self, "vulnerable_pattern", pat)

    @classmethod
    def from_string(cls, text: str) -> "ResponseSchedule":
        """Parse a pattern such as ``"FFTT"`` (also accepts ``0``/``1``)."""
        table = {"T": True, "1": True, "F": False, "0": False}
        chars = [ch for ch in text.strip().upper() if not ch.isspace()]
        try:
            pat = tuple(table[ch] for ch in chars)
        except KeyError as exc:
            raise DomainError(f"bad schedule character in {text!r}") from exc
        return cls(len(pat), pat)

    def to_string(self) -> str:
        return "".join("T" if v else "F" for v in self.vulnerable_pattern)

    def vulnerable(self, k: int) -> bool:
        return self.vulnerable_pattern[k % self.period]


MECHANISM_1 = ResponseSchedule(4, (False, False, True, True))
MECHANISM_2 = ResponseSchedule(10, (False, False) + (True,) * 8)


def log_e1_level(gamma: float, gamma_a: float, k: int, Ta: int) -> float:
    if Ta < 0 or Ta > k:
        raise DomainError(f"need 0 <= Ta <= k, got Ta={Ta}, k={k}")
    if gamma < 0 or gamma_a < 0:
        raise DomainError("rates must be nonnegative")

    def term(rate, power):
        if power == 0:
            return 0.0
        return -math.inf if rate == 0.0 else power * math.log(rate)

    return max(0.0, term(gamma, k - Ta) + term(gamma_a, Ta))


def e1_level(gamma: float, gamma_a: float, k: int, Ta: int) -> float:
    """``max(1, gamma^(k-Ta) * gamma_a^Ta)``, evaluated in log space (``inf`` past float range)."""
    ll = log_e1_level(gamma, gamma_a, k, Ta)
    return math.exp(ll) if ll < 709.0 else math.inf


def log_volume_e1(P1, level: float, n: int) -> float:
    """``2n log(level) - logdet(P1)``; the unit-ball constant is omitted."""
    if level < 1.0:
        raise DomainError("E1 level must be >= 1")
    return 2 * n * math.log(level) - mc.logdet(P1)


def log_volume_e1_from_log_level(P1, log_level: float, n: int) -> float:
    """:func:`log_volume_e1` taking ``log(level)``; avoids overflow for long attacks."""
    if log_level < 0.0:
        raise DomainError("E1 level must be >= 1")
    return 2 * n * log_level - mc.logdet(P1)


def log_volume_e2(P2, p: float, n: int) -> float:
    """``-2n log(1-p) - logdet(P2)``; the unit-ball constant is omitted."""
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    return -2 * n * math.log(1.0 - p) - mc.logdet(P2)


def support(P, level: float, c) -> float:
    """Support function of ``{x : x^T P x <= level}`` in direction ``c``."""
    c = np.asarray(c, dtype=float).ravel()
    return math.sqrt(level * float(c @ mc.solve(P, c)))


def support_sum(P1, level1: float, P2, level2: float, c) -> float:
    """Support function of the Minkowski sum of two centred ellipsoids."""
    c = np.asarray(c, dtype=float).ravel()
    if not np.any(c):
        raise DomainError("direction must be nonzero")
    for P in (P1, P2):
        if mc.min_eig(P) <= 0.0:
            raise DomainError("ellipsoid shapes must be positive definite")
    return support(P1, level1, c) + support(P2, level2, c)


@dataclass(frozen=True)
class _Direction:
    b: float
    s2: float  # E2 support
    q1: float  # c^T P1^-1 c


def _directions(rate: RateCertificate, inv: InvarianceCertificate, spec: SafetySpec):
    level2 = 1.0 / (1.0 - inv.p)
    out = []
    for c, b in zip(spec.directions, spec.bounds):
        s2 = support(inv.P2, level2, c)
        if s2 >= b:
            raise ZeroMarginError(
                f"E2({inv.p}) alone reaches {s2:.6g} >= bound {b:.6g}; safety is unachievable at this probability"
            )
        out.append(_Direction(b=b, s2=s2, q1=float(c @ mc.solve(rate.P1, c))))
    return out


def _fits(rate, dirs, k, Ta) -> bool:
    ll = log_e1_level(rate.gamma, rate.gamma_a, k, Ta)
    if ll > 700.0:
        return False
    level = math.exp(ll)
    return all(math.sqrt(level * d.q1) + d.s2 <= d.b for d in dirs)


def max_ta_bound(rate: RateCertificate, inv: InvarianceCertificate, spec: SafetySpec, k: int) -> int:
    """Largest ``Ta`` in ``[0, k]`` keeping ``E1(k, Ta) + E2(p)`` inside every half-space.

    Solved in closed form per direction from
    ``(k-Ta) log gamma + Ta log gamma_a <= log(((b - s2)^2) / c^T P1^-1 c)``,
    floored, re-verified by direct evaluation, then minimised over
    directions.  Raises :class:`ZeroMarginError` if no attack time at all is
    certified.
    """
    if k < 0:
        raise DomainError("k must be nonnegative")
    dirs = _directions(rate, inv, spec)
    if not _fits(rate, dirs, k, 0):
        raise ZeroMarginError("E1(k, 0) + E2(p) already violates the safety spec")
    g, ga = rate.gamma, rate.gamma_a
    if ga <= g:
        # more attack steps never raise the level
        return k
    lg = math.log(g) if g > 0 else -math.inf
    lga = math.log(ga)
    best = k
    for d in dirs:
        log_r = 2.0 * math.log(d.b - d.s2) - math.log(d.q1)
        if lg == -math.inf:
            # level is 1 unless Ta == k
            t = k if k * lga <= log_r else k - 1
        else:
            t = math.floor((log_r - k * lg) / (lga - lg))
        best = min(best, max(0, min(k, t)))
    while best > 0 and not _fits(rate, dirs, k, best):
        best -= 1
    while best < k and _fits(rate, dirs, k, best + 1):
        best += 1
    return best


def max_ta_bruteforce(rate: RateCertificate, inv: InvarianceCertificate, spec: SafetySpec, k: int) -> int:
    """Scan ``Ta = 0..k`` with :func:`support_sum`; ``-1`` when none fits."""
    level2 = 1.0 / (1.0 - inv.p)
    best = -1
    for Ta in range(k + 1):
        level1 = e1_level(rate.gamma, rate.gamma_a, k, Ta)
        if all(support_sum(rate.P1, level1, inv.P2, level2, c) <= b for c, b in zip(spec.directions, spec.bounds)):
            best = Ta
    return best


def bound_curve(rate, inv, spec, horizon: int) -> list:
    return [max_ta_bound(rate, inv, spec, k) for k in range(horizon + 1)]


def schedule_tau(s: ResponseSchedule, k: int) -> int:
    """Number of vulnerable steps among ``0..k``."""
    if k < 0:
        return 0
    full, rest = divmod(k + 1, s.period)
    return full * sum(s.vulnerable_pattern) + sum(s.vulnerable_pattern[:rest])


@dataclass
class ScheduleVerdict:
    tau: list = field(default_factory=list)
    bound: list = field(default_factory=list)
    safe: list = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(self.safe)


def schedule_verdict(s: ResponseSchedule, rate, inv, spec, horizon: int, bounds=None) -> ScheduleVerdict:
    """Per-step ``(tau_k, bound_k, tau_k <= bound_k)`` for ``k = 0..horizon``."""
    if bounds is None:
        bounds = bound_curve(rate, inv, spec, horizon)
    v = ScheduleVerdict()
    for k in range(horizon + 1):
        tau = schedule_tau(s, k)
        v.tau.append(tau)
        v.bound.append(bounds[k])
        v.safe.append(tau <= bounds[k])
    return v


def saturating_schedule(bounds: Sequence[int]) -> ResponseSchedule:
    """Vulnerable whenever one more attack step keeps ``tau_k <= bound_k``.

    The pattern covers ``len(bounds)`` steps and is not meant to repeat.
    """
    pattern = []
    tau = 0
    for b in bounds:
        if tau + 1 <= b:
            pattern.append(True)
            tau += 1
        else:
            pattern.append(False)
    return ResponseSchedule(len(pattern), tuple(pattern))
