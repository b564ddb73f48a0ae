"""Closed-loop Monte-Carlo simulator.

Each step of a trial:

1. ``y = C x + v (+ ya)``; residue ``z = y - C xhat_prior``; detector window update
2. ``xhat_post = xhat_prior + K z``; control ``u = L xhat_post``
3. applied input ``ubar = u (+ ua)``, radially projected onto ``{u^T U u <= 1}``
4. ``x+ = A x + B ubar + w``; ``xhat_prior+ = A xhat_post + B u``

Trials are vectorised along the first array axis.  Every trial also runs a
linear attack-free twin driven by the same noise, which gives the
noise-driven state ``xbar2`` and the residue bias ``dz = z - z_twin`` exactly.
The attack-driven part is ``xbar1 = xbar - xbar2``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import matcore as mc
from .plant import AugmentedSystem, LqgDesign, PlantModel
from .rng import RngStream
from .safety import ResponseSchedule, SafetySpec
from .stealth import DetectorConfig

DIVERGENCE_NORM = 1e12
SATURATION_SLACK = 1e-9
REPORT_SCHEMA = "stealthbound.sim/1"


@dataclass(frozen=True)
class AttackStrategy:
    """``kind`` is ``"none"``, ``"covert"`` or ``"budget"``.

    Covert attacks carry ``covert_input``, a function ``k -> ua`` (or a
    constant vector); their sensor falsification ``ya = -C xa`` runs at every
    step so the residue bias stays exactly zero, while ``ua`` is only
    injected on vulnerable steps.  Budget attacks carry the certificate
    matrix ``P1`` and the bias budget ``lambda_bar`` for the greedy probe.
    """

    kind: str = "none"
    covert_input: Optional[Callable[[int], np.ndarray] | np.ndarray] = None
    P1: Optional[np.ndarray] = None
    lambda_bar: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "covert", "budget"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "budget" and (self.P1 is None or self.lambda_bar < 0):
            raise ValueError("budget attack needs P1 and lambda_bar >= 0")

    @classmethod
    def none(cls) -> "AttackStrategy":
        return cls()

    @classmethod
    def covert(cls, ua) -> "AttackStrategy":
        return cls(kind="covert", covert_input=ua)

    @classmethod
    def residue_budget(cls, P1, lambda_bar: float) -> "AttackStrategy":
        return cls(kind="budget", P1=np.asarray(P1, dtype=float), lambda_bar=float(lambda_bar))

    def covert_ua(self, k: int, ell: int) -> np.ndarray:
        src = self.covert_input
        if src is None:
            return np.zeros(ell)
        ua = src(k) if callable(src) else src
        return np.asarray(ua, dtype=float).reshape(ell)


@dataclass
class TrialResult:
    """Per-step record of one trial; arrays have ``horizon + 1`` rows."""

    states: np.ndarray
    residues: np.ndarray
    stats: np.ndarray  # NaN before the first full window
    alarms: np.ndarray
    violation: bool
    attacked_steps: int
    diverged: bool


@dataclass
class BatchResult:
    """Vectorised trial outcomes (first axis = trial)."""

    states: Optional[np.ndarray]  # (N, H+1, n) when recorded
    residues: Optional[np.ndarray]  # (N, H+1, m) when recorded
    stats: np.ndarray  # (N, H+1)
    alarms: np.ndarray  # (N, H+1) bool
    violation: np.ndarray  # (N,) bool
    attacked_steps: np.ndarray  # (N,)
    diverged: np.ndarray  # (N,) bool
    max_abs_state: np.ndarray  # (N, n)
    max_window_energy: np.ndarray  # (N,)
    max_saturation: np.ndarray  # (N,)
    max_abs_dz: np.ndarray  # (N,)
    e2_outside: Optional[np.ndarray] = None  # (N, H+1) bool
    xbar1_level: Optional[np.ndarray] = None  # (N, H+1)
    state_dev: Optional[np.ndarray] = None  # (N, H+1) norm of x - x_twin

    def trial(self, i: int) -> TrialResult:
        return TrialResult(
            states=None if self.states is None else self.states[i],
            residues=None if self.residues is None else self.residues[i],
            stats=self.stats[i],
            alarms=self.alarms[i],
            violation=bool(self.violation[i]),
            attacked_steps=int(self.attacked_steps[i]),
            diverged=bool(self.diverged[i]),
        )


@dataclass(frozen=True)
class SimContext:
    model: PlantModel
    design: LqgDesign
    aug: AugmentedSystem
    detector: DetectorConfig
    spec: Optional[SafetySpec] = None
    P2: Optional[np.ndarray] = None
    p: float = 0.99


def saturate(u: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Radial projection of each row onto ``{u^T U u <= 1}``."""
    q = np.einsum("ij,jk,ik->i", u, U, u)
    scale = np.where(q > 1.0, 1.0 / np.sqrt(np.maximum(q, 1.0)), 1.0)
    return u * scale[:, None]


def covert_step(xa: np.ndarray, ua: np.ndarray, model: PlantModel):
    """One covert-attack step: returns ``(ya, xa_next)`` with ``ya = -C xa``."""
    xa = np.asarray(xa, dtype=float)
    ya = -model.C @ xa
    return ya, model.A @ xa + model.B @ np.asarray(ua, dtype=float)


def _greedy(P1A, Kcal, Bcal, Sigma, U, U_inv, xbar1, u, remaining):
    """Row-wise greedy disturbance pair ``(ua, dz)``.

    Both maximise the linearised growth ``g^T (Kcal dz + Bcal ua)`` with
    ``g = P1 Acal xbar1``: ``dz`` on ``{dz^T Sigma^-1 dz = remaining}`` and
    ``ubar = u + ua`` on the boundary of ``{u^T U u <= 1}``.
    """
    g = xbar1 @ P1A.T
    kg = g @ Kcal  # (N, m)
    bg = g @ Bcal  # (N, l)
    m, ell = kg.shape[1], bg.shape[1]

    dz_dir = kg @ Sigma
    dz_norm2 = np.einsum("ij,ij->i", dz_dir, kg)  # kg^T Sigma kg
    fallback_dz = np.zeros(m)
    fallback_dz[0] = np.sqrt(Sigma[0, 0])
    ok = dz_norm2 > 1e-300
    dz = np.where(ok[:, None], dz_dir / np.sqrt(np.where(ok, dz_norm2, 1.0))[:, None], fallback_dz)
    dz *= np.sqrt(np.maximum(remaining, 0.0))[:, None]

    ub_dir = bg @ U_inv
    ub_norm2 = np.einsum("ij,ij->i", ub_dir, bg)
    fallback_u = np.zeros(ell)
    fallback_u[0] = 1.0 / np.sqrt(U[0, 0])
    ok = ub_norm2 > 1e-300
    ubar = np.where(ok[:, None], ub_dir / np.sqrt(np.where(ok, ub_norm2, 1.0))[:, None], fallback_u)
    return ubar - u, dz


def budget_attack_step(aug: AugmentedSystem, design: LqgDesign, U, P1, lambda_bar: float,
                       xbar1, u, window_history=()):
    """Greedy stealthy probe for a single trial.

    ``window_history`` holds the realised residue biases of the previous
    ``T - 1`` steps; the remaining budget ``lambda_bar`` minus their energy
    is placed on ``dz``.  Returns ``(ua, dz)``.
    """
    Sinv = design.Sigma_inv
    used = sum(float(z @ Sinv @ z) for z in np.atleast_2d(window_history)) if len(window_history) else 0.0
    remaining = max(0.0, lambda_bar - used)
    U = np.asarray(U, dtype=float)
    ua, dz = _greedy(
        P1 @ aug.Acal, aug.Kcal, aug.Bcal, design.Sigma, U, mc.inv(U),
        np.atleast_2d(np.asarray(xbar1, dtype=float)), np.atleast_2d(np.asarray(u, dtype=float)),
        np.array([remaining]),
    )
    return ua[0], dz[0]


def residue_tail_gramian(model: PlantModel, design: LqgDesign) -> np.ndarray:
    """``G`` with ``zeta^T G zeta`` = total bias energy of the free residue-bias response from ``zeta``."""
    F = model.A @ (np.eye(model.n) - design.K @ model.C)
    return mc.solve_dlyap(F.T, model.C.T @ design.Sigma_inv @ model.C)


def _lingering_safe_scale(base, bua, plan, used, lambda_bar, C, F, AK, Sinv, G, iters: int = 30):
    """Largest ``s`` in ``[0, 1]`` (per row, by bisection) for the scaled greedy move.

    The move ``(s ua, ya+ = s (plan - C zeta+))`` is accepted only if the
    energy already in the window, plus the next bias, plus the whole free
    tail that lingers should access end afterwards, stays within
    ``lambda_bar``.  ``s = 0`` reproduces the scenario certified at the
    previous step, so a feasible value always exists.
    """
    limit = lambda_bar + 1e-9 * max(1.0, lambda_bar)

    def cost(s):
        z1 = base + s[:, None] * bua
        ya1 = s[:, None] * (plan - z1 @ C.T)
        dz1 = z1 @ C.T + ya1
        z2 = z1 @ F.T - ya1 @ AK.T
        return used + np.einsum("ij,jk,ik->i", dz1, Sinv, dz1) + np.einsum("ij,jk,ik->i", z2, G, z2)

    N = base.shape[0]
    lo = np.zeros(N)
    hi = np.ones(N)
    full = cost(hi) <= limit
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = cost(mid) <= limit
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return np.where(full, 1.0, lo)


def _draw_noise(model: PlantModel, design: LqgDesign, seeds, horizon: int):
    """Per-trial draws in the fixed order: initial error, process noise, sensor noise."""
    n, m = model.n, model.m
    rootP = mc.sqrtm_psd(design.P)
    rootQ = mc.sqrtm_psd(model.Q)
    rootR = mc.sqrtm_psd(model.R)
    N = len(seeds)
    e0 = np.empty((N, n))
    w = np.empty((N, horizon + 1, n))
    v = np.empty((N, horizon + 1, m))
    for i, s in enumerate(seeds):
        rng = RngStream(int(s))
        e0[i] = rng.normal(n) @ rootP.T
        w[i] = rng.normal((horizon + 1, n)) @ rootQ.T
        v[i] = rng.normal((horizon + 1, m)) @ rootR.T
    return e0, w, v


def simulate_batch(ctx: SimContext, strategy: AttackStrategy, schedule: Optional[ResponseSchedule],
                   horizon: int, seeds, record: bool = False) -> BatchResult:
    """Run ``len(seeds)`` independent trials; trial ``i`` uses ``RngStream(seeds[i])``.

    The initial estimation error is drawn from the steady-state error
    covariance with ``xhat_prior = 0``, so residues are stationary from
    the first step.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    model, design, aug, det = ctx.model, ctx.design, ctx.aug, ctx.detector
    A, B, C, K, L, U = model.A, model.B, model.C, design.K, design.L, model.U
    n, m, ell = model.n, model.m, model.ell
    T = det.T
    seeds = list(seeds)
    N = len(seeds)
    e0, w, v = _draw_noise(model, design, seeds, horizon)
    Sinv = design.Sigma_inv
    U_inv = mc.inv(U)
    F = A @ (np.eye(n) - K @ C)
    AK = A @ K

    x = e0.copy()
    xhat = np.zeros((N, n))
    xn = e0.copy()
    xhatn = np.zeros((N, n))
    zeta = np.zeros((N, n))  # state form of the residue bias
    ya_next = np.zeros((N, m))
    xa = np.zeros((N, n))  # covert attack state
    dz_energy = np.zeros((N, horizon + 1))

    stats = np.full((N, horizon + 1), np.nan)
    alarms = np.zeros((N, horizon + 1), dtype=bool)
    q_hist = np.zeros((N, horizon + 1))
    violation = np.zeros(N, dtype=bool)
    diverged = np.zeros(N, dtype=bool)
    attacked = np.zeros(N, dtype=int)
    max_abs_state = np.zeros((N, n))
    max_window = np.zeros(N)
    max_sat = np.zeros(N)
    max_dz = np.zeros(N)
    states = np.zeros((N, horizon + 1, n)) if record else None
    residues = np.zeros((N, horizon + 1, m)) if record else None
    e2_out = np.zeros((N, horizon + 1), dtype=bool) if ctx.P2 is not None else None
    x1_level = np.zeros((N, horizon + 1)) if strategy.kind == "budget" else None
    state_dev = np.zeros((N, horizon + 1))
    if ctx.spec is not None:
        Cs = np.array(ctx.spec.directions)  # (d, 2n)
        bs = np.array(ctx.spec.bounds)
    if strategy.kind == "budget":
        P1 = strategy.P1
        P1A = P1 @ aug.Acal
        G_obs = residue_tail_gramian(model, design)
    e2_level = 1.0 / (1.0 - ctx.p)

    for k in range(horizon + 1):
        vulnerable = schedule is not None and schedule.vulnerable(k)
        if strategy.kind == "covert":
            ya = -(xa @ C.T)
        else:
            ya = ya_next
        z = (x - xhat) @ C.T + v[:, k] + ya
        zn = (xn - xhatn) @ C.T + v[:, k]
        dz = z - zn
        q = np.einsum("ij,jk,ik->i", z, Sinv, z)
        q_hist[:, k] = q
        dz_energy[:, k] = np.einsum("ij,jk,ik->i", dz, Sinv, dz)
        max_dz = np.maximum(max_dz, np.abs(dz).max(axis=1))
        if k >= T - 1:
            g = q_hist[:, k - T + 1 : k + 1].sum(axis=1)
            stats[:, k] = g
            alarms[:, k] = g > det.eta
            max_window = np.maximum(max_window, dz_energy[:, k - T + 1 : k + 1].sum(axis=1))

        xpost = xhat + z @ K.T
        xpostn = xhatn + zn @ K.T
        u = xpost @ L.T
        un = xpostn @ L.T
        xbar = np.hstack([x, x - xpost])
        xbar2 = np.hstack([xn, xn - xpostn])
        xbar1 = xbar - xbar2
        state_dev[:, k] = np.linalg.norm(x - xn, axis=1)

        if record:
            states[:, k] = x
            residues[:, k] = z
        max_abs_state = np.maximum(max_abs_state, np.abs(x))
        if ctx.spec is not None:
            violation |= np.any(np.abs(xbar @ Cs.T) > bs, axis=1)
        if e2_out is not None:
            e2_out[:, k] = np.einsum("ij,jk,ik->i", xbar2, ctx.P2, xbar2) > e2_level
        if x1_level is not None:
            x1_level[:, k] = np.einsum("ij,jk,ik->i", xbar1, P1, xbar1)
        if k == horizon:
            break

        ua = np.zeros((N, ell))
        ya_next = np.zeros((N, m))
        plan = None
        if vulnerable:
            attacked += 1
            if strategy.kind == "covert":
                ua = np.tile(strategy.covert_ua(k, ell), (N, 1))
            elif strategy.kind == "budget":
                lo = max(0, k + 2 - T)
                used = dz_energy[:, lo : k + 1].sum(axis=1)
                remaining = strategy.lambda_bar - used
                ua_g, plan = _greedy(P1A, aug.Kcal, aug.Bcal, design.Sigma, U, U_inv, xbar1, u, remaining)
                base = zeta @ F.T - ya @ AK.T
                scale = _lingering_safe_scale(base, ua_g @ B.T, plan, used, strategy.lambda_bar, C, F, AK, Sinv, G_obs)
                ua = ua_g * scale[:, None]
        ubar = saturate(u + ua, U)
        max_sat = np.maximum(max_sat, np.einsum("ij,jk,ik->i", ubar, U, ubar))
        ua_eff = ubar - u
        zeta = zeta @ F.T + ua_eff @ B.T - ya @ AK.T
        if plan is not None:
            ya_next = scale[:, None] * (plan - zeta @ C.T)
        if strategy.kind == "covert":
            xa = xa @ A.T + ua_eff @ B.T

        x = x @ A.T + ubar @ B.T + w[:, k]
        xhat = xpost @ A.T + u @ B.T
        xn = xn @ A.T + un @ B.T + w[:, k]
        xhatn = xpostn @ A.T + un @ B.T

        # the unsaturated twin can run away while saturation keeps x bounded
        size = np.max(np.abs(np.hstack([x, xhat, xn, xhatn])), axis=1)
        bad = ~(size <= DIVERGENCE_NORM)
        if np.any(bad):
            diverged |= bad
            for arr in (x, xhat, xn, xhatn, zeta, xa, ya_next):
                arr[bad] = 0.0

    return BatchResult(
        states=states,
        residues=residues,
        stats=stats,
        alarms=alarms,
        violation=violation & ~diverged,
        attacked_steps=attacked,
        diverged=diverged,
        max_abs_state=max_abs_state,
        max_window_energy=max_window,
        max_saturation=max_sat,
        max_abs_dz=max_dz,
        e2_outside=e2_out,
        xbar1_level=x1_level,
        state_dev=state_dev,
    )


def simulate_trial(ctx: SimContext, strategy: AttackStrategy, schedule: Optional[ResponseSchedule],
                   horizon: int, rng: RngStream) -> TrialResult:
    """One trial driven by the stream seed of ``rng``."""
    return simulate_batch(ctx, strategy, schedule, horizon, [rng.seed], record=True).trial(0)


@dataclass
class MonteCarloReport:
    trials: int
    horizon: int
    seed: int
    attack: str
    schedule: str
    valid_trials: int
    diverged_trials: int
    violation_count: int
    violation_frequency: float
    alarm_windows: int
    total_windows: int
    alarm_frequency: float
    max_detector_stat: float
    max_abs_state: list
    max_window_bias_energy: float
    max_saturation_value: float
    max_attacked_steps: int
    e2_outside_fraction: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"schema": REPORT_SCHEMA}
        d.update(self.__dict__)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        d = self.to_dict()
        wr.writerow(["field", "value"])
        for key in sorted(d):
            val = d[key]
            if isinstance(val, list):
                val = " ".join(repr(float(x)) for x in val)
            elif isinstance(val, dict):
                val = json.dumps(val, sort_keys=True)
            wr.writerow([key, val])
        return buf.getvalue()


def summarize(batch: BatchResult, horizon: int, seed: int, attack: str, schedule: str) -> MonteCarloReport:
    ok = ~batch.diverged
    T_start = int(np.argmax(~np.isnan(batch.stats[0]))) if batch.stats.shape[0] else 0
    win_alarms = batch.alarms[ok][:, T_start:]
    stats = batch.stats[ok][:, T_start:]
    n_valid = int(ok.sum())
    total = int(win_alarms.size)
    alarms = int(win_alarms.sum())
    e2_frac = None
    if batch.e2_outside is not None:
        e2_frac = float(batch.e2_outside[ok].mean()) if n_valid else 0.0
    viol = int(batch.violation.sum())
    return MonteCarloReport(
        trials=int(len(ok)),
        horizon=horizon,
        seed=seed,
        attack=attack,
        schedule=schedule,
        valid_trials=n_valid,
        diverged_trials=int(batch.diverged.sum()),
        violation_count=viol,
        violation_frequency=viol / n_valid if n_valid else 0.0,
        alarm_windows=alarms,
        total_windows=total,
        alarm_frequency=alarms / total if total else 0.0,
        max_detector_stat=float(np.max(stats)) if stats.size else 0.0,
        max_abs_state=[float(x) for x in batch.max_abs_state[ok].max(axis=0)] if n_valid else [],
        max_window_bias_energy=float(batch.max_window_energy[ok].max()) if n_valid else 0.0,
        max_saturation_value=float(batch.max_saturation[ok].max()) if n_valid else 0.0,
        max_attacked_steps=int(batch.attacked_steps.max()) if len(ok) else 0,
        e2_outside_fraction=e2_frac,
    )


def run_monte_carlo(ctx: SimContext, strategy: AttackStrategy, schedule: Optional[ResponseSchedule],
                    horizon: int, trials: int, seed: int, chunk: int = 500):
    """Aggregate ``trials`` runs with per-trial seeds ``seed + i``.

    Returns ``(report, batches)``; chunking only bounds memory and does not
    change any result.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    parts = []
    for start in range(0, trials, chunk):
        seeds = [seed + i for i in range(start, min(trials, start + chunk))]
        parts.append(simulate_batch(ctx, strategy, schedule, horizon, seeds))
    batch = _concat(parts)
    label = schedule.to_string() if schedule is not None else ""
    return summarize(batch, horizon, seed, strategy.kind, label), batch


def _concat(parts) -> BatchResult:
    if len(parts) == 1:
        return parts[0]
    kw = {}
    for name in BatchResult.__dataclass_fields__:
        vals = [getattr(p, name) for p in parts]
        kw[name] = None if vals[0] is None else np.concatenate(vals, axis=0)
    return BatchResult(**kw)


def trajectories_csv(batch: BatchResult) -> str:
    """Per-trial state trajectories (requires a batch run with ``record=True``)."""
    if batch.states is None:
        raise ValueError("batch was run without trajectory recording")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    n = batch.states.shape[2]
    wr.writerow(["trial", "k"] + [f"x{i + 1}" for i in range(n)] + ["g", "alarm"])
    for i in range(batch.states.shape[0]):
        for k in range(batch.states.shape[1]):
            g = batch.stats[i, k]
            wr.writerow([i, k] + [repr(float(v)) for v in batch.states[i, k]] + ["" if np.isnan(g) else repr(float(g)), int(batch.alarms[i, k])])
    return buf.getvalue()
