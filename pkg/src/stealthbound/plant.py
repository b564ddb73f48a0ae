"""Plant, steady-state LQG loop and the augmented state/error dynamics.

The augmented state is ``xbar = [x; e]`` with ``e = x - xhat_{k|k}``.  It
evolves as ``xbar+ = Acal xbar + Ical w + Kcal z+ + Bcal ua``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import matcore as mc
from .errors import DimensionError, DomainError
from .rng import RngStream


@dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    U: np.ndarray
    sample_period: float = 1.0

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R", "U"):
            object.__setattr__(self, name, mc.as_mat(getattr(self, name), name))
        n, ell, m = self.n, self.ell, self.m
        if self.A.shape != (n, n):
            raise DimensionError("A must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise DimensionError("B rows and C columns must match the state size")
        if self.Q.shape != (n, n) or self.R.shape != (m, m) or self.U.shape != (ell, ell):
            raise DimensionError("Q, R, U must be n x n, m x m, l x l")
        for name in ("Q", "R", "U"):
            object.__setattr__(self, name, mc.symmetrize(getattr(self, name), name))
        if not mc.is_psd(self.Q):
            raise DomainError("Q must be positive semidefinite")
        if mc.min_eig(self.R) <= 0.0:
            raise DomainError("R must be positive definite")
        if mc.min_eig(self.U) <= 0.0:
            raise DomainError("U must be positive definite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def ell(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class LqgDesign:
    K: np.ndarray
    P: np.ndarray
    Sigma: np.ndarray
    L: np.ndarray
    S: np.ndarray
    W: np.ndarray
    V: np.ndarray

    @property
    def Sigma_inv(self) -> np.ndarray:
        return mc.inv(self.Sigma)


@dataclass(frozen=True)
class AugmentedSystem:
    Acal: np.ndarray
    Ical: np.ndarray
    Kcal: np.ndarray
    Bcal: np.ndarray
    Kbar: np.ndarray
    Rcal: np.ndarray
    Lbar: np.ndarray

    @property
    def dim(self) -> int:
        return self.Acal.shape[0]


def synthesize_lqg(model: PlantModel, W, V) -> LqgDesign:
    """Steady-state Kalman filter and LQR gain for ``model``."""
    W = mc.symmetrize(W, "W")
    V = mc.symmetrize(V, "V")
    if W.shape != (model.n, model.n) or V.shape != (model.ell, model.ell):
        raise DimensionError("W must be n x n and V must be l x l")
    if mc.min_eig(W) <= 0.0 or mc.min_eig(V) <= 0.0:
        raise DomainError("LQR weights must be positive definite")
    A, B, C = model.A, model.B, model.C
    P = mc.solve_filter_dare(A, C, model.Q, model.R)
    Sigma = mc.symmetrize(C @ P @ C.T + model.R)
    K = mc.solve(Sigma, C @ P).T  # P C^T Sigma^-1 (Sigma symmetric)
    S = mc.solve_dare(A, B, W, V)
    L = -mc.solve(B.T @ S @ B + V, B.T @ S @ A)
    return LqgDesign(K=K, P=P, Sigma=Sigma, L=L, S=S, W=W, V=V)


def build_augmented(model: PlantModel, design: LqgDesign) -> AugmentedSystem:
    n, m, ell = model.n, model.m, model.ell
    A, B = model.A, model.B
    L, K = design.L, design.K
    if L.shape != (ell, n) or K.shape != (n, m) or design.Sigma.shape != (m, m):
        raise DimensionError("LQG design does not match the plant dimensions")
    Z = np.zeros((n, n))
    Acal = np.block([[A + B @ L, -B @ L], [Z, A]])
    Ical = np.vstack([np.eye(n), np.eye(n)])
    Kcal = np.vstack([np.zeros((n, m)), -K])
    Bcal = np.vstack([B, B])
    return AugmentedSystem(
        Acal=Acal,
        Ical=Ical,
        Kcal=Kcal,
        Bcal=Bcal,
        Kbar=np.hstack([Ical, Kcal]),
        Rcal=mc.block_diag(model.Q, design.Sigma),
        Lbar=np.hstack([L, -L]),
    )


def residue_bias(model: PlantModel, design: LqgDesign, ua_hist, ya_hist, k: int) -> np.ndarray:
    """Bias the attack histories exert on the residue at step ``k``.

    Uses the state form ``zeta+ = A(I - KC) zeta + B ua - A K ya``,
    ``dz_k = ya_k + C zeta_k``, which equals the convolution sum over the
    histories without forming matrix powers.
    """
    ua_hist = np.asarray(ua_hist, dtype=float).reshape(-1, model.ell) if len(ua_hist) else np.zeros((0, model.ell))
    ya_hist = np.asarray(ya_hist, dtype=float).reshape(-1, model.m)
    if k < 0 or len(ya_hist) < k + 1 or len(ua_hist) < k:
        raise DimensionError(f"histories do not cover steps 0..{k}")
    A, B, C, K = model.A, model.B, model.C, design.K
    F = A @ (np.eye(model.n) - K @ C)
    AK = A @ K
    zeta = np.zeros(model.n)
    for j in range(k):
        zeta = F @ zeta + B @ ua_hist[j] - AK @ ya_hist[j]
    return ya_hist[k] + C @ zeta


def _load_tank_params() -> dict:
    text = resources.files("stealthbound").joinpath("data/quadruple_tank.json").read_text()
    return json.loads(text)


def tank_continuous(params: dict | None = None):
    """Linearised continuous-time quadruple-tank matrices ``(A, B, C)``.

    States are level deviations (cm), inputs pump-voltage deviations (V),
    outputs level-sensor voltages of tanks 1 and 2.
    """
    p = _load_tank_params() if params is None else params
    area = np.array(p["tank_area_cm2"])
    outlet = np.array(p["outlet_area_cm2"])
    g = p["gravity_cm_s2"]
    h0 = np.array(p["level_op_cm"])
    k1, k2 = p["pump_gain_cm3_per_Vs"]
    g1, g2 = p["valve_split"]
    kc = p["sensor_gain_V_per_cm"]
    T = area / outlet * np.sqrt(2.0 * h0 / g)
    Ac = np.array(
        [
            [-1 / T[0], 0.0, area[2] / (area[0] * T[2]), 0.0],
            [0.0, -1 / T[1], 0.0, area[3] / (area[1] * T[3])],
            [0.0, 0.0, -1 / T[2], 0.0],
            [0.0, 0.0, 0.0, -1 / T[3]],
        ]
    )
    Bc = np.array(
        [
            [g1 * k1 / area[0], 0.0],
            [0.0, g2 * k2 / area[1]],
            [0.0, (1 - g2) * k2 / area[2]],
            [(1 - g1) * k1 / area[3], 0.0],
        ]
    )
    C = np.array([[kc, 0.0, 0.0, 0.0], [0.0, kc, 0.0, 0.0]])
    return Ac, Bc, C


def discretize_zoh(Ac, Bc, dt: float):
    n, ell = Bc.shape
    M = np.zeros((n + ell, n + ell))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = mc.expm(M * dt)
    return E[:n, :n], E[:n, n:]


def gram_noise(rng: RngStream, dim: int, divisor: float) -> np.ndarray:
    """``M M^T / divisor`` with i.i.d. Uniform[0, 1) entries in ``M``."""
    M = rng.uniform((dim, dim))
    return M @ M.T / divisor


def quadruple_tank(seed: int = 0, params: dict | None = None):
    """Discretised minimum-phase quadruple-tank model with seeded noise.

    Returns ``(model, W, V)``.  ``Q`` is drawn first (4x4 uniform matrix),
    then ``R`` (2x2), from one stream seeded with ``seed``.
    """
    p = _load_tank_params() if params is None else params
    Ac, Bc, C = tank_continuous(p)
    A, B = discretize_zoh(Ac, Bc, p["sample_period_s"])
    rng = RngStream(seed)
    Q = gram_noise(rng, 4, p["noise_divisor"])
    R = gram_noise(rng, 2, p["noise_divisor"])
    v0 = np.array(p["voltage_op_V"])
    U = np.diag(1.0 / v0) ** 2
    model = PlantModel(A=A, B=B, C=C, Q=Q, R=R, U=U, sample_period=p["sample_period_s"])
    W = p["state_weight_scale"] * np.eye(4)
    V = p["input_weight_scale"] * np.eye(2)
    return model, W, V


def tank_safety_bound() -> float:
    return float(_load_tank_params()["safety_bound_cm"])
