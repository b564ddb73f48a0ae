"""Lyapunov-rate and invariance certificates for the augmented loop.

Three matrix inequalities are involved:

* decay under normal operation: ``gamma P1 - Acal^T P1 Acal >= 0``;
* growth under stealthy attack (S-procedure block in ``gamma_a, alpha1``);
* probabilistic invariance of ``{x^T P2 x <= 1/(1-p)}`` for the noise-driven
  component (block in ``P2, alpha2``, required to be ``<= 0``).

Synthesis is sequential: ``P1`` from a Lyapunov equation, the smallest
``gamma`` for it, then a grid over ``alpha1`` with bisection on ``gamma_a``,
then a grid over ``alpha2`` and candidate shapes with bisection on the scale
of ``P2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matcore as mc
from .errors import DimensionError, DomainError, InfeasibleCertificateError
from .plant import AugmentedSystem

CERT_TOL = 1e-8

# ua = ubar - Lbar xbar with both ubar and Lbar xbar in {u^T U u <= 1}
ATTACK_INPUT_RADIUS2 = 4.0


@dataclass(frozen=True)
class SynthesisSettings:
    alpha1_min: float = 1e-6
    alpha1_max: float = 1e3
    alpha1_points: int = 181
    gamma_a_cap: float = 2.0**20
    alpha2_min: float = 1e-6
    alpha2_max: float = 1.0
    alpha2_points: int = 101
    shape_t_min: float = 1e-4
    shape_t_max: float = 1.0
    shape_t_points: int = 13
    bisect_rtol: float = 1e-10
    p1_scale: float = 1.0


@dataclass(frozen=True)
class RateCertificate:
    P1: np.ndarray
    gamma: float
    gamma_a: float
    alpha1: float


@dataclass(frozen=True)
class InvarianceCertificate:
    P2: np.ndarray
    alpha2: float
    p: float


@dataclass
class CertificateReport:
    margins: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    tol: float = CERT_TOL

    @property
    def accepted(self) -> bool:
        return all(v >= -self.tol for v in self.margins.values())


def _sym(M):
    return 0.5 * (M + M.T)


def build_gamma_a_blocks(aug: AugmentedSystem, P1, U, Sigma, lambda_bar, gamma_a, alpha1) -> np.ndarray:
    """Full S-procedure block over ``(xbar1, xbar2, dz, ua)``.

    Assembled term by term over the joint state.  Because
    ``xbar2`` is unconstrained in that form, the direction
    ``(0, xbar2, 0, -Lbar xbar2)`` gives ``-ua^T Bcal^T P1 Bcal ua < 0``, so the
    block is never PSD when ``Bcal`` and ``Lbar`` are nonzero; use
    :func:`build_attack_block` for synthesis.
    """
    if lambda_bar <= 0:
        raise DomainError("lambda_bar must be positive")
    A, K, B, Lb = aug.Acal, aug.Kcal, aug.Bcal, aug.Lbar
    P1 = mc.as_mat(P1, "P1")
    d = aug.dim
    if P1.shape != (d, d):
        raise DimensionError("P1 must match the augmented dimension")
    m, ell = K.shape[1], B.shape[1]
    U = mc.as_mat(U, "U")
    Sinv = mc.inv(Sigma)
    LUL = Lb.T @ U @ Lb
    APA = A.T @ P1 @ A
    G11 = np.block([[(gamma_a - 2 * alpha1) * P1 - APA + alpha1 * LUL, alpha1 * LUL], [alpha1 * LUL, alpha1 * LUL]])
    G12 = np.block([[-A.T @ P1 @ K, alpha1 * Lb.T @ U - A.T @ P1 @ B], [np.zeros((d, m)), alpha1 * Lb.T @ U]])
    G22 = np.block(
        [
            [alpha1 / lambda_bar * Sinv - K.T @ P1 @ K, -K.T @ P1 @ B],
            [-B.T @ P1 @ K, alpha1 * U - B.T @ P1 @ B],
        ]
    )
    M = np.block([[G11, G12], [G12.T, G22]])
    assert M.shape == (2 * d + m + ell, 2 * d + m + ell)
    return M


def build_attack_block(aug: AugmentedSystem, P1, U, Sigma, lambda_bar, gamma_a, alpha1,
                       input_radius2: float = ATTACK_INPUT_RADIUS2) -> np.ndarray:
    """S-procedure block over ``(xbar1, dz, ua)`` used for synthesis.

    PSD implies, for ``xbar1^T P1 xbar1 >= 1``, ``dz^T Sigma^-1 dz <= lambda_bar``
    and ``ua^T U ua <= input_radius2``, that the next ``xbar1`` satisfies
    ``xbar1+^T P1 xbar1+ <= gamma_a xbar1^T P1 xbar1``.
    """
    if lambda_bar <= 0:
        raise DomainError("lambda_bar must be positive")
    A, K, B = aug.Acal, aug.Kcal, aug.Bcal
    P1 = mc.as_mat(P1, "P1")
    U = mc.as_mat(U, "U")
    Sinv = mc.inv(Sigma)
    M = np.block(
        [
            [(gamma_a - 2 * alpha1) * P1 - A.T @ P1 @ A, -A.T @ P1 @ K, -A.T @ P1 @ B],
            [-K.T @ P1 @ A, alpha1 / lambda_bar * Sinv - K.T @ P1 @ K, -K.T @ P1 @ B],
            [-B.T @ P1 @ A, -B.T @ P1 @ K, alpha1 / input_radius2 * U - B.T @ P1 @ B],
        ]
    )
    return _sym(M)


def build_invariance_block(aug: AugmentedSystem, P2, alpha2) -> np.ndarray:
    """Probabilistic-invariance block; feasible when ``<= 0``."""
    A, Kb = aug.Acal, aug.Kbar
    P2 = mc.as_mat(P2, "P2")
    nd = Kb.shape[1]
    M = np.block(
        [
            [(alpha2 - 1) * P2 + A.T @ P2 @ A, A.T @ P2 @ Kb],
            [Kb.T @ P2 @ A, Kb.T @ P2 @ Kb - alpha2 / nd * mc.inv(aug.Rcal)],
        ]
    )
    return _sym(M)


def decay_rate(Acal, P1) -> float:
    """Smallest ``gamma`` with ``gamma P1 >= Acal^T P1 Acal``."""
    R = mc.inv_sqrtm_pd(P1)
    return max(0.0, mc.max_eig(R @ Acal.T @ P1 @ Acal @ R))


def synthesize_p1_gamma(aug: AugmentedSystem, scale: float = 1.0):
    """``P1 = scale * X`` with ``X = Acal^T X Acal + I``, and its minimal ``gamma``.

    Any positive ``scale`` keeps ``P1 - Acal^T P1 Acal = scale * I > 0`` and
    leaves ``gamma`` unchanged; it sets the size of the unit level set.
    """
    if scale <= 0:
        raise DomainError("P1 scale must be positive")
    X = mc.solve_dlyap(aug.Acal.T, np.eye(aug.dim))
    P1 = _sym(scale * X)
    gamma = decay_rate(aug.Acal, P1)
    return P1, gamma


def _bisect_min_gamma_a(G0, E, hi_cap, rtol):
    def ok(g):
        return mc.min_eig(G0 + g * E) >= 0.0

    hi = 1.0
    while not ok(hi):
        if hi >= hi_cap:
            return None, mc.min_eig(G0 + hi * E)
        hi *= 2.0
    lo = 0.0
    if ok(lo):
        return 0.0, None
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi, None


def synthesize_gamma_a(aug: AugmentedSystem, P1, U, Sigma, lambda_bar, gamma=None,
                       settings: SynthesisSettings = SynthesisSettings()) -> RateCertificate:
    """Minimise ``gamma_a`` over a log grid of ``alpha1`` with bisection.

    Ties keep the smaller ``alpha1``.  Raises :class:`InfeasibleCertificateError`
    if no grid point admits ``gamma_a <= settings.gamma_a_cap``.
    """
    P1 = mc.symmetrize(P1, "P1")
    if gamma is None:
        gamma = decay_rate(aug.Acal, P1)
    d = aug.dim
    size = d + aug.Kcal.shape[1] + aug.Bcal.shape[1]
    E = np.zeros((size, size))
    E[:d, :d] = P1
    best = None
    best_violation = -np.inf
    for alpha1 in np.logspace(np.log10(settings.alpha1_min), np.log10(settings.alpha1_max), settings.alpha1_points):
        G0 = build_attack_block(aug, P1, U, Sigma, lambda_bar, 0.0, alpha1)
        ga, violation = _bisect_min_gamma_a(G0, E, settings.gamma_a_cap, settings.bisect_rtol)
        if ga is None:
            best_violation = max(best_violation, violation)
            continue
        if best is None or ga < best[0]:
            best = (ga, float(alpha1))
    if best is None:
        raise InfeasibleCertificateError(
            f"no (alpha1, gamma_a) on the grid makes the attack block PSD; best min eigenvalue {best_violation:.3g}",
            best_margin=best_violation,
        )
    return RateCertificate(P1=P1, gamma=float(gamma), gamma_a=float(best[0]), alpha1=best[1])


def min_gamma_a_schur(aug: AugmentedSystem, P1, U, Sigma, lambda_bar, alpha1) -> float:
    """Closed-form minimal ``gamma_a`` for fixed ``alpha1`` via a Schur complement.

    Returns ``inf`` when the disturbance block is not positive definite.
    """
    d = aug.dim
    G0 = build_attack_block(aug, P1, U, Sigma, lambda_bar, 0.0, alpha1)
    H11, H12, H22 = G0[:d, :d], G0[:d, d:], G0[d:, d:]
    if mc.min_eig(H22) <= 0.0:
        return np.inf
    Sc = H11 - H12 @ mc.solve(H22, H12.T)
    R = mc.inv_sqrtm_pd(P1)
    return max(0.0, mc.max_eig(-R @ Sc @ R))


def _invariance_parts(aug: AugmentedSystem, shape, alpha2):
    A, Kb = aug.Acal, aug.Kbar
    nd = Kb.shape[1]
    G1 = _sym(np.block([[(alpha2 - 1) * shape + A.T @ shape @ A, A.T @ shape @ Kb], [Kb.T @ shape @ A, Kb.T @ shape @ Kb]]))
    G2 = np.zeros_like(G1)
    G2[A.shape[0]:, A.shape[0]:] = -alpha2 / nd * mc.inv(aug.Rcal)
    return G1, G2


def _max_beta(G1, G2, rtol, beta0=1e-9, cap=1e15):
    def ok(b):
        return mc.max_eig(b * G1 + G2) <= 0.0

    d = G1.shape[0] - int(np.count_nonzero(np.any(G2 != 0.0, axis=0)))
    exact = _schur_beta(G1, G2, d)
    if exact is not None:
        b = min(exact * (1.0 - 0.1 * rtol), cap)
        if b >= beta0 and ok(b):
            return b
    if not ok(beta0):
        return None
    lo, hi = beta0, 2.0 * beta0
    while ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > cap:
            return lo
    while hi - lo > rtol * lo:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _schur_beta(G1, G2, d):
    """Largest ``beta`` with ``beta G1 + G2 <= 0`` when ``G2`` lives on the trailing block.

    Needs the leading ``d x d`` block of ``G1`` negative definite; then the
    condition reduces to ``beta S <= -G2_22`` for the Schur complement ``S``.
    """
    H11, H12, H22 = G1[:d, :d], G1[:d, d:], G1[d:, d:]
    M = -G2[d:, d:]
    if np.any(G2[:d] != 0.0) or mc.max_eig(H11) >= 0.0 or mc.min_eig(M) <= 0.0:
        return None
    S = H22 - H12.T @ mc.solve(H11, H12)
    R = mc.inv_sqrtm_pd(M)
    top = mc.max_eig(R @ S @ R)
    return np.inf if top <= 0.0 else 1.0 / top


def candidate_shapes(aug: AugmentedSystem, alpha2: float, settings: SynthesisSettings):
    """Shape matrices (unit max eigenvalue) tried for ``P2`` at a given ``alpha2``.

    The first is the inverse of the Lyapunov solution used for ``P1``'s
    shape; the others invert ``Y = theta Acal Y Acal^T + Kbar Rcal Kbar^T`` with
    ``theta = (1 + t)/(1 - alpha2)``, which is feasible for the invariance
    inequality by a completion-of-squares argument.
    """
    shapes = [mc.solve_dlyap(aug.Acal.T, np.eye(aug.dim))]
    if alpha2 < 1.0:
        rho = mc.spectral_radius(aug.Acal)
        N = aug.Kbar @ aug.Rcal @ aug.Kbar.T
        for t in np.logspace(np.log10(settings.shape_t_min), np.log10(settings.shape_t_max), settings.shape_t_points):
            root = np.sqrt((1.0 + t) / (1.0 - alpha2))
            if rho * root >= 1.0 - 1e-6:
                continue
            Y = mc.solve_dlyap(root * aug.Acal, N)
            if mc.min_eig(Y) <= 1e-12 * mc.max_eig(Y):
                continue
            shapes.append(mc.inv(Y))
    return [s / mc.max_eig(s) for s in shapes]


def synthesize_p2(aug: AugmentedSystem, p: float, settings: SynthesisSettings = SynthesisSettings()) -> InvarianceCertificate:
    """Maximise ``logdet P2`` over ``alpha2`` grid x candidate shapes x scale.

    For every ``(alpha2, shape)`` the largest scale ``beta`` keeping the
    invariance block ``<= 0`` is bisected; the best ``logdet(beta * shape)``
    wins, ties going to the smaller ``alpha2`` and earlier shape.
    """
    if not 0.0 < p < 1.0:
        raise DomainError("probability level must lie in (0, 1)")
    best = None
    for alpha2 in np.logspace(np.log10(settings.alpha2_min), np.log10(settings.alpha2_max), settings.alpha2_points):
        for shape in candidate_shapes(aug, float(alpha2), settings):
            G1, G2 = _invariance_parts(aug, shape, alpha2)
            beta = _max_beta(G1, G2, settings.bisect_rtol)
            if beta is None:
                continue
            score = mc.logdet(beta * shape)
            if best is None or score > best[0]:
                best = (score, float(alpha2), _sym(beta * shape))
    if best is None:
        raise InfeasibleCertificateError("no (alpha2, P2) on the grid satisfies the invariance inequality")
    return InvarianceCertificate(P2=best[2], alpha2=best[1], p=p)


def check_certificates(aug: AugmentedSystem, rate: RateCertificate, inv: InvarianceCertificate,
                       U, Sigma, lambda_bar) -> CertificateReport:
    """Re-verify every inequality by eigenvalues and report min-eigenvalue margins.

    ``decay`` and ``attack`` are smallest eigenvalues of PSD-required blocks;
    ``invariance`` is minus the largest eigenvalue of the NSD-required block.
    ``info['attack_full']`` carries the margin of the full joint-state block.
    """
    rep = CertificateReport()
    A, P1 = aug.Acal, rate.P1
    rep.margins["decay"] = mc.min_eig(rate.gamma * P1 - A.T @ P1 @ A)
    rep.margins["attack"] = mc.min_eig(build_attack_block(aug, P1, U, Sigma, lambda_bar, rate.gamma_a, rate.alpha1))
    rep.margins["invariance"] = -mc.max_eig(build_invariance_block(aug, inv.P2, inv.alpha2))
    rep.margins["P1_pd"] = mc.min_eig(P1)
    rep.margins["P2_pd"] = mc.min_eig(inv.P2)
    rep.margins["multipliers"] = min(rate.alpha1, inv.alpha2, rate.gamma, rate.gamma_a)
    rep.info["attack_full"] = mc.min_eig(
        _sym(build_gamma_a_blocks(aug, P1, U, Sigma, lambda_bar, rate.gamma_a, rate.alpha1))
    )
    return rep
