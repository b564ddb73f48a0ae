import numpy as np
import pytest

from stealthbound import matcore as mc
from stealthbound import plant
from stealthbound.errors import DimensionError, DomainError

from conftest import random_spd, random_stable


def scalar_model():
    return plant.PlantModel(A=[[0.0]], B=[[1.0]], C=[[1.0]], Q=[[1.0]], R=[[1.0]], U=[[1.0]])


def test_scalar_lqg_collapses():
    d = plant.synthesize_lqg(scalar_model(), [[1.0]], [[1.0]])
    assert d.P[0, 0] == pytest.approx(1.0)
    assert d.K[0, 0] == pytest.approx(0.5)
    assert d.Sigma[0, 0] == pytest.approx(2.0)
    assert d.S[0, 0] == pytest.approx(1.0)
    assert d.L[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_scalar_augmented_is_zero():
    m = scalar_model()
    aug = plant.build_augmented(m, plant.synthesize_lqg(m, [[1.0]], [[1.0]]))
    np.testing.assert_allclose(aug.Acal, np.zeros((2, 2)), atol=1e-15)
    np.testing.assert_allclose(aug.Ical, [[1.0], [1.0]])
    np.testing.assert_allclose(aug.Bcal, [[1.0], [1.0]])
    np.testing.assert_allclose(aug.Kcal, [[0.0], [-0.5]])


def test_model_validation():
    with pytest.raises(DomainError):
        plant.PlantModel(A=[[0.5]], B=[[1.0]], C=[[1.0]], Q=[[1.0]], R=[[0.0]], U=[[1.0]])
    with pytest.raises(DomainError):
        plant.PlantModel(A=[[0.5]], B=[[1.0]], C=[[1.0]], Q=[[-1.0]], R=[[1.0]], U=[[1.0]])
    with pytest.raises(DimensionError):
        plant.PlantModel(A=np.eye(2), B=[[1.0]], C=[[1.0, 0.0]], Q=np.eye(2), R=[[1.0]], U=[[1.0]])


def random_model(rng, n=4, m=2, ell=2):
    return plant.PlantModel(
        A=random_stable(rng, n, 1.05),
        B=rng.standard_normal((n, ell)),
        C=rng.standard_normal((m, n)),
        Q=random_spd(rng, n, 0.01) / 10,
        R=random_spd(rng, m, 0.01) / 10,
        U=random_spd(rng, ell),
    )


def test_random_lqg_invariants():
    rng = np.random.default_rng(7)
    for _ in range(5):
        model = random_model(rng)
        d = plant.synthesize_lqg(model, np.eye(4), np.eye(2))
        np.testing.assert_allclose(d.K, d.P @ model.C.T @ np.linalg.inv(d.Sigma), atol=1e-9)
        assert mc.min_eig(d.Sigma) > 0
        assert mc.spectral_radius(model.A + model.B @ d.L) < 1
        assert mc.spectral_radius(model.A @ (np.eye(4) - d.K @ model.C)) < 1
        aug = plant.build_augmented(model, d)
        n = 4
        np.testing.assert_allclose(aug.Acal[:n, :n], model.A + model.B @ d.L)
        np.testing.assert_allclose(aug.Acal[:n, n:], -model.B @ d.L)
        np.testing.assert_allclose(aug.Acal[n:, :n], 0.0)
        np.testing.assert_allclose(aug.Acal[n:, n:], model.A)
        np.testing.assert_allclose(aug.Kbar, np.hstack([aug.Ical, aug.Kcal]))
        np.testing.assert_allclose(aug.Lbar, np.hstack([d.L, -d.L]))
        ev = np.sort_complex(np.linalg.eigvals(aug.Acal))
        ev_ref = np.sort_complex(np.concatenate([np.linalg.eigvals(model.A + model.B @ d.L), np.linalg.eigvals(model.A)]))
        np.testing.assert_allclose(ev, ev_ref, atol=1e-8)


def test_residue_bias_matches_explicit_sum():
    rng = np.random.default_rng(8)
    model = random_model(rng)
    d = plant.synthesize_lqg(model, np.eye(4), np.eye(2))
    A, B, C, K = model.A, model.B, model.C, d.K
    F = A @ (np.eye(4) - K @ C)
    for _ in range(10):
        ua = rng.standard_normal((5, 2))
        ya = rng.standard_normal((6, 2))
        k = 5
        explicit = ya[k] + sum(
            C @ np.linalg.matrix_power(F, k - 1 - j) @ (B @ ua[j] - A @ K @ ya[j]) for j in range(k)
        )
        np.testing.assert_allclose(plant.residue_bias(model, d, ua, ya, k), explicit, atol=1e-10)


def test_residue_bias_trivial_cases():
    rng = np.random.default_rng(9)
    model = random_model(rng)
    d = plant.synthesize_lqg(model, np.eye(4), np.eye(2))
    assert np.all(plant.residue_bias(model, d, np.zeros((4, 2)), np.zeros((5, 2)), 4) == 0)
    delta = np.array([1.0, -2.0])
    ua = np.array([delta])
    np.testing.assert_allclose(plant.residue_bias(model, d, ua, np.zeros((2, 2)), 1), model.C @ model.B @ delta)
    with pytest.raises(DimensionError):
        plant.residue_bias(model, d, np.zeros((1, 2)), np.zeros((2, 2)), 3)


def test_covert_histories_give_zero_bias():
    rng = np.random.default_rng(10)
    model = random_model(rng)
    d = plant.synthesize_lqg(model, np.eye(4), np.eye(2))
    xa = np.zeros(4)
    ua_hist, ya_hist = [], []
    for _ in range(12):
        ua = rng.standard_normal(2)
        ya_hist.append(-model.C @ xa)
        ua_hist.append(ua)
        xa = model.A @ xa + model.B @ ua
    for k in range(12):
        np.testing.assert_allclose(plant.residue_bias(model, d, ua_hist, ya_hist, k), 0.0, atol=1e-9)


def test_quadruple_tank_structure():
    model, W, V = plant.quadruple_tank(0)
    assert (model.n, model.m, model.ell) == (4, 2, 2)
    assert model.sample_period == 2.0
    np.testing.assert_allclose(W, np.eye(4))
    np.testing.assert_allclose(V, 100 * np.eye(2))
    assert mc.spectral_radius(model.A) < 1
    # C reads tanks 1 and 2 only
    assert np.all(model.C[:, 2:] == 0) and model.C[0, 0] > 0 and model.C[1, 1] > 0
    assert model.C[0, 1] == 0 and model.C[1, 0] == 0
    np.testing.assert_allclose(model.U, np.diag([1 / 9, 1 / 9]))
    d = plant.synthesize_lqg(model, W, V)
    aug = plant.build_augmented(model, d)
    assert mc.spectral_radius(aug.Acal) < 1 - 1e-6


def test_tank_noise_recipe():
    for seed in range(5):
        model, _, _ = plant.quadruple_tank(seed)
        assert mc.min_eig(model.Q) >= -1e-15
        assert mc.min_eig(model.R) > 0
        # entries of M are in [0, 1) so M M^T / 100 has entries in [0, n/100)
        assert np.all(model.Q >= 0) and np.all(model.Q < 0.04)
    a, _, _ = plant.quadruple_tank(1)
    b, _, _ = plant.quadruple_tank(1)
    c, _, _ = plant.quadruple_tank(2)
    assert np.array_equal(a.Q, b.Q) and not np.array_equal(a.Q, c.Q)


def test_tank_continuous_time_constants():
    Ac, Bc, C = plant.tank_continuous()
    # time constants T_i = (A_i / a_i) sqrt(2 h_i / g) at the shipped operating point
    area = np.array([28.0, 32.0, 28.0, 32.0])
    h0 = np.array([12.4, 12.7, 1.8, 1.4])
    T = area / 1.5 * np.sqrt(2 * h0 / 981.0)
    np.testing.assert_allclose(-1 / np.diag(Ac), T, rtol=1e-12)
    assert T[0] == pytest.approx(2.96796, abs=1e-5) and T[1] == pytest.approx(3.43274, abs=1e-5)
    assert Bc[0, 0] == pytest.approx(0.7 * 3.33 / 28)


def test_zoh_matches_scipy():
    from scipy.signal import cont2discrete

    Ac, Bc, C = plant.tank_continuous()
    A, B = plant.discretize_zoh(Ac, Bc, 2.0)
    Ad, Bd, *_ = cont2discrete((Ac, Bc, C, np.zeros((2, 2))), 2.0, method="zoh")
    np.testing.assert_allclose(A, Ad, atol=1e-13)
    np.testing.assert_allclose(B, Bd, atol=1e-13)
