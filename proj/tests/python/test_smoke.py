import math

import numpy as np
import pytest

import dfm


def test_eigenvalues_of_projector():
    vals = dfm.sym_eigenvalues(np.array([[0.5, -0.5], [-0.5, 0.5]]))
    assert vals == pytest.approx([0.0, 1.0], abs=1e-14)


def test_solve_projects_onto_simplex():
    est = dfm.solve(np.eye(2), [1.2, 0.3], mode="hard")
    assert est["converged"]
    assert est["alpha"] == pytest.approx([0.95, 0.05], abs=1e-9)


def test_soft_zero_target_puts_mass_on_dummy():
    est = dfm.solve(np.eye(3), [0.0, 0.0, 0.0], mode="soft")
    assert est["alpha"] == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)
    assert est["noise_mass"] == pytest.approx(1.0)


def test_rff_rows_have_unit_norm():
    x = np.random.default_rng(3).normal(size=(50, 4))
    phi = dfm.rff_features(x, features=256, sigma=1.5, seed=7)
    assert phi.shape == (50, 256)
    assert np.allclose(np.linalg.norm(phi, axis=1), 1.0, atol=1e-12)


def test_bbse_two_by_two():
    # Gram and q of a one-hot problem with confusion matrix M and target Y.
    m = np.array([[0.9, 0.2], [0.1, 0.8]])
    y = np.array([0.05, 0.95])
    alpha = dfm.solve_bbse_unconstrained(m.T @ m, m.T @ y)
    assert alpha == pytest.approx(np.linalg.solve(m, y), abs=1e-10)
    assert alpha[0] < 0


def test_estimate_recovers_clean_mixture():
    data = dfm.sample_mixture(classes=3, dim=3, n=3000, m=3000, seed=11)
    truth = np.bincount(np.array(data["target_labels"]) - 1, minlength=3) / 3000
    for method in ("rff", "energy", "bbse"):
        est = dfm.estimate(data["source"], data["labels"], data["target"], method=method, mode="soft",
                           features=512)
        assert np.linalg.norm(np.array(est["alpha"]) - truth) < 0.05, method


def test_two_class_delta_min_identity():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(2, 6))
    s = dfm.spectrum(b @ b.T)
    assert s["delta_min"] == pytest.approx(0.5 * np.sum((b[0] - b[1]) ** 2), rel=1e-10)


def test_bad_mode_raises():
    with pytest.raises(ValueError):
        dfm.solve(np.eye(2), [0.5, 0.5], mode="sideways")


def test_singular_bbse_raises():
    with pytest.raises(ArithmeticError):
        dfm.solve_bbse_unconstrained(np.ones((2, 2)), [1.0, 1.0])
