import numpy as np
import pytest

from errors import ConfigurationError
from merit import (ConstraintVector, MeritParams, feasibility_sigma, merit_gradient_estimate,
                   merit_value, update_multipliers, update_penalty)


def params(rho=10.0, mu=(1.0, 1.0), mu_bar=None, mu_max=1e4):
    return MeritParams(rho=rho, mu=np.array(mu), mu_bar=np.array(mu if mu_bar is None else mu_bar),
                       mu_max=mu_max)


def test_initial_params():
    p = MeritParams.initial(4, rho=10.0)
    assert p.size == 4
    assert np.all(p.mu == 1.0) and np.all(p.mu_bar == 1.0)
    assert p.rho == 10.0


def test_merit_value_by_hand():
    # shifted = [max(0, 0.5 + 0.1), max(0, -1 + 0.1)] = [0.6, 0]
    g = ConstraintVector(g0=0.5, g_det=[-1.0])
    assert merit_value(1.0, g, params()) == pytest.approx(1.0 + 5.0 * 0.36)


def test_merit_uses_safeguarded_multipliers():
    g = ConstraintVector(g0=0.0)
    p = MeritParams(rho=2.0, mu=np.array([50.0]), mu_bar=np.array([4.0]), mu_max=4.0)
    # max(0, 0 + 4/2)^2 * 2/2 = 4
    assert merit_value(0.0, g, p) == pytest.approx(4.0)


def _merit_at(x, mu, rho):
    f = x[0] ** 2 + 3.0 * x[1]
    g0 = x[0] * x[1] + np.sin(x[1]) - 0.2
    g_det = np.array([x[0] + x[1] - 1.0, -x[1]])
    return merit_value(f, ConstraintVector(g0, g_det), MeritParams(rho, mu, mu))


def test_merit_gradient_matches_central_differences():
    x = np.array([0.7, 0.4])
    mu = np.array([1.0, 2.0, 0.5])
    rho = 10.0
    g = ConstraintVector(x[0] * x[1] + np.sin(x[1]) - 0.2, [x[0] + x[1] - 1.0, -x[1]])
    grad_f = np.array([2.0 * x[0], 3.0])
    grad_g0 = np.array([x[1], x[0] + np.cos(x[1])])
    jac = np.array([[1.0, 1.0], [0.0, -1.0]])
    analytic = merit_gradient_estimate(grad_f, g, grad_g0, jac, MeritParams(rho, mu, mu))

    h = 1e-6
    numeric = np.array([(_merit_at(x + h * e, mu, rho) - _merit_at(x - h * e, mu, rho)) / (2 * h)
                        for e in np.eye(2)])
    assert np.allclose(analytic, numeric, rtol=1e-6, atol=0.0)


def test_merit_gradient_size_checks():
    g = ConstraintVector(0.0, [0.0])
    with pytest.raises(ConfigurationError):
        merit_gradient_estimate(np.zeros(2), g, np.zeros(3), np.zeros((1, 2)), params())
    with pytest.raises(ConfigurationError):
        merit_value(0.0, ConstraintVector(0.0), params())


def test_sigma_zero_iff_feasible_and_complementary():
    assert feasibility_sigma(ConstraintVector(-1.0, [-2.0]), [0.0, 0.0]) == 0.0
    assert feasibility_sigma(ConstraintVector(0.0, [-2.0]), [3.0, 0.0]) == 0.0
    # infeasible
    assert feasibility_sigma(ConstraintVector(0.5), [0.0]) == pytest.approx(0.5)
    # feasible but multiplier not complementary: min(1, 0.3)
    assert feasibility_sigma(ConstraintVector(-1.0), [0.3]) == pytest.approx(0.3)
    assert feasibility_sigma(ConstraintVector(-1.0, [0.2]), [0.3, 0.0]) == pytest.approx(np.hypot(0.3, 0.2))


def test_update_multipliers_clips_and_keeps_rho():
    p = params(rho=10.0, mu=(1.0, 1.0, 1.0), mu_max=5.0)
    g = ConstraintVector(2.0, [-1.0, 0.01])
    new = update_multipliers(g, p)
    assert np.allclose(new.mu, [21.0, 0.0, 1.1])
    assert np.allclose(new.mu_bar, [5.0, 0.0, 1.1])
    assert new.rho == p.rho
    assert np.all(new.mu >= 0.0)
    assert np.all((new.mu_bar >= 0.0) & (new.mu_bar <= new.mu_max))


def test_update_multipliers_safeguard_holds_for_any_constraints():
    rng = np.random.default_rng(11)
    for _ in range(200):
        size = int(rng.integers(1, 6))
        mu = np.abs(rng.standard_normal(size)) * rng.choice([0.1, 10.0, 1e3])
        mu_max = float(rng.choice([1.0, 1e4]))
        p = MeritParams(rho=float(rng.choice([1.0, 10.0, 1e6])), mu=mu, mu_bar=np.minimum(mu, mu_max),
                        mu_max=mu_max)
        g = ConstraintVector(float(rng.standard_normal() * 100), rng.standard_normal(size - 1) * 100)
        new = update_multipliers(g, p)
        assert new.rho == p.rho
        assert np.all(new.mu >= 0.0)
        assert np.all((new.mu_bar >= 0.0) & (new.mu_bar <= mu_max))
        assert np.array_equal(new.mu_bar, np.minimum(mu_max, new.mu))


def test_update_penalty_grows_only_when_infeasible():
    p = params()
    assert update_penalty(0.2, 0.1, p).rho == 20.0
    assert update_penalty(0.1, 0.1, p).rho == 10.0
    assert update_penalty(0.2, 0.1, p, theta_rho=3.0).rho == 30.0
    with pytest.raises(ConfigurationError):
        update_penalty(0.2, 0.1, p, theta_rho=1.0)


@pytest.mark.parametrize("kwargs", [
    dict(rho=0.0, mu=[1.0], mu_bar=[1.0]),
    dict(rho=np.inf, mu=[1.0], mu_bar=[1.0]),
    dict(rho=1.0, mu=[-1.0], mu_bar=[0.0]),
    dict(rho=1.0, mu=[1.0], mu_bar=[2.0], mu_max=1.5),
    dict(rho=1.0, mu=[1.0, 1.0], mu_bar=[1.0]),
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        MeritParams(**kwargs)


def test_constraint_vector_rejects_non_finite():
    with pytest.raises(ConfigurationError):
        ConstraintVector(np.nan)
    assert len(ConstraintVector(1.0, [2.0, 3.0])) == 3
