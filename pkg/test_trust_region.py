import numpy as np
import pytest

from alm import validate_solution
from errors import ConfigurationError
from merit import MeritParams
from problems import ProblemSpec, make_nonconvex1d
from quantile_est import ConstraintEvaluator
from sampling import derive_seed, point_mass_batch
from trust_region import (TRACE_COLUMNS, LocalModel, SampledMerit, TrustRegionConfig,
                          build_local_model, cauchy_decrease_bound, solve_tr_subproblem,
                          trace_frame, tr_minimize)

HESS = np.array([[3.0, 1.0], [1.0, 2.0]])
CENTER = np.array([0.5, -1.0])


def quadratic_problem():
    """f(x) = 0.5 (x - c)^T A (x - c) with a chance constraint that never binds."""
    return ProblemSpec(
        name="quadratic",
        n=2,
        objective=lambda x: 0.5 * float((x - CENTER) @ HESS @ (x - CENTER)),
        objective_grad=lambda x: HESS @ (x - CENTER),
        chance=ConstraintEvaluator(values=lambda x, s: s[:, 0] - 1000.0 + 0.0 * x.sum()),
        alpha=0.1,
        x0=np.array([2.0, 1.0]),
        sampler=lambda N, seed: point_mass_batch([0.0], N, seed),
    )


def small_config(**kwargs):
    return TrustRegionConfig(**{"sample_size": 10, **kwargs})


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrustRegionConfig(eta1=1.5)
    with pytest.raises(ConfigurationError):
        TrustRegionConfig(gamma_inc=0.9)
    with pytest.raises(ConfigurationError):
        TrustRegionConfig(gradient_method="adjoint")
    with pytest.raises(ConfigurationError):
        TrustRegionConfig(beta_mode="adaptive")


def test_sample_and_step_schedules():
    cfg = TrustRegionConfig(sample_mode="growth", n0=100, sample_size=10_000, beta_mode="radius", r0=0.5)
    assert cfg.batch_size(0.5) == 400
    assert cfg.batch_size(0.01) == 10_000
    assert cfg.fd_step(0.2) == pytest.approx(0.1)
    assert TrustRegionConfig().batch_size(0.5) == 10_000
    assert TrustRegionConfig().fd_step(0.5) == 1e-3


def test_local_model_recovers_quadratic():
    problem = quadratic_problem()
    x0 = np.array([1.0, 2.0])
    batch = problem.draw(10, seed=3)
    p = MeritParams.initial(1)
    model = build_local_model(problem, x0, batch, p, delta=0.5, beta=1e-3)
    assert np.allclose(model.hessian, HESS, atol=1e-6)
    assert np.allclose(model.hessian, model.hessian.T)

    merit = SampledMerit(problem, batch, p)
    assert model.value == merit.value(x0)
    f_val, g = merit.components(x0)
    assert np.array_equal(model.gradient, merit.gradient(x0, g, 1e-3))


def test_subproblem_zero_gradient():
    model = LocalModel(np.zeros(2), 0.0, np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    step = solve_tr_subproblem(model, 1.0)
    assert np.array_equal(step, np.zeros(2))
    assert model.decrease(step) == 0.0


def test_subproblem_linear_model():
    g = np.array([3.0, -4.0])
    model = LocalModel(np.zeros(2), 0.0, g, np.zeros((2, 2)))
    step = solve_tr_subproblem(model, 0.5)
    assert np.allclose(step, -0.5 * g / 5.0)
    assert model.decrease(step) == pytest.approx(0.5 * 5.0)


def test_subproblem_interior_newton_point():
    model = LocalModel(np.zeros(2), 0.0, np.array([1.0, 0.0]), np.eye(2))
    assert np.allclose(solve_tr_subproblem(model, 10.0), [-1.0, 0.0])


def test_subproblem_dogleg_hits_boundary():
    model = LocalModel(np.zeros(2), 0.0, np.array([1.0, 1.0]), np.diag([1.0, 10.0]))
    step = solve_tr_subproblem(model, 0.5)
    assert np.linalg.norm(step) == pytest.approx(0.5)


def test_subproblem_cauchy_contract_on_random_models():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 6))
        B = rng.standard_normal((n, n))
        H = 0.5 * (B + B.T) * rng.choice([0.1, 1.0, 10.0])
        g = rng.standard_normal(n)
        delta = float(rng.choice([1e-3, 0.1, 1.0, 10.0]))
        model = LocalModel(np.zeros(n), 0.0, g, H)
        step = solve_tr_subproblem(model, delta)
        assert np.linalg.norm(step) <= delta * (1 + 1e-12)
        assert model.decrease(step) >= cauchy_decrease_bound(model, delta) * (1 - 1e-9)


def test_subproblem_rejects_nonpositive_radius():
    model = LocalModel(np.zeros(1), 0.0, np.ones(1), np.eye(1))
    with pytest.raises(ConfigurationError):
        solve_tr_subproblem(model, 0.0)


def test_tr_minimize_converges_on_quadratic():
    problem = quadratic_problem()
    r_term = 1e-5
    result = tr_minimize(problem, problem.x0, MeritParams.initial(1), r_term,
                         small_config(debug_checks=True))
    assert not result.truncated
    assert result.delta <= r_term
    assert np.linalg.norm(HESS @ (result.x - CENTER)) <= 10 * r_term


def test_tr_minimize_stays_at_minimizer():
    problem = quadratic_problem()
    result = tr_minimize(problem, CENTER, MeritParams.initial(1), 1e-5, small_config())
    assert np.array_equal(result.x, CENTER)
    assert not any(step.accepted for step in result.trace)


def test_trace_is_a_replayable_audit():
    problem = quadratic_problem()
    cfg = small_config()
    result = tr_minimize(problem, problem.x0, MeritParams.initial(1), 1e-5, cfg)
    deltas = [step.delta for step in result.trace] + [result.delta]
    for before, after in zip(deltas, deltas[1:]):
        assert after in (cfg.gamma_inc * before, cfg.gamma_dec * before)
    for step in result.trace:
        if step.accepted:
            assert step.ratio >= cfg.eta2
            assert step.model_decrease >= cfg.eta1 * min(step.delta, step.delta ** 2)
    frame = trace_frame(result.trace)
    assert list(frame.columns) == TRACE_COLUMNS
    assert len(frame) == result.iterations


def test_tr_minimize_iteration_cap_truncates():
    problem = quadratic_problem()
    result = tr_minimize(problem, problem.x0, MeritParams.initial(1), 1e-5, small_config(max_iterations=3))
    assert result.truncated
    assert result.iterations == 3


@pytest.mark.parametrize("r_term", [0.0, 0.1, 0.5])
def test_tr_minimize_rejects_bad_r_term(r_term):
    problem = quadratic_problem()
    with pytest.raises(ConfigurationError):
        tr_minimize(problem, problem.x0, MeritParams.initial(1), r_term, small_config())


def test_tr_minimize_is_deterministic():
    problem, _ = make_nonconvex1d(0.1, check_oracle=False)
    cfg = TrustRegionConfig(sample_size=500)
    p = MeritParams.initial(1, rho=100.0)
    a = tr_minimize(problem, problem.x0, p, 1e-3, cfg, seed=4)
    b = tr_minimize(problem, problem.x0, p, 1e-3, cfg, seed=4)
    assert np.array_equal(a.x, b.x)
    assert trace_frame(a.trace).equals(trace_frame(b.trace))


def test_tr_minimize_lowers_merit_on_nonconvex1d():
    problem, _ = make_nonconvex1d(0.1, check_oracle=False)
    p = MeritParams.initial(1, rho=100.0)
    result = tr_minimize(problem, problem.x0, p, 1e-4, TrustRegionConfig(sample_size=2000), seed=1)
    fresh = SampledMerit(problem, problem.draw(100_000, derive_seed(99, 0)), p)
    assert fresh.value(result.x) <= fresh.value(problem.x0)
    assert validate_solution(problem, result.x, 10_000).violation <= 0.5


def test_fixed_sample_mode_stops_on_radius_for_nonconvex1d():
    problem, _ = make_nonconvex1d(0.1, check_oracle=False)
    result = tr_minimize(problem, problem.x0, MeritParams.initial(1, rho=10.0), 1e-5, TrustRegionConfig())
    assert not result.truncated
    assert result.delta <= 1e-5
    assert {step.sample_size for step in result.trace} == {10_000}


def test_given_batch_is_reused_by_every_iteration():
    problem, _ = make_nonconvex1d(0.1, check_oracle=False)
    p = MeritParams.initial(1, rho=10.0)
    cfg = TrustRegionConfig(sample_size=500)
    own = tr_minimize(problem, problem.x0, p, 1e-4, cfg, seed=4, seed_path=(2, 0))
    given = tr_minimize(problem, problem.x0, p, 1e-4, cfg,
                        batch=problem.draw(500, derive_seed(4, 2, 0)))
    assert np.array_equal(own.x, given.x)
    assert trace_frame(own.trace).equals(trace_frame(given.trace))

    larger = tr_minimize(problem, problem.x0, p, 1e-4, cfg, batch=problem.draw(800, 1))
    assert {step.sample_size for step in larger.trace} == {800}


def test_growth_mode_grows_then_freezes_the_sample():
    problem, _ = make_nonconvex1d(0.1, check_oracle=False)
    cfg = TrustRegionConfig(sample_mode="growth", n0=10, sample_size=2000)
    result = tr_minimize(problem, problem.x0, MeritParams.initial(1, rho=10.0), 1e-4, cfg, seed=3)
    sizes = [step.sample_size for step in result.trace]
    assert sizes[0] == cfg.batch_size(cfg.delta0)
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))
    assert max(sizes) == 2000
    assert not result.truncated
