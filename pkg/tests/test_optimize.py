import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_state
from convmogp.errors import InvalidArgumentError, OptimizerStalledError
from convmogp.gradients import ParamSpace, full_param_gradient
from convmogp.gram import MultiOutputDataset
from convmogp.models import log_marginal
from convmogp.optimize import (
    OptimConfig,
    default_kernel,
    default_noise,
    default_state,
    equispaced_init,
    fit,
    kmeans_init,
    scg_minimize,
)


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


class TestSCG:
    def test_quadratic_bowl(self):
        rng = np.random.default_rng(0)
        c = rng.normal(size=6)
        x0 = rng.normal(size=6) * 3
        res = scg_minimize(lambda x: (0.5 * np.sum((x - c) ** 2), x - c), x0,
                           OptimConfig(max_iters=50, grad_tol=1e-12))
        assert len(res.trace) <= 50
        assert np.max(np.abs(res.x - c)) <= 1e-8

    def test_rosenbrock(self):
        res = scg_minimize(rosenbrock, np.array([-1.2, 1.0]),
                           OptimConfig(max_iters=1000, grad_tol=1e-10))
        assert res.fun <= 1e-6
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-3)

    def test_accepted_objectives_non_increasing(self):
        res = scg_minimize(rosenbrock, np.array([-1.2, 1.0]), OptimConfig(max_iters=300))
        obj = np.array(res.trace.objective)[np.array(res.trace.accepted)]
        assert np.all(np.diff(obj) <= 0)
        assert len(res.trace.wall_time) == len(res.trace)

    def test_deterministic(self):
        a = scg_minimize(rosenbrock, np.array([-1.2, 1.0]), OptimConfig(max_iters=100))
        b = scg_minimize(rosenbrock, np.array([-1.2, 1.0]), OptimConfig(max_iters=100))
        assert a.trace.objective == b.trace.objective
        np.testing.assert_array_equal(a.x, b.x)

    def test_nonfinite_initial_point(self):
        with pytest.raises(InvalidArgumentError):
            scg_minimize(lambda x: (np.nan, x), np.zeros(2))

    def test_nonfinite_region_is_rejected(self):
        # objective undefined for x > 2; minimum of the defined part is at x = 2
        def f(x):
            if x[0] > 2.0:
                return np.inf, np.full(1, np.nan)
            return (x[0] - 3.0) ** 2, np.array([2 * (x[0] - 3.0)])

        res = scg_minimize(f, np.array([0.0]), OptimConfig(max_iters=200))
        assert np.isfinite(res.fun)
        assert res.x[0] <= 2.0
        assert res.fun <= 1.0 + 1e-3

    def test_persistent_failure_raises(self):
        calls = {"n": 0}

        def f(x):
            calls["n"] += 1
            if calls["n"] > 2:
                return np.nan, np.full(2, np.nan)
            return float(x @ x), 2 * x

        with pytest.raises(OptimizerStalledError):
            scg_minimize(f, np.ones(2), OptimConfig(max_failures=5))

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            OptimConfig(max_iters=0)
        with pytest.raises(InvalidArgumentError):
            OptimConfig(grad_tol=0.0)


class TestKMeans:
    def test_single_cluster_is_mean(self):
        X = np.random.default_rng(0).normal(size=(20, 2))
        np.testing.assert_allclose(kmeans_init(X, 1).Z[0], X.mean(axis=0), rtol=1e-14)

    def test_two_blobs(self):
        rng = np.random.default_rng(1)
        m1, m2 = np.array([-3.0, 0.0]), np.array([4.0, 2.0])
        X = np.vstack([m1 + 0.2 * rng.normal(size=(200, 2)), m2 + 0.2 * rng.normal(size=(200, 2))])
        C = kmeans_init(X, 2, seed=3).Z
        C = C[np.argsort(C[:, 0])]
        assert np.max(np.abs(C[0] - m1)) < 0.1
        assert np.max(np.abs(C[1] - m2)) < 0.1

    def test_k_equals_n_gives_permutation(self):
        X = np.random.default_rng(2).normal(size=(9, 1))
        C = kmeans_init(X, 9).Z
        np.testing.assert_array_equal(np.sort(C[:, 0]), np.sort(X[:, 0]))

    def test_too_many_centroids(self):
        with pytest.raises(InvalidArgumentError):
            kmeans_init(np.zeros((3, 1)) + np.arange(3)[:, None], 4)

    def test_deterministic_given_seed(self):
        X = np.random.default_rng(4).normal(size=(50, 2))
        np.testing.assert_array_equal(kmeans_init(X, 5, seed=7).Z, kmeans_init(X, 5, seed=7).Z)


class TestEquispaced:
    def test_three_points(self):
        np.testing.assert_array_equal(equispaced_init(-1, 1, 3).Z[:, 0], [-1.0, 0.0, 1.0])

    def test_single_point_midpoint(self):
        assert equispaced_init(-1.0, 3.0, 1).Z[0, 0] == 1.0

    def test_uniform_spacing(self):
        z = equispaced_init(-1, 1, 30).Z[:, 0]
        gaps = np.diff(z)
        assert z[0] == -1.0 and z[-1] == 1.0
        np.testing.assert_allclose(gaps, 2 / 29, atol=1e-12)
        assert np.max(np.abs(np.diff(gaps))) <= 1e-12

    def test_multidimensional_rejected(self):
        with pytest.raises(InvalidArgumentError):
            equispaced_init([0, 0], [1, 1], 4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000),
       kind=st.sampled_from(["gaussian", "ode1"]),
       exps=st.lists(st.floats(-6, 6), min_size=1, max_size=1))
def test_transform_round_trip(seed, kind, exps):
    state = make_state(kind, "FITC", seed % 50)
    space = ParamSpace(state)
    nat = space.natural().copy()
    nat[space.positive] *= np.exp(exps[0])
    back = space.from_unconstrained(space.to_unconstrained(nat))
    np.testing.assert_allclose(back, nat, rtol=1e-14, atol=0)


class TestDefaults:
    def test_default_hyperparameters(self):
        rng = np.random.default_rng(0)
        X = [rng.uniform(0, 4, (10, 1)), rng.uniform(0, 4, (8, 1))]
        y = [rng.normal(size=10) * 3, rng.normal(size=8)]
        ds = MultiOutputDataset.from_arrays(X, y)
        k = default_kernel(ds)
        rng_x = np.ptp(ds.X[:, 0])
        np.testing.assert_allclose(k.output_precisions, (8 / rng_x) ** 2, rtol=1e-14)
        np.testing.assert_array_equal(k.sensitivities, 1.0)
        np.testing.assert_allclose(default_noise(ds).variances,
                                   [0.1 * np.var(y[0]), 0.1 * np.var(y[1])], rtol=1e-14)
        ode = default_kernel(ds, "ode1")
        np.testing.assert_array_equal(ode.decays, 1.0)
        np.testing.assert_allclose(ode.lengthscales, rng_x / 4, rtol=1e-14)

    def test_default_state_has_inducing_for_sparse(self):
        state = make_state("gaussian", "FITC", 0)
        s = default_state(state.dataset, "PITC", K=5, seed=1)
        assert s.inducing.num_inducing == 5
        assert default_state(state.dataset, "FULL").inducing is None


class TestFit:
    @pytest.mark.parametrize("variant", ["FULL", "FITC", "PITC"])
    def test_never_worse_than_init(self, variant):
        state = make_state("gaussian", variant, 1)
        res = fit(state, OptimConfig(max_iters=20))
        assert res.final_objective <= res.initial_objective
        assert -log_marginal(res.state) == pytest.approx(res.final_objective, rel=1e-12)

    def test_inducing_fixed_when_not_optimized(self):
        state = make_state("ode1", "PITC", 2)
        res = fit(state, OptimConfig(max_iters=10), optimize_inducing=False)
        assert res.state.inducing.Z.tobytes() == state.inducing.Z.tobytes()
        moved = fit(state, OptimConfig(max_iters=10))
        assert not np.array_equal(moved.state.inducing.Z, state.inducing.Z)

    def test_deterministic_traces(self):
        state = make_state("gaussian", "FITC", 3)
        a = fit(state, OptimConfig(max_iters=15))
        b = fit(state, OptimConfig(max_iters=15))
        assert a.trace.objective == b.trace.objective
        np.testing.assert_array_equal(ParamSpace(a.state).pack(), ParamSpace(b.state).pack())

    def test_two_parameter_optimum_has_small_gradient(self):
        state = make_state("gaussian", "FULL", 4, D=1, N=15)
        space = ParamSpace(state)
        keep = {("S", 0, 0), ("noise", 0)}
        fixed = [n for n in space.all_names if n not in keep]
        res = fit(state, OptimConfig(max_iters=500, grad_tol=1e-9), fixed=fixed)
        g = full_param_gradient(res.state, sorted(keep)).values
        assert np.linalg.norm(g) <= 1e-4

    def test_input_state_untouched(self):
        state = make_state("gaussian", "PITC", 5)
        before = ParamSpace(state).pack().copy()
        fit(state, OptimConfig(max_iters=5))
        np.testing.assert_array_equal(ParamSpace(state).pack(), before)
