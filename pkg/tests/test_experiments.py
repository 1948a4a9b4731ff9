import numpy as np
import pytest

from convmogp.errors import InvalidArgumentError
from convmogp.experiments import (
    JURA_NAMES,
    TOY_KERNEL,
    TOY_NOISE,
    ExperimentConfig,
    jura_like_fixture,
    mae,
    msll,
    rmse,
    run_missing_range,
    run_toy,
    sample_full_gp,
    smse,
    time_per_iteration,
    toy_data,
)
from convmogp.gram import NoiseParams, full_kff
from convmogp.kernels import GaussianKernelParams
from convmogp.models import ModelState, predict

SMALL = dict(n_points=60, n_train=30, K=6, max_iters=5, seeds=(0, 1))


class TestMetrics:
    def test_trivial_predictor(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=50) * 2 + 1
        assert abs(smse(y, np.full(50, y.mean())) - 1.0) <= 1e-12
        assert abs(msll(y, np.full(50, 3.0), np.full(50, 0.7), 3.0, 0.7)) <= 1e-12

    def test_perfect_predictor(self):
        y = np.array([0.1, 0.5, -0.3])
        assert smse(y, y) == 0.0
        assert mae(y, y) == 0.0 and rmse(y, y) == 0.0

    def test_msll_rewards_accuracy(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=200)
        good = msll(y, y + 0.01 * rng.normal(size=200), np.full(200, 1e-4), 0.0, 1.0)
        assert good < 0

    def test_msll_hand_value(self):
        y = np.array([1.0])
        expected = (0.5 * np.log(2 * np.pi * 0.5) + 1.0) - (0.5 * np.log(2 * np.pi * 2) + 0.25)
        assert msll(y, [0.0], [0.5], 0.0, 2.0) == pytest.approx(expected, rel=1e-14)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            smse(np.ones(4), np.zeros(4))
        with pytest.raises(InvalidArgumentError):
            msll(np.ones(2), np.zeros(2), np.array([1.0, 0.0]), 0.0, 1.0)

    def test_mae_rmse(self):
        assert mae([1.0, -1.0], [0.0, 0.0]) == 1.0
        assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(np.sqrt(12.5), rel=1e-15)


class TestSampler:
    def _instance(self):
        k = GaussianKernelParams([[1.0], [-0.7]], [[20.0], [8.0]], [[30.0]])
        X = np.array([[-0.5], [-0.1], [0.2], [0.6]])
        return k, [X, X], np.array([0.05, 0.2])

    def test_empirical_covariance(self):
        k, inputs, s2 = self._instance()
        C = full_kff(k, inputs) + np.diag(np.repeat(s2, 4))
        n = 2000
        y, _ = sample_full_gp(k, s2, inputs, seed=11, n_draws=n)
        emp = y.T @ y / n
        se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / n)
        assert np.all(np.abs(emp - C) <= 5 * se)

    def test_deterministic(self):
        k, inputs, s2 = self._instance()
        a = sample_full_gp(k, NoiseParams(s2), inputs, seed=3)
        b = sample_full_gp(k, NoiseParams(s2), inputs, seed=3)
        assert a.dataset.y.tobytes() == b.dataset.y.tobytes()
        c = sample_full_gp(k, NoiseParams(s2), inputs, seed=4)
        assert a.dataset.y.tobytes() != c.dataset.y.tobytes()

    def test_zero_noise_gives_latent(self):
        k, inputs, _ = self._instance()
        smp = sample_full_gp(k, np.zeros(2), inputs, seed=5)
        np.testing.assert_array_equal(smp.dataset.y, np.concatenate(smp.f))

    def test_rejects_negative_noise(self):
        k, inputs, _ = self._instance()
        with pytest.raises(InvalidArgumentError):
            sample_full_gp(k, np.array([0.1, -0.1]), inputs, seed=0)


class TestToyRecipe:
    def test_default_config_parameters(self):
        cfg = ExperimentConfig()
        k = cfg.kernel_params()
        np.testing.assert_array_equal(k.sensitivities[:, 0], [1, 1, 5, 5])
        np.testing.assert_array_equal(k.output_precisions[:, 0], [50, 50, 300, 200])
        np.testing.assert_array_equal(k.latent_precisions, [[100]])
        np.testing.assert_array_equal(cfg.noise_params().variances, [0.0125, 0.0125, 1.2, 1.0])
        assert (cfg.n_points, cfg.n_train, cfg.K, len(cfg.seeds)) == (500, 200, 30, 10)
        assert cfg.variants == ("FULL", "DTC", "FITC", "PITC")
        assert cfg.domain == (-1.0, 1.0)
        assert TOY_NOISE == [0.0125, 0.0125, 1.2, 1.0] and TOY_KERNEL["kind"] == "gaussian"

    def test_split_sizes_and_disjointness(self):
        cfg = ExperimentConfig(**SMALL)
        data = toy_data(cfg, 0)
        for tr, te in zip(data.train_idx, data.test_idx):
            assert len(tr) == 30 and len(te) == 30
            assert not set(tr) & set(te)
        train, X_test, y_test = data.split({3: (-0.8, 0.0)})
        x3 = train.blocks[3].inputs[:, 0]
        assert not np.any((x3 >= -0.8) & (x3 <= 0.0))
        assert train.sizes[0] == 30

    def test_table_shapes(self):
        res = run_toy(ExperimentConfig(**SMALL))
        assert set(res.metrics) == {"FULL", "DTC", "FITC", "PITC"}
        for metric in ("smse", "msll"):
            rows = res.table(metric)
            assert len(rows) == 16
            assert all(r[3] >= 0 for r in rows)
        for m in res.metrics.values():
            assert m.smse.shape == (2, 4) and np.all(m.smse >= 0)
        assert all(t > 0 for t in res.iteration_time.values())

    def test_deterministic_per_seed(self):
        cfg = ExperimentConfig(**{**SMALL, "seeds": (3,), "variants": ("FITC",)})
        a, b = run_toy(cfg), run_toy(cfg)
        np.testing.assert_array_equal(a.metrics["FITC"].msll, b.metrics["FITC"].msll)

    def test_empty_range_matches_plain_run(self):
        base = dict(SMALL, variants=("FULL", "PITC"), seeds=(0,))
        # no grid point lies strictly inside this interval
        x = np.linspace(-1, 1, SMALL["n_points"])
        a = 0.5 * (x[40] + x[41])
        gap = run_missing_range(ExperimentConfig(**base, missing={3: (a, a + 1e-6)}))
        plain = run_toy(ExperimentConfig(**base))
        for m in ("FULL", "PITC"):
            np.testing.assert_array_equal(gap.metrics[m].smse, plain.metrics[m].smse)
            np.testing.assert_array_equal(gap.metrics[m].msll, plain.metrics[m].msll)

    def test_missing_range_outputs(self):
        cfg = ExperimentConfig(**dict(SMALL, seeds=(0,), variants=("INDEPENDENT", "PITC")),
                               missing={3: (-0.8, 0.0)})
        res = run_missing_range(cfg)
        assert set(res.gap_rmse) == {"INDEPENDENT", "PITC"}
        x, mean, sd, truth = res.plot_data["PITC"]
        assert x.shape == mean.shape == sd.shape == truth.shape == (60,)
        assert np.all(sd >= 0)

    def test_truth_parameters_beat_trivial_model(self):
        cfg = ExperimentConfig(n_points=200, n_train=80, seeds=(0,))
        data = toy_data(cfg, 0)
        ds = data.sample.dataset
        noiseless = ds.with_targets(data.sample.f)
        train = noiseless.subset(data.train_idx)
        X_test = [ds.blocks[d].inputs[i] for d, i in enumerate(data.test_idx)]
        f_test = [data.sample.f[d][i] for d, i in enumerate(data.test_idx)]
        state = ModelState(cfg.kernel_params(), cfg.noise_params(), train, "FULL")
        pred = predict(state, X_test, include_noise=True)
        for d in range(4):
            ytr = train.blocks[d].targets
            assert msll(f_test[d], pred.mean[d], pred.variance[d], ytr.mean(), ytr.var()) < 0

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            ExperimentConfig(seeds=())
        with pytest.raises(InvalidArgumentError):
            ExperimentConfig(missing={3: (-2.0, 0.0)})
        cfg = ExperimentConfig.from_dict({"seeds": [1, 2], "missing": {"3": [-0.8, 0.0]}})
        assert cfg.seeds == (1, 2) and cfg.missing == {3: (-0.8, 0.0)}

    def test_time_per_iteration_positive(self):
        cfg = ExperimentConfig(**SMALL)
        train, _, _ = toy_data(cfg, 0).split()
        k = cfg.kernel_params()
        assert time_per_iteration(ModelState(k, cfg.noise_params(), train, "FULL"), 3) > 0


class TestHeterotopicFixture:
    def test_layout(self):
        fx = jura_like_fixture(0, n_train=40, n_test=20)
        assert fx.train.names == JURA_NAMES
        assert list(fx.train.sizes) == [40, 60, 60]
        cd = {tuple(r) for r in fx.train.blocks[0].inputs}
        assert not any(tuple(r) in cd for r in fx.X_test)
        ni = {tuple(r) for r in fx.train.blocks[1].inputs}
        assert all(tuple(r) in ni for r in fx.X_test)
        assert fx.y_test.shape == (20,)

    def test_deterministic(self):
        a, b = jura_like_fixture(5), jura_like_fixture(5)
        assert a.train.y.tobytes() == b.train.y.tobytes()
