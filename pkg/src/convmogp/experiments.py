"""Metrics, synthetic sampling and runnable experiment recipes."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError
from .gradients import value_and_gradient
from .gram import MultiOutputDataset, NoiseParams, Variant, full_kff, jittered_cholesky
from .kernels import GaussianKernelParams, kernel_from_dict
from .models import ModelState, predict
from .optimize import OptimConfig, default_state, equispaced_init, fit, kmeans_init

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)

# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def smse(y_true, pred_mean, train_targets=None):
    """Mean squared error divided by the variance of the test targets.

    ``train_targets`` is accepted for interface symmetry with :func:`msll`
    and is not used.
    """
    y = np.asarray(y_true, dtype=float)
    m = np.asarray(pred_mean, dtype=float)
    var = np.var(y)
    if not var > 0:
        raise InvalidArgumentError("test targets have zero variance")
    return float(np.mean((y - m) ** 2) / var)


def _nlpd(y, m, v):
    return 0.5 * (_LOG_2PI + np.log(v)) + 0.5 * (y - m) ** 2 / v


def msll(y_true, pred_mean, pred_var, train_mean, train_var):
    """Mean negative log density minus that of the trivial Gaussian predictor."""
    y = np.asarray(y_true, dtype=float)
    m = np.asarray(pred_mean, dtype=float)
    v = np.asarray(pred_var, dtype=float)
    if np.any(v <= 0) or not train_var > 0:
        raise InvalidArgumentError("predictive variances must be positive")
    return float(np.mean(_nlpd(y, m, v) - _nlpd(y, train_mean, train_var)))


def mae(y_true, pred_mean):
    return float(np.mean(np.abs(np.asarray(y_true, float) - np.asarray(pred_mean, float))))


def rmse(y_true, pred_mean):
    return float(np.sqrt(np.mean((np.asarray(y_true, float) - np.asarray(pred_mean, float)) ** 2)))


@dataclass(frozen=True)
class MetricResult:
    """Per-output metric arrays of shape (seeds, outputs) for one model."""

    model: str
    smse: np.ndarray
    msll: np.ndarray
    mae: np.ndarray
    rmse: np.ndarray

    def mean(self, metric):
        return np.mean(getattr(self, metric), axis=0)

    def std(self, metric):
        return np.std(getattr(self, metric), axis=0)


def output_metrics(y_test, pred, y_train):
    """Metric rows for every output of a prediction."""
    rows = []
    for d, (yt, m, v, ytr) in enumerate(zip(y_test, pred.mean, pred.variance, y_train)):
        rows.append({
            "smse": smse(yt, m),
            "msll": msll(yt, m, v, np.mean(ytr), np.var(ytr)),
            "mae": mae(yt, m),
            "rmse": rmse(yt, m),
        })
    return rows


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GPSample:
    dataset: MultiOutputDataset
    f: list


def _noise_vector(noise, D):
    v = noise.variances if isinstance(noise, NoiseParams) else np.asarray(noise, float).ravel()
    if v.shape != (D,) or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise InvalidArgumentError("noise variances must be finite and non-negative")
    return v


def prior_cholesky(kernel, inputs):
    K = full_kff(kernel, inputs)
    L, _ = jittered_cholesky(K, "Kff", start=1e-12)
    return L


def sample_full_gp(kernel, noise, inputs, seed, n_draws=None, chol=None):
    """Draw ``y = f + eps`` with ``f ~ N(0, Kff)`` and ``eps ~ N(0, Sigma)``.

    With ``n_draws`` set, returns arrays ``(y, f)`` of shape
    ``(n_draws, N_total)`` instead of a :class:`GPSample`.
    """
    D = kernel.num_outputs
    if len(inputs) != D:
        raise InvalidArgumentError("one input set per output is required")
    inputs = [np.asarray(X, float).reshape(len(X), -1) if len(X) else
              np.zeros((0, kernel.input_dim)) for X in inputs]
    sig = _noise_vector(noise, D)
    L = prior_cholesky(kernel, inputs) if chol is None else chol
    n = L.shape[0]
    sd = np.concatenate([np.full(len(X), np.sqrt(sig[d])) for d, X in enumerate(inputs)])
    rng = np.random.default_rng(seed)
    m = 1 if n_draws is None else int(n_draws)
    f = rng.standard_normal((m, n)) @ L.T
    eps = rng.standard_normal((m, n)) * sd
    y = f + eps
    if n_draws is not None:
        return y, f
    o = np.concatenate([[0], np.cumsum([len(X) for X in inputs])])
    yb = [y[0, o[d]:o[d + 1]] for d in range(D)]
    fb = [f[0, o[d]:o[d + 1]] for d in range(D)]
    return GPSample(MultiOutputDataset.from_arrays(inputs, yb), fb)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


TOY_KERNEL = {
    "kind": "gaussian",
    "sensitivities": [[1.0], [1.0], [5.0], [5.0]],
    "output_precisions": [[50.0], [50.0], [300.0], [200.0]],
    "latent_precisions": [[100.0]],
    "standardize": False,
}
TOY_NOISE = [0.0125, 0.0125, 1.2, 1.0]


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by the toy and missing-range recipes."""

    kernel: dict = field(default_factory=lambda: dict(TOY_KERNEL))
    noise: tuple = tuple(TOY_NOISE)
    n_points: int = 500
    n_train: int = 200
    domain: tuple = (-1.0, 1.0)
    K: int = 30
    variants: tuple = ("FULL", "DTC", "FITC", "PITC")
    seeds: tuple = tuple(range(10))
    missing: dict = None
    init: str = "truth"
    max_iters: int = 100
    optimize_inducing: bool = True
    output_dir: str = None

    def __post_init__(self):
        if len(self.seeds) == 0:
            raise InvalidArgumentError("seeds must be non-empty")
        if not 0 < self.n_train < self.n_points:
            raise InvalidArgumentError("n_train must lie strictly between 0 and n_points")
        if self.init not in ("truth", "default"):
            raise InvalidArgumentError("init must be 'truth' or 'default'")
        lo, hi = self.domain
        for d, rng_ in (self.missing or {}).items():
            a, b = rng_
            if not (lo <= a <= b <= hi):
                raise InvalidArgumentError(f"missing range for output {d} outside the domain")
        for v in self.variants:
            Variant.parse(v)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for key in ("noise", "domain", "variants", "seeds"):
            if key in doc:
                doc[key] = tuple(doc[key])
        if "missing" in doc and doc["missing"] is not None:
            doc["missing"] = {int(k): tuple(v) for k, v in doc["missing"].items()}
        return cls(**doc)

    def kernel_params(self):
        return kernel_from_dict(self.kernel)

    def noise_params(self):
        return NoiseParams(self.noise)


@dataclass(frozen=True)
class ToyData:
    seed: int
    x: np.ndarray
    train_idx: list
    test_idx: list
    sample: GPSample

    def split(self, missing=None):
        """Training dataset (with optional removed ranges) and test arrays."""
        ds = self.sample.dataset
        keep = []
        for d, idx in enumerate(self.train_idx):
            if missing and d in missing:
                a, b = missing[d]
                xi = self.x[idx]
                idx = idx[~((xi >= a) & (xi <= b))]
            keep.append(idx)
        train = ds.subset(keep)
        X_test = [ds.blocks[d].inputs[i] for d, i in enumerate(self.test_idx)]
        y_test = [ds.blocks[d].targets[i] for d, i in enumerate(self.test_idx)]
        return train, X_test, y_test


def toy_data(config, seed, chol=None):
    """Sample the shared-grid toy problem and split train/test per output."""
    kern = config.kernel_params()
    x = np.linspace(config.domain[0], config.domain[1], config.n_points)
    inputs = [x[:, None]] * kern.num_outputs
    sample = sample_full_gp(kern, config.noise_params(), inputs, seed, chol=chol)
    rng = np.random.default_rng([seed, 1])
    tr, te = [], []
    for _ in range(kern.num_outputs):
        perm = rng.permutation(config.n_points)
        tr.append(np.sort(perm[:config.n_train]))
        te.append(np.sort(perm[config.n_train:]))
    return ToyData(seed, x, tr, te, sample)


def initial_state(config, dataset, variant, seed):
    variant = Variant.parse(variant)
    if config.init == "default":
        std = bool(config.kernel.get("standardize", True))
        return default_state(dataset, variant, config.kernel["kind"], config.K,
                             "equispaced" if dataset.input_dim == 1 else "kmeans", seed,
                             standardize=std)
    inducing = None
    if variant.sparse:
        if dataset.input_dim == 1:
            inducing = equispaced_init(config.domain[0], config.domain[1], config.K)
        else:
            inducing = kmeans_init(dataset.X, config.K, seed)
    return ModelState(config.kernel_params(), config.noise_params(), dataset, variant, inducing)


def _fit(config, state):
    cfg = OptimConfig(max_iters=config.max_iters)
    return fit(state, cfg, optimize_inducing=config.optimize_inducing)


def _median_iteration_time(trace):
    t = np.diff(np.concatenate([[0.0], trace.wall_time]))
    return float(np.median(t)) if t.size else float("nan")


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------


@dataclass
class ToyResult:
    metrics: dict
    iteration_time: dict
    fits: dict = field(default_factory=dict)

    def table(self, metric):
        """Rows ``(model, output, mean, std)`` for one metric."""
        rows = []
        for model, res in self.metrics.items():
            mu, sd = res.mean(metric), res.std(metric)
            for d in range(mu.shape[0]):
                rows.append((model, d + 1, float(mu[d]), float(sd[d])))
        return rows


def _collect(models, per_seed):
    out = {}
    for m in models:
        rows = per_seed[m]
        arr = {k: np.array([[r[k] for r in seed_rows] for seed_rows in rows])
               for k in ("smse", "msll", "mae", "rmse")}
        out[m] = MetricResult(m, **arr)
    return out


def run_toy(config=ExperimentConfig(), keep_fits=False):
    """Fit every variant on each seed and evaluate on the held-out points."""
    models = [Variant.parse(v).value for v in config.variants]
    per_seed = {m: [] for m in models}
    times = {m: [] for m in models}
    fits = {}
    kern = config.kernel_params()
    x = np.linspace(config.domain[0], config.domain[1], config.n_points)
    chol = prior_cholesky(kern, [x[:, None]] * kern.num_outputs)
    for seed in sorted(config.seeds):
        data = toy_data(config, seed, chol)
        train, X_test, y_test = data.split(config.missing)
        y_train = [b.targets for b in train.blocks]
        for m in models:
            res = _fit(config, initial_state(config, train, m, seed))
            pred = predict(res.state, X_test, include_noise=True)
            per_seed[m].append(output_metrics(y_test, pred, y_train))
            times[m].append(_median_iteration_time(res.trace))
            if keep_fits:
                fits[(m, seed)] = res
            log.info("toy seed %d %s done", seed, m)
    return ToyResult(_collect(models, per_seed),
                     {m: float(np.median(t)) for m, t in times.items()}, fits)


@dataclass
class MissingRangeResult:
    gap_rmse: dict
    metrics: dict
    plot_data: dict = field(default_factory=dict)


def run_missing_range(config=None, output=3, gap=(-0.8, 0.0)):
    """Remove ``gap`` from one output's training data and score the gap."""
    if config is None:
        config = ExperimentConfig(variants=("FULL", "INDEPENDENT", "DTC", "FITC", "PITC"),
                                  missing={output: gap})
    missing = config.missing or {}
    models = [Variant.parse(v).value for v in config.variants]
    gap_rmse = {m: [] for m in models}
    per_seed = {m: [] for m in models}
    plot = {}
    kern = config.kernel_params()
    x = np.linspace(config.domain[0], config.domain[1], config.n_points)
    chol = prior_cholesky(kern, [x[:, None]] * kern.num_outputs)
    for seed in sorted(config.seeds):
        data = toy_data(config, seed, chol)
        train, X_test, y_test = data.split(missing)
        y_train = [b.targets for b in train.blocks]
        for m in models:
            res = _fit(config, initial_state(config, train, m, seed))
            pred = predict(res.state, X_test, include_noise=True)
            per_seed[m].append(output_metrics(y_test, pred, y_train))
            for d, (a, b) in missing.items():
                mask = (x >= a) & (x <= b)
                if not mask.any():
                    gap_rmse[m].append(np.nan)
                    continue
                Xq = [np.zeros((0, 1))] * kern.num_outputs
                Xq[d] = x[mask][:, None]
                pg = predict(res.state, Xq)
                gap_rmse[m].append(rmse(data.sample.f[d][mask], pg.mean[d]))
                if seed == min(config.seeds):
                    Xall = [np.zeros((0, 1))] * kern.num_outputs
                    Xall[d] = x[:, None]
                    pa = predict(res.state, Xall)
                    plot[m] = (x, pa.mean[d], np.sqrt(pa.variance[d]), data.sample.f[d])
    return MissingRangeResult({m: np.array(v) for m, v in gap_rmse.items()},
                              _collect(models, per_seed), plot)


def time_per_iteration(state, repeats=7):
    """Median wall time of one objective-and-gradient evaluation."""
    value_and_gradient(state)
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        value_and_gradient(state)
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


# ---------------------------------------------------------------------------
# heterotopic fixture
# ---------------------------------------------------------------------------


JURA_NAMES = ("Cd", "Ni", "Zn")


@dataclass(frozen=True)
class HeterotopicFixture:
    """Train/held-out split where the primary output is missing at test sites."""

    train: MultiOutputDataset
    X_test: np.ndarray
    y_test: np.ndarray
    primary: int = 0


def jura_like_fixture(seed, n_train=100, n_test=50, extent=5.0):
    """Synthetic three-output spatial field in the heterotopic layout.

    The primary output (Cd) is observed at the training sites only; the
    secondary outputs (Ni, Zn) are observed at both training and
    prediction sites. The held-out targets are Cd at the prediction sites.
    """
    kern = GaussianKernelParams(np.array([[1.0], [1.0], [1.0]]),
                                np.array([[4.0, 4.0], [6.0, 6.0], [5.0, 5.0]]),
                                np.array([[2.0, 2.0]]), standardize=True)
    noise = np.array([0.05, 0.02, 0.02])
    rng = np.random.default_rng([seed, 7])
    sites = rng.uniform(0.0, extent, (n_train + n_test, 2))
    tr, te = sites[:n_train], sites[n_train:]
    inputs = [sites, sites, sites]
    y, f = sample_full_gp(kern, noise, inputs, seed, n_draws=1)
    n = n_train + n_test
    yb = [y[0, d * n:(d + 1) * n] for d in range(3)]
    train = MultiOutputDataset.from_arrays(
        [tr, sites, sites], [yb[0][:n_train], yb[1], yb[2]], names=JURA_NAMES)
    return HeterotopicFixture(train, te, yb[0][n_train:])


def run_heterotopic(seed, K=50, max_iters=100):
    """MAE on the held-out primary output for PITC and independent GPs."""
    fx = jura_like_fixture(seed)
    out = {}
    for variant in ("PITC", "INDEPENDENT"):
        state = default_state(fx.train, variant, "gaussian", K, "kmeans", seed)
        res = fit(state, OptimConfig(max_iters=max_iters))
        Xq = [fx.X_test, np.zeros((0, 2)), np.zeros((0, 2))]
        out[variant] = mae(fx.y_test, predict(res.state, Xq).mean[fx.primary])
    return out


def empty_range_config(config):
    return replace(config, missing=None)
