"""Scaled conjugate gradients, inducing-point initializers and model fitting."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvGPError,
    InvalidArgumentError,
    NumericFailureError,
    OptimizerStalledError,
)
from .gradients import ParamSpace, value_and_gradient
from .gram import InducingSet, NoiseParams, Variant
from .kernels import GaussianKernelParams, Ode1KernelParams
from .models import ModelState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    max_iters: int = 1000
    grad_tol: float = 1e-6
    func_tol: float = 1e-9
    x_tol: float = 1e-9
    initial_sigma_scg: float = 1e-4
    seed: int = 0
    restart: int = None
    max_failures: int = 60

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise InvalidArgumentError("max_iters must be at least 1")
        for name in ("grad_tol", "func_tol", "x_tol", "initial_sigma_scg"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")


@dataclass
class OptimTrace:
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def record(self, f, g, ok, t):
        self.objective.append(float(f))
        self.grad_norm.append(float(g))
        self.accepted.append(bool(ok))
        self.wall_time.append(float(t))

    def __len__(self):
        return len(self.objective)

    def to_rows(self):
        return [(i, self.objective[i], self.grad_norm[i], int(self.accepted[i]), self.wall_time[i])
                for i in range(len(self))]


@dataclass(frozen=True)
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    trace: OptimTrace
    message: str
    n_evals: int


def _safe_eval(fun, x):
    try:
        f, g = fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
    except (ConvGPError, ArithmeticError, ValueError, np.linalg.LinAlgError):
        return np.inf, None
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return np.inf, None
    return f, g


def scg_minimize(fun, x0, config=OptimConfig()):
    """Minimize with Moller's scaled conjugate gradient method.

    Parameters
    ----------
    fun : callable
        Returns ``(f, grad)`` at a point.
    x0 : array
        Starting point.
    config : OptimConfig

    Returns
    -------
    OptimResult
        The best point seen; the trace has one entry per iteration.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    fold, gnew = _safe_eval(fun, x)
    evals = 1
    if gnew is None:
        raise InvalidArgumentError("objective or gradient not finite at the initial point")
    trace = OptimTrace()
    t0 = time.perf_counter()
    restart = config.restart or max(n, 100)
    sigma0 = config.initial_sigma_scg
    beta, betamin, betamax = 1.0, 1e-15, 1e100
    gold = gnew
    d = -gnew
    success, nsuccess, failures = True, 0, 0
    fnow = fold
    mu = kappa = theta = 0.0
    message = "max_iters"
    if np.max(np.abs(gnew)) < config.grad_tol:
        return OptimResult(x, fold, gnew, trace, "grad_tol", evals)
    for _ in range(int(config.max_iters)):
        if success:
            mu = d @ gnew
            if mu >= 0:
                d = -gnew
                mu = d @ gnew
            kappa = d @ d
            if kappa < np.finfo(float).eps:
                # a vanishing conjugate direction restarts along the gradient
                d = -gnew
                mu = d @ gnew
                kappa = d @ d
                nsuccess = 0
                if kappa == 0.0:
                    message = "grad_tol"
                    break
            sigma = sigma0 / np.sqrt(kappa)
            gplus = None
            for _ in range(10):
                _, gplus = _safe_eval(fun, x + sigma * d)
                evals += 1
                if gplus is not None:
                    break
                sigma *= 0.1
            if gplus is None:
                raise OptimizerStalledError("gradient not finite near the current point", trace)
            theta = d @ (gplus - gnew) / sigma
        delta = theta + beta * kappa
        if delta <= 0:
            delta = beta * kappa
            beta = beta - theta / kappa
        alpha = -mu / delta
        xnew = x + alpha * d
        fnew, gcand = _safe_eval(fun, xnew)
        evals += 1
        if gcand is None:
            Delta = -np.inf
            failures += 1
            if failures > config.max_failures:
                raise OptimizerStalledError("objective repeatedly non-finite", trace)
        else:
            Delta = 2.0 * (fnew - fold) / (alpha * mu)
        if Delta >= 0:
            success = True
            nsuccess += 1
            failures = 0
            step = np.max(np.abs(alpha * d))
            x = xnew
            fnow = fnew
        else:
            success = False
            fnow = fold
        trace.record(fnow, np.linalg.norm(gnew if not success else gcand), success,
                     time.perf_counter() - t0)
        if success:
            if step < config.x_tol and abs(fnew - fold) < config.func_tol:
                gnew = gcand
                message = "func_tol"
                break
            fold = fnew
            gold = gnew
            gnew = gcand
            if np.max(np.abs(gnew)) < config.grad_tol:
                message = "grad_tol"
                break
        if Delta < 0.25:
            beta = min(4.0 * beta, betamax)
        if Delta > 0.75:
            beta = max(0.5 * beta, betamin)
        if nsuccess == restart:
            d = -gnew
            nsuccess = 0
        elif success:
            gamma = (gold - gnew) @ gnew / mu
            d = gamma * d - gnew
    return OptimResult(x, fnow, gnew, trace, message, evals)


# ---------------------------------------------------------------------------
# inducing-point initializers
# ---------------------------------------------------------------------------


def kmeans_init(points, K, seed=0, max_iter=100):
    """Lloyd's k-means from ``K`` distinct random points.

    Empty clusters are reseeded at the point farthest from its centroid;
    exact distance ties go to the lowest centroid index.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    K = int(K)
    if K < 1:
        raise InvalidArgumentError("K must be at least 1")
    if K > X.shape[0]:
        raise InvalidArgumentError(f"K={K} exceeds the number of points {X.shape[0]}")
    uniq = np.unique(X, axis=0)
    if K > uniq.shape[0]:
        raise InvalidArgumentError(f"K={K} exceeds the number of distinct points {uniq.shape[0]}")
    rng = np.random.default_rng(seed)
    C = uniq[rng.choice(uniq.shape[0], K, replace=False)].copy()
    assign = None
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=-1)
        new = np.argmin(d2, axis=1)
        for k in range(K):
            if not np.any(new == k):
                far = np.argmax(d2[np.arange(X.shape[0]), new])
                C[k] = X[far]
                new[far] = k
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for k in range(K):
            C[k] = X[assign == k].mean(axis=0)
    return InducingSet(C)


def equispaced_init(range_lo, range_hi, K):
    """``K`` equally spaced points on ``[lo, hi]`` (midpoint when ``K == 1``)."""
    lo, hi = np.atleast_1d(np.asarray(range_lo, float)), np.atleast_1d(np.asarray(range_hi, float))
    if lo.size != 1 or hi.size != 1:
        raise InvalidArgumentError("equispaced initialization needs one input dimension")
    lo, hi = float(lo[0]), float(hi[0])
    if not lo < hi:
        raise InvalidArgumentError("range_lo must be below range_hi")
    if int(K) < 1:
        raise InvalidArgumentError("K must be at least 1")
    if int(K) == 1:
        return InducingSet(np.array([[0.5 * (lo + hi)]]))
    return InducingSet(np.linspace(lo, hi, int(K))[:, None])


# ---------------------------------------------------------------------------
# default initialization
# ---------------------------------------------------------------------------


def _ranges(X):
    r = X.max(axis=0) - X.min(axis=0) if X.size else np.ones(X.shape[1])
    return np.where(r > 0, r, 1.0)


def default_noise(dataset):
    all_var = np.var(dataset.y) if dataset.n_total > 1 else 1.0
    out = []
    for b in dataset.blocks:
        v = np.var(b.targets) if b.targets.size > 1 else 0.0
        if not v > 0:
            v = all_var if all_var > 0 else 1.0
        out.append(0.1 * v)
    return NoiseParams(out)


def default_kernel(dataset, kind="gaussian", num_latent=1, standardize=True):
    """Stated default hyperparameters for ``dataset``."""
    D = dataset.num_outputs
    X = dataset.X
    if kind == "gaussian":
        prec = (8.0 / _ranges(X)) ** 2
        return GaussianKernelParams(np.ones((D, num_latent)), np.tile(prec, (D, 1)),
                                    np.tile(prec, (num_latent, 1)), standardize=standardize)
    if kind == "ode1":
        span = float(_ranges(X)[0])
        return Ode1KernelParams(np.ones((D, num_latent)), np.ones(D),
                                np.full(num_latent, span / 4.0))
    raise InvalidArgumentError(f"unknown kernel kind {kind!r}")


def initial_inducing(dataset, K, method="kmeans", seed=0):
    if method == "kmeans":
        return kmeans_init(dataset.X, K, seed)
    if method == "equispaced":
        X = dataset.X
        return equispaced_init(X.min(axis=0), X.max(axis=0), K)
    raise InvalidArgumentError(f"unknown inducing initialization {method!r}")


def default_state(dataset, variant, kind="gaussian", K=None, init="kmeans", seed=0,
                  num_latent=1, mean_mode="empirical", standardize=True):
    variant = Variant.parse(variant)
    inducing = None
    if variant.sparse:
        if K is None:
            raise InvalidArgumentError(f"{variant.value} requires K")
        inducing = initial_inducing(dataset, K, init, seed)
    return ModelState(default_kernel(dataset, kind, num_latent, standardize),
                      default_noise(dataset), dataset, variant, inducing, mean_mode)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    state: ModelState
    trace: OptimTrace
    initial_objective: float
    final_objective: float
    message: str


def negative_log_marginal_objective(space):
    """``theta -> (-L, -dL/dtheta)`` over the free parameters of ``space``."""
    names = space.names

    def fun(theta):
        state = space.unpack(theta)
        L, g = value_and_gradient(state, names)
        return -L, -g.values

    return fun


def fit(state, config=OptimConfig(), optimize_inducing=True, fixed=()):
    """Maximize the log marginal likelihood of ``state``.

    Positive parameters are optimized as logs. The returned state is never
    worse than the initial one.
    """
    space = ParamSpace(state, optimize_inducing=optimize_inducing and state.variant.sparse,
                       fixed=fixed)
    fun = negative_log_marginal_objective(space)
    theta0 = space.pack()
    f0, _ = _safe_eval(fun, theta0)
    if not np.isfinite(f0):
        raise NumericFailureError("initial state")
    res = scg_minimize(fun, theta0, config)
    if res.fun <= f0:
        best, fbest = space.unpack(res.x), res.fun
    else:
        best, fbest = state, f0
    if not optimize_inducing:
        best = best.replace(inducing=state.inducing)
    log.info("fit %s: %.6g -> %.6g (%s, %d iterations)", state.variant.value, f0, fbest,
             res.message, len(res.trace))
    return FitResult(best, res.trace, float(f0), float(fbest), res.message)
