"""Log marginal likelihoods and predictive distributions.

Sparse models use the inversion-lemma factorization with
``Dt = D + Sigma`` (D from the variant), ``V = Dt^{-1} Kfu``,
``A = Kuu + Kuf V`` and ``beta = A^{-1} V^T y``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .errors import InvalidArgumentError, NumericFailureError
from .gram import (
    InducingSet,
    MultiOutputDataset,
    NoiseParams,
    Variant,
    assemble,
    build_test_parts,
    jittered_cholesky,
    normalize_test_inputs,
)

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
MEAN_MODES = ("empirical", "none", "basal")


@dataclass(frozen=True)
class ModelState:
    """Everything needed to evaluate one model on one dataset."""

    kernel: object
    noise: NoiseParams
    dataset: MultiOutputDataset
    variant: Variant
    inducing: InducingSet = None
    mean_mode: str = "empirical"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.variant.sparse and self.inducing is None:
            raise InvalidArgumentError(f"{self.variant.value} requires an inducing set")
        if self.mean_mode not in MEAN_MODES:
            raise InvalidArgumentError(f"mean_mode must be one of {MEAN_MODES}")
        if self.mean_mode == "basal" and not hasattr(self.kernel, "mean_offset"):
            raise InvalidArgumentError("basal mean requires the ODE kernel")

    def output_means(self):
        D = self.dataset.num_outputs
        if self.mean_mode == "none":
            return np.zeros(D)
        if self.mean_mode == "basal":
            return np.asarray(self.kernel.mean_offset(), dtype=float)
        return np.array([b.targets.mean() if b.targets.size else 0.0
                         for b in self.dataset.blocks])

    def centered_targets(self):
        mu = self.output_means()
        return self.dataset.y - mu[self.dataset.output_index]

    def replace(self, **changes):
        return replace(self, **changes)

    def parts(self):
        return assemble(self.dataset, self.kernel, self.noise, self.variant, self.inducing)


@dataclass(frozen=True)
class PosteriorU:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class Prediction:
    """Predictive moments, one entry per output."""

    mean: list
    variance: list
    includes_noise: bool
    covariance: np.ndarray = None

    @property
    def stacked_mean(self):
        return np.concatenate(self.mean) if self.mean else np.zeros(0)

    @property
    def stacked_variance(self):
        return np.concatenate(self.variance) if self.variance else np.zeros(0)


class _NoiseCorrection:
    """Factorized ``Dt = D + Sigma`` for the three sparse variants."""

    def __init__(self, parts):
        self.variant = parts.variant
        self.slices = parts.slices
        if parts.variant is Variant.PITC:
            self.chols = []
            for s, blk in zip(parts.slices, parts.D):
                M = blk + np.diag(parts.sigma[s])
                if M.shape[0]:
                    Lc, _ = jittered_cholesky(M, "D+Sigma", always=False)
                else:
                    Lc = M
                self.chols.append(Lc)
            self.logdet = sum(2.0 * np.sum(np.log(np.diag(Lc))) for Lc in self.chols)
        else:
            self.diag = parts.D + parts.sigma
            if np.any(self.diag <= 0):
                raise NumericFailureError("D+Sigma")
            self.logdet = float(np.sum(np.log(self.diag)))

    def solve(self, B):
        B = np.asarray(B, dtype=float)
        if self.variant is not Variant.PITC:
            return B / (self.diag if B.ndim == 1 else self.diag[:, None])
        out = np.empty_like(B)
        for s, Lc in zip(self.slices, self.chols):
            if Lc.shape[0]:
                out[s] = linalg.cho_solve((Lc, True), B[s], check_finite=False)
        return out

    def inverse_blocks(self):
        """Dense inverse per block (PITC) or the inverse diagonal."""
        if self.variant is not Variant.PITC:
            return 1.0 / self.diag
        return [linalg.cho_solve((Lc, True), np.eye(Lc.shape[0]), check_finite=False)
                if Lc.shape[0] else np.zeros((0, 0)) for Lc in self.chols]


class SparseFactor:
    """Cached inversion-lemma quantities for one sparse model evaluation."""

    def __init__(self, parts, y):
        if not parts.variant.sparse:
            raise InvalidArgumentError("SparseFactor requires a sparse variant")
        self.parts = parts
        self.y = np.asarray(y, dtype=float)
        self.N = self.y.shape[0]
        self.Dt = _NoiseCorrection(parts)
        Kfu = parts.Kfu
        self.V = self.Dt.solve(Kfu)
        self.alpha = self.Dt.solve(self.y)
        A = parts.Kuu + Kfu.T @ self.V
        A = 0.5 * (A + A.T)
        self.A = A
        self.LA, _ = jittered_cholesky(A, "A", always=False)
        self.Vty = self.V.T @ self.y
        self.beta = linalg.cho_solve((self.LA, True), self.Vty, check_finite=False)
        self.w = self.alpha - self.V @ self.beta

    def A_solve(self, B):
        return linalg.cho_solve((self.LA, True), B, check_finite=False)

    def Kuu_solve(self, B):
        return linalg.cho_solve((self.parts.Kuu_chol, True), B, check_finite=False)

    def log_marginal(self):
        logdet_kuu = 2.0 * np.sum(np.log(np.diag(self.parts.Kuu_chol)))
        logdet_A = 2.0 * np.sum(np.log(np.diag(self.LA)))
        return float(-0.5 * self.N * _LOG_2PI + 0.5 * logdet_kuu - 0.5 * logdet_A
                     - 0.5 * self.Dt.logdet - 0.5 * self.y @ self.alpha
                     + 0.5 * self.Vty @ self.beta)


class FullFactor:
    """Cholesky of ``K + Sigma`` for dense models."""

    def __init__(self, K, sigma, y, name="Kff+Sigma"):
        self.y = np.asarray(y, dtype=float)
        C = K + np.diag(sigma)
        self.L, _ = jittered_cholesky(C, name, always=False)
        self.alpha = linalg.cho_solve((self.L, True), self.y, check_finite=False)

    def log_marginal(self):
        n = self.y.shape[0]
        return float(-0.5 * self.y @ self.alpha - np.sum(np.log(np.diag(self.L)))
                     - 0.5 * n * _LOG_2PI)

    def inverse(self):
        return linalg.cho_solve((self.L, True), np.eye(self.L.shape[0]), check_finite=False)


def _require(state, variants):
    if state.variant not in variants:
        raise InvalidArgumentError(
            f"operation not defined for variant {state.variant.value}")


def full_log_marginal(state, parts=None):
    """``log N(y | 0, Kff + Sigma)`` for the dense multi-output GP."""
    _require(state, (Variant.FULL,))
    parts = parts or state.parts()
    return FullFactor(parts.Kff, parts.sigma, state.centered_targets()).log_marginal()


def independent_factors(state, parts=None):
    parts = parts or state.parts()
    y = state.centered_targets()
    return [FullFactor(K, parts.sigma[s], y[s], f"Kff[{d}]+Sigma")
            for d, (K, s) in enumerate(zip(parts.Kff_blocks, parts.slices))]


def independent_log_marginal(state, parts=None):
    """Sum of per-output single-output GP log marginals."""
    _require(state, (Variant.INDEPENDENT,))
    return float(sum(f.log_marginal() for f in independent_factors(state, parts)))


def sparse_factor(state, parts=None):
    _require(state, (Variant.DTC, Variant.FITC, Variant.PITC))
    parts = parts or state.parts()
    return SparseFactor(parts, state.centered_targets())


def sparse_log_marginal(state, parts=None):
    """Log marginal of ``N(0, D + Kfu Kuu^{-1} Kuf + Sigma)`` in low-rank form."""
    return sparse_factor(state, parts).log_marginal()


def log_marginal(state, parts=None):
    """Dispatch on the model variant."""
    if state.variant is Variant.FULL:
        return full_log_marginal(state, parts)
    if state.variant is Variant.INDEPENDENT:
        return independent_log_marginal(state, parts)
    return sparse_log_marginal(state, parts)


def dense_sparse_covariance(parts):
    """Dense ``D + Kfu Kuu^{-1} Kuf + Sigma`` (small problems and tests)."""
    return parts.D_dense() + parts.nystrom() + np.diag(parts.sigma)


def posterior_u(state, factor=None):
    """Gaussian posterior over the inducing values."""
    factor = factor or sparse_factor(state)
    Kuu = factor.parts.Kuu
    mean = Kuu @ factor.beta
    cov = Kuu @ factor.A_solve(Kuu)
    return PosteriorU(mean, 0.5 * (cov + cov.T))


def _clean_variance(var, scale, what):
    scale = max(float(scale), 1.0)
    low = np.min(var) if var.size else 0.0
    if low < -1e-8 * scale:
        log.warning("%s: negative predictive variance %.3g clamped to zero", what, low)
    return np.maximum(var, 0.0)


def _noise_at_test(state, test_inputs, test_divisors):
    out = []
    for d, X in enumerate(test_inputs):
        div = 1.0 if test_divisors is None or test_divisors[d] is None else \
            np.asarray(test_divisors[d], dtype=float)
        out.append(np.broadcast_to(state.noise.variances[d] / div, (len(X),)).astype(float))
    return np.concatenate(out) if out else np.zeros(0)


def _split(vec, test_inputs):
    o = np.concatenate([[0], np.cumsum([len(x) for x in test_inputs])])
    return [vec[o[d]:o[d + 1]].copy() for d in range(len(test_inputs))]


def _finish(state, test_inputs, mean, var, cov, include_noise, test_divisors):
    mu = state.output_means()
    if test_inputs:
        mean = mean + np.concatenate(
            [np.full(len(X), mu[d]) for d, X in enumerate(test_inputs)])
    scale = np.max(np.abs(var)) if var.size else 1.0
    var = _clean_variance(var, scale, state.variant.value)
    if include_noise:
        noise = _noise_at_test(state, test_inputs, test_divisors)
        var = var + noise
        if cov is not None:
            cov = cov + np.diag(noise)
    return Prediction(_split(mean, test_inputs), _split(var, test_inputs),
                      bool(include_noise), cov)


def full_predict(state, test_inputs, include_noise=False, test_divisors=None,
                 full_cov=False, parts=None):
    """Dense GP predictive distribution at per-output test inputs."""
    _require(state, (Variant.FULL,))
    test_inputs = normalize_test_inputs(test_inputs, state.dataset.input_dim)
    parts = parts or state.parts()
    factor = FullFactor(parts.Kff, parts.sigma, state.centered_targets())
    tp = build_test_parts(test_inputs, state.dataset, state.kernel, Variant.FULL,
                          full_cov=full_cov)
    mean = tp.Kfsf @ factor.alpha
    W = linalg.solve_triangular(factor.L, tp.Kfsf.T, lower=True, check_finite=False)
    cov = None
    if full_cov:
        cov = tp.Kfsfs - W.T @ W
        var = np.diag(cov).copy()
    else:
        var = tp.Kfsfs_diag - np.sum(W * W, axis=0)
    return _finish(state, test_inputs, mean, var, cov, include_noise, test_divisors)


def independent_predict(state, test_inputs, include_noise=False, test_divisors=None,
                        full_cov=False, parts=None):
    """Per-output GP predictions that ignore the other outputs."""
    _require(state, (Variant.INDEPENDENT,))
    test_inputs = normalize_test_inputs(test_inputs, state.dataset.input_dim)
    parts = parts or state.parts()
    factors = independent_factors(state, parts)
    kern = state.kernel
    means, vars_, covs = [], [], []
    for d, (X, f) in enumerate(zip(test_inputs, factors)):
        Xtr = state.dataset.blocks[d].inputs
        if len(X) == 0:
            means.append(np.zeros(0))
            vars_.append(np.zeros(0))
            covs.append(np.zeros((0, 0)))
            continue
        if len(Xtr) == 0:
            Ks = np.zeros((len(X), 0))
        else:
            Ks = kern.kff(d, d, X, Xtr)
        W = linalg.solve_triangular(f.L, Ks.T, lower=True, check_finite=False) \
            if len(Xtr) else np.zeros((0, len(X)))
        means.append(Ks @ f.alpha if len(Xtr) else np.zeros(len(X)))
        if full_cov:
            C = kern.kff(d, d, X, X) - W.T @ W
            covs.append(C)
            vars_.append(np.diag(C).copy())
        else:
            vars_.append(kern.kff_diag(d, X) - np.sum(W * W, axis=0))
    mean = np.concatenate(means)
    var = np.concatenate(vars_)
    cov = linalg.block_diag(*covs) if full_cov else None
    return _finish(state, test_inputs, mean, var, cov, include_noise, test_divisors)


def sparse_predict(state, test_inputs, include_noise=False, test_divisors=None,
                   full_cov=False, factor=None):
    """Sparse predictive: mean ``Kfsu beta``, covariance ``D* + Kfsu A^{-1} Kufs``."""
    _require(state, (Variant.DTC, Variant.FITC, Variant.PITC))
    test_inputs = normalize_test_inputs(test_inputs, state.dataset.input_dim)
    factor = factor or sparse_factor(state)
    tp = build_test_parts(test_inputs, state.dataset, state.kernel, state.variant,
                          state.inducing, factor.parts)
    Kfsu = tp.Kfsu
    mean = Kfsu @ factor.beta
    W = linalg.solve_triangular(factor.LA, Kfsu.T, lower=True, check_finite=False)
    n = Kfsu.shape[0]
    if full_cov:
        cov = W.T @ W
        if state.variant is Variant.FITC:
            cov = cov + np.diag(tp.Dstar)
        elif state.variant is Variant.PITC:
            for s, blk in zip(tp.slices, tp.Dstar):
                cov[s, s] += blk
        var = np.diag(cov).copy()
    else:
        cov = None
        var = np.sum(W * W, axis=0)
        if state.variant is Variant.FITC:
            var = var + tp.Dstar
        elif state.variant is Variant.PITC and n:
            var = var + np.concatenate([np.diag(b) for b in tp.Dstar])
    return _finish(state, test_inputs, mean, var, cov, include_noise, test_divisors)


def predict(state, test_inputs, include_noise=False, test_divisors=None, full_cov=False):
    """Dispatch on the model variant."""
    if state.variant is Variant.FULL:
        return full_predict(state, test_inputs, include_noise, test_divisors, full_cov)
    if state.variant is Variant.INDEPENDENT:
        return independent_predict(state, test_inputs, include_noise, test_divisors, full_cov)
    return sparse_predict(state, test_inputs, include_noise, test_divisors, full_cov)
