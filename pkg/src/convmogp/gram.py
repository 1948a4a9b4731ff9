"""Data containers and structured covariance assembly.

Training points are stacked output by output: all rows of output 0, then
output 1, and so on. Outputs may have different input sets (heterotopic)
and may be empty.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InvalidArgumentError, NumericFailureError

JITTER_START = 1e-8
JITTER_MAX = 1e-2


class Variant(str, enum.Enum):
    FULL = "FULL"
    INDEPENDENT = "INDEPENDENT"
    DTC = "DTC"
    FITC = "FITC"
    PITC = "PITC"

    @property
    def sparse(self):
        return self in (Variant.DTC, Variant.FITC, Variant.PITC)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise InvalidArgumentError(f"unknown variant {value!r}") from None


SPARSE_VARIANTS = (Variant.DTC, Variant.FITC, Variant.PITC)


@dataclass(frozen=True)
class OutputBlock:
    inputs: np.ndarray
    targets: np.ndarray
    noise_divisors: np.ndarray


@dataclass(frozen=True)
class MultiOutputDataset:
    """Per-output inputs, targets and heteroskedastic noise divisors."""

    blocks: tuple
    names: tuple = None

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise InvalidArgumentError("dataset needs at least one output")
        p = self.blocks[0].inputs.shape[1]
        for d, b in enumerate(self.blocks):
            if b.inputs.ndim != 2 or b.inputs.shape[1] != p:
                raise InvalidArgumentError(
                    f"output {d} inputs have shape {b.inputs.shape}, expected (n, {p})")
            if b.targets.shape != (b.inputs.shape[0],) or b.noise_divisors.shape != b.targets.shape:
                raise InvalidArgumentError(f"output {d} has mismatched lengths")
            if not np.all(np.isfinite(b.targets)) or not np.all(np.isfinite(b.inputs)):
                raise InvalidArgumentError(f"output {d} has non-finite values")
            if np.any(b.noise_divisors <= 0):
                raise InvalidArgumentError(f"output {d} has non-positive noise divisors")
        names = self.names
        if names is None:
            names = tuple(str(d) for d in range(len(self.blocks)))
        elif len(names) != len(self.blocks):
            raise InvalidArgumentError("one name per output is required")
        object.__setattr__(self, "names", tuple(str(n) for n in names))

    @classmethod
    def from_arrays(cls, inputs, targets, noise_divisors=None, names=None):
        """Build from per-output sequences of inputs and targets."""
        if len(inputs) != len(targets):
            raise InvalidArgumentError("inputs and targets must list the same outputs")
        p = None
        for X in inputs:
            X = np.asarray(X, dtype=float)
            if X.size:
                p = X.shape[1] if X.ndim == 2 else 1
                break
        if p is None:
            dims = [np.shape(X)[1] for X in inputs if np.ndim(X) == 2]
            p = dims[0] if dims else 1
        blocks = []
        for d, (X, y) in enumerate(zip(inputs, targets)):
            X = np.asarray(X, dtype=float)
            X = X.reshape(-1, p) if X.ndim < 2 or X.size == 0 else X
            y = np.asarray(y, dtype=float).ravel()
            div = (np.ones_like(y) if noise_divisors is None or noise_divisors[d] is None
                   else np.asarray(noise_divisors[d], dtype=float).ravel())
            for a in (X, y, div):
                a.setflags(write=False)
            blocks.append(OutputBlock(X, y, div))
        return cls(tuple(blocks), None if names is None else tuple(names))

    @property
    def num_outputs(self):
        return len(self.blocks)

    @property
    def input_dim(self):
        return self.blocks[0].inputs.shape[1]

    @property
    def sizes(self):
        return np.array([b.targets.shape[0] for b in self.blocks], dtype=int)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def n_total(self):
        return int(self.sizes.sum())

    def slices(self):
        o = self.offsets
        return [slice(o[d], o[d + 1]) for d in range(self.num_outputs)]

    @property
    def X(self):
        return np.vstack([b.inputs for b in self.blocks])

    @property
    def y(self):
        return np.concatenate([b.targets for b in self.blocks])

    @property
    def noise_divisors(self):
        return np.concatenate([b.noise_divisors for b in self.blocks])

    @property
    def output_index(self):
        return np.repeat(np.arange(self.num_outputs), self.sizes)

    def with_targets(self, y_blocks):
        return MultiOutputDataset.from_arrays(
            [b.inputs for b in self.blocks], y_blocks,
            [b.noise_divisors for b in self.blocks], self.names)

    def subset(self, index_blocks):
        """Keep rows ``index_blocks[d]`` of each output."""
        return MultiOutputDataset.from_arrays(
            [b.inputs[i] for b, i in zip(self.blocks, index_blocks)],
            [b.targets[i] for b, i in zip(self.blocks, index_blocks)],
            [b.noise_divisors[i] for b, i in zip(self.blocks, index_blocks)],
            self.names)

    def drop_output(self, d):
        """Remove every observation of output ``d`` (the output stays declared)."""
        keep = [np.arange(n) if k != d else np.arange(0) for k, n in enumerate(self.sizes)]
        return self.subset(keep)


@dataclass(frozen=True)
class InducingSet:
    Z: np.ndarray

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2 or Z.shape[0] < 1:
            raise InvalidArgumentError("inducing set needs at least one point")
        if not np.all(np.isfinite(Z)):
            raise InvalidArgumentError("inducing inputs must be finite")
        if Z.shape[0] > 1:
            sq = np.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=-1)
            sq[np.diag_indices_from(sq)] = np.inf
            if np.min(sq) <= 0.0:
                raise InvalidArgumentError("duplicate inducing inputs")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def num_inducing(self):
        return self.Z.shape[0]


@dataclass(frozen=True)
class NoiseParams:
    variances: np.ndarray

    def __post_init__(self):
        v = np.array(self.variances, dtype=float).ravel()
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise InvalidArgumentError("noise variances must be finite and positive")
        v.setflags(write=False)
        object.__setattr__(self, "variances", v)

    def point_variances(self, dataset):
        """Per-point noise ``sigma_d^2 / divisor``."""
        return self.variances[dataset.output_index] / dataset.noise_divisors


def jittered_cholesky(K, name, start=JITTER_START, always=True):
    """Lower Cholesky factor of ``K + jitter * mean(diag(K)) * I``.

    With ``always=False`` an unjittered factorization is tried first.
    Jitter grows tenfold up to ``JITTER_MAX`` before giving up.
    Returns ``(L, jitter)`` where ``jitter`` is the absolute amount added.
    """
    scale = float(np.mean(np.diag(K))) if K.shape[0] else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    if not always:
        try:
            return linalg.cholesky(K, lower=True, check_finite=False), 0.0
        except linalg.LinAlgError:
            pass
    rel = start
    while rel <= JITTER_MAX * (1 + 1e-12):
        jitter = rel * scale
        try:
            Kj = K + jitter * np.eye(K.shape[0])
            L = linalg.cholesky(Kj, lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except (linalg.LinAlgError, ValueError):
            pass
        rel *= 10.0
    raise NumericFailureError(name)


def _check_kernel(dataset, kernel):
    if kernel.num_outputs != dataset.num_outputs:
        raise InvalidArgumentError(
            f"kernel has {kernel.num_outputs} outputs, dataset has {dataset.num_outputs}")
    if kernel.input_dim != dataset.input_dim:
        raise InvalidArgumentError(
            f"kernel input dimension {kernel.input_dim} != dataset {dataset.input_dim}")


def full_kff(kernel, inputs_a, inputs_b=None):
    """Dense output covariance over stacked per-output input lists."""
    sym = inputs_b is None
    inputs_b = inputs_a if sym else inputs_b
    na = [len(x) for x in inputs_a]
    nb = [len(x) for x in inputs_b]
    oa, ob = np.concatenate([[0], np.cumsum(na)]), np.concatenate([[0], np.cumsum(nb)])
    K = np.zeros((oa[-1], ob[-1]))
    D = kernel.num_outputs
    for d in range(D):
        if na[d] == 0:
            continue
        for d2 in range(D):
            if nb[d2] == 0 or (sym and d2 < d):
                continue
            blk = kernel.kff(d, d2, inputs_a[d], inputs_b[d2])
            K[oa[d]:oa[d + 1], ob[d2]:ob[d2 + 1]] = blk
            if sym and d2 > d:
                K[ob[d2]:ob[d2 + 1], oa[d]:oa[d + 1]] = blk.T
    return K


def stacked_kfu(kernel, inputs, Z, q=0):
    p = kernel.input_dim
    rows = [kernel.kfu(d, X, Z, q) if len(X) else np.zeros((0, len(Z)))
            for d, X in enumerate(inputs)]
    return np.vstack(rows) if rows else np.zeros((0, len(Z)))


def _require_single_latent(kernel):
    if kernel.num_latent != 1:
        raise InvalidArgumentError(
            "sparse approximations support a single latent function "
            f"(got Q={kernel.num_latent})")


@dataclass(frozen=True)
class CovarianceParts:
    """Covariance matrices needed by one model variant.

    ``D`` is a list of dense per-output blocks for PITC and a vector holding
    the diagonal for FITC and DTC (all zeros for DTC). ``Kuu`` already
    contains ``jitter`` on its diagonal and ``Kuu_chol`` is its lower factor.
    """

    variant: Variant
    sigma: np.ndarray
    slices: list
    Kff: np.ndarray = None
    Kff_blocks: list = None
    Kff_diag: np.ndarray = None
    Kfu: np.ndarray = None
    Kuu: np.ndarray = None
    Kuu_chol: np.ndarray = None
    jitter: float = 0.0
    D: object = None

    def D_dense(self):
        n = self.sigma.shape[0]
        if self.variant is Variant.PITC:
            out = np.zeros((n, n))
            for s, blk in zip(self.slices, self.D):
                out[s, s] = blk
            return out
        return np.diag(self.D)

    def nystrom(self):
        """Low-rank term ``Kfu Kuu^{-1} Kuf``."""
        V = linalg.solve_triangular(self.Kuu_chol, self.Kfu.T, lower=True)
        return V.T @ V


def assemble(dataset, kernel, noise, variant, inducing=None):
    """Assemble the covariance parts required by ``variant``."""
    variant = Variant.parse(variant)
    _check_kernel(dataset, kernel)
    if noise.variances.shape[0] != dataset.num_outputs:
        raise InvalidArgumentError("one noise variance per output is required")
    sigma = noise.point_variances(dataset)
    slices = dataset.slices()
    inputs = [b.inputs for b in dataset.blocks]
    if variant is Variant.FULL:
        return CovarianceParts(variant, sigma, slices, Kff=full_kff(kernel, inputs))
    if variant is Variant.INDEPENDENT:
        blocks = [kernel.kff(d, d, X, X) for d, X in enumerate(inputs)]
        return CovarianceParts(variant, sigma, slices, Kff_blocks=blocks)
    if inducing is None:
        raise InvalidArgumentError(f"{variant.value} requires an inducing set")
    _require_single_latent(kernel)
    Z = inducing.Z
    if Z.shape[1] != dataset.input_dim:
        raise InvalidArgumentError("inducing inputs have the wrong dimension")
    Kuu = kernel.kuu(Z, 0)
    Lu, jitter = jittered_cholesky(Kuu, "Kuu")
    Kuu = Kuu + jitter * np.eye(Kuu.shape[0])
    Kfu = stacked_kfu(kernel, inputs, Z)
    parts = dict(variant=variant, sigma=sigma, slices=slices, Kfu=Kfu, Kuu=Kuu,
                 Kuu_chol=Lu, jitter=jitter)
    if variant is Variant.DTC:
        return CovarianceParts(D=np.zeros(dataset.n_total), **parts)
    V = linalg.solve_triangular(Lu, Kfu.T, lower=True)
    if variant is Variant.FITC:
        kdiag = np.concatenate([kernel.kff_diag(d, X) if len(X) else np.zeros(0)
                                for d, X in enumerate(inputs)])
        D = np.maximum(kdiag - np.sum(V * V, axis=0), 0.0)
        return CovarianceParts(Kff_diag=kdiag, D=D, **parts)
    blocks, D = [], []
    for d, (X, s) in enumerate(zip(inputs, slices)):
        Kdd = kernel.kff(d, d, X, X) if len(X) else np.zeros((0, 0))
        Vd = V[:, s]
        blocks.append(Kdd)
        Dd = Kdd - Vd.T @ Vd
        Dd = 0.5 * (Dd + Dd.T)
        # diagonal computed exactly as the FITC correction
        kdiag = kernel.kff_diag(d, X) if len(X) else np.zeros(0)
        np.fill_diagonal(Dd, np.maximum(kdiag - np.sum(Vd * Vd, axis=0), 0.0))
        D.append(Dd)
    return CovarianceParts(Kff_blocks=blocks, D=D, **parts)


@dataclass(frozen=True)
class TestParts:
    """Covariances between test points, training points and inducing inputs."""

    variant: Variant
    slices: list
    Kfsu: np.ndarray = None
    Dstar: object = None
    Kfsf: np.ndarray = None
    Kfsfs: np.ndarray = None
    Kfsfs_diag: np.ndarray = None


def _test_slices(test_inputs):
    n = [len(x) for x in test_inputs]
    o = np.concatenate([[0], np.cumsum(n)])
    return [slice(o[d], o[d + 1]) for d in range(len(n))]


def normalize_test_inputs(test_inputs, p):
    out = []
    for X in test_inputs:
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            X = np.zeros((0, p))
        elif X.ndim == 1:
            X = X.reshape(-1, p) if p > 1 else X[:, None]
        if X.shape[1] != p:
            raise InvalidArgumentError(f"test inputs must have {p} columns")
        out.append(X)
    return out


def build_test_parts(test_inputs, dataset, kernel, variant, inducing=None,
                     parts=None, full_cov=False):
    """Test-side covariances, following the training variant's D rule."""
    variant = Variant.parse(variant)
    _check_kernel(dataset, kernel)
    if len(test_inputs) != dataset.num_outputs:
        raise InvalidArgumentError("test inputs must be given per output")
    test_inputs = normalize_test_inputs(test_inputs, dataset.input_dim)
    slices = _test_slices(test_inputs)
    inputs = [b.inputs for b in dataset.blocks]

    def kss_diag():
        return np.concatenate([kernel.kff_diag(d, X) if len(X) else np.zeros(0)
                               for d, X in enumerate(test_inputs)])

    if variant is Variant.FULL:
        Kfsf = full_kff(kernel, test_inputs, inputs)
        if full_cov:
            return TestParts(variant, slices, Kfsf=Kfsf, Kfsfs=full_kff(kernel, test_inputs))
        return TestParts(variant, slices, Kfsf=Kfsf, Kfsfs_diag=kss_diag())
    if variant is Variant.INDEPENDENT:
        # per-output cross blocks only; stored block-diagonally
        Kfsf = np.zeros((slices[-1].stop if slices else 0, dataset.n_total))
        for d, (Xs, X, ss, s) in enumerate(zip(test_inputs, inputs, slices, dataset.slices())):
            if len(Xs) and len(X):
                Kfsf[ss, s] = kernel.kff(d, d, Xs, X)
        if full_cov:
            Kss = np.zeros((Kfsf.shape[0],) * 2)
            for d, (Xs, ss) in enumerate(zip(test_inputs, slices)):
                if len(Xs):
                    Kss[ss, ss] = kernel.kff(d, d, Xs, Xs)
            return TestParts(variant, slices, Kfsf=Kfsf, Kfsfs=Kss)
        return TestParts(variant, slices, Kfsf=Kfsf, Kfsfs_diag=kss_diag())

    if inducing is None:
        raise InvalidArgumentError(f"{variant.value} requires an inducing set")
    if parts is None:
        parts = assemble(dataset, kernel, NoiseParams(np.ones(dataset.num_outputs)),
                         variant, inducing)
    Kfsu = stacked_kfu(kernel, test_inputs, inducing.Z)
    n = Kfsu.shape[0]
    if variant is Variant.DTC:
        return TestParts(variant, slices, Kfsu=Kfsu, Dstar=np.zeros(n))
    V = linalg.solve_triangular(parts.Kuu_chol, Kfsu.T, lower=True)
    if variant is Variant.FITC:
        return TestParts(variant, slices, Kfsu=Kfsu,
                         Dstar=np.maximum(kss_diag() - np.sum(V * V, axis=0), 0.0))
    blocks = []
    for d, (Xs, s) in enumerate(zip(test_inputs, slices)):
        Kss = kernel.kff(d, d, Xs, Xs) if len(Xs) else np.zeros((0, 0))
        Vd = V[:, s]
        blocks.append(Kss - Vd.T @ Vd)
    return TestParts(variant, slices, Kfsu=Kfsu, Dstar=blocks)
