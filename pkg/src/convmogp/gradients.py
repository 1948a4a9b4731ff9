"""Analytic gradients of the log marginal likelihood.

With ``Dt = D + Sigma`` and ``G = Dt^{-1} - V A^{-1} V^T - w w^T`` (the
matrix ``d(-2L)/dC`` for the low-rank covariance ``C``), the gradients are

* ``dL/dKff = -1/2 Q`` with ``Q = G`` masked to the variant's structure,
* ``dL/dKuf = Kuu^{-1} Kuf Q - (A^{-1} + beta beta^T) V^T + beta alpha^T``,
* ``dL/dKuu = 1/2 (Kuu^{-1} - A^{-1} - beta beta^T - Kuu^{-1} Kuf Q Kfu Kuu^{-1})``,
* ``dL/dSigma = -1/2 diag(G)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidArgumentError
from .gram import InducingSet, NoiseParams, Variant
from .models import FullFactor, SparseFactor, independent_factors

# ---------------------------------------------------------------------------
# covariance-level gradients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovGradients:
    """Gradients with respect to the assembled covariance matrices.

    ``dL_dKff`` holds per-output blocks (PITC, INDEPENDENT), a vector for
    the diagonal (FITC), ``None`` (DTC) or a dense matrix (FULL).
    """

    variant: Variant
    dL_dKff: object
    dL_dKuf: np.ndarray
    dL_dKuu: np.ndarray
    dL_dSigma: np.ndarray
    dL_dy: np.ndarray
    log_marginal: float = None


def sparse_cov_gradients(factor):
    """Gradients for a :class:`SparseFactor`, never forming N x N matrices."""
    parts = factor.parts
    variant = parts.variant
    V, w, Kfu = factor.V, factor.w, parts.Kfu
    Ainv = factor.A_solve(np.eye(parts.Kuu.shape[0]))
    VA = V @ Ainv
    if variant is Variant.PITC:
        Dinv = factor.Dt.inverse_blocks()
        Q = []
        for s, Di in zip(parts.slices, Dinv):
            blk = Di - VA[s] @ V[s].T - np.outer(w[s], w[s])
            Q.append(0.5 * (blk + blk.T))
        diagG = np.concatenate([np.diag(b) for b in Q]) if Q else np.zeros(0)
        KufQ = np.hstack([Kfu[s].T @ b for s, b in zip(parts.slices, Q)])
        dKff = [-0.5 * b for b in Q]
    else:
        diagG = factor.Dt.inverse_blocks() - np.sum(VA * V, axis=1) - w * w
        if variant is Variant.FITC:
            KufQ = Kfu.T * diagG
            dKff = -0.5 * diagG
        else:
            KufQ = np.zeros_like(Kfu.T)
            dKff = None
    Kuu_inv = factor.Kuu_solve(np.eye(parts.Kuu.shape[0]))
    beta = factor.beta
    dKuf = factor.Kuu_solve(KufQ) - (Ainv + np.outer(beta, beta)) @ V.T \
        + np.outer(beta, factor.alpha)
    R = factor.Kuu_solve(factor.Kuu_solve(KufQ @ Kfu).T)
    dKuu = 0.5 * (Kuu_inv - Ainv - np.outer(beta, beta) - R)
    dKuu = 0.5 * (dKuu + dKuu.T)
    return CovGradients(variant, dKff, dKuf, dKuu, -0.5 * diagG, -w,
                        factor.log_marginal())


def appendix_cov_gradients(parts, y):
    """Reference route through the dense ``C``, ``H`` and ``J`` matrices.

    Here ``D`` absorbs the noise (``D <- D + Sigma``). Only for small
    problems; used to cross-check :func:`sparse_cov_gradients`.
    """
    y = np.asarray(y, dtype=float)
    Dm = parts.D_dense() + np.diag(parts.sigma)
    Dinv = np.linalg.inv(Dm)
    Kfu, Kuu = parts.Kfu, parts.Kuu
    Kuf = Kfu.T
    A = Kuu + Kuf @ Dinv @ Kfu
    Ainv = np.linalg.inv(A)
    yy = np.outer(y, y)
    C = Ainv + Ainv @ Kuf @ Dinv @ yy @ Dinv @ Kfu @ Ainv
    T = Kfu @ Ainv @ Kuf @ Dinv @ yy
    H = Dm - yy + T + T.T
    J = H - Kfu @ C @ Kuf
    G = Dinv @ J @ Dinv
    if parts.variant is Variant.PITC:
        M = np.zeros_like(G)
        for s in parts.slices:
            M[s, s] = 1.0
    elif parts.variant is Variant.FITC:
        M = np.eye(G.shape[0])
    else:
        M = np.zeros_like(G)
    Q = G * M
    Kuu_inv = np.linalg.inv(Kuu)
    dKff = -0.5 * Q
    dKuf = Kuu_inv @ Kuf @ Q - C @ Kuf @ Dinv + Ainv @ Kuf @ Dinv @ yy @ Dinv
    dKuu = 0.5 * (Kuu_inv - C - Kuu_inv @ Kuf @ Q @ Kfu @ Kuu_inv)
    return {"G": G, "Q": Q, "C": C, "H": H, "J": J, "dL_dKff": dKff,
            "dL_dKuf": dKuf, "dL_dKuu": dKuu, "dL_dSigma": -0.5 * np.diag(G)}


def full_cov_gradients(factor):
    alpha = factor.alpha
    W = 0.5 * (np.outer(alpha, alpha) - factor.inverse())
    return W, np.diag(W).copy(), -alpha


def grad_wrt_covs(state, parts=None):
    """Covariance-level gradients for any variant."""
    parts = parts or state.parts()
    y = state.centered_targets()
    if state.variant.sparse:
        return sparse_cov_gradients(SparseFactor(parts, y))
    if state.variant is Variant.FULL:
        factor = FullFactor(parts.Kff, parts.sigma, y)
        W, dS, dy = full_cov_gradients(factor)
        return CovGradients(state.variant, W, None, None, dS, dy, factor.log_marginal())
    blocks, dS, dy = [], [], []
    factors = independent_factors(state, parts)
    for f in factors:
        W, s, g = full_cov_gradients(f)
        blocks.append(W)
        dS.append(s)
        dy.append(g)
    return CovGradients(state.variant, blocks, None, None,
                        np.concatenate(dS), np.concatenate(dy),
                        float(sum(f.log_marginal() for f in factors)))


# ---------------------------------------------------------------------------
# parameter space
# ---------------------------------------------------------------------------


class ParamSpace:
    """Flat parameter vector for a model state.

    Order: kernel parameters, noise variances ``("noise", d)``, then
    inducing coordinates ``("Z", k, j)`` when ``optimize_inducing``.
    Positive parameters are represented by their logs.
    """

    def __init__(self, state, optimize_inducing=True, fixed=()):
        self.state = state
        self.kernel_names = list(state.kernel.names())
        D = state.dataset.num_outputs
        self.noise_names = [("noise", d) for d in range(D)]
        self.z_names = []
        if optimize_inducing and state.inducing is not None:
            K, p = state.inducing.Z.shape
            self.z_names = [("Z", k, j) for k in range(K) for j in range(p)]
        self.all_names = self.kernel_names + self.noise_names + self.z_names
        fixed = {tuple(f) for f in fixed}
        self.free = np.array([n not in fixed for n in self.all_names])
        self.positive = np.concatenate([
            state.kernel.positive_mask(), np.ones(D, bool), np.zeros(len(self.z_names), bool)])

    @property
    def names(self):
        return [n for n, f in zip(self.all_names, self.free) if f]

    def natural(self, state=None):
        state = state or self.state
        parts = [state.kernel.values(), state.noise.variances]
        if self.z_names:
            parts.append(state.inducing.Z.ravel())
        return np.concatenate(parts)

    def to_unconstrained(self, natural):
        natural = np.asarray(natural, dtype=float)
        out = natural.copy()
        out[self.positive] = np.log(natural[self.positive])
        return out

    def from_unconstrained(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        with np.errstate(over="ignore"):
            out[self.positive] = np.exp(theta[self.positive])
        return out

    def pack(self, state=None):
        return self.to_unconstrained(self.natural(state))[self.free]

    def unpack(self, theta):
        """State for an unconstrained vector of the free parameters."""
        full = self.to_unconstrained(self.natural())
        full[self.free] = theta
        nat = self.from_unconstrained(full)
        nk = len(self.kernel_names)
        D = len(self.noise_names)
        kernel = self.state.kernel.with_values(nat[:nk])
        noise = NoiseParams(nat[nk:nk + D])
        inducing = self.state.inducing
        if self.z_names:
            inducing = InducingSet(nat[nk + D:].reshape(self.state.inducing.Z.shape))
        return self.state.replace(kernel=kernel, noise=noise, inducing=inducing)


# ---------------------------------------------------------------------------
# parameter-level gradients
# ---------------------------------------------------------------------------


def _contract(out, derivs, G, factor=1.0):
    for name, dK in derivs.items():
        out[name] = out.get(name, 0.0) + factor * float(np.sum(G * dK))


def _kernel_grads(state, cg):
    """Gradients with respect to the (natural) kernel parameters."""
    kern, ds = state.kernel, state.dataset
    inputs = [b.inputs for b in ds.blocks]
    slices = ds.slices()
    D = ds.num_outputs
    out = {}
    v = cg.variant
    if v is Variant.FULL:
        W = cg.dL_dKff
        for d in range(D):
            if not len(inputs[d]):
                continue
            for d2 in range(d, D):
                if not len(inputs[d2]):
                    continue
                derivs = kern.kff_derivs(d, d2, inputs[d], inputs[d2])
                _contract(out, derivs, W[slices[d], slices[d2]], 1.0 if d == d2 else 2.0)
    elif v in (Variant.INDEPENDENT, Variant.PITC):
        for d in range(D):
            if len(inputs[d]):
                _contract(out, kern.kff_derivs(d, d, inputs[d], inputs[d]), cg.dL_dKff[d])
    elif v is Variant.FITC:
        for d in range(D):
            if len(inputs[d]):
                _contract(out, kern.kff_diag_derivs(d, inputs[d]), cg.dL_dKff[slices[d]])
    if v.sparse:
        Z = state.inducing.Z
        for d in range(D):
            if len(inputs[d]):
                _contract(out, kern.kfu_derivs(d, inputs[d], Z), cg.dL_dKuf[:, slices[d]].T)
        _contract(out, kern.kuu_derivs(Z), cg.dL_dKuu)
    if state.mean_mode == "basal":
        # centred targets depend on gamma through B / gamma
        B, g = kern.basal_rates, kern.decays
        for d in range(D):
            name = ("gamma", d)
            out[name] = out.get(name, 0.0) + float(np.sum(cg.dL_dy[slices[d]])) * B[d] / g[d] ** 2
    return out


def _inducing_grads(state, cg):
    kern, ds = state.kernel, state.dataset
    Z = state.inducing.Z
    gZ = np.zeros_like(Z)
    for d, (b, s) in enumerate(zip(ds.blocks, ds.slices())):
        if len(b.inputs):
            dz = kern.kfu_dz(d, b.inputs, Z)             # (N_d, K, p)
            gZ += np.einsum("kn,nkj->kj", cg.dL_dKuf[:, s], dz)
    gZ += 2.0 * np.einsum("ab,abj->aj", cg.dL_dKuu, kern.kuu_dz(Z))
    return gZ


def natural_gradient_dict(state, parts=None, include_inducing=True, cg=None):
    """Map from parameter name to ``dL/dparam`` in natural coordinates."""
    cg = cg or grad_wrt_covs(state, parts)
    out = {n: 0.0 for n in state.kernel.names()}
    out.update(_kernel_grads(state, cg))
    ds = state.dataset
    contrib = cg.dL_dSigma / ds.noise_divisors
    per = np.bincount(ds.output_index, weights=contrib, minlength=ds.num_outputs)
    for d in range(ds.num_outputs):
        out[("noise", d)] = float(per[d])
    if include_inducing and state.inducing is not None and state.variant.sparse:
        gZ = _inducing_grads(state, cg)
        for k in range(gZ.shape[0]):
            for j in range(gZ.shape[1]):
                out[("Z", k, j)] = float(gZ[k, j])
    return out


@dataclass(frozen=True)
class ParamGradients:
    names: list
    values: np.ndarray

    def as_dict(self):
        return dict(zip(self.names, self.values))


def value_and_gradient(state, names=None, unconstrained=True, parts=None):
    """Log marginal and its gradient from a single factorization.

    Parameters
    ----------
    names : list of tuple, optional
        Parameter order; defaults to :class:`ParamSpace` order with
        inducing coordinates for sparse variants.
    unconstrained : bool
        Multiply entries of positive parameters by their value, giving the
        gradient with respect to their logs.
    """
    space = ParamSpace(state, optimize_inducing=state.variant.sparse)
    if names is None:
        names = space.all_names
    names = [tuple(n) for n in names]
    cg = grad_wrt_covs(state, parts)
    grads = natural_gradient_dict(state, include_inducing=any(n[0] == "Z" for n in names),
                                  cg=cg)
    values = dict(zip(space.all_names, space.natural()))
    pos = dict(zip(space.all_names, space.positive))
    out = np.empty(len(names))
    for i, n in enumerate(names):
        if n not in grads and n not in values:
            raise InvalidArgumentError(f"unknown parameter {n!r}")
        g = grads.get(n, 0.0)
        if unconstrained and pos.get(n, False):
            g *= values[n]
        out[i] = g
    return cg.log_marginal, ParamGradients(names, out)


def full_param_gradient(state, names=None, unconstrained=True, parts=None):
    """Gradient of the log marginal with respect to named parameters."""
    return value_and_gradient(state, names, unconstrained, parts)[1]


def kernel_cov_derivatives(kernel, dataset, inducing, param_id, variant=Variant.PITC):
    """Derivatives of the assembled covariances with respect to one parameter.

    Returns a dict with ``"Kff"`` (masked to ``variant``), ``"Kuf"`` and
    ``"Kuu"``. Noise parameters yield zeros; inducing coordinates
    ``("Z", k, j)`` only affect ``Kuf`` and ``Kuu``.
    """
    variant = Variant.parse(variant)
    param_id = tuple(param_id)
    inputs = [b.inputs for b in dataset.blocks]
    slices = dataset.slices()
    N, D = dataset.n_total, dataset.num_outputs
    Z = None if inducing is None else inducing.Z
    K = 0 if Z is None else Z.shape[0]
    known = set(kernel.names()) | {("noise", d) for d in range(D)}
    if Z is not None:
        known |= {("Z", k, j) for k in range(K) for j in range(Z.shape[1])}
    if param_id not in known:
        raise InvalidArgumentError(f"unknown parameter {param_id!r}")
    Kff = np.zeros((N, N))
    Kuf = np.zeros((K, N))
    Kuu = np.zeros((K, K))
    if param_id[0] == "noise":
        pass
    elif param_id[0] == "Z":
        _, k, j = param_id
        for d, s in enumerate(slices):
            if len(inputs[d]):
                Kuf[k, s] = kernel.kfu_dz(d, inputs[d], Z)[:, k, j]
        row = kernel.kuu_dz(Z)[k, :, j]
        Kuu[k, :] = row
        Kuu[:, k] = row
        Kuu[k, k] = 0.0
    else:
        for d in range(D):
            for d2 in range(D):
                if not (len(inputs[d]) and len(inputs[d2])):
                    continue
                if variant is not Variant.FULL and d != d2:
                    continue
                blk = kernel.kff_derivs(d, d2, inputs[d], inputs[d2]).get(param_id)
                if blk is not None:
                    Kff[slices[d], slices[d2]] = blk
        if variant is Variant.FITC:
            Kff = np.diag(np.diag(Kff))
        elif variant is Variant.DTC:
            Kff[:] = 0.0
        if Z is not None:
            for d, s in enumerate(slices):
                if len(inputs[d]):
                    blk = kernel.kfu_derivs(d, inputs[d], Z).get(param_id)
                    if blk is not None:
                        Kuf[:, s] = blk.T
            blk = kernel.kuu_derivs(Z).get(param_id)
            if blk is not None:
                Kuu = blk
    return {"Kff": Kff, "Kuf": Kuf, "Kuu": Kuu}


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FDResult:
    max_error: float
    index: int
    errors: np.ndarray
    numeric: np.ndarray


class FiniteDifferenceError(RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"objective failed at coordinate {index}: {cause}")
        self.index = index


def default_step(x):
    return 1e-6 * np.maximum(1.0, np.abs(x))


def finite_diff_check(objective, analytic_grad, point, step_policy=default_step):
    """Compare an analytic gradient with central differences.

    The per-coordinate error is ``|a - fd| / max(1, |a|, |fd|)``.
    """
    x = np.asarray(point, dtype=float)
    a = np.asarray(analytic_grad, dtype=float)
    h = np.broadcast_to(step_policy(x), x.shape)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        try:
            fp = float(objective(x + e))
            fm = float(objective(x - e))
        except Exception as exc:  # noqa: BLE001 - re-raised with the coordinate
            raise FiniteDifferenceError(i, exc) from exc
        fd[i] = (fp - fm) / (2.0 * h[i])
    err = np.abs(a - fd) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(fd)))
    idx = int(np.argmax(err)) if err.size else -1
    return FDResult(float(err[idx]) if err.size else 0.0, idx, err, fd)


def model_gradcheck(state, step_policy=default_step):
    """Finite-difference check of every free parameter of ``state``."""
    from .models import log_marginal

    space = ParamSpace(state, optimize_inducing=state.variant.sparse)
    theta = space.pack()
    g = full_param_gradient(state, space.names).values

    def f(t):
        return log_marginal(space.unpack(t))

    return finite_diff_check(f, g, theta, step_policy)
