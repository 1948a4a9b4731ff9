"""Laplace approximation over sensitivities and signal-to-noise ranking.

For a single latent function the approximate covariance is
``Qff(s) = diag(s) B diag(s)``, where ``s`` repeats ``S_d`` over the points
of output ``d`` and ``B`` is ``Qff`` evaluated with unit sensitivities
(this includes the variant's ``D`` term). The observed covariance is
``Qff + Sigma``. Second derivatives then follow from
``dQ/dS_d = E_d B diag(s) + diag(s) B E_d`` and ``d2Q/dS_d2 = 2 E_d B E_d``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DegenerateCurvatureError, InvalidArgumentError
from .gradients import full_param_gradient
from .gram import Variant, assemble, full_kff
from .models import FullFactor, SparseFactor, dense_sparse_covariance


class NotAtOptimumWarning(UserWarning):
    """Raised when the sensitivity gradient is too large for a Laplace fit."""


@dataclass(frozen=True)
class Curvature:
    """Per-output ``d2L/dS_d2`` split into log-determinant and data terms."""

    total: np.ndarray
    logdet_terms: np.ndarray
    data_terms: np.ndarray
    sensitivity_gradient: np.ndarray


def _unit_covariance(state):
    """``B`` and the inverse of the full observed covariance."""
    kern = state.kernel
    unit = kern.with_sensitivities(np.ones_like(kern.sensitivities))
    y = state.centered_targets()
    if state.variant.sparse:
        parts = assemble(state.dataset, unit, state.noise, state.variant, state.inducing)
        B = dense_sparse_covariance(parts) - np.diag(parts.sigma)
        f = SparseFactor(state.parts(), y)
        P = f.Dt.solve(np.eye(f.N)) - f.V @ f.A_solve(f.V.T)
        w = f.w
    elif state.variant is Variant.FULL:
        B = full_kff(unit, [b.inputs for b in state.dataset.blocks])
        parts = state.parts()
        f = FullFactor(parts.Kff, parts.sigma, y)
        P = f.inverse()
        w = f.alpha
    else:
        raise InvalidArgumentError("curvature needs a sparse or FULL model")
    return B, 0.5 * (P + P.T), w


def sensitivity_hessian_diag(state, grad_warn=1e-3):
    """Diagonal of the Hessian of the log marginal with respect to ``S[:, 0]``.

    Warns with :class:`NotAtOptimumWarning` when any ``|dL/dS_d|`` exceeds
    ``grad_warn``.
    """
    kern = state.kernel
    if kern.num_latent != 1:
        raise InvalidArgumentError("sensitivity curvature supports one latent function")
    if state.variant is Variant.INDEPENDENT:
        raise InvalidArgumentError("curvature needs a sparse or FULL model")
    names = [("S", d, 0) for d in range(kern.num_outputs)]
    gS = full_param_gradient(state, names, unconstrained=False).values
    if np.max(np.abs(gS)) > grad_warn:
        warnings.warn(f"sensitivity gradient {np.max(np.abs(gS)):.3g} is large; "
                      "the Laplace approximation assumes an optimum", NotAtOptimumWarning,
                      stacklevel=2)
    B, P, w = _unit_covariance(state)
    ds = state.dataset
    s = kern.sensitivities[:, 0][ds.output_index]
    Bs = B * s[None, :]                          # B diag(s)
    D = kern.num_outputs
    logdet = np.zeros(D)
    data = np.zeros(D)
    for d, r in enumerate(ds.slices()):
        if r.stop == r.start:
            continue
        U = P[:, r]
        Br = Bs[r, :]
        M1 = Br @ U
        tr_pq2 = 2.0 * np.trace(P[r, r] @ B[r, r])
        tr_pxpx = np.sum(M1 * M1.T)
        tr_pxpxt = np.sum((Br @ P @ Br.T) * P[r, r])
        logdet[d] = -0.5 * tr_pq2 + (tr_pxpx + tr_pxpxt)
        v = s * (B[:, r] @ w[r])
        v[r] += Br @ w
        data[d] = w[r] @ B[r, r] @ w[r] - v @ P @ v
    return Curvature(logdet + data, logdet, data, gS)


@dataclass(frozen=True)
class SensitivityEntry:
    output: int
    name: str
    S_hat: float
    sigma_S: float
    snr: float


@dataclass(frozen=True)
class SensitivityReport:
    entries: list

    def __len__(self):
        return len(self.entries)

    def rows(self):
        return [(e.output, e.name, e.S_hat, e.sigma_S, e.snr) for e in self.entries]


def snr_report(state, grad_warn=1e-3, curvature=None):
    """Rank outputs by ``|S_hat / sigma_S|`` with ``sigma_S = (-d2L/dS2)^{-1/2}``."""
    curv = curvature or sensitivity_hessian_diag(state, grad_warn)
    S = state.kernel.sensitivities[:, 0]
    entries = []
    for d, c in enumerate(curv.total):
        if not c < 0:
            raise DegenerateCurvatureError(d, float(c))
        sig = 1.0 / np.sqrt(-c)
        entries.append(SensitivityEntry(d, state.dataset.names[d], float(S[d]), float(sig),
                                        float(S[d] / sig)))
    entries.sort(key=lambda e: (-abs(e.snr), e.output))
    return SensitivityReport(entries)
