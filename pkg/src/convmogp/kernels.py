"""Convolution-process covariance functions.

Two families are provided:

* :class:`GaussianKernelParams` -- Gaussian smoothing kernels applied to a
  Gaussian latent covariance, valid for any input dimension.
* :class:`Ode1KernelParams` -- outputs driven by a first order linear ODE
  whose forcing is a squared-exponential latent process (input is time).

Each parameter class evaluates output-output, output-latent and
latent-latent covariance matrices along with their analytic partial
derivatives. Parameters are addressed by tuple names such as
``("S", d, q)``, ``("P", d, j)``, ``("Lambda", q, j)``, ``("gamma", d)`` and
``("ell", q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import special

from .errors import InvalidArgumentError

_SQRT_PI = math.sqrt(math.pi)
_TWO_OVER_SQRT_PI = 2.0 / _SQRT_PI
_LOG_2PI = math.log(2.0 * math.pi)


def erf(x):
    """Error function, accurate to double precision (scipy's Cephes port)."""
    return special.erf(x)


def _as_matrix(a, ncols=None, name="array"):
    a = np.array(a, dtype=float, ndmin=2)
    if ncols is not None and a.shape[1] != ncols:
        raise InvalidArgumentError(
            f"{name} must have {ncols} columns, got shape {a.shape}"
        )
    return a


def _check_index(i, n, what):
    if not (0 <= int(i) < n):
        raise InvalidArgumentError(f"{what} index {i} out of range [0, {n})")
    return int(i)


def _inputs(X, p, name="inputs"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, p) if p > 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != p:
        raise InvalidArgumentError(
            f"{name} must have {p} columns, got shape {X.shape}"
        )
    return X


# ---------------------------------------------------------------------------
# Gaussian convolution kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianKernelParams:
    """Gaussian smoothing kernel with Gaussian latent covariance.

    Parameters
    ----------
    sensitivities : array (D, Q)
        Coupling ``S[d, q]`` of latent ``q`` into output ``d``.
    output_precisions : array (D, p)
        Diagonal of the smoothing-kernel precision for each output.
    latent_precisions : array (Q, p)
        Diagonal of the latent covariance precision for each latent.
    standardize : bool
        If True, each output is divided by its per-latent standard
        deviation so that ``k(d, d, x, x) = sum_q S[d, q]**2``.
    """

    sensitivities: np.ndarray
    output_precisions: np.ndarray
    latent_precisions: np.ndarray
    standardize: bool = True
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        S = _as_matrix(self.sensitivities, name="sensitivities")
        P = _as_matrix(self.output_precisions, name="output_precisions")
        L = _as_matrix(self.latent_precisions, ncols=P.shape[1], name="latent_precisions")
        if P.shape[0] != S.shape[0] or L.shape[0] != S.shape[1]:
            raise InvalidArgumentError(
                f"inconsistent shapes S{S.shape}, P{P.shape}, Lambda{L.shape}"
            )
        if not np.all(np.isfinite(S)):
            raise InvalidArgumentError("sensitivities must be finite")
        if not (np.all(P > 0) and np.all(L > 0)) or not (
            np.all(np.isfinite(P)) and np.all(np.isfinite(L))
        ):
            raise InvalidArgumentError("precisions must be finite and strictly positive")
        for name, val in (("sensitivities", S), ("output_precisions", P),
                          ("latent_precisions", L)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def num_outputs(self):
        return self.sensitivities.shape[0]

    @property
    def num_latent(self):
        return self.sensitivities.shape[1]

    @property
    def input_dim(self):
        return self.output_precisions.shape[1]

    # -- parameter bookkeeping ------------------------------------------------

    def names(self):
        D, Q, p = self.num_outputs, self.num_latent, self.input_dim
        out = [("S", d, q) for d in range(D) for q in range(Q)]
        out += [("P", d, j) for d in range(D) for j in range(p)]
        out += [("Lambda", q, j) for q in range(Q) for j in range(p)]
        return out

    def values(self):
        return np.concatenate([
            self.sensitivities.ravel(),
            self.output_precisions.ravel(),
            self.latent_precisions.ravel(),
        ])

    def positive_mask(self):
        return np.array([n[0] != "S" for n in self.names()])

    def with_values(self, values):
        values = np.asarray(values, dtype=float)
        D, Q, p = self.num_outputs, self.num_latent, self.input_dim
        i = D * Q
        j = i + D * p
        return GaussianKernelParams(
            values[:i].reshape(D, Q),
            values[i:j].reshape(D, p),
            values[j:].reshape(Q, p),
            standardize=self.standardize,
        )

    def with_sensitivities(self, S):
        return GaussianKernelParams(S, self.output_precisions,
                                    self.latent_precisions, self.standardize)

    def to_dict(self):
        return {
            "kind": "gaussian",
            "sensitivities": self.sensitivities.tolist(),
            "output_precisions": self.output_precisions.tolist(),
            "latent_precisions": self.latent_precisions.tolist(),
            "standardize": bool(self.standardize),
        }

    # -- helpers ----------------------------------------------------------------

    def _var(self):
        # variances (inverse precisions)
        return 1.0 / self.output_precisions, 1.0 / self.latent_precisions

    def _log_c(self, a_d, l_q):
        # log of the standardizing multiplier for one (output, latent) pair
        if not self.standardize:
            return 0.0
        p = a_d.shape[0]
        return 0.25 * p * _LOG_2PI + 0.25 * np.sum(np.log(2.0 * a_d + l_q))

    @staticmethod
    def _log_gauss(R, v):
        # log N(R | 0, diag(v)) over the last axis
        return -0.5 * np.sum(R * R / v + np.log(2.0 * np.pi * v), axis=-1)

    # -- covariances ----------------------------------------------------------

    def kff(self, d, d2, X1, X2):
        """Matrix of ``k(f_d(x), f_d2(x'))`` over rows of ``X1`` and ``X2``."""
        p = self.input_dim
        d = _check_index(d, self.num_outputs, "output")
        d2 = _check_index(d2, self.num_outputs, "output")
        X1, X2 = _inputs(X1, p), _inputs(X2, p)
        R = X1[:, None, :] - X2[None, :, :]
        return self._kff_terms(d, d2, R)

    def kff_diag(self, d, X):
        X = _inputs(X, self.input_dim)
        d = _check_index(d, self.num_outputs, "output")
        return self._kff_terms(d, d, np.zeros_like(X))

    def _kff_terms(self, d, d2, R):
        a, l = self._var()
        out = np.zeros(R.shape[:-1])
        for q in range(self.num_latent):
            s = self.sensitivities[d, q] * self.sensitivities[d2, q]
            if s == 0.0:
                continue
            v = a[d] + a[d2] + l[q]
            logc = self._log_c(a[d], l[q]) + self._log_c(a[d2], l[q])
            out += s * np.exp(self._log_gauss(R, v) + logc)
        return out

    def kfu(self, d, X, Z, q=0):
        """Matrix of ``k(f_d(x), u_q(z))``, shape (len(X), len(Z))."""
        p = self.input_dim
        d = _check_index(d, self.num_outputs, "output")
        q = _check_index(q, self.num_latent, "latent")
        X, Z = _inputs(X, p), _inputs(Z, p, "inducing inputs")
        a, l = self._var()
        R = X[:, None, :] - Z[None, :, :]
        w = a[d] + l[q]
        return self.sensitivities[d, q] * np.exp(
            self._log_gauss(R, w) + self._log_c(a[d], l[q]))

    def kuu(self, Z, q=0, Z2=None):
        """Latent covariance ``N(z - z' | 0, Lambda_q^{-1})``."""
        p = self.input_dim
        q = _check_index(q, self.num_latent, "latent")
        Z = _inputs(Z, p, "inducing inputs")
        Z2 = Z if Z2 is None else _inputs(Z2, p, "inducing inputs")
        l = 1.0 / self.latent_precisions[q]
        R = Z[:, None, :] - Z2[None, :, :]
        return np.exp(self._log_gauss(R, l))

    # -- derivatives ------------------------------------------------------------

    def kff_derivs(self, d, d2, X1, X2):
        """Partial derivatives of :meth:`kff` keyed by parameter name."""
        X1, X2 = _inputs(X1, self.input_dim), _inputs(X2, self.input_dim)
        R = X1[:, None, :] - X2[None, :, :]
        return self._kff_term_derivs(d, d2, R)

    def kff_diag_derivs(self, d, X):
        X = _inputs(X, self.input_dim)
        return self._kff_term_derivs(d, d, np.zeros_like(X))

    def _kff_term_derivs(self, d, d2, R):
        a, l = self._var()
        S = self.sensitivities
        std = 1.0 if self.standardize else 0.0
        out = {}

        def add(name, val):
            if name in out:
                out[name] = out[name] + val
            else:
                out[name] = val

        for q in range(self.num_latent):
            v = a[d] + a[d2] + l[q]
            logc = self._log_c(a[d], l[q]) + self._log_c(a[d2], l[q])
            E = np.exp(self._log_gauss(R, v) + logc)
            add(("S", d, q), S[d2, q] * E)
            add(("S", d2, q), S[d, q] * E)
            s = S[d, q] * S[d2, q]
            T = s * E
            gv = -0.5 / v + 0.5 * R * R / (v * v)  # d log N / d v_j
            for j in range(self.input_dim):
                Tg = T * gv[..., j]
                # a = 1/P, so d/dP = -a^2 d/da
                for dd in (d, d2):
                    dlogc = std * 0.5 / (2.0 * a[dd, j] + l[q, j])
                    add(("P", dd, j), -a[dd, j] ** 2 * (Tg + T * dlogc))
                dlogc_l = std * 0.25 * (1.0 / (2.0 * a[d, j] + l[q, j])
                                        + 1.0 / (2.0 * a[d2, j] + l[q, j]))
                add(("Lambda", q, j), -l[q, j] ** 2 * (Tg + T * dlogc_l))
        return out

    def kfu_derivs(self, d, X, Z, q=0):
        X, Z = _inputs(X, self.input_dim), _inputs(Z, self.input_dim)
        a, l = self._var()
        std = 1.0 if self.standardize else 0.0
        R = X[:, None, :] - Z[None, :, :]
        w = a[d] + l[q]
        E = np.exp(self._log_gauss(R, w) + self._log_c(a[d], l[q]))
        T = self.sensitivities[d, q] * E
        out = {("S", d, q): E}
        gw = -0.5 / w + 0.5 * R * R / (w * w)
        for j in range(self.input_dim):
            c = 2.0 * a[d, j] + l[q, j]
            out[("P", d, j)] = -a[d, j] ** 2 * T * (gw[..., j] + std * 0.5 / c)
            out[("Lambda", q, j)] = -l[q, j] ** 2 * T * (gw[..., j] + std * 0.25 / c)
        return out

    def kfu_dz(self, d, X, Z, q=0):
        """``d kfu[n, k] / d Z[k, j]`` as an array of shape (N, K, p)."""
        X, Z = _inputs(X, self.input_dim), _inputs(Z, self.input_dim)
        a, l = self._var()
        R = X[:, None, :] - Z[None, :, :]
        w = a[d] + l[q]
        T = self.kfu(d, X, Z, q)
        return T[..., None] * R / w

    def kuu_derivs(self, Z, q=0):
        Z = _inputs(Z, self.input_dim)
        l = 1.0 / self.latent_precisions[q]
        R = Z[:, None, :] - Z[None, :, :]
        T = self.kuu(Z, q)
        out = {}
        for j in range(self.input_dim):
            g = -0.5 / l[j] + 0.5 * R[..., j] ** 2 / l[j] ** 2
            out[("Lambda", q, j)] = -l[j] ** 2 * T * g
        return out

    def kuu_dz(self, Z, q=0):
        """``d kuu[a, b] / d Z[a, j]`` (derivative in the first argument)."""
        Z = _inputs(Z, self.input_dim)
        l = 1.0 / self.latent_precisions[q]
        R = Z[:, None, :] - Z[None, :, :]
        return -self.kuu(Z, q)[..., None] * R / l


# ---------------------------------------------------------------------------
# First-order ODE kernel
# ---------------------------------------------------------------------------


def _exp_erf_diff(E, a, b):
    """``exp(E) * (erf(a) - erf(b))`` evaluated without overflow.

    When both arguments share a sign the erf difference is rewritten with
    scaled complementary error functions so the large exponent is combined
    with ``-a**2`` / ``-b**2`` before exponentiation.
    """
    E, a, b = np.broadcast_arrays(E, a, b)
    out = np.empty(E.shape)
    pos = (a >= 0) & (b >= 0)
    neg = (a <= 0) & (b <= 0) & ~pos
    mix = ~(pos | neg)
    if np.any(pos):
        e, x, y = E[pos], a[pos], b[pos]
        out[pos] = (np.exp(e - y * y) * special.erfcx(y)
                    - np.exp(e - x * x) * special.erfcx(x))
    if np.any(neg):
        e, x, y = E[neg], a[neg], b[neg]
        out[neg] = (np.exp(e - x * x) * special.erfcx(-x)
                    - np.exp(e - y * y) * special.erfcx(-y))
    if np.any(mix):
        out[mix] = np.exp(E[mix]) * (special.erf(a[mix]) - special.erf(b[mix]))
    return out


_ODE_KEYS = ("ga", "gb", "ell", "s", "sp")


def _g_term(E, a, b, dE, da, db, keys):
    """Value and partials of ``exp(E) * (erf(a) - erf(b))``."""
    val = _exp_erf_diff(E, a, b)
    ea = _TWO_OVER_SQRT_PI * np.exp(E - a * a)
    eb = _TWO_OVER_SQRT_PI * np.exp(E - b * b)
    grads = {}
    for k in keys:
        grads[k] = val * dE.get(k, 0.0) + ea * da.get(k, 0.0) - eb * db.get(k, 0.0)
    return val, grads


def _ode_h(ga, gb, ell, s, sp, keys=_ODE_KEYS):
    """``exp(-gb*s - ga*sp) * h(ga, gb, s, sp)`` and its partials.

    ``h`` is the building block of the ODE output covariance; the leading
    exponential is folded into each term's exponent before evaluation.
    """
    nu = 0.5 * ga * ell
    nu2 = nu * nu
    E1 = ga * (s - sp) + nu2
    a1 = s / ell + nu
    b1 = (s - sp) / ell + nu
    dE1 = {"ga": (s - sp) + nu * ell, "ell": nu * ga, "s": ga, "sp": -ga}
    da1 = {"ga": 0.5 * ell, "ell": -s / ell ** 2 + 0.5 * ga, "s": 1.0 / ell}
    db1 = {"ga": 0.5 * ell, "ell": -(s - sp) / ell ** 2 + 0.5 * ga,
           "s": 1.0 / ell, "sp": -1.0 / ell}
    E2 = -gb * s - ga * sp + nu2
    a2 = nu
    b2 = nu - sp / ell
    dE2 = {"ga": -sp + nu * ell, "gb": -s, "ell": nu * ga, "s": -gb, "sp": -ga}
    da2 = {"ga": 0.5 * ell, "ell": 0.5 * ga}
    db2 = {"ga": 0.5 * ell, "ell": sp / ell ** 2 + 0.5 * ga, "sp": -1.0 / ell}
    g1, d1 = _g_term(E1, a1, b1, dE1, da1, db1, keys)
    g2, d2 = _g_term(E2, a2, b2, dE2, da2, db2, keys)
    inv = 1.0 / (ga + gb)
    val = (g1 - g2) * inv
    grads = {k: (d1[k] - d2[k]) * inv for k in keys}
    if "ga" in grads:
        grads["ga"] = grads["ga"] - val * inv
    if "gb" in grads:
        grads["gb"] = grads["gb"] - val * inv
    return val, grads


def _times(t, name="times"):
    t = np.asarray(t, dtype=float)
    if t.ndim == 2:
        if t.shape[1] != 1:
            raise InvalidArgumentError(f"{name} must be one-dimensional, got {t.shape}")
        t = t[:, 0]
    return np.atleast_1d(t)


def _nonneg(t, name="times"):
    if np.any(t < 0):
        raise InvalidArgumentError(f"{name} must be non-negative")
    return t


@dataclass(frozen=True)
class Ode1KernelParams:
    """First-order ODE (latent force) kernel over time.

    Output ``d`` obeys ``df_d/dt = B_d + sum_q S[d, q] u_q(t) - gamma_d f_d``
    with zero initial condition; each ``u_q`` has covariance
    ``exp(-(t - t')**2 / ell_q**2)``. ``basal_rates`` only shifts the mean
    by ``B_d / gamma_d``.
    """

    sensitivities: np.ndarray
    decays: np.ndarray
    lengthscales: np.ndarray
    basal_rates: np.ndarray = None
    kind: str = field(default="ode1", init=False)

    def __post_init__(self):
        S = _as_matrix(self.sensitivities, name="sensitivities")
        g = np.array(self.decays, dtype=float).ravel()
        ell = np.array(self.lengthscales, dtype=float).ravel()
        B = (np.zeros(S.shape[0]) if self.basal_rates is None
             else np.array(self.basal_rates, dtype=float).ravel())
        if g.shape[0] != S.shape[0] or ell.shape[0] != S.shape[1] or B.shape[0] != S.shape[0]:
            raise InvalidArgumentError(
                f"inconsistent shapes S{S.shape}, gamma{g.shape}, ell{ell.shape}, B{B.shape}"
            )
        if not np.all(np.isfinite(S)) or not np.all(np.isfinite(B)):
            raise InvalidArgumentError("sensitivities and basal rates must be finite")
        if not (np.all(g > 0) and np.all(ell > 0)) or not (
            np.all(np.isfinite(g)) and np.all(np.isfinite(ell))
        ):
            raise InvalidArgumentError("decays and lengthscales must be finite and positive")
        for name, val in (("sensitivities", S), ("decays", g),
                          ("lengthscales", ell), ("basal_rates", B)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def num_outputs(self):
        return self.sensitivities.shape[0]

    @property
    def num_latent(self):
        return self.sensitivities.shape[1]

    @property
    def input_dim(self):
        return 1

    def names(self):
        D, Q = self.num_outputs, self.num_latent
        out = [("S", d, q) for d in range(D) for q in range(Q)]
        out += [("gamma", d) for d in range(D)]
        out += [("ell", q) for q in range(Q)]
        return out

    def values(self):
        return np.concatenate([self.sensitivities.ravel(), self.decays, self.lengthscales])

    def positive_mask(self):
        return np.array([n[0] != "S" for n in self.names()])

    def with_values(self, values):
        values = np.asarray(values, dtype=float)
        D, Q = self.num_outputs, self.num_latent
        return Ode1KernelParams(values[:D * Q].reshape(D, Q),
                                values[D * Q:D * Q + D],
                                values[D * Q + D:],
                                self.basal_rates)

    def with_sensitivities(self, S):
        return Ode1KernelParams(S, self.decays, self.lengthscales, self.basal_rates)

    def to_dict(self):
        return {
            "kind": "ode1",
            "sensitivities": self.sensitivities.tolist(),
            "decays": self.decays.tolist(),
            "lengthscales": self.lengthscales.tolist(),
            "basal_rates": self.basal_rates.tolist(),
        }

    def mean_offset(self):
        return self.basal_rates / self.decays

    # -- covariances ------------------------------------------------------------

    def _kff_terms(self, d, d2, t, tp, keys=()):
        """Sum over latents of the output covariance (elementwise broadcast)."""
        g = self.decays
        out = np.zeros(np.broadcast(t, tp).shape)
        grads = {}
        for q in range(self.num_latent):
            s = self.sensitivities[d, q] * self.sensitivities[d2, q]
            if s == 0.0 and not keys:
                continue
            ell = self.lengthscales[q]
            hk = ("ga", "gb", "ell") if keys else ()
            h1, dh1 = _ode_h(g[d2], g[d], ell, t, tp, hk)
            h2, dh2 = _ode_h(g[d], g[d2], ell, tp, t, hk)
            base = 0.5 * _SQRT_PI * ell * (h1 + h2)
            out = out + s * base
            if keys:
                pref = 0.5 * _SQRT_PI * ell * s
                for name, val in (
                    (("S", d, q), self.sensitivities[d2, q] * base),
                    (("S", d2, q), self.sensitivities[d, q] * base),
                    (("gamma", d), pref * (dh1["gb"] + dh2["ga"])),
                    (("gamma", d2), pref * (dh1["ga"] + dh2["gb"])),
                    (("ell", q), s * base / ell + pref * (dh1["ell"] + dh2["ell"])),
                ):
                    grads[name] = grads[name] + val if name in grads else val
        return out, grads

    def kff(self, d, d2, T1, T2):
        d = _check_index(d, self.num_outputs, "output")
        d2 = _check_index(d2, self.num_outputs, "output")
        t = _nonneg(_times(T1))
        tp = _nonneg(_times(T2))
        return self._kff_terms(d, d2, t[:, None], tp[None, :])[0]

    def kff_diag(self, d, T):
        d = _check_index(d, self.num_outputs, "output")
        t = _nonneg(_times(T))
        return self._kff_terms(d, d, t, t)[0]

    def kff_derivs(self, d, d2, T1, T2):
        t, tp = _times(T1), _times(T2)
        return self._kff_terms(d, d2, t[:, None], tp[None, :], keys=True)[1]

    def kff_diag_derivs(self, d, T):
        t = _times(T)
        return self._kff_terms(d, d, t, t, keys=True)[1]

    def _kfu_terms(self, d, q, t, tp, keys=()):
        g = self.decays[d]
        ell = self.lengthscales[q]
        nu = 0.5 * g * ell
        E = nu * nu - g * (t - tp)
        a = tp / ell + nu
        b = (tp - t) / ell + nu
        dE = {"g": nu * ell - (t - tp), "ell": nu * g, "tp": g}
        da = {"g": 0.5 * ell, "ell": -tp / ell ** 2 + 0.5 * g, "tp": 1.0 / ell}
        db = {"g": 0.5 * ell, "ell": -(tp - t) / ell ** 2 + 0.5 * g, "tp": 1.0 / ell}
        val, grads = _g_term(E, a, b, dE, da, db, keys)
        pref = 0.5 * _SQRT_PI * ell
        return pref * val, {k: pref * v for k, v in grads.items()}, val

    def kfu(self, d, T, Z, q=0):
        """Matrix of ``k(f_d(t), u_q(t'))`` with output times ``T``."""
        d = _check_index(d, self.num_outputs, "output")
        q = _check_index(q, self.num_latent, "latent")
        t = _nonneg(_times(T))
        z = _times(Z, "inducing inputs")
        base = self._kfu_terms(d, q, t[:, None], z[None, :])[0]
        return self.sensitivities[d, q] * base

    def kuu(self, Z, q=0, Z2=None):
        q = _check_index(q, self.num_latent, "latent")
        z = _times(Z, "inducing inputs")
        z2 = z if Z2 is None else _times(Z2, "inducing inputs")
        r = z[:, None] - z2[None, :]
        return np.exp(-(r / self.lengthscales[q]) ** 2)

    def kfu_derivs(self, d, T, Z, q=0):
        t, z = _times(T), _times(Z)
        base, grads, _ = self._kfu_terms(d, q, t[:, None], z[None, :], ("g", "ell"))
        S = self.sensitivities[d, q]
        ell = self.lengthscales[q]
        return {
            ("S", d, q): base,
            ("gamma", d): S * grads["g"],
            ("ell", q): S * (base / ell + grads["ell"]),
        }

    def kfu_dz(self, d, T, Z, q=0):
        t, z = _times(T), _times(Z)
        _, grads, _ = self._kfu_terms(d, q, t[:, None], z[None, :], ("tp",))
        return (self.sensitivities[d, q] * grads["tp"])[..., None]

    def kuu_derivs(self, Z, q=0):
        z = _times(Z)
        ell = self.lengthscales[q]
        r = z[:, None] - z[None, :]
        K = np.exp(-(r / ell) ** 2)
        return {("ell", q): K * 2.0 * r * r / ell ** 3}

    def kuu_dz(self, Z, q=0):
        z = _times(Z)
        ell = self.lengthscales[q]
        r = z[:, None] - z[None, :]
        K = np.exp(-(r / ell) ** 2)
        return (-2.0 * r / ell ** 2 * K)[..., None]


KernelParams = Union[GaussianKernelParams, Ode1KernelParams]


def kernel_from_dict(doc):
    """Rebuild kernel parameters from :meth:`to_dict` output."""
    kind = doc.get("kind")
    if kind == "gaussian":
        return GaussianKernelParams(doc["sensitivities"], doc["output_precisions"],
                                    doc["latent_precisions"],
                                    standardize=doc.get("standardize", True))
    if kind == "ode1":
        return Ode1KernelParams(doc["sensitivities"], doc["decays"],
                                doc["lengthscales"], doc.get("basal_rates"))
    raise InvalidArgumentError(f"unknown kernel kind {kind!r}")


# ---------------------------------------------------------------------------
# Scalar conveniences
# ---------------------------------------------------------------------------


def _point(x, p):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p:
        raise InvalidArgumentError(f"input must have dimension {p}, got {x.shape[0]}")
    return x[None, :]


def gauss_kff(d, d2, x, x2, params):
    p = params.input_dim
    return float(params.kff(d, d2, _point(x, p), _point(x2, p))[0, 0])


def gauss_kfu(d, q, x, z, params):
    p = params.input_dim
    return float(params.kfu(d, _point(x, p), _point(z, p), q)[0, 0])


def gauss_kuu(q, z, z2, params):
    p = params.input_dim
    return float(params.kuu(_point(z, p), q, _point(z2, p))[0, 0])


def ode1_kff(d, d2, t, t2, params):
    return float(params.kff(d, d2, [t], [t2])[0, 0])


def ode1_kfu(d, q, t, t2, params):
    _nonneg(np.atleast_1d(float(t2)))
    return float(params.kfu(d, [t], [t2], q)[0, 0])


def ode1_kuu(q, t, t2, params):
    return float(params.kuu([t], q, [t2])[0, 0])
