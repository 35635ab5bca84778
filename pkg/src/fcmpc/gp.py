"""Gaussian process regression with a summed squared-exponential kernel.

The covariance is the sum of an isotropic RBF and an ARD RBF,

    k(x, x') = sigma_iso^2 exp(-|x-x'|^2 / (2 l_iso^2))
             + sigma_ard^2 exp(-1/2 sum_j (x_j-x'_j)^2 / l_ard_j^2),

with i.i.d. Gaussian observation noise sigma_n. Inference is the
standard exact-GP recipe: one Cholesky factorization of K + sigma_n^2 I
per fit, then posterior means, variances, the log marginal likelihood,
and its gradient with respect to the log hyperparameters all come from
that factor. Targets are standardized internally by default; predictions
are always reported in physical units.

Gram construction and the likelihood-gradient reduction are the O(n^2 d)
hot spots, so both have a compiled loop flavor and a vectorized numpy
flavor (see _accel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ._accel import NUMBA_ENABLED, njit

__all__ = [
    "KernelParams",
    "GP",
    "IllConditionedKernelError",
    "kernel_eval",
    "gram",
    "fit",
    "predict",
    "log_marginal_likelihood",
    "lml_gradient",
    "mean_jacobian",
    "params_to_log",
    "params_from_log",
    "save_gp",
    "load_gp",
]

LOG_2PI = math.log(2.0 * math.pi)
JITTER_SCALE = 1e-8
JITTER_ATTEMPTS = 3


class IllConditionedKernelError(RuntimeError):
    """The noisy Gram matrix could not be factorized."""


@dataclass(frozen=True)
class KernelParams:
    """Kernel hyperparameters; l_ard fixes the input dimension."""

    sigma_iso: float
    l_iso: float
    sigma_ard: float
    l_ard: tuple
    sigma_n: float

    def __post_init__(self):
        object.__setattr__(self, "l_ard",
                           tuple(float(v) for v in np.atleast_1d(self.l_ard)))
        if self.sigma_iso < 0.0 or self.sigma_ard < 0.0 or self.sigma_n < 0.0:
            raise ValueError("signal and noise scales must be nonnegative")
        if self.l_iso <= 0.0 or any(l <= 0.0 for l in self.l_ard):
            raise ValueError("length scales must be positive")

    @property
    def d(self) -> int:
        return len(self.l_ard)


@dataclass(frozen=True)
class GP:
    """A fitted model: training set, scaling, and the Cholesky pieces."""

    params: KernelParams
    X: np.ndarray
    y_raw: np.ndarray
    standardize: bool
    y_mean: float
    y_std: float
    y: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    jitter: float
    name: str = ""

    @property
    def n(self) -> int:
        return self.X.shape[0]


# ------------------------------------------------------------------ gram


def _gram_numpy(X1, X2, siso2, liso, sard2, lard):
    diff = X1[:, None, :] - X2[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    scaled = diff / lard
    z = np.einsum("ijk,ijk->ij", scaled, scaled)
    return siso2 * np.exp(-0.5 * d2 / (liso * liso)) + sard2 * np.exp(-0.5 * z)


@njit(cache=True)
def _gram_loops(X1, X2, siso2, liso, sard2, lard):
    n1, d = X1.shape
    n2 = X2.shape[0]
    K = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            d2 = 0.0
            z = 0.0
            for k in range(d):
                dk = X1[i, k] - X2[j, k]
                d2 += dk * dk
                zk = dk / lard[k]
                z += zk * zk
            K[i, j] = (siso2 * math.exp(-0.5 * d2 / (liso * liso))
                       + sard2 * math.exp(-0.5 * z))
    return K


_gram_impl = _gram_loops if NUMBA_ENABLED else _gram_numpy


def kernel_eval(params: KernelParams, x, x2) -> float:
    """Covariance between two single inputs."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    d2 = 0.0
    z = 0.0
    for k in range(params.d):
        dk = x[k] - x2[k]
        d2 += dk * dk
        zk = dk / params.l_ard[k]
        z += zk * zk
    return (params.sigma_iso ** 2 * math.exp(-0.5 * d2 / params.l_iso ** 2)
            + params.sigma_ard ** 2 * math.exp(-0.5 * z))


def gram(params: KernelParams, X, X2=None) -> np.ndarray:
    """Kernel matrix between X and X2 (defaults to X); no noise term."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    X2 = X if X2 is None else np.ascontiguousarray(np.atleast_2d(X2), dtype=np.float64)
    if X.shape[1] != params.d or X2.shape[1] != params.d:
        raise ValueError("input dimension does not match l_ard")
    lard = np.asarray(params.l_ard, dtype=np.float64)
    return _gram_impl(X, X2, params.sigma_iso ** 2, params.l_iso,
                      params.sigma_ard ** 2, lard)


# ------------------------------------------------------------------- fit


def fit(X, y, params: KernelParams, standardize: bool = True, name: str = "") -> GP:
    """Factor the noisy Gram matrix and precompute the weight vector.

    When sigma_n is positive a failed factorization is retried with a
    small escalating diagonal jitter; a noise-free model gets no such
    rescue, since exact interpolation of degenerate data deserves the
    error.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    y_raw = np.asarray(y, dtype=np.float64).ravel()
    n = X.shape[0]
    if y_raw.shape[0] != n or n == 0:
        raise ValueError("X and y must hold the same positive number of rows")
    if X.shape[1] != params.d:
        raise ValueError("input dimension does not match l_ard")

    if standardize:
        y_mean = float(y_raw.mean())
        std = float(y_raw.std())
        y_std = std if std > 0.0 else 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    ys = (y_raw - y_mean) / y_std

    K = gram(params, X)
    base = K + params.sigma_n ** 2 * np.eye(n)
    jitter = 0.0
    attempts = 1 + (JITTER_ATTEMPTS if params.sigma_n > 0.0 else 0)
    L = None
    for trial in range(attempts):
        try:
            cand = np.linalg.cholesky(base + jitter * np.eye(n))
            if np.all(np.isfinite(cand)):
                L = cand
                break
        except np.linalg.LinAlgError:
            pass
        nxt = JITTER_SCALE * float(np.mean(np.diag(K))) * 10.0 ** trial
        jitter = nxt if np.isfinite(nxt) and nxt > 0.0 else 10.0 ** (trial - 12)
    if L is None:
        raise IllConditionedKernelError(
            f"Gram matrix not positive definite after {attempts} attempts")
    alpha = cho_solve((L, True), ys, check_finite=False)
    return GP(params=params, X=X, y_raw=y_raw, standardize=standardize,
              y_mean=y_mean, y_std=y_std, y=ys, L=L, alpha=alpha,
              jitter=jitter, name=name)


def predict(gp: GP, Xs):
    """Posterior mean and latent variance at the query points, physical units."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=np.float64))
    Ks = gram(gp.params, gp.X, Xs)                     # n x m
    mean_s = Ks.T @ gp.alpha
    v = solve_triangular(gp.L, Ks, lower=True, check_finite=False)
    prior = gp.params.sigma_iso ** 2 + gp.params.sigma_ard ** 2
    var_s = np.maximum(prior - np.einsum("ij,ij->j", v, v), 0.0)
    return gp.y_mean + gp.y_std * mean_s, gp.y_std ** 2 * var_s


def log_marginal_likelihood(gp: GP) -> float:
    """Evidence of the standardized targets under the fitted kernel."""
    return float(-0.5 * gp.y @ gp.alpha - np.sum(np.log(np.diag(gp.L)))
                 - 0.5 * gp.n * LOG_2PI)


# -------------------------------------------------------------- gradient
#
# d LML / d theta_j = 1/2 tr(W dK_y/d theta_j) with W = alpha alpha^T - K_y^-1,
# taken with respect to the *log* hyperparameters. The reduction below
# fuses all kernel derivative traces into one pass over the Gram entries.


def _lml_grad_numpy(X, W, siso2, liso, sard2, lard):
    diff = X[:, None, :] - X[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    scaled = diff / lard
    z = np.einsum("ijk,ijk->ij", scaled, scaled)
    kiso = siso2 * np.exp(-0.5 * d2 / (liso * liso))
    kard = sard2 * np.exp(-0.5 * z)
    d = X.shape[1]
    g = np.empty(3 + d)
    g[0] = np.sum(W * kiso)
    g[1] = 0.5 * np.sum(W * kiso * d2) / (liso * liso)
    g[2] = np.sum(W * kard)
    g[3:] = 0.5 * np.einsum("ij,ijk->k", W * kard, diff * diff) / (lard * lard)
    return g


@njit(cache=True)
def _lml_grad_loops(X, W, siso2, liso, sard2, lard):
    n, d = X.shape
    g = np.zeros(3 + d)
    dx = np.empty(d)
    for i in range(n):
        for j in range(n):
            d2 = 0.0
            z = 0.0
            for k in range(d):
                dk = X[i, k] - X[j, k]
                dx[k] = dk
                d2 += dk * dk
                zk = dk / lard[k]
                z += zk * zk
            kiso = siso2 * math.exp(-0.5 * d2 / (liso * liso))
            kard = sard2 * math.exp(-0.5 * z)
            w = W[i, j]
            g[0] += w * kiso
            g[1] += 0.5 * w * kiso * d2 / (liso * liso)
            g[2] += w * kard
            wk = 0.5 * w * kard
            for k in range(d):
                g[3 + k] += wk * dx[k] * dx[k] / (lard[k] * lard[k])
    return g


_lml_grad_impl = _lml_grad_loops if NUMBA_ENABLED else _lml_grad_numpy


def lml_gradient(gp: GP) -> np.ndarray:
    """Gradient of the evidence in the order produced by params_to_log."""
    n = gp.n
    Ky_inv = cho_solve((gp.L, True), np.eye(n), check_finite=False)
    W = np.outer(gp.alpha, gp.alpha) - Ky_inv
    lard = np.asarray(gp.params.l_ard, dtype=np.float64)
    g = _lml_grad_impl(gp.X, W, gp.params.sigma_iso ** 2, gp.params.l_iso,
                       gp.params.sigma_ard ** 2, lard)
    g_sn = gp.params.sigma_n ** 2 * float(np.trace(W))
    return np.concatenate([g, [g_sn]])


def mean_jacobian(gp: GP, xs) -> np.ndarray:
    """Derivative of the posterior mean at a single input, physical units."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    p = gp.params
    diff = xs[None, :] - gp.X                           # n x d
    d2 = np.einsum("ij,ij->i", diff, diff)
    lard = np.asarray(p.l_ard, dtype=np.float64)
    scaled = diff / lard
    z = np.einsum("ij,ij->i", scaled, scaled)
    kiso = p.sigma_iso ** 2 * np.exp(-0.5 * d2 / p.l_iso ** 2)
    kard = p.sigma_ard ** 2 * np.exp(-0.5 * z)
    contrib = (-(gp.alpha * kiso) @ diff / p.l_iso ** 2
               - (gp.alpha * kard) @ (diff / lard ** 2))
    return gp.y_std * contrib


# ---------------------------------------------------- log-parameter view


def params_to_log(params: KernelParams) -> np.ndarray:
    """Pack strictly positive hyperparameters as a log vector."""
    vals = [params.sigma_iso, params.l_iso, params.sigma_ard,
            *params.l_ard, params.sigma_n]
    if any(v <= 0.0 for v in vals):
        raise ValueError("log packing needs strictly positive hyperparameters")
    return np.log(np.asarray(vals, dtype=np.float64))


def params_from_log(theta) -> KernelParams:
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size < 5:
        raise ValueError("need at least 5 entries: two scales, one ARD dim, noise")
    v = np.exp(theta)
    return KernelParams(sigma_iso=float(v[0]), l_iso=float(v[1]),
                        sigma_ard=float(v[2]), l_ard=tuple(v[3:-1]),
                        sigma_n=float(v[-1]))


# ---------------------------------------------------------- serialization


def save_gp(gp: GP, path) -> None:
    """Plain-text snapshot; floats use shortest round-trip repr."""
    p = gp.params
    lines = [
        "fcmpc-gp-v1",
        f"name {gp.name}".rstrip(),
        f"n {gp.n}",
        f"d {p.d}",
        f"standardize {int(gp.standardize)}",
        f"sigma_iso {float(p.sigma_iso)!r}",
        f"l_iso {float(p.l_iso)!r}",
        f"sigma_ard {float(p.sigma_ard)!r}",
        "l_ard " + " ".join(repr(float(v)) for v in p.l_ard),
        f"sigma_n {float(p.sigma_n)!r}",
        "X",
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in gp.X]
    lines.append("y")
    lines += [repr(float(v)) for v in gp.y_raw]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_gp(path) -> GP:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "fcmpc-gp-v1":
        raise ValueError(f"{path}: not a recognized model file")

    fields = {}
    idx = 1
    while lines[idx] != "X":
        key, _, val = lines[idx].partition(" ")
        fields[key] = val
        idx += 1
    n = int(fields["n"])
    d = int(fields["d"])
    X = np.array([[float(t) for t in lines[idx + 1 + i].split()] for i in range(n)])
    if X.shape != (n, d) or lines[idx + 1 + n] != "y":
        raise ValueError(f"{path}: malformed data block")
    y = np.array([float(lines[idx + 2 + n + i]) for i in range(n)])
    params = KernelParams(
        sigma_iso=float(fields["sigma_iso"]),
        l_iso=float(fields["l_iso"]),
        sigma_ard=float(fields["sigma_ard"]),
        l_ard=tuple(float(t) for t in fields["l_ard"].split()),
        sigma_n=float(fields["sigma_n"]),
    )
    return fit(X, y, params, standardize=bool(int(fields["standardize"])),
               name=fields.get("name", ""))
