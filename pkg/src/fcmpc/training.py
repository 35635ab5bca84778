"""Dataset generation and hyperparameter selection for the dynamics models.

Two one-step models are trained from the same excitation run. Each maps
(Q_H2, Q_air, I, own previous reading) to the next reading:

    V_next = f_V(Q_H2, Q_air, I, V)        P_next = f_P(Q_H2, Q_air, I, P)

The excitation inputs are a Latin hypercube over the actuator/load box,
applied one control interval each; readings come from the noisy sensor
model, so the learned sigma_n absorbs the measurement noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .gp import (GP, IllConditionedKernelError, KernelParams, fit,
                 log_marginal_likelihood, lml_gradient, params_from_log,
                 params_to_log, predict)
from .plant import Plant, PlantFault, PlantInput

__all__ = [
    "TRAIN_BOUNDS",
    "Dataset",
    "ValidationReport",
    "OptimizationFailure",
    "lhs_sample",
    "collect",
    "optimize_hyperparams",
    "validate",
]

# excitation box: hydrogen flow, air flow (lpm), load current (A)
TRAIN_BOUNDS = np.array([[100.0, 400.0],
                         [300.0, 700.0],
                         [100.0, 130.0]])

CONTROL_DT = 0.5


class OptimizationFailure(RuntimeError):
    """Every restart diverged; .best carries the least-bad fit if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class Dataset:
    """Aligned rows for the two targets plus the raw excitation inputs."""

    inputs: np.ndarray      # (n, 3) applied [Q_H2, Q_air, I]
    X_v: np.ndarray         # (rows, 4) with the prior voltage reading
    y_v: np.ndarray
    X_p: np.ndarray         # (rows, 4) with the prior pressure reading
    y_p: np.ndarray
    n_skipped: int


@dataclass(frozen=True)
class ValidationReport:
    rmse: float
    coverage_2s: float
    n: int


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def lhs_sample(bounds, n, rng) -> np.ndarray:
    """Latin hypercube: one point in each of n strata per dimension."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=np.float64))
    if n < 1:
        raise ValueError("need at least one sample")
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError("each bound pair must satisfy lo < hi")
    rng = _as_rng(rng)
    d = bounds.shape[0]
    out = np.empty((n, d))
    for j in range(d):
        frac = (rng.permutation(n) + rng.uniform(size=n)) / n
        out[:, j] = bounds[j, 0] + frac * (bounds[j, 1] - bounds[j, 0])
    return out


def collect(plant: Plant, inputs, noise_std=(0.05, 0.005), rng=None,
            dt=CONTROL_DT) -> Dataset:
    """Drive the plant through the input sequence and pair up readings.

    Each input is held for one interval; the reading at the end of
    interval k becomes the target of row k and the prior of row k+1.
    If the plant faults during an interval, the run re-initializes at
    the steady state of the next input and the spanning row is dropped
    (counted in n_skipped).
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n = inputs.shape[0]
    if inputs.shape[1] != 3 or n < 2:
        raise ValueError("need at least two rows of [Q_H2, Q_air, I]")
    rng = _as_rng(rng) if rng is not None else None

    def reading(state, inp):
        return plant.measure(state, inp, noise_std, rng)

    first = PlantInput(*inputs[0])
    state = plant.steady_state(first)
    meas = [reading(state, first)]
    row_ok = []
    for k in range(n - 1):
        inp = PlantInput(*inputs[k])
        try:
            state = plant.step(state, inp, dt)
            meas.append(reading(state, inp))
            row_ok.append(True)
        except PlantFault:
            # restart at the next input's equilibrium; only the row that
            # would span the fault is lost
            nxt = PlantInput(*inputs[k + 1])
            state = plant.steady_state(nxt)
            meas.append(reading(state, nxt))
            row_ok.append(False)

    rows_v, tv, rows_p, tp = [], [], [], []
    skipped = 0
    for k in range(n - 1):
        if not row_ok[k]:
            skipped += 1
            continue
        q_h2, q_air, cur = inputs[k]
        rows_v.append([q_h2, q_air, cur, meas[k].V_FC])
        tv.append(meas[k + 1].V_FC)
        rows_p.append([q_h2, q_air, cur, meas[k].P_H2])
        tp.append(meas[k + 1].P_H2)
    return Dataset(inputs=inputs,
                   X_v=np.array(rows_v), y_v=np.array(tv),
                   X_p=np.array(rows_p), y_p=np.array(tp),
                   n_skipped=skipped)


# ----------------------------------------------------- hyperparameters


def _nll_and_grad(theta, X, y):
    if not np.all(np.isfinite(theta)):
        return 1e12, np.zeros_like(theta)
    try:
        gp = fit(X, y, params_from_log(theta), standardize=True)
    except (IllConditionedKernelError, ValueError):
        # exp() under/overflow lands outside the valid parameter domain
        return 1e12, np.zeros_like(theta)
    return -log_marginal_likelihood(gp), -lml_gradient(gp)


def _draw_init(rng, dim_stds):
    d = dim_stds.size
    l_ard = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=d)) * dim_stds
    l_iso = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0)))
                  * np.sqrt(np.mean(dim_stds ** 2)))
    return KernelParams(sigma_iso=1.0 / np.sqrt(2.0), l_iso=l_iso,
                        sigma_ard=1.0 / np.sqrt(2.0), l_ard=tuple(l_ard),
                        sigma_n=0.1)


def optimize_hyperparams(X, y, seed=0, restarts=2, maxiter=200,
                         gtol=1e-5, name=""):
    """Maximize the evidence with L-BFGS-B from random restarts.

    All restart initializations are drawn in sequence from one
    generator seeded with `seed`, so the run is reproducible and each
    restart count extends the previous one. Returns the refitted best
    model and a summary dict.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    dim_stds = X.std(axis=0)
    dim_stds = np.where(dim_stds > 0, dim_stds, 1.0)

    best_theta = None
    best_lml = -np.inf
    trace = []
    for _ in range(restarts):
        theta0 = params_to_log(_draw_init(rng, dim_stds))
        res = minimize(_nll_and_grad, theta0, args=(X, y), jac=True,
                       method="L-BFGS-B",
                       options={"maxiter": maxiter, "gtol": gtol,
                                "ftol": 1e-15})
        final_lml = -float(res.fun)
        trace.append({"init_lml": -float(_nll_and_grad(theta0, X, y)[0]),
                      "final_lml": final_lml, "n_iter": int(res.nit)})
        diverged = (not np.isfinite(final_lml) or final_lml <= -1e11
                    or not np.all(np.isfinite(res.x)))
        if not diverged and final_lml > best_lml:
            best_lml = final_lml
            best_theta = res.x.copy()

    if best_theta is None:
        raise OptimizationFailure("all restarts diverged", best=None)
    gp = fit(X, y, params_from_log(best_theta), standardize=True, name=name)
    return gp, {"lml": best_lml, "restarts": trace}


def validate(gp: GP, X, y) -> ValidationReport:
    """Held-out RMSE and the fraction of targets inside the 2-sigma band.

    The band combines the latent predictive variance with the learned
    observation noise, since the targets themselves are noisy readings.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    mean, var = predict(gp, X)
    err = y - mean
    rmse = float(np.sqrt(np.mean(err ** 2)))
    # the tiny floor keeps exact interpolation (band and error both ~0)
    # counted as covered despite float round-off
    floor = (1e-8 * gp.y_std) ** 2
    band = 2.0 * np.sqrt(var + (gp.params.sigma_n * gp.y_std) ** 2 + floor)
    coverage = float(np.mean(np.abs(err) <= band))
    return ValidationReport(rmse=rmse, coverage_2s=coverage, n=y.size)
