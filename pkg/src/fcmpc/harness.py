"""Closed-loop experiments: scripted load scenarios, metrics, comparisons.

A scenario is a contiguous list of load segments (hold, step, ramp). The
runner holds the plant at its steady point for the first load value,
then loops measure -> linearize -> solve -> apply at the controller
period. Either controller fits the same loop: "gp" linearizes the two
trained models around the latest measurement, "physical" takes finite
differences through the true plant (the exact-model baseline).

Everything is deterministic per (scenario, seed, config): measurement
noise is the only random element and it comes from one seeded stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .mpc import (
    CtrlState,
    MPCParams,
    control_step,
    linearize_gp,
    linearize_plant,
)
from .plant import DEFAULT_NOISE_STD, Plant, PlantFault, PlantInput

__all__ = [
    "CONTROL_DT",
    "Segment",
    "Scenario",
    "SimTrace",
    "Metrics",
    "Comparison",
    "step_scenario",
    "ramp_scenario",
    "load_at",
    "run",
    "compute_metrics",
    "compare",
    "format_comparison",
    "write_trace_csv",
    "read_trace_csv",
]

CONTROL_DT = 0.5
SETTLE_BAND = 0.1
SETTLE_HOLD = 1.0           # seconds the band must hold
START_FLOWS = (250.0, 500.0)

TRACE_COLUMNS = (
    "t", "I", "V_true", "V_meas", "P_H2_true", "P_H2_meas",
    "Q_H2", "Q_air", "dQ_H2", "dQ_air", "slack", "qp_status",
)


# -------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Segment:
    kind: str               # hold | step | ramp
    t_start: float
    t_end: float
    I_start: float
    I_end: float

    def __post_init__(self):
        if self.kind not in ("hold", "step", "ramp"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.t_end <= self.t_start:
            raise ValueError("segment must have positive length")
        if self.kind == "hold" and self.I_start != self.I_end:
            raise ValueError("hold segment cannot change the load")


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    segments: tuple
    reference: float = 48.0
    seed: int = 4004

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("scenario needs at least one segment")
        if self.segments[0].t_start != 0.0:
            raise ValueError("first segment must start at t = 0")
        if self.segments[-1].t_end < self.duration:
            raise ValueError("segments must cover the full duration")
        for a, b in zip(self.segments, self.segments[1:]):
            if b.t_start != a.t_end:
                raise ValueError("segments must be contiguous and ordered")
        # keep well inside the plant's concentration limit
        from .plant import DEFAULT_STACK
        i_max = DEFAULT_STACK.J_max * DEFAULT_STACK.A_mem
        for s in self.segments:
            for cur in (s.I_start, s.I_end):
                if not 0.0 < cur < i_max:
                    raise ValueError(f"load {cur} A outside the safe range")


def load_at(scenario: Scenario, t: float) -> float:
    for seg in scenario.segments:
        if seg.t_start <= t < seg.t_end or seg is scenario.segments[-1]:
            if seg.kind == "hold":
                return seg.I_start
            if seg.kind == "step":
                return seg.I_end          # jump happens at t_start
            frac = (t - seg.t_start) / (seg.t_end - seg.t_start)
            frac = min(max(frac, 0.0), 1.0)
            return seg.I_start + frac * (seg.I_end - seg.I_start)
    raise ValueError(f"time {t} outside scenario")


def step_scenario(seed: int = 4004) -> Scenario:
    return Scenario(
        name="step",
        duration=120.0,
        segments=(
            Segment("hold", 0.0, 20.0, 110.0, 110.0),
            Segment("step", 20.0, 75.0, 110.0, 120.0),
            Segment("step", 75.0, 120.0, 120.0, 110.0),
        ),
        seed=seed,
    )


def ramp_scenario(seed: int = 4004) -> Scenario:
    return Scenario(
        name="ramp",
        duration=120.0,
        segments=(
            Segment("hold", 0.0, 20.0, 110.0, 110.0),
            Segment("ramp", 20.0, 40.0, 110.0, 120.0),
            Segment("hold", 40.0, 70.0, 120.0, 120.0),
            Segment("step", 70.0, 120.0, 120.0, 112.0),
        ),
        seed=seed,
    )


# ------------------------------------------------------------------- run


@dataclass(frozen=True)
class SimTrace:
    name: str
    controller: str
    reference: float
    dt: float
    t: np.ndarray
    I: np.ndarray
    V_true: np.ndarray
    V_meas: np.ndarray
    P_H2_true: np.ndarray
    P_H2_meas: np.ndarray
    Q_H2: np.ndarray
    Q_air: np.ndarray
    dQ_H2: np.ndarray
    dQ_air: np.ndarray
    slack: np.ndarray
    qp_status: tuple
    # one-step-ahead predictions, for the diagnostics file
    v_pred1: np.ndarray = None
    p_pred1: np.ndarray = None
    qp_iterations: np.ndarray = None
    fault: str = ""

    def __len__(self):
        return self.t.size


def run(scenario: Scenario, controller: str, plant: Plant, models=None,
        mpc_params: MPCParams = None, noise_std=DEFAULT_NOISE_STD,
        dt: float = CONTROL_DT) -> SimTrace:
    """Closed-loop rollout of one controller over one scenario."""
    if controller not in ("gp", "physical"):
        raise ValueError("controller must be 'gp' or 'physical'")
    if controller == "gp" and models is None:
        raise ValueError("gp controller needs (gp_v, gp_p) models")
    if mpc_params is None:
        mpc_params = MPCParams(v_ref=scenario.reference)

    rng = np.random.default_rng(scenario.seed)
    n = round(scenario.duration / dt)
    cols = {name: np.empty(n + 1) for name in TRACE_COLUMNS[:-1]}
    status = []
    v_pred1 = np.empty(n + 1)
    p_pred1 = np.empty(n + 1)
    iters = np.empty(n + 1, dtype=np.int64)

    q = np.array(START_FLOWS)
    i_prev = load_at(scenario, 0.0)
    state = plant.steady_state(PlantInput(q[0], q[1], i_prev))
    fault = ""
    k_done = n + 1

    for k in range(n + 1):
        t = k * dt
        i_now = load_at(scenario, t)
        inp = PlantInput(q[0], q[1], i_now)
        v_true = plant.output_voltage(state, inp)
        meas = plant.measure(state, inp, noise_std=noise_std, rng=rng)
        v_meas, p_meas = meas.V_FC, meas.P_H2

        if controller == "gp":
            model = linearize_gp(models[0], models[1], q[0], q[1], i_now,
                                 v_meas, p_meas)
        else:
            model = linearize_plant(plant, state, inp, dt)
        ctrl = CtrlState(V_FC=v_meas, P_H2=p_meas, dI=i_now - i_prev,
                         Q_H2=q[0], Q_air=q[1])
        dec = control_step(model, ctrl, mpc_params)
        q_new = np.array([q[0] + dec.dq_h2, q[1] + dec.dq_air])

        cols["t"][k] = t
        cols["I"][k] = i_now
        cols["V_true"][k] = v_true
        cols["V_meas"][k] = v_meas
        cols["P_H2_true"][k] = state.P_H2
        cols["P_H2_meas"][k] = p_meas
        cols["Q_H2"][k] = q_new[0]
        cols["Q_air"][k] = q_new[1]
        cols["dQ_H2"][k] = dec.dq_h2
        cols["dQ_air"][k] = dec.dq_air
        cols["slack"][k] = float(np.max(dec.slack)) if dec.slack.size else 0.0
        status.append(dec.qp_status)
        v_pred1[k] = dec.v_pred[0]
        p_pred1[k] = dec.p_pred[0]
        iters[k] = dec.qp_iterations

        q = q_new
        i_prev = i_now
        if k < n:
            try:
                state = plant.step(state, PlantInput(q[0], q[1], i_now), dt)
            except PlantFault as exc:
                fault = f"{type(exc).__name__}: {exc}"
                k_done = k + 1
                break

    sl = slice(0, k_done)
    return SimTrace(
        name=scenario.name, controller=controller,
        reference=scenario.reference, dt=dt,
        qp_status=tuple(status[:k_done]), fault=fault,
        v_pred1=v_pred1[sl], p_pred1=p_pred1[sl], qp_iterations=iters[sl],
        **{name: cols[name][sl] for name in TRACE_COLUMNS[:-1]},
    )


# --------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    overshoot: float
    settle_time: float
    p_violation_max: float
    rate_violations: int
    steady_rmse: float


def _onsets(I: np.ndarray) -> list:
    """Indices where the load starts changing after being level."""
    out = []
    for k in range(1, I.size):
        if I[k] != I[k - 1] and (k == 1 or I[k - 1] == I[k - 2]):
            out.append(k)
    return out


def compute_metrics(trace: SimTrace, r: float = None,
                    settle_band: float = SETTLE_BAND,
                    p_limit: float = 2.5) -> Metrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    if r is None:
        r = trace.reference
    v = trace.V_true
    dt = trace.dt

    crossed = np.nonzero(v >= r)[0]
    overshoot = float(np.max(v[crossed[0]:] - r)) if crossed.size else 0.0

    hold = max(1, math.ceil(SETTLE_HOLD / dt))
    in_band = np.abs(v - r) <= settle_band
    settle = 0.0
    for k0 in _onsets(trace.I):
        episode = math.inf
        for s in range(k0, len(trace)):
            stop = min(s + hold + 1, len(trace))
            if np.all(in_band[s:stop]):
                episode = trace.t[s] - trace.t[k0]
                break
        settle = max(settle, episode)

    viol = float(np.max(trace.P_H2_true - p_limit))
    rate = int(np.sum(trace.dQ_H2 > 20.0) + np.sum(trace.dQ_H2 < -40.0)
               + np.sum(trace.dQ_air > 20.0) + np.sum(trace.dQ_air < -40.0))
    tail = trace.t >= trace.t[-1] - 0.2 * (trace.t[-1] - trace.t[0])
    steady_rmse = float(np.sqrt(np.mean((v[tail] - r) ** 2)))
    return Metrics(overshoot=overshoot, settle_time=settle,
                   p_violation_max=viol, rate_violations=rate,
                   steady_rmse=steady_rmse)


# --------------------------------------------------------------- compare


@dataclass(frozen=True)
class Comparison:
    scenario: str
    mpc: Metrics
    gpmpc: Metrics
    overshoot_ratio: float
    settle_ratio: float
    p_violation_ratio: float
    steady_rmse_ratio: float


def _ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    if b == 0.0:
        return math.copysign(math.inf, a)
    return a / b


def compare(trace_mpc: SimTrace, trace_gpmpc: SimTrace,
            r: float = None, p_limit: float = 2.5) -> Comparison:
    """Ratio table GP-MPC / MPC; traces must come from the same scenario."""
    if len(trace_mpc) != len(trace_gpmpc) or trace_mpc.dt != trace_gpmpc.dt \
            or not np.array_equal(trace_mpc.I, trace_gpmpc.I):
        raise ValueError("traces come from different scenarios")
    if r is None:
        r = trace_mpc.reference
    m = compute_metrics(trace_mpc, r, p_limit=p_limit)
    g = compute_metrics(trace_gpmpc, r, p_limit=p_limit)
    return Comparison(
        scenario=trace_mpc.name, mpc=m, gpmpc=g,
        overshoot_ratio=_ratio(g.overshoot, m.overshoot),
        settle_ratio=_ratio(g.settle_time, m.settle_time),
        p_violation_ratio=_ratio(g.p_violation_max, m.p_violation_max),
        steady_rmse_ratio=_ratio(g.steady_rmse, m.steady_rmse),
    )


def format_comparison(cmp: Comparison) -> str:
    rows = [
        ("overshoot_V", cmp.mpc.overshoot, cmp.gpmpc.overshoot,
         cmp.overshoot_ratio),
        ("settle_time_s", cmp.mpc.settle_time, cmp.gpmpc.settle_time,
         cmp.settle_ratio),
        ("p_violation_max_atm", cmp.mpc.p_violation_max,
         cmp.gpmpc.p_violation_max, cmp.p_violation_ratio),
        ("rate_violations", cmp.mpc.rate_violations,
         cmp.gpmpc.rate_violations, None),
        ("steady_rmse_V", cmp.mpc.steady_rmse, cmp.gpmpc.steady_rmse,
         cmp.steady_rmse_ratio),
    ]
    lines = [f"scenario: {cmp.scenario}",
             f"{'metric':<22}{'mpc':>14}{'gpmpc':>14}{'gpmpc/mpc':>14}"]
    for name, a, b, ratio in rows:
        rtxt = f"{ratio:>14.4f}" if ratio is not None else f"{'-':>14}"
        lines.append(f"{name:<22}{a:>14.6g}{b:>14.6g}{rtxt}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- csv


def write_trace_csv(trace: SimTrace, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for k in range(len(trace)):
            vals = [repr(float(getattr(trace, c)[k]))
                    for c in TRACE_COLUMNS[:-1]]
            vals.append(trace.qp_status[k])
            fh.write(",".join(vals) + "\n")
        if trace.fault:
            fh.write(f"# fault: {trace.fault}\n")


def read_trace_csv(path, name: str = "", controller: str = "",
                   reference: float = 48.0) -> SimTrace:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0].split(",") != list(TRACE_COLUMNS):
        raise ValueError(f"{path}: not a trace file")
    fault = ""
    if lines[-1].startswith("# fault:"):
        fault = lines[-1][len("# fault:"):].strip()
        lines = lines[:-1]
    body = [ln.split(",") for ln in lines[1:]]
    if not body:
        raise ValueError(f"{path}: empty trace")
    arrs = {c: np.array([float(row[i]) for row in body])
            for i, c in enumerate(TRACE_COLUMNS[:-1])}
    status = tuple(row[-1] for row in body)
    dt = arrs["t"][1] - arrs["t"][0] if arrs["t"].size > 1 else CONTROL_DT
    return SimTrace(name=name, controller=controller, reference=reference,
                    dt=float(dt), qp_status=status, fault=fault, **arrs)
