"""Receding-horizon voltage controller.

The controller works in velocity form on the 5-state vector

    x = [V_FC, P_H2, dI, Q_H2, Q_air]

where dI is the load change observed at the current step (future load
changes are unknown and taken as zero). The one-step transition is

    x+ = A x + B du,

with A structurally fixed: identity on the physical outputs and actuator
states, the dI column carrying the load sensitivities, and the dI row
zero so a load change acts exactly once. B carries the actuator
sensitivities of the one-step maps. Either model source fills the same
slots: the trained GPs via their posterior-mean jacobians, or the plant
itself via finite differences (the exact-model baseline).

Each control step condenses the prediction over the horizon into a
dense QP in the stacked moves and per-step pressure slacks. The
hydrogen-pressure ceiling appears twice per step: once as predicted and
once with the predicted change inflated by (1 + alpha sigma_p), so a
more uncertain pressure model backs away from the limit sooner. Slack
is quadratically penalized; actuator rate and range limits are hard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import GP, mean_jacobian, predict
from .qp import QPSolution, solve_qp

__all__ = [
    "CtrlState",
    "LinModel",
    "MPCParams",
    "QPData",
    "ControlDecision",
    "model_from_partials",
    "linearize_gp",
    "linearize_plant",
    "build_qp",
    "control_step",
]

N_STATE = 5
N_INPUT = 2
IDX_V, IDX_P, IDX_DI, IDX_QH, IDX_QA = range(N_STATE)


@dataclass(frozen=True)
class CtrlState:
    """Operating point as the controller sees it (measured, not true)."""

    V_FC: float
    P_H2: float
    dI: float
    Q_H2: float
    Q_air: float

    def vector(self) -> np.ndarray:
        return np.array([self.V_FC, self.P_H2, self.dI, self.Q_H2, self.Q_air])


@dataclass(frozen=True)
class LinModel:
    """One-step linear prediction model plus pressure-model spread."""

    A: np.ndarray           # 5 x 5
    B: np.ndarray           # 5 x 2
    C: np.ndarray           # 1 x 5, picks the tracked voltage
    sigma_p: float          # one-step pressure predictive std, atm
    partials: tuple         # (dV/dQ_H2, dV/dQ_air, dV/dI, dP/dQ_H2, dP/dQ_air, dP/dI)


@dataclass(frozen=True)
class MPCParams:
    horizon_pred: int = 10
    horizon_ctrl: int = 2
    q_track: float = 10.0
    r_move: tuple = (5e-4, 5e-4)
    slack_penalty: float = 1e4
    tighten_alpha: float = 300.0
    v_ref: float = 48.0
    p_limit: float = 2.5
    # the one-step model cannot see pressure still drifting from past
    # moves, so the planner aims this far below the ceiling
    p_margin: float = 0.1
    du_min: tuple = (-40.0, -40.0)
    du_max: tuple = (20.0, 20.0)
    u_min: tuple = (100.0, 300.0)
    u_max: tuple = (400.0, 700.0)

    def __post_init__(self):
        if not 1 <= self.horizon_ctrl <= self.horizon_pred:
            raise ValueError("need 1 <= horizon_ctrl <= horizon_pred")
        if self.q_track <= 0.0 or self.slack_penalty <= 0.0:
            raise ValueError("q_track and slack_penalty must be positive")
        if any(r <= 0.0 for r in self.r_move):
            raise ValueError("r_move entries must be positive")
        if self.tighten_alpha < 0.0:
            raise ValueError("tighten_alpha must be nonnegative")
        if self.p_limit <= 0.0:
            raise ValueError("p_limit must be positive")
        if not 0.0 <= self.p_margin < self.p_limit:
            raise ValueError("need 0 <= p_margin < p_limit")
        for lo, hi in zip(self.du_min, self.du_max):
            if lo >= hi:
                raise ValueError("rate bounds must satisfy lo < hi")
        for lo, hi in zip(self.u_min, self.u_max):
            if lo >= hi:
                raise ValueError("range bounds must satisfy lo < hi")


@dataclass(frozen=True)
class QPData:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    off_v: np.ndarray       # predicted voltage with zero moves, steps 1..Hp
    M_v: np.ndarray         # voltage move gains, Hp x 2 Hu
    off_p: np.ndarray
    M_p: np.ndarray


@dataclass(frozen=True)
class ControlDecision:
    dq_h2: float
    dq_air: float
    v_pred: np.ndarray
    p_pred: np.ndarray
    slack: np.ndarray
    sigma_p: float
    qp_status: str
    qp_iterations: int


# ----------------------------------------------------------------- model


def model_from_partials(dv_dqh, dv_dqa, dv_di, dp_dqh, dp_dqa, dp_di,
                        sigma_p=0.0) -> LinModel:
    """Assemble the structured (A, B, C) from the six local sensitivities."""
    A = np.zeros((N_STATE, N_STATE))
    A[IDX_V, IDX_V] = 1.0
    A[IDX_P, IDX_P] = 1.0
    A[IDX_V, IDX_DI] = dv_di
    A[IDX_P, IDX_DI] = dp_di
    A[IDX_QH, IDX_QH] = 1.0
    A[IDX_QA, IDX_QA] = 1.0
    B = np.zeros((N_STATE, N_INPUT))
    B[IDX_V] = (dv_dqh, dv_dqa)
    B[IDX_P] = (dp_dqh, dp_dqa)
    B[IDX_QH, 0] = 1.0
    B[IDX_QA, 1] = 1.0
    C = np.zeros((1, N_STATE))
    C[0, IDX_V] = 1.0
    return LinModel(A=A, B=B, C=C, sigma_p=float(sigma_p),
                    partials=(float(dv_dqh), float(dv_dqa), float(dv_di),
                              float(dp_dqh), float(dp_dqa), float(dp_di)))


def linearize_gp(gp_v: GP, gp_p: GP, q_h2, q_air, current, v_now, p_now) -> LinModel:
    """Local model from the posterior-mean jacobians at the operating point."""
    xv = np.array([q_h2, q_air, current, v_now])
    xp = np.array([q_h2, q_air, current, p_now])
    jv = mean_jacobian(gp_v, xv)
    jp = mean_jacobian(gp_p, xp)
    _, var = predict(gp_p, xp)
    return model_from_partials(jv[0], jv[1], jv[2], jp[0], jp[1], jp[2],
                               sigma_p=float(np.sqrt(var[0])))


def linearize_plant(plant, state, inp, dt=0.5, h_flow=0.5, h_current=0.1) -> LinModel:
    """Exact-model baseline: central differences through the true one-step map.

    `plant` needs .step(state, inp, dt) and .output_voltage(state, inp);
    sigma_p is zero since nothing is uncertain.
    """
    from .plant import PlantInput

    def outputs(q_h2, q_air, cur):
        probe = PlantInput(q_h2, q_air, cur)
        nxt = plant.step(state, probe, dt)
        return plant.output_voltage(nxt, probe), nxt.P_H2

    q_h2, q_air, cur = inp.Q_H2, inp.Q_air, inp.I
    partials = []
    for which, h in ((0, h_flow), (1, h_flow), (2, h_current)):
        args_hi = [q_h2, q_air, cur]
        args_lo = [q_h2, q_air, cur]
        args_hi[which] += h
        args_lo[which] -= h
        v_hi, p_hi = outputs(*args_hi)
        v_lo, p_lo = outputs(*args_lo)
        partials.append(((v_hi - v_lo) / (2 * h), (p_hi - p_lo) / (2 * h)))
    (dv_dqh, dp_dqh), (dv_dqa, dp_dqa), (dv_di, dp_di) = partials
    return model_from_partials(dv_dqh, dv_dqa, dv_di, dp_dqh, dp_dqa, dp_di,
                               sigma_p=0.0)


# -------------------------------------------------------------- condense


def _condense(model: LinModel, x0: np.ndarray, params: MPCParams):
    Hp, Hu = params.horizon_pred, params.horizon_ctrl
    A, B = model.A, model.B
    pick = np.zeros((2, N_STATE))      # voltage row then pressure row
    pick[0] = model.C[0]
    pick[1, IDX_P] = 1.0
    powers = [np.eye(N_STATE)]
    for _ in range(Hp):
        powers.append(A @ powers[-1])

    off = np.stack([pick @ (powers[k] @ x0) for k in range(1, Hp + 1)])
    M_v = np.zeros((Hp, N_INPUT * Hu))
    M_p = np.zeros((Hp, N_INPUT * Hu))
    for k in range(1, Hp + 1):
        for j in range(min(k, Hu)):
            blk = pick @ (powers[k - 1 - j] @ B)         # 2 x 2
            M_v[k - 1, N_INPUT * j:N_INPUT * (j + 1)] = blk[0]
            M_p[k - 1, N_INPUT * j:N_INPUT * (j + 1)] = blk[1]
    return off[:, 0], M_v, off[:, 1], M_p


def build_qp(model: LinModel, state: CtrlState, params: MPCParams) -> QPData:
    """Condense tracking, rate, range, and pressure terms into one QP.

    Decision vector: Hu stacked input moves then Hp pressure slacks.
    """
    Hp, Hu = params.horizon_pred, params.horizon_ctrl
    x0 = state.vector()
    off_v, M_v, off_p, M_p = _condense(model, x0, params)
    nu = N_INPUT * Hu
    nz = nu + Hp

    R = np.diag(np.tile(params.r_move, Hu))
    H = np.zeros((nz, nz))
    H[:nu, :nu] = 2.0 * (params.q_track * M_v.T @ M_v + R)
    H[nu:, nu:] = 2.0 * params.slack_penalty * np.eye(Hp)
    e0 = off_v - params.v_ref
    g = np.concatenate([2.0 * params.q_track * M_v.T @ e0, np.zeros(Hp)])

    rows = []
    lbs = []
    ubs = []

    # hard rate limits, one row per move entry
    rate = np.zeros((nu, nz))
    rate[:, :nu] = np.eye(nu)
    rows.append(rate)
    lbs.append(np.tile(params.du_min, Hu))
    ubs.append(np.tile(params.du_max, Hu))

    # hard actuator ranges on the running sum of moves
    q_now = np.array([state.Q_H2, state.Q_air])
    pos = np.zeros((nu, nz))
    lo = np.empty(nu)
    hi = np.empty(nu)
    for j in range(Hu):
        for c in range(N_INPUT):
            r = N_INPUT * j + c
            pos[r, [N_INPUT * i + c for i in range(j + 1)]] = 1.0
            lo[r] = params.u_min[c] - q_now[c]
            hi[r] = params.u_max[c] - q_now[c]
    rows.append(pos)
    lbs.append(lo)
    ubs.append(hi)

    # soft pressure ceiling, plain prediction
    ceiling = params.p_limit - params.p_margin
    slack_eye = np.eye(Hp)
    plain = np.zeros((Hp, nz))
    plain[:, :nu] = M_p
    plain[:, nu:] = -slack_eye
    rows.append(plain)
    lbs.append(np.full(Hp, -np.inf))
    ubs.append(ceiling - off_p)

    # same rows with the planned pressure moves inflated by the model
    # spread; only the move sums scale, the load offset does not
    scale = 1.0 + params.tighten_alpha * model.sigma_p
    tight = np.zeros((Hp, nz))
    tight[:, :nu] = scale * M_p
    tight[:, nu:] = -slack_eye
    rows.append(tight)
    lbs.append(np.full(Hp, -np.inf))
    ubs.append(ceiling - off_p)

    # slack nonnegativity
    sl = np.zeros((Hp, nz))
    sl[:, nu:] = slack_eye
    rows.append(sl)
    lbs.append(np.zeros(Hp))
    ubs.append(np.full(Hp, np.inf))

    return QPData(H=H, g=g, A=np.vstack(rows), lb=np.concatenate(lbs),
                  ub=np.concatenate(ubs), off_v=off_v, M_v=M_v,
                  off_p=off_p, M_p=M_p)


# ------------------------------------------------------------------ step


def control_step(model: LinModel, state: CtrlState, params: MPCParams,
                 warm=None) -> ControlDecision:
    """Solve the step's QP and return clamped actuator moves.

    The clamp re-asserts the hard rate and range limits on the applied
    move so the closed loop never violates them, whatever the solver
    returned.
    """
    prob = build_qp(model, state, params)
    sol = solve_qp(prob.H, prob.g, prob.A, prob.lb, prob.ub, warm=warm)
    nu = N_INPUT * params.horizon_ctrl
    if sol.status == "infeasible" or not np.all(np.isfinite(sol.z)):
        z = np.zeros(prob.H.shape[0])      # hold position, keep slack zero
    else:
        z = sol.z

    du = np.clip(z[:N_INPUT], params.du_min, params.du_max)
    # solver dust near an active rate limit snaps onto it so logged moves
    # read as the limit itself
    du = np.where(np.abs(du - params.du_max) < 1e-7, params.du_max, du)
    du = np.where(np.abs(du - params.du_min) < 1e-7, params.du_min, du)
    q_now = np.array([state.Q_H2, state.Q_air])
    q_next = np.clip(q_now + du, params.u_min, params.u_max)
    # the add-then-subtract can push du past a rate bound by a last bit;
    # the reported increment is the safety quantity, so clip it exactly
    du = np.clip(q_next - q_now, params.du_min, params.du_max)

    z_applied = z.copy()
    z_applied[:N_INPUT] = du
    v_pred = prob.off_v + prob.M_v @ z_applied[:nu]
    p_pred = prob.off_p + prob.M_p @ z_applied[:nu]
    return ControlDecision(dq_h2=float(du[0]), dq_air=float(du[1]),
                           v_pred=v_pred, p_pred=p_pred, slack=z[nu:].copy(),
                           sigma_p=model.sigma_p, qp_status=sol.status,
                           qp_iterations=sol.iterations)
