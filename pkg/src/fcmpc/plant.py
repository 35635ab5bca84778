"""Ground-truth PEM fuel cell stack simulator.

The stack voltage follows the familiar semi-empirical form: a Nernst
reversible potential minus activation, ohmic, and concentration losses,
with the activation and concentration drops low-pass filtered by the
charge double layer at the electrode/electrolyte interface,

    V_stack = n_cell * (E_nernst - V_a - V_ohmic),
    dV_a/dt = I/C - V_a / (R_a * C),      R_a = (V_act + V_con) / I.

Reactant pressures evolve by an ideal-gas mole balance per manifold:
supply inflow, electrochemical consumption (n_cell*I/2F for hydrogen,
n_cell*I/4F for oxygen), and a linear outflow k_out*(P - p_out). Flows
are metered in standard liters per minute (1 atm, 298.15 K).

Everything here is deterministic; `measure` adds Gaussian sensor noise
on top of the true outputs. All quantities use atm, liters, lpm, A, V,
and kelvin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit

__all__ = [
    "FARADAY",
    "R_L_ATM",
    "StackParams",
    "GasParams",
    "PlantState",
    "PlantInput",
    "Measurement",
    "Plant",
    "PlantFault",
    "DomainFault",
    "MembraneDryoutFault",
    "SaturationFault",
    "DEFAULT_STACK",
    "DEFAULT_GAS",
    "nernst_potential",
    "activation_drop",
    "ohmic_drop",
    "concentration_drop",
    "output_voltage",
    "step",
    "measure",
    "steady_state",
]

FARADAY = 96485.33212          # C/mol
R_L_ATM = 0.082057366080960    # L*atm/(mol*K)
T_STD = 298.15                 # K, reference for standard liters
MOL_PER_SL = 1.0 / (R_L_ATM * T_STD)   # mol per standard liter
CURRENT_FLOOR = 0.1            # A, guards ln(I) at startup
DT_PLANT = 0.01                # s, internal integrator substep


class PlantFault(RuntimeError):
    """Base class for operating faults raised by the simulator."""


class DomainFault(PlantFault):
    """An input or state left the model's physical domain."""


class MembraneDryoutFault(PlantFault):
    """Membrane resistivity denominator reached zero (dry-out regime)."""


class SaturationFault(PlantFault):
    """Current density at or above J_max; concentration loss undefined."""


@dataclass(frozen=True)
class StackParams:
    """Electrochemical stack constants.

    n_cell      cells in series
    T_stack     stack temperature, K (held constant)
    xi1..xi4    semi-empirical activation coefficients
    R_C         contact resistance per cell, ohm
    l_mem       membrane thickness, cm
    A_mem       membrane active area, cm^2
    lam         membrane water-content parameter
    beta        concentration-loss coefficient, V
    J_max       maximum current density, A/cm^2
    C_dl        double-layer equivalent capacitance, F
    """

    n_cell: int
    T_stack: float
    xi1: float
    xi2: float
    xi3: float
    xi4: float
    R_C: float
    l_mem: float
    A_mem: float
    lam: float
    beta: float
    J_max: float
    C_dl: float

    def __post_init__(self):
        if self.n_cell < 1:
            raise ValueError("n_cell must be >= 1")
        if not 223.0 <= self.T_stack <= 373.0:
            raise ValueError("T_stack outside the valid 223-373 K range")
        for name in ("J_max", "C_dl", "A_mem", "l_mem"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class GasParams:
    """Manifold geometry and flow conductances.

    V_anode, V_cathode        manifold volumes, L
    o2_fraction               O2 mole fraction of the air feed
    p_out_anode, p_out_cathode  outlet back-pressures, atm
    k_out_anode, k_out_cathode  linear outflow conductances, lpm/atm
    """

    V_anode: float
    V_cathode: float
    o2_fraction: float
    p_out_anode: float
    p_out_cathode: float
    k_out_anode: float
    k_out_cathode: float

    def __post_init__(self):
        for name in ("V_anode", "V_cathode", "k_out_anode", "k_out_cathode"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.o2_fraction < 1.0:
            raise ValueError("o2_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class PlantState:
    """Physical state: pressures (atm), double-layer voltage (V), actuators (lpm)."""

    P_H2: float
    P_O2: float
    V_a: float
    Q_H2_act: float
    Q_air_act: float

    def __post_init__(self):
        if self.P_H2 <= 0.0 or self.P_O2 <= 0.0:
            raise DomainFault("pressures must be positive")
        if self.V_a < 0.0:
            raise DomainFault("double-layer voltage must be nonnegative")


@dataclass(frozen=True)
class PlantInput:
    """Commanded hydrogen flow, air flow (lpm) and stack current (A)."""

    Q_H2: float
    Q_air: float
    I: float

    def __post_init__(self):
        if self.Q_H2 < 0.0 or self.Q_air < 0.0 or self.I < 0.0:
            raise ValueError("flows and current must be nonnegative")


@dataclass(frozen=True)
class Measurement:
    """Noisy sensor readings of stack voltage (V) and hydrogen pressure (atm)."""

    V_FC: float
    P_H2: float


# --------------------------------------------------------------------------
# scalar electrochemistry, shared by the public API and the integrator kernel


@njit(cache=True)
def _e_nernst(T: float, p_h2: float, p_o2: float) -> float:
    return (1.229 - 0.85e-3 * (T - 298.15)
            + 4.3085e-5 * T * (math.log(p_h2) + 0.5 * math.log(p_o2)))


@njit(cache=True)
def _v_act(T, xi1, xi2, xi3, xi4, p_o2, current):
    c_o2 = p_o2 / (5.08e6 * math.exp(-498.0 / T))
    return -(xi1 + xi2 * T + xi3 * T * math.log(c_o2)
             + xi4 * T * math.log(current))


@njit(cache=True)
def _rho_m(T: float, lam: float, i: float) -> float:
    num = 181.6 * (1.0 + 0.03 * i + 0.062 * (T / 303.0) ** 2 * i ** 2.5)
    den = (lam - 0.643 - 3.0 * i) * math.exp(4.18 * (T - 303.0) / T)
    return num / den


@njit(cache=True)
def _v_con(beta: float, j_max: float, i: float) -> float:
    return -beta * math.log(1.0 - i / j_max)


def nernst_potential(params: StackParams, p_h2: float, p_o2: float) -> float:
    """Reversible cell potential at the given reactant partial pressures."""
    if p_h2 <= 0.0 or p_o2 <= 0.0:
        raise DomainFault("partial pressures must be positive")
    return _e_nernst(params.T_stack, p_h2, p_o2)


def activation_drop(params: StackParams, p_o2: float, i_current: float) -> float:
    """Electrode activation loss per cell at stack current i_current."""
    if i_current <= 0.0:
        raise DomainFault("activation loss needs a positive current")
    if p_o2 <= 0.0:
        raise DomainFault("oxygen pressure must be positive")
    return _v_act(params.T_stack, params.xi1, params.xi2, params.xi3,
                  params.xi4, p_o2, i_current)


def ohmic_drop(params: StackParams, i_current: float) -> float:
    """Ohmic loss per cell: membrane resistivity plus contact resistance."""
    if i_current < 0.0:
        raise DomainFault("current must be nonnegative")
    i = i_current / params.A_mem
    if params.lam - 0.643 - 3.0 * i <= 0.0:
        raise MembraneDryoutFault("membrane resistivity denominator <= 0")
    r_mem = _rho_m(params.T_stack, params.lam, i) * params.l_mem / params.A_mem
    return i_current * (r_mem + params.R_C)


def concentration_drop(params: StackParams, i_current: float) -> float:
    """Mass-transport loss per cell; defined for current density below J_max."""
    if i_current < 0.0:
        raise DomainFault("current must be nonnegative")
    i = i_current / params.A_mem
    if i >= params.J_max:
        raise SaturationFault("current density at or above J_max")
    return _v_con(params.beta, params.J_max, i)


def output_voltage(state: PlantState, inp: PlantInput, params: StackParams) -> float:
    """Stack terminal voltage for the given state and applied current."""
    e = nernst_potential(params, state.P_H2, state.P_O2)
    v_ohm = ohmic_drop(params, inp.I)
    return params.n_cell * (e - state.V_a - v_ohm)


# --------------------------------------------------------------------------
# integrator


def _pack(stack: StackParams, gas: GasParams) -> np.ndarray:
    return np.array([
        float(stack.n_cell), stack.T_stack, stack.xi1, stack.xi2, stack.xi3,
        stack.xi4, stack.A_mem, stack.lam, stack.beta, stack.J_max,
        stack.C_dl, gas.V_anode, gas.V_cathode, gas.o2_fraction,
        gas.p_out_anode, gas.p_out_cathode, gas.k_out_anode,
        gas.k_out_cathode,
    ])


@njit(cache=True)
def _rhs(p_h2, p_o2, v_a, q_h2, q_air, current, pv):
    """Time derivatives of (P_H2, P_O2, V_a); returns a fault code in slot 3."""
    if p_h2 <= 0.0 or p_o2 <= 0.0:
        return 0.0, 0.0, 0.0, 1
    n_cell = pv[0]
    T = pv[1]
    mol_rate = MOL_PER_SL / 60.0    # mol/s per lpm of standard-liter flow

    react_h2 = n_cell * current / (2.0 * FARADAY)
    react_o2 = n_cell * current / (4.0 * FARADAY)
    in_h2 = q_h2 * mol_rate
    in_o2 = pv[13] * q_air * mol_rate
    out_h2 = pv[16] * (p_h2 - pv[14]) * mol_rate
    out_o2 = pv[17] * (p_o2 - pv[15]) * mol_rate

    dp_h2 = (R_L_ATM * T / pv[11]) * (in_h2 - react_h2 - out_h2)
    dp_o2 = (R_L_ATM * T / pv[12]) * (in_o2 - react_o2 - out_o2)

    cur = current if current > CURRENT_FLOOR else CURRENT_FLOOR
    i = cur / pv[6]
    v_loss = (_v_act(T, pv[2], pv[3], pv[4], pv[5], p_o2, cur)
              + _v_con(pv[8], pv[9], i))
    dv_a = cur / pv[10] - v_a * cur / (v_loss * pv[10])
    return dp_h2, dp_o2, dv_a, 0


@njit(cache=True)
def _rk4_rollout(p_h2, p_o2, v_a, q_h2, q_air, current, dt, n_sub, pv):
    h = dt / n_sub
    code = 0
    for _ in range(n_sub):
        k1 = _rhs(p_h2, p_o2, v_a, q_h2, q_air, current, pv)
        k2 = _rhs(p_h2 + 0.5 * h * k1[0], p_o2 + 0.5 * h * k1[1],
                  v_a + 0.5 * h * k1[2], q_h2, q_air, current, pv)
        k3 = _rhs(p_h2 + 0.5 * h * k2[0], p_o2 + 0.5 * h * k2[1],
                  v_a + 0.5 * h * k2[2], q_h2, q_air, current, pv)
        k4 = _rhs(p_h2 + h * k3[0], p_o2 + h * k3[1],
                  v_a + h * k3[2], q_h2, q_air, current, pv)
        code = max(k1[3], k2[3], k3[3], k4[3])
        if code != 0:
            break
        p_h2 += (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        p_o2 += (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        v_a += (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        if p_h2 <= 0.0 or p_o2 <= 0.0:
            code = 1
            break
    return p_h2, p_o2, v_a, code


def step(state: PlantState, inp: PlantInput, stack: StackParams,
         gas: GasParams, dt: float, dt_plant: float = DT_PLANT) -> PlantState:
    """Advance the plant by dt seconds with the input held constant.

    Fixed-step RK4 with internal substeps of at most dt_plant. Pure
    function: the same (state, input, params, dt) always yields the
    same next state.
    """
    if dt <= 0.0 or dt_plant <= 0.0:
        raise ValueError("dt and dt_plant must be positive")
    i = inp.I / stack.A_mem
    if i >= stack.J_max:
        raise SaturationFault("current density at or above J_max")
    if stack.lam - 0.643 - 3.0 * i <= 0.0:
        raise MembraneDryoutFault("membrane resistivity denominator <= 0")
    n_sub = max(1, int(math.ceil(dt / dt_plant - 1e-12)))
    p_h2, p_o2, v_a, code = _rk4_rollout(
        state.P_H2, state.P_O2, state.V_a, inp.Q_H2, inp.Q_air, inp.I,
        dt, n_sub, _pack(stack, gas))
    if code == 1:
        raise DomainFault("manifold pressure reached zero during integration")
    # the interpreted fallback hands back np.float64; keep the state plain
    return PlantState(P_H2=float(p_h2), P_O2=float(p_o2),
                      V_a=max(float(v_a), 0.0),
                      Q_H2_act=inp.Q_H2, Q_air_act=inp.Q_air)


def measure(state: PlantState, inp: PlantInput, stack: StackParams,
            noise_std=(0.0, 0.0), rng=None) -> Measurement:
    """Noisy readings of stack voltage and hydrogen pressure.

    `rng` may be an integer seed or a numpy Generator; it is required
    whenever either noise std is nonzero so that every draw is
    reproducible.
    """
    sv, sp = float(noise_std[0]), float(noise_std[1])
    if sv < 0.0 or sp < 0.0:
        raise ValueError("noise stds must be nonnegative")
    v = output_voltage(state, inp, stack)
    p = state.P_H2
    if sv > 0.0 or sp > 0.0:
        if rng is None:
            raise ValueError("an rng seed or Generator is required for noisy reads")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        v += rng.normal(0.0, sv)
        p += rng.normal(0.0, sp)
    return Measurement(V_FC=v, P_H2=p)


def steady_state(stack: StackParams, gas: GasParams, inp: PlantInput) -> PlantState:
    """Exact equilibrium state for a constant input.

    The mole balances are linear in pressure, so the fixed point is
    closed-form; the double layer settles at V_act + V_con.
    """
    cons_h2 = stack.n_cell * inp.I / (2.0 * FARADAY) * 60.0 / MOL_PER_SL
    cons_o2 = stack.n_cell * inp.I / (4.0 * FARADAY) * 60.0 / MOL_PER_SL
    p_h2 = gas.p_out_anode + (inp.Q_H2 - cons_h2) / gas.k_out_anode
    p_o2 = gas.p_out_cathode + (gas.o2_fraction * inp.Q_air - cons_o2) / gas.k_out_cathode
    if p_h2 <= 0.0 or p_o2 <= 0.0:
        raise DomainFault("no physical equilibrium for this input")
    cur = max(inp.I, CURRENT_FLOOR)
    v_a = (activation_drop(stack, p_o2, cur)
           + concentration_drop(stack, cur))
    return PlantState(P_H2=p_h2, P_O2=p_o2, V_a=max(v_a, 0.0),
                      Q_H2_act=inp.Q_H2, Q_air_act=inp.Q_air)


@dataclass(frozen=True)
class Plant:
    """Value-type handle bundling stack and gas parameters."""

    stack: StackParams
    gas: GasParams

    def step(self, state, inp, dt, dt_plant=DT_PLANT):
        return step(state, inp, self.stack, self.gas, dt, dt_plant)

    def output_voltage(self, state, inp):
        return output_voltage(state, inp, self.stack)

    def measure(self, state, inp, noise_std=(0.0, 0.0), rng=None):
        return measure(state, inp, self.stack, noise_std, rng)

    def steady_state(self, inp):
        return steady_state(self.stack, self.gas, inp)


# Defaults sized for a ~6 kW stack. n_cell and beta were set by a one-time
# calibration: bisect n_cell to the smallest cell count reaching 48 V at
# 110 A with mid-range flows (250/500 lpm), then trim beta so the
# equilibrium voltage lands on 48.000 V. All values are configurable.
DEFAULT_STACK = StackParams(
    n_cell=63,
    T_stack=338.0,
    xi1=-0.948,
    xi2=3.3755e-3,
    xi3=7.6e-5,
    xi4=-1.2e-4,
    R_C=1.0e-4,
    l_mem=0.0178,
    A_mem=240.0,
    lam=23.0,
    beta=0.0403643372484885,
    J_max=1.2,
    C_dl=150.0,
)

DEFAULT_GAS = GasParams(
    V_anode=5.0,
    V_cathode=5.0,
    o2_fraction=0.21,
    p_out_anode=0.6,
    p_out_cathode=0.21,
    k_out_anode=131.0,
    k_out_cathode=150.0,
)

DEFAULT_NOISE_STD = (0.15, 0.008)
