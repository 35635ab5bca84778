"""Scenario, metrics, comparison, and trace round-trip tests."""

import math
import os

import numpy as np
import pytest

from fcmpc.harness import (
    CONTROL_DT,
    Comparison,
    Scenario,
    Segment,
    SimTrace,
    compare,
    compute_metrics,
    format_comparison,
    load_at,
    ramp_scenario,
    read_trace_csv,
    run,
    step_scenario,
    write_trace_csv,
)
from fcmpc.plant import DEFAULT_GAS, DEFAULT_STACK, Plant

PLANT = Plant(DEFAULT_STACK, DEFAULT_GAS)


def hold_scenario(duration=40.0, current=110.0, seed=7):
    return Scenario(name="hold", duration=duration,
                    segments=(Segment("hold", 0.0, duration, current, current),),
                    seed=seed)


def mk_trace(t, I, v, P=None, dq_h2=None, dq_air=None, controller="physical",
             name="fix", reference=48.0):
    """Synthetic trace with safe defaults for the untested columns."""
    t = np.asarray(t, dtype=float)
    I = np.asarray(I, dtype=float)
    v = np.asarray(v, dtype=float)
    n = t.size
    P = np.full(n, 2.0) if P is None else np.asarray(P, dtype=float)
    zeros = np.zeros(n)
    dq_h2 = zeros if dq_h2 is None else np.asarray(dq_h2, dtype=float)
    dq_air = zeros if dq_air is None else np.asarray(dq_air, dtype=float)
    return SimTrace(
        name=name, controller=controller, reference=reference,
        dt=float(t[1] - t[0]), t=t, I=I, V_true=v, V_meas=v.copy(),
        P_H2_true=P, P_H2_meas=P.copy(), Q_H2=np.full(n, 250.0),
        Q_air=np.full(n, 500.0), dQ_H2=dq_h2, dQ_air=dq_air,
        slack=zeros.copy(), qp_status=tuple(["solved"] * n))


# -------------------------------------------------------------- scenarios


def test_segment_rejects_unknown_kind():
    with pytest.raises(ValueError):
        Segment("spike", 0.0, 1.0, 110.0, 120.0)


def test_segment_rejects_zero_length():
    with pytest.raises(ValueError):
        Segment("hold", 5.0, 5.0, 110.0, 110.0)


def test_hold_segment_must_keep_load_constant():
    with pytest.raises(ValueError):
        Segment("hold", 0.0, 1.0, 110.0, 115.0)


def test_scenario_rejects_gap_between_segments():
    segs = (Segment("hold", 0.0, 10.0, 110.0, 110.0),
            Segment("hold", 12.0, 20.0, 110.0, 110.0))
    with pytest.raises(ValueError):
        Scenario(name="bad", duration=20.0, segments=segs)


def test_scenario_rejects_late_start_and_short_cover():
    with pytest.raises(ValueError):
        Scenario(name="bad", duration=10.0,
                 segments=(Segment("hold", 1.0, 10.0, 110.0, 110.0),))
    with pytest.raises(ValueError):
        Scenario(name="bad", duration=10.0,
                 segments=(Segment("hold", 0.0, 8.0, 110.0, 110.0),))


def test_scenario_rejects_load_beyond_concentration_limit():
    i_max = DEFAULT_STACK.J_max * DEFAULT_STACK.A_mem
    with pytest.raises(ValueError):
        hold_scenario(current=i_max + 1.0)
    with pytest.raises(ValueError):
        hold_scenario(current=0.0)


def test_step_scenario_load_schedule():
    sc = step_scenario()
    assert sc.duration == 120.0
    assert load_at(sc, 0.0) == 110.0
    assert load_at(sc, 19.5) == 110.0
    # the jump lands exactly on the segment start
    assert load_at(sc, 20.0) == 120.0
    assert load_at(sc, 74.5) == 120.0
    assert load_at(sc, 75.0) == 110.0
    assert load_at(sc, 120.0) == 110.0


def test_ramp_scenario_is_piecewise_linear():
    sc = ramp_scenario()
    assert load_at(sc, 20.0) == 110.0
    assert load_at(sc, 30.0) == pytest.approx(115.0)
    assert load_at(sc, 35.0) == pytest.approx(117.5)
    assert load_at(sc, 40.0) == 120.0
    assert load_at(sc, 70.0) == 112.0
    # contiguous: no jumps bigger than one ramp increment per sample
    times = np.arange(0.0, 120.0, 0.5)
    loads = np.array([load_at(sc, t) for t in times])
    jumps = np.abs(np.diff(loads))
    # the one real step at t = 70 aside, changes stay ramp-sized
    assert np.sort(jumps)[-2] <= 0.25 + 1e-12


# -------------------------------------------------------------------- run


def test_same_seed_gives_bit_identical_traces():
    sc = hold_scenario(duration=10.0)
    a = run(sc, "physical", PLANT)
    b = run(sc, "physical", PLANT)
    for field in ("t", "V_true", "V_meas", "P_H2_true", "P_H2_meas",
                  "Q_H2", "Q_air", "dQ_H2", "dQ_air"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_noise_seed_changes_measurements():
    a = run(hold_scenario(duration=10.0, seed=1), "physical", PLANT)
    b = run(hold_scenario(duration=10.0, seed=2), "physical", PLANT)
    assert not np.array_equal(a.V_meas, b.V_meas)


def test_zero_noise_hold_regulates_to_reference():
    sc = hold_scenario(duration=40.0)
    tr = run(sc, "physical", PLANT, noise_std=(0.0, 0.0))
    tail = tr.t >= 30.0
    assert np.max(np.abs(tr.V_true[tail] - 48.0)) <= 0.05
    # measured equals true without noise
    assert np.array_equal(tr.V_true, tr.V_meas)


def test_step_recovery_rides_the_rate_limits_exactly():
    # the 110 -> 120 A step demands more flow than one move allows, so
    # the first increments sit on the +20 ceiling, and the drop at 75 s
    # pulls the -40 floor
    tr = run(step_scenario(seed=7), "physical", PLANT, noise_std=(0.0, 0.0))
    k_up = int(round(20.0 / tr.dt))
    assert tr.dQ_air[k_up] == 20.0
    assert tr.dQ_H2[k_up] == 20.0
    assert np.sum(tr.dQ_air == 20.0) >= 3
    k_dn = int(round(75.0 / tr.dt))
    assert tr.dQ_H2[k_dn] == -40.0
    assert np.all(tr.dQ_air <= 20.0) and np.all(tr.dQ_air >= -40.0)
    assert np.all(tr.dQ_H2 <= 20.0) and np.all(tr.dQ_H2 >= -40.0)


def test_run_rejects_bad_controller_and_missing_models():
    sc = hold_scenario(duration=5.0)
    with pytest.raises(ValueError):
        run(sc, "magic", PLANT)
    with pytest.raises(ValueError):
        run(sc, "gp", PLANT)


def test_trace_lengths_and_flow_ranges():
    sc = hold_scenario(duration=10.0)
    tr = run(sc, "physical", PLANT)
    assert len(tr) == 21                     # duration/dt + 1 samples
    assert tr.t[0] == 0.0 and tr.t[-1] == 10.0
    assert np.all((tr.Q_H2 >= 100.0) & (tr.Q_H2 <= 400.0))
    assert np.all((tr.Q_air >= 300.0) & (tr.Q_air <= 700.0))
    assert len(tr.qp_status) == len(tr)


# ---------------------------------------------------------------- metrics


def test_metrics_constant_trace_at_reference():
    n = 21
    t = np.arange(n) * 0.5
    tr = mk_trace(t, np.full(n, 110.0), np.full(n, 48.0))
    m = compute_metrics(tr)
    assert m.overshoot == 0.0
    assert m.settle_time == 0.0              # no onsets, nothing to settle
    assert m.steady_rmse == 0.0
    assert m.p_violation_max == pytest.approx(-0.5)
    assert m.rate_violations == 0


def test_overshoot_counts_only_after_first_upward_crossing():
    t = np.arange(8) * 0.5
    v = np.array([46.0, 47.0, 47.9, 48.3, 48.6, 48.2, 48.0, 47.95])
    tr = mk_trace(t, np.full(8, 110.0), v)
    m = compute_metrics(tr)
    assert m.overshoot == pytest.approx(0.6)


def test_overshoot_zero_when_reference_never_reached():
    t = np.arange(6) * 0.5
    v = np.array([46.0, 47.0, 47.5, 47.8, 47.9, 47.9])
    tr = mk_trace(t, np.full(6, 110.0), v)
    assert compute_metrics(tr).overshoot == 0.0


def test_settle_time_measured_from_load_onset():
    # onset at k=4 (t=2.0); the band is entered for good at k=9 (t=4.5)
    t = np.arange(14) * 0.5
    I = np.array([110.0] * 4 + [120.0] * 10)
    v = np.full(14, 48.0)
    v[4:9] = 47.0
    tr = mk_trace(t, I, v)
    m = compute_metrics(tr)
    assert m.settle_time == pytest.approx(2.5)


def test_settle_time_requires_the_band_to_hold():
    # dips back out right after entering, so settling happens later
    t = np.arange(14) * 0.5
    I = np.array([110.0] * 4 + [120.0] * 10)
    v = np.full(14, 48.0)
    v[4:7] = 47.0
    v[8] = 47.5                              # breaks the one-second hold
    tr = mk_trace(t, I, v)
    m = compute_metrics(tr)
    assert m.settle_time == pytest.approx(2.5)


def test_settle_time_infinite_when_never_in_band():
    t = np.arange(10) * 0.5
    I = np.array([110.0] * 3 + [120.0] * 7)
    v = np.full(10, 46.0)
    tr = mk_trace(t, I, v)
    assert math.isinf(compute_metrics(tr).settle_time)


def test_settle_takes_worst_episode_over_multiple_onsets():
    t = np.arange(30) * 0.5
    I = np.concatenate([np.full(5, 110.0), np.full(12, 120.0),
                        np.full(13, 110.0)])
    v = np.full(30, 48.0)
    v[5:7] = 47.0                            # first episode: 1.0 s
    v[17:26] = 47.0                          # second episode: 4.5 s
    tr = mk_trace(t, I, v)
    assert compute_metrics(tr).settle_time == pytest.approx(4.5)


def test_settle_unchanged_by_appending_settled_samples():
    t = np.arange(14) * 0.5
    I = np.array([110.0] * 4 + [120.0] * 10)
    v = np.full(14, 48.0)
    v[4:9] = 47.0
    base = compute_metrics(mk_trace(t, I, v))
    t2 = np.arange(20) * 0.5
    I2 = np.concatenate([I, np.full(6, 120.0)])
    v2 = np.concatenate([v, np.full(6, 48.0)])
    ext = compute_metrics(mk_trace(t2, I2, v2))
    assert ext.settle_time == base.settle_time
    assert ext.overshoot == base.overshoot


def test_pressure_violation_is_signed_headroom():
    t = np.arange(6) * 0.5
    P = np.array([2.0, 2.2, 2.45, 2.3, 2.1, 2.0])
    tr = mk_trace(t, np.full(6, 110.0), np.full(6, 48.0), P=P)
    assert compute_metrics(tr).p_violation_max == pytest.approx(-0.05)
    P2 = P.copy()
    P2[2] = 2.53
    tr2 = mk_trace(t, np.full(6, 110.0), np.full(6, 48.0), P=P2)
    assert compute_metrics(tr2).p_violation_max == pytest.approx(0.03)


def test_rate_violations_counted_per_channel_entry():
    t = np.arange(6) * 0.5
    dq_h2 = np.array([0.0, 25.0, 0.0, -45.0, 0.0, 0.0])
    dq_air = np.array([0.0, 0.0, 20.0, 0.0, 21.0, 0.0])
    tr = mk_trace(t, np.full(6, 110.0), np.full(6, 48.0),
                  dq_h2=dq_h2, dq_air=dq_air)
    assert compute_metrics(tr).rate_violations == 3


def test_steady_rmse_uses_last_fifth_of_the_trace():
    t = np.arange(101) * 0.5                  # 0 .. 50 s
    v = np.full(101, 48.0)
    v[t >= 40.0] = 49.0                       # exactly the last fifth
    tr = mk_trace(t, np.full(101, 110.0), v)
    assert compute_metrics(tr).steady_rmse == pytest.approx(1.0)


def test_metrics_rejects_empty_trace():
    tr = mk_trace([0.0, 0.5], [110.0, 110.0], [48.0, 48.0])
    short = SimTrace(**{**tr.__dict__, "t": np.array([]), "I": np.array([]),
                        "V_true": np.array([])})
    with pytest.raises(ValueError):
        compute_metrics(short)


# ---------------------------------------------------------------- compare


def test_compare_identical_traces_gives_unit_ratios():
    t = np.arange(30) * 0.5
    I = np.array([110.0] * 5 + [120.0] * 25)
    v = np.full(30, 48.0)
    v[5:9] = 47.0
    v[9] = 48.3
    a = mk_trace(t, I, v, controller="physical")
    b = mk_trace(t, I, v.copy(), controller="gp")
    c = compare(a, b)
    assert c.overshoot_ratio == 1.0
    assert c.settle_ratio == 1.0
    assert c.p_violation_ratio == 1.0
    assert c.steady_rmse_ratio == 1.0


def test_compare_reproduces_headline_ratios_from_fixture():
    # overshoots 0.42 / 0.60 V and settle times 5.2 / 6.5 s feed through
    # to ratios 1.43 and 1.25
    dt = 0.1
    n = 200
    t = np.arange(n) * dt
    I = np.concatenate([np.full(20, 110.0), np.full(n - 20, 120.0)])

    def shaped(overshoot, settle_s):
        v = np.full(n, 48.0)
        k0 = 20
        ks = k0 + int(round(settle_s / dt))
        v[k0:ks] = 47.5                      # out of band until settle
        v[ks - 1] = 48.0 + overshoot         # peak just before settling
        return v

    mpc = mk_trace(t, I, shaped(0.42, 5.2), controller="physical")
    gp = mk_trace(t, I, shaped(0.60, 6.5), controller="gp")
    c = compare(mpc, gp)
    assert c.mpc.overshoot == pytest.approx(0.42)
    assert c.gpmpc.overshoot == pytest.approx(0.60)
    assert c.overshoot_ratio == pytest.approx(0.60 / 0.42)
    assert c.mpc.settle_time == pytest.approx(5.2)
    assert c.gpmpc.settle_time == pytest.approx(6.5)
    assert c.settle_ratio == pytest.approx(1.25)


def test_compare_rejects_mismatched_scenarios():
    t = np.arange(10) * 0.5
    a = mk_trace(t, np.full(10, 110.0), np.full(10, 48.0))
    b = mk_trace(t, np.full(10, 115.0), np.full(10, 48.0))
    with pytest.raises(ValueError):
        compare(a, b)
    c = mk_trace(np.arange(8) * 0.5, np.full(8, 110.0), np.full(8, 48.0))
    with pytest.raises(ValueError):
        compare(a, c)


def test_format_comparison_lists_violation_rows():
    t = np.arange(10) * 0.5
    a = mk_trace(t, np.full(10, 110.0), np.full(10, 48.0))
    text = format_comparison(compare(a, a))
    assert "p_violation_max_atm" in text
    assert "rate_violations" in text
    assert "gpmpc/mpc" in text
    # rate violations are counts, not ratios
    rate_row = [ln for ln in text.splitlines() if "rate_violations" in ln][0]
    assert rate_row.rstrip().endswith("-")


# -------------------------------------------------------------------- csv


def test_trace_csv_round_trip_exact(tmp_path):
    sc = hold_scenario(duration=10.0)
    tr = run(sc, "physical", PLANT)
    path = os.path.join(tmp_path, "trace.csv")
    write_trace_csv(tr, path)
    back = read_trace_csv(path, name=tr.name, controller=tr.controller)
    for field in ("t", "I", "V_true", "V_meas", "P_H2_true", "P_H2_meas",
                  "Q_H2", "Q_air", "dQ_H2", "dQ_air", "slack"):
        assert np.array_equal(getattr(tr, field), getattr(back, field)), field
    assert back.qp_status == tr.qp_status
    assert back.dt == tr.dt
    assert back.fault == ""


def test_trace_csv_preserves_fault_line(tmp_path):
    t = np.arange(4) * 0.5
    tr = mk_trace(t, np.full(4, 110.0), np.full(4, 48.0))
    tr = SimTrace(**{**tr.__dict__, "fault": "PlantFault: dried out"})
    path = os.path.join(tmp_path, "trace.csv")
    write_trace_csv(tr, path)
    text = open(path).read()
    assert text.rstrip().endswith("# fault: PlantFault: dried out")
    back = read_trace_csv(path)
    assert back.fault == "PlantFault: dried out"
    assert len(back) == 4


def test_read_trace_rejects_foreign_files(tmp_path):
    path = os.path.join(tmp_path, "junk.csv")
    with open(path, "w") as fh:
        fh.write("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_trace_csv(path)
