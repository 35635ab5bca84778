"""Shared fixtures for the test suite."""

import time

import pytest

from fcmpc.cli import main

PIPELINE_STEPS = (
    ["generate-data"],
    ["train"],
    ["validate"],
    ["simulate", "--controller", "physical", "--scenario", "step"],
    ["simulate", "--controller", "gp", "--scenario", "step"],
    ["simulate", "--controller", "physical", "--scenario", "ramp"],
    ["simulate", "--controller", "gp", "--scenario", "ramp"],
)


def run_pipeline(out):
    """Full stock pipeline into `out`; returns the wall time it took."""
    t0 = time.perf_counter()
    for step in PIPELINE_STEPS:
        rc = main(["--out", out] + step)
        assert rc == 0, f"pipeline step {step} exited {rc}"
    return time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_pipeline(tmp_path_factory):
    """Artifacts of one stock-settings pipeline run, shared per session.

    Covers data generation (1000 training rows), hyperparameter training
    for both targets, validation, and all four scenario/controller
    closed-loop simulations. The measured wall time is part of the
    fixture value so the runtime acceptance check can reuse this run
    instead of timing a second one.
    """
    out = str(tmp_path_factory.mktemp("pipeline"))
    elapsed = run_pipeline(out)
    return {"out": out, "elapsed": elapsed}
