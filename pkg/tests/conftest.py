"""Shared test setup.

Pin BLAS to one thread before numpy loads anywhere: timing-sensitive
tests (latency percentiles, training-budget checks) must not depend on
library thread pools, and results stay reproducible across machines.
"""

import json
import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

# tiny-but-real hyperparameters for command-level tests: a full
# two-stage manifold run plus sampler training in about two seconds
TINY_RUN_CONFIG = {
    "seed": 3,
    "manifold": {"d_z": 4, "n_experts": 2, "encoder_hidden": 12,
                 "expert_hidden": 12, "gating_hidden": 8, "seq_len": 6,
                 "batch_size": 2, "stage1_iters": 4, "stage2_iters": 2,
                 "eval_every": 2, "stop_recon_cm": 0.0,
                 "k_epochs": 0.01},
    "sampler": {"enc_hidden": 12, "enc_out": 8, "lstm_hidden": 12,
                "dec_hidden": 12, "dec_hidden2": 8, "batch_size": 2,
                "len_min": 5, "len_max": 8, "iterations": 4,
                "eval_every": 2, "stop_target_cm": 0.0},
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the
    run, so the gate can be read off without scrolling."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((nodeid.split("::")[-1], status))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in lines:
            terminalreporter.write_line(f"{status} {name}")


@pytest.fixture(scope="session")
def cli_run(tmp_path_factory):
    """Bundle directory + config path produced by the real CLI:
    train-manifold then train-sampler on the bundled corpus."""
    from inbetween.cli import main

    root = tmp_path_factory.mktemp("cli_run")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_RUN_CONFIG), encoding="utf-8")
    run = root / "run"
    assert main(["train-manifold", "--config", str(cfg),
                 "--out", str(run)]) == 0
    assert main(["train-sampler", "--config", str(cfg),
                 "--manifold", str(run / "manifold.npz"),
                 "--out", str(run)]) == 0
    return run, cfg
