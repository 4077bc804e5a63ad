"""Shared fixtures.

The trained-artifacts fixture below carries the full-scale training run
behind the end-to-end acceptance tests. Training is cached on disk,
keyed by a digest of the package sources and the budget table, so a
code change retrains while a plain rerun reuses the previous models
(with the original wall-clock times preserved for the budget check).
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

_SRC = Path(__file__).resolve().parent.parent / "src" / "guidedsr"
_CACHE_ROOT = Path("/tmp/guidedsr-test-cache")

# full-scale budget: 500 training pairs, 20 held-out, pinned
# architectures; step counts sized for a desktop-CPU wall clock. Most of
# the budget goes to the prior: guided-sampling quality is prior-limited
# at this scale, and the guidance ablations only separate once the prior
# is strong enough to matter.
BUDGET = {
    "scale": 4,
    "dims": (32, 32),
    "train_pairs": 500,
    "eval_pairs": 20,
    "train_seed": 100,
    "eval_seed": 200,
    "eps_steps": 12000,
    "eps_batch": 8,
    "eps_widths": (32, 64),
    "eps_seed": 0,
    "daware_steps": 10000,
    "daware_batch": 4,
    "daware_seed": 1,
    "kernel_steps": 1500,
    "kernel_batch": 16,
    "kernel_seed": 2,
    "eval_grid_seed": 7,
    "eval_steps": 100,
}

_ACCEPT_LINES: list[str] = []


def record_criterion(line: str) -> None:
    _ACCEPT_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPT_LINES:
            terminalreporter.line(line)


def _digest() -> str:
    h = hashlib.sha256()
    for path in sorted(_SRC.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    h.update(repr(sorted(BUDGET.items())).encode())
    return h.hexdigest()[:16]


def _train_all(cache: Path) -> dict:
    from guidedsr.daware import save_daware, train_daware
    from guidedsr.degradation import synth_dataset
    from guidedsr.diffusion import build_schedule, save_diffusion, train_eps_model
    from guidedsr.guidance import save_kernel_net, train_kernel_estimator

    b = BUDGET
    timing = {}
    train = synth_dataset(b["train_seed"], b["train_pairs"], b["scale"], dims=b["dims"])

    t = time.perf_counter()
    schedule = build_schedule()
    eps_model, eps_hist = train_eps_model(
        train.hr, schedule,
        steps=b["eps_steps"], batch_size=b["eps_batch"],
        seed=b["eps_seed"], widths=b["eps_widths"],
    )
    timing["eps_s"] = time.perf_counter() - t

    t = time.perf_counter()
    daware, daware_hist = train_daware(
        train,
        steps=b["daware_steps"], batch_size=b["daware_batch"], seed=b["daware_seed"],
    )
    timing["daware_s"] = time.perf_counter() - t

    t = time.perf_counter()
    kernel_net, kernel_hist = train_kernel_estimator(
        train,
        steps=b["kernel_steps"], batch_size=b["kernel_batch"], seed=b["kernel_seed"],
    )
    timing["kernel_s"] = time.perf_counter() - t

    cache.mkdir(parents=True, exist_ok=True)
    save_diffusion(cache / "prior.dgta", eps_model, schedule, b["dims"])
    save_daware(cache / "daware.dgta", daware)
    save_kernel_net(cache / "kernel.dgta", kernel_net)
    hist = {
        "eps_loss": eps_hist["loss"].tolist(),
        "daware_total": daware_hist["total"].tolist(),
        "daware_degrade": daware_hist["degrade"].tolist(),
        "daware_restore": daware_hist["restore"].tolist(),
        "daware_cycle": daware_hist["cycle"].tolist(),
        "kernel_loss": kernel_hist["loss"].tolist(),
    }
    (cache / "history.json").write_text(json.dumps(hist))
    (cache / "timing.json").write_text(json.dumps(timing))
    return timing


@pytest.fixture(scope="session")
def trained_artifacts():
    """Full-scale models plus train/held-out datasets and wall times."""
    from guidedsr.daware import load_daware
    from guidedsr.degradation import synth_dataset
    from guidedsr.diffusion import load_diffusion
    from guidedsr.guidance import load_kernel_net

    b = BUDGET
    cache = _CACHE_ROOT / _digest()
    if not (cache / "timing.json").exists():
        _train_all(cache)
    timing = json.loads((cache / "timing.json").read_text())
    hist = json.loads((cache / "history.json").read_text())
    eps_model, schedule, _meta = load_diffusion(cache / "prior.dgta")
    return SimpleNamespace(
        budget=b,
        train=synth_dataset(b["train_seed"], b["train_pairs"], b["scale"], dims=b["dims"]),
        test=synth_dataset(b["eval_seed"], b["eval_pairs"], b["scale"], dims=b["dims"]),
        eps_model=eps_model,
        schedule=schedule,
        daware=load_daware(cache / "daware.dgta"),
        kernel_net=load_kernel_net(cache / "kernel.dgta"),
        history=hist,
        timing=timing,
        cache=cache,
    )


# the ablation grid shared by the ordering criteria; implicit alpha
# sweep and perturbation cells overlap so each row set is computed once
GRID_CELLS = (
    ("implicit", 0.1, 1),
    ("implicit", 0.3, 1),
    ("implicit", 0.5, 1),
    ("implicit", 1.0, 1),
    ("implicit", 0.3, 0),
    ("implicit", 1.0, 0),
    ("combine", 0.3, 1),
    ("explicit", 1.0, 1),
)


@pytest.fixture(scope="session")
def ablation_rows(trained_artifacts):
    """Rows for the full evaluation grid over the held-out set, cached
    alongside the models; returns (rows, eval_wall_seconds)."""
    from guidedsr.experiment import run_experiment
    from guidedsr.report import load_json, write_json

    art = trained_artifacts
    cache_file = art.cache / "grid_rows.json"
    timing_file = art.cache / "timing.json"
    if cache_file.exists():
        rows, _aggregates = load_json(cache_file)
        eval_s = json.loads(timing_file.read_text())["eval_s"]
        return rows, eval_s
    t = time.perf_counter()
    rows = run_experiment(
        art.test.hr, art.test.lr, art.eps_model, art.schedule,
        cells=GRID_CELLS,
        seed=art.budget["eval_grid_seed"],
        steps=art.budget["eval_steps"],
        daware_models=art.daware,
        kernel_net=art.kernel_net,
        scale=art.budget["scale"],
    )
    eval_s = time.perf_counter() - t
    write_json(cache_file, rows)
    timing = json.loads(timing_file.read_text())
    timing["eval_s"] = eval_s
    timing_file.write_text(json.dumps(timing))
    return rows, eval_s
