"""Command-line behavior: config/flag precedence, mandatory seeds,
artifact round trips, and report emission."""

import subprocess
import sys

import numpy as np
import pytest

from guidedsr.cli import main
from guidedsr.degradation import load_dataset
from guidedsr.pnm import load_pnm, save_pgm
from guidedsr.report import CSV_HEADER, read_csv


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """Tiny end-to-end artifact set built through the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data.dgta")
    prior = str(root / "prior.dgta")
    daware = str(root / "daware.dgta")
    kernel = str(root / "kernel.dgta")
    assert main(["synth", "--out", data, "--seed", "0", "--count", "6",
                 "--scale", "2", "--dims", "16x16", "--quiet"]) == 0
    assert main(["train-diffusion", "--data", data, "--out", prior, "--seed", "1",
                 "--steps", "25", "--batch-size", "4", "--widths", "4,8",
                 "--temb-dim", "8", "--timesteps", "40", "--quiet"]) == 0
    assert main(["train-daware", "--data", data, "--out", daware, "--seed", "2",
                 "--steps", "20", "--batch-size", "4", "--quiet"]) == 0
    assert main(["train-kernel", "--data", data, "--out", kernel, "--seed", "3",
                 "--steps", "15", "--batch-size", "4", "--width", "4", "--quiet"]) == 0
    lr0 = str(root / "lr0.pgm")
    save_pgm(lr0, load_dataset(data).lr[0])
    return {"root": root, "data": data, "prior": prior, "daware": daware,
            "kernel": kernel, "lr0": lr0}


def test_synth_writes_loadable_dataset(artifacts):
    ds = load_dataset(artifacts["data"])
    assert len(ds) == 6 and ds.scale == 2
    assert ds.hr.shape == (6, 1, 16, 16) and ds.lr.shape == (6, 1, 8, 8)


def test_synth_deterministic_bytes(tmp_path):
    a, b = str(tmp_path / "a.dgta"), str(tmp_path / "b.dgta")
    for path in (a, b):
        assert main(["synth", "--out", path, "--seed", "5", "--count", "3",
                     "--scale", "2", "--dims", "16x16", "--quiet"]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_missing_seed_is_fatal(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path / "x.dgta"), "--count", "2", "--quiet"])
    assert code == 2
    assert "seed" in capsys.readouterr().err


def test_flag_overrides_config_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed=4\ncount=5\nscale=2\ndims=16x16\n# comment\n")
    out = str(tmp_path / "ds.dgta")
    assert main(["synth", "--out", out, "--config", str(cfg),
                 "--count", "2", "--quiet"]) == 0
    assert len(load_dataset(out)) == 2  # flag beat the config's 5


def test_config_only_invocation(tmp_path):
    out = str(tmp_path / "ds.dgta")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"seed=4\ncount=3\nscale=2\ndims=16x16\nout={out}\nquiet=yes\n")
    assert main(["synth", "--config", str(cfg)]) == 0
    assert len(load_dataset(out)) == 3


def test_sample_all_modes_write_images(artifacts, tmp_path):
    for mode, extra in (
        ("implicit", ["--daware", artifacts["daware"]]),
        ("ddnm", ["--scale", "2"]),
        ("explicit", ["--kernel", artifacts["kernel"], "--scale", "2"]),
        ("combine", ["--daware", artifacts["daware"], "--kernel", artifacts["kernel"]]),
    ):
        out = str(tmp_path / f"{mode}.pgm")
        code = main(["sample", "--input", artifacts["lr0"], "--output", out,
                     "--prior", artifacts["prior"], "--mode", mode,
                     "--perturb", "0", "--seed", "7", "--steps", "5", "--quiet"] + extra)
        assert code == 0, mode
        img = load_pnm(out)
        assert img.shape == (1, 16, 16)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_sample_determinism(artifacts, tmp_path):
    outs = []
    for name in ("a.pgm", "b.pgm"):
        out = str(tmp_path / name)
        assert main(["sample", "--input", artifacts["lr0"], "--output", out,
                     "--prior", artifacts["prior"], "--daware", artifacts["daware"],
                     "--seed", "11", "--steps", "5", "--quiet"]) == 0
        outs.append(open(out, "rb").read())
    assert outs[0] == outs[1]


def test_sample_error_paths(artifacts, tmp_path, capsys):
    out = str(tmp_path / "x.pgm")
    base = ["sample", "--input", artifacts["lr0"], "--output", out,
            "--prior", artifacts["prior"], "--quiet"]
    # ddnm without any scale source
    assert main(base + ["--mode", "ddnm", "--perturb", "0", "--seed", "1"]) == 2
    assert "scale" in capsys.readouterr().err
    # implicit without daware models
    assert main(base + ["--mode", "implicit", "--perturb", "0", "--seed", "1",
                        "--scale", "2"]) == 2
    # missing checkpoint file
    assert main(["sample", "--input", artifacts["lr0"], "--output", out,
                 "--prior", str(tmp_path / "nope.dgta"), "--seed", "1", "--quiet"]) == 2
    # bad mode string
    assert main(base + ["--mode", "wild", "--seed", "1"]) == 2


def test_evaluate_writes_reports_and_images(artifacts, tmp_path):
    csv_path = str(tmp_path / "r.csv")
    json_path = str(tmp_path / "r.json")
    img_dir = tmp_path / "imgs"
    code = main(["evaluate", "--data", artifacts["data"], "--prior", artifacts["prior"],
                 "--daware", artifacts["daware"], "--count", "2",
                 "--cells", "implicit:0.3:1,ddnm:1.0:0",
                 "--seed", "9", "--steps", "4", "--out-csv", csv_path,
                 "--out-json", json_path, "--out-dir", str(img_dir), "--quiet"])
    assert code == 0
    text = open(csv_path).read()
    assert text.splitlines()[0] == CSV_HEADER
    rows = read_csv(csv_path)
    assert len(rows) == 4  # 2 cells x 2 images
    names = sorted(p.name for p in img_dir.iterdir())
    assert names == [
        "ddnm_a1.0_p0_000.pgm", "ddnm_a1.0_p0_001.pgm",
        "implicit_a0.3_p1_000.pgm", "implicit_a0.3_p1_001.pgm",
    ]
    from guidedsr.report import load_json

    json_rows, _aggregates = load_json(json_path)
    assert len(json_rows) == 4


def test_evaluate_rerun_identical_modulo_ms(artifacts, tmp_path):
    texts = []
    for name in ("1.csv", "2.csv"):
        path = str(tmp_path / name)
        assert main(["evaluate", "--data", artifacts["data"], "--prior", artifacts["prior"],
                     "--daware", artifacts["daware"], "--count", "2",
                     "--cells", "implicit:0.3:1", "--seed", "3", "--steps", "4",
                     "--out-csv", path, "--out-json", str(tmp_path / (name + ".json")),
                     "--quiet"]) == 0
        lines = open(path).read().splitlines()
        texts.append([line.rsplit(",", 1)[0] for line in lines])  # drop wall-time ms
    assert texts[0] == texts[1]


def test_evaluate_count_bounds(artifacts, tmp_path, capsys):
    code = main(["evaluate", "--data", artifacts["data"], "--prior", artifacts["prior"],
                 "--daware", artifacts["daware"], "--count", "99", "--seed", "1",
                 "--out-csv", str(tmp_path / "r.csv"), "--quiet"])
    assert code == 2
    assert "count" in capsys.readouterr().err


def test_selftest_subcommand_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "guidedsr.cli", "selftest"],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    assert "checks passed" in proc.stdout
