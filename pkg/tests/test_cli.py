import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from arborabc.cli import main
from arborabc.morphometrics import read_qoi_csv


def run_cli(*argv):
    return main(list(argv))


def dir_bytes(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


def test_simulate_writes_files_and_is_deterministic(tmp_path):
    cfg = {"simulate": {"model": "model2", "n_neurons": 3}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert run_cli("simulate", "--config", str(cfg_path), "--seed", "7",
                   "--out", str(out1), "--workers", "1") == 0
    assert run_cli("simulate", "--config", str(cfg_path), "--seed", "7",
                   "--out", str(out2), "--workers", "1") == 0
    swc = sorted(out1.glob("neuron_*.swc"))
    assert len(swc) == 3
    assert (out1 / "qoi.csv").exists()
    assert (out1 / "qoi_summary.csv").exists()
    assert (out1 / "manifest.json").exists()
    assert (out1 / "resolved_config.json").exists()
    b1, b2 = dir_bytes(out1), dir_bytes(out2)
    b1.pop("resolved_config.json"); b2.pop("resolved_config.json")
    assert b1 == b2  # byte-identical outputs


def test_morphometrics_pipeline_matches_simulator(tmp_path):
    cfg = {"simulate": {"model": "model2", "n_neurons": 4, "type_code": 4}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    sim_out = tmp_path / "sim"
    assert run_cli("simulate", "--config", str(cfg_path), "--seed", "3",
                   "--out", str(sim_out), "--workers", "1") == 0
    morph_out = tmp_path / "morph"
    assert run_cli("morphometrics", str(sim_out), "--out", str(morph_out),
                   "--workers", "1") == 0
    a, ha = read_qoi_csv(sim_out / "qoi.csv")
    b, hb = read_qoi_csv(morph_out / "qoi.csv")
    assert ha == hb
    assert a.shape == b.shape
    # SWC round trip quantizes coordinates at 1e-4
    assert np.allclose(a[:, 0], b[:, 0])
    assert np.allclose(a, b, rtol=1e-3, atol=1e-2)


def test_morphometrics_subtree_selection(tmp_path):
    sim_out = tmp_path / "sim"
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"simulate": {"model": "model2",
                                                 "n_neurons": 2,
                                                 "type_code": 4}}))
    run_cli("simulate", "--config", str(cfg_path), "--seed", "4",
            "--out", str(sim_out), "--workers", "1")
    full_out = tmp_path / "full"
    apical_out = tmp_path / "apical"
    assert run_cli("morphometrics", str(sim_out), "--out", str(full_out),
                   "--workers", "1") == 0
    assert run_cli("morphometrics", str(sim_out), "--out", str(apical_out),
                   "--subtree-codes", "4", "--workers", "1") == 0
    a, _ = read_qoi_csv(full_out / "qoi.csv")
    b, _ = read_qoi_csv(apical_out / "qoi.csv")
    assert (b[:, 0] <= a[:, 0]).all()
    # selecting an absent code fails every file -> validation exit code
    bad_out = tmp_path / "bad"
    assert run_cli("morphometrics", str(sim_out), "--out", str(bad_out),
                   "--subtree-codes", "7", "--workers", "1") == 1


def test_morphometrics_corrupt_file_among_good(tmp_path):
    sim_out = tmp_path / "sim"
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"simulate": {"model": "model1",
                                                 "n_neurons": 2}}))
    run_cli("simulate", "--config", str(cfg_path), "--seed", "5",
            "--out", str(sim_out), "--workers", "1")
    (sim_out / "broken.swc").write_text("1 1 0 0 0 5 -1\n2 3 0 0 x 1 1\n")
    out = tmp_path / "m"
    assert run_cli("morphometrics", str(sim_out), "--out", str(out),
                   "--workers", "1") == 0
    rows, _ = read_qoi_csv(out / "qoi.csv")
    assert len(rows) == 2
    report = (out / "validation_report.txt").read_text()
    assert "broken.swc" in report and "non-numeric" in report


def test_unknown_config_keys_rejected(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"simulate": {"n_neurons": 1,
                                                 "bogus_knob": 3}}))
    assert run_cli("simulate", "--config", str(cfg_path),
                   "--out", str(tmp_path / "o"), "--workers", "1") == 1


def test_pair_command(tmp_path):
    from arborabc.morphometrics import write_qoi_csv

    g = np.random.default_rng(0)
    data = g.normal(size=(3, 2)) + 5
    sim = g.normal(size=(5, 2)) + 5
    write_qoi_csv(tmp_path / "data.csv", data, ("M1", "M2"))
    write_qoi_csv(tmp_path / "sim.csv", sim, ("M1", "M2"))
    out = tmp_path / "pairs"
    assert run_cli("pair", "--data", str(tmp_path / "data.csv"),
                   "--sim", str(tmp_path / "sim.csv"), "--out", str(out),
                   "--workers", "1") == 0
    lines = (out / "pairs.csv").read_text().strip().splitlines()
    assert len(lines) == 4  # header + 3 rows
    # identical inputs pair each row with itself at distance zero
    out2 = tmp_path / "pairs2"
    assert run_cli("pair", "--data", str(tmp_path / "data.csv"),
                   "--sim", str(tmp_path / "data.csv"), "--out", str(out2),
                   "--workers", "1") == 0
    rows = [l.split(",") for l in
            (out2 / "pairs.csv").read_text().strip().splitlines()[1:]]
    assert all(int(r[0]) == int(r[1]) and float(r[2]) < 1e-9 for r in rows)


def test_pair_header_mismatch(tmp_path):
    from arborabc.morphometrics import write_qoi_csv

    write_qoi_csv(tmp_path / "a.csv", np.ones((2, 2)) + np.arange(2), ("M1", "M2"))
    write_qoi_csv(tmp_path / "b.csv", np.ones((2, 2)) + np.arange(2), ("M1", "M3"))
    assert run_cli("pair", "--data", str(tmp_path / "a.csv"),
                   "--sim", str(tmp_path / "b.csv"),
                   "--out", str(tmp_path / "o"), "--workers", "1") == 1


def test_sensitivity_ishigami_smoke(tmp_path):
    out = tmp_path / "sa"
    assert run_cli("sensitivity", "--target", "ishigami", "--n-base", "2",
                   "--m-prime", "1", "--out", str(out), "--seed", "1",
                   "--workers", "1") == 0
    assert (out / "sobol_indices.csv").exists()
    raw = (out / "raw_expectations.csv").read_text().strip().splitlines()
    assert len(raw) == 1 + 2 * (2 * 3 + 2)  # header + N(2D+2) rows


def test_sensitivity_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run_cli("sensitivity", "--target", "ishigami", "--n-base", "4",
                       "--m-prime", "1", "--out", str(out), "--seed", "9",
                       "--workers", "1") == 0
        outs.append(dir_bytes(out))
        outs[-1].pop("resolved_config.json")
    assert outs[0] == outs[1]


def test_calibrate_toy_and_resume(tmp_path):
    from arborabc import ToyGaussianModel
    from arborabc.morphometrics import write_qoi_csv

    model = ToyGaussianModel(dim=2)
    data = model.dataset_centered_at([1.0, -0.5], 80, seed=3)
    write_qoi_csv(tmp_path / "obs.csv", data, ("y1", "y2"))
    cfg = {
        "calibrate": {
            "toy": {"dim": 2},
            "observed": str(tmp_path / "obs.csv"),
            "prior": {"names": ["mu1", "mu2"], "lo": [-5, -5], "hi": [5, 5]},
            "smc": {"n_particles": 16, "m_prime": 10, "budget": 10_000,
                    "max_iterations": 4},
            "predictive_m_prime": 5,
        }
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out1 = tmp_path / "cal1"
    rc = run_cli("calibrate", "--config", str(cfg_path), "--seed", "2",
                 "--out", str(out1), "--workers", "1")
    assert rc == 3  # stopped on max_iterations -> partial, resumable
    assert (out1 / "trace.jsonl").exists()
    assert (out1 / "particles.csv").exists()
    assert (out1 / "kde_mu1.csv").exists()
    assert (out1 / "predictive_summary.csv").exists()
    n_lines_1 = len((out1 / "trace.jsonl").read_text().splitlines())
    assert n_lines_1 == 5  # init + 4 iterations

    # interrupted run + resume == uninterrupted run
    cfg["calibrate"]["smc"]["max_iterations"] = 2
    cfg_path.write_text(json.dumps(cfg))
    out2 = tmp_path / "cal2"
    assert run_cli("calibrate", "--config", str(cfg_path), "--seed", "2",
                   "--out", str(out2), "--workers", "1") == 3
    cfg["calibrate"]["smc"]["max_iterations"] = 4
    cfg["calibrate"]["resume"] = True
    cfg_path.write_text(json.dumps(cfg))
    assert run_cli("calibrate", "--config", str(cfg_path), "--seed", "2",
                   "--out", str(out2), "--workers", "1") == 3
    assert (out1 / "trace.jsonl").read_text() == (out2 / "trace.jsonl").read_text()
    assert (out1 / "particles.csv").read_text() == (out2 / "particles.csv").read_text()


def test_wasserstein_study_smoke(tmp_path):
    cfg = {"wasserstein_study": {"dims": [1, 2], "sizes": [[20, 20], [40, 40]],
                                 "n_reps": 5}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "ws"
    assert run_cli("wasserstein-study", "--config", str(cfg_path),
                   "--out", str(out), "--seed", "3", "--workers", "1") == 0
    lines = (out / "wasserstein_error.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 2 * 2 * 5
    summary = (out / "wasserstein_error_summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 4
