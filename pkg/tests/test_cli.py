import json
import os
from pathlib import Path

import numpy as np
import pytest

from edgeflow.cli import main, read_run_config, ConfigError
from edgeflow.floio import read_flo, write_flo
from edgeflow.synth import load_dataset


def run(argv):
    return main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def micro_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "micro.cfg"
    path.write_text(
        "# micro instance\n"
        "height = 8\n"
        "width = 8\n"
        "channels = 2,3,4\n"
        "lidar_width = 6\n"
        "lr = 2e-3\n"
        "batch_size = 2\n",
        encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory, micro_cfg):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert run(["gen", "--out", out, "--n", "4", "--seed", "7",
                "--points", "16", "--config", micro_cfg]) == 0
    return out


# ---------------------------------------------------------------------------
# config file

def test_run_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("lr = 1e-3\nnot_a_key = 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="bad.cfg:2"):
        read_run_config(p)


def test_run_config_parses_values(tmp_path):
    p = tmp_path / "ok.cfg"
    p.write_text("lambda_align = 0.2  # alias\nmilestones = 10,20\nchannels=4,6,8\n",
                 encoding="utf-8")
    out = read_run_config(p)
    assert out["model"]["w_align"] == 0.2
    assert out["train"]["milestones"] == (10, 20)
    assert out["model"]["channels"] == (4, 6, 8)


def test_unknown_flag_exits_2(capsys):
    assert run(["gen", "--nope", "x"]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_variant_exits_2(tmp_path, dataset):
    code = run(["train", "--data", dataset, "--out", tmp_path / "m.ckpt",
                "--variant", "bogus"])
    assert code == 2


def test_unknown_degradation_exits_2(tmp_path):
    assert run(["gen", "--out", tmp_path / "d", "--n", "1", "--seed", "1",
                "--degrade", "fog:9"]) == 2


# ---------------------------------------------------------------------------
# gen

def test_gen_writes_layout(dataset):
    names = {p.name for p in (dataset / "sample_00000").iterdir()}
    assert names == {"img0.pgm", "img1.pgm", "events.csv", "points0.csv",
                     "points1.csv", "flow2d_gt.flo", "flow3d_gt.csv",
                     "manifest.json"}
    index = json.loads((dataset / "index.json").read_text())
    assert len(index["samples"]) == 4


def test_gen_deterministic_bytes(tmp_path, micro_cfg):
    for name in ("a", "b"):
        assert run(["gen", "--out", tmp_path / name, "--n", "2", "--seed", "3",
                    "--points", "16", "--config", micro_cfg]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_gen_degrade_recorded(tmp_path, micro_cfg):
    out = tmp_path / "deg"
    assert run(["gen", "--out", out, "--n", "1", "--seed", "5", "--points", "16",
                "--degrade", "sparse-lidar:2", "--config", micro_cfg]) == 0
    sample = load_dataset(out)[0]
    assert sample.manifest["degradations"] == [{"kind": "sparse-lidar", "severity": 2}]
    assert sample.points0.shape[0] == 4  # keep ratio 0.25 of 16


# ---------------------------------------------------------------------------
# pretrain / train / eval pipeline on the micro instance

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, dataset, micro_cfg):
    work = tmp_path_factory.mktemp("pipe")
    edge = work / "edge.ckpt"
    model = work / "model.ckpt"
    assert run(["pretrain", "--data", dataset, "--out", edge, "--epochs", "2",
                "--seed", "1", "--config", micro_cfg]) == 0
    assert run(["train", "--data", dataset, "--edge-ckpt", edge, "--out", model,
                "--variant", "full", "--epochs", "2", "--seed", "1",
                "--config", micro_cfg]) == 0
    return work, edge, model


def test_pretrain_writes_log(pipeline):
    work, edge, _ = pipeline
    log = [json.loads(line) for line in
           (Path(str(edge) + ".metrics.ndjson")).read_text().splitlines()]
    assert len(log) == 2
    assert {"epoch", "loss", "lr"} <= set(log[0])


def test_train_log_has_components(pipeline):
    _, _, model = pipeline
    log = [json.loads(line) for line in
           Path(str(model) + ".metrics.ndjson").read_text().splitlines()]
    assert {"epoch", "step", "loss", "task", "align", "contra", "lr"} <= set(log[0])


def test_eval_report_schema(pipeline, dataset, tmp_path):
    _, _, model = pipeline
    report_path = tmp_path / "report.json"
    assert run(["eval", "--data", dataset, "--ckpt", model,
                "--report", report_path]) == 0
    report = json.loads(report_path.read_text())
    for key in ("epe2d", "acc1px", "fl", "epe3d", "acc05", "acc10",
                "samples", "breakdown"):
        assert key in report
    assert report["samples"] == 4
    assert 0.0 <= report["acc1px"] <= 1.0


def test_eval_jobs_matches_serial(pipeline, dataset, tmp_path):
    _, _, model = pipeline
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["eval", "--data", dataset, "--ckpt", model, "--report", a]) == 0
    assert run(["eval", "--data", dataset, "--ckpt", model, "--report", b,
                "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_pretrain_train_deterministic(tmp_path, dataset, micro_cfg):
    outs = []
    for name in ("x", "y"):
        edge = tmp_path / f"edge_{name}.ckpt"
        model = tmp_path / f"model_{name}.ckpt"
        assert run(["pretrain", "--data", dataset, "--out", edge, "--epochs", "2",
                    "--seed", "9", "--config", micro_cfg]) == 0
        assert run(["train", "--data", dataset, "--edge-ckpt", edge, "--out", model,
                    "--variant", "joint", "--epochs", "1", "--seed", "9",
                    "--config", micro_cfg]) == 0
        outs.append((edge.read_bytes(), model.read_bytes(),
                     Path(str(model) + ".metrics.ndjson").read_bytes()))
    assert outs[0] == outs[1]


def test_train_indep_and_eval(tmp_path, dataset, micro_cfg, pipeline):
    _, edge, _ = pipeline
    model = tmp_path / "indep.ckpt"
    assert run(["train", "--data", dataset, "--edge-ckpt", edge, "--out", model,
                "--variant", "indep", "--epochs", "1", "--seed", "2",
                "--config", micro_cfg]) == 0
    report = tmp_path / "rep.json"
    assert run(["eval", "--data", dataset, "--ckpt", model, "--report", report]) == 0
    assert json.loads(report.read_text())["variant"] == "indep"


# ---------------------------------------------------------------------------
# ablate

def test_ablate_grid_schema(tmp_path, dataset, micro_cfg):
    report = tmp_path / "ablate.json"
    assert run(["ablate", "--data", dataset, "--variants", "joint,no-edge",
                "--seeds", "1,2", "--report", report, "--epochs", "1",
                "--pretrain-epochs", "1", "--config", micro_cfg]) == 0
    records = json.loads(report.read_text())
    assert len(records) == 4
    combos = {(r["variant"], r["seed"]) for r in records}
    assert combos == {("joint", 1), ("joint", 2), ("no-edge", 1), ("no-edge", 2)}
    for rec in records:
        assert set(rec["metrics"]) == {"epe2d", "acc1px", "fl", "epe3d",
                                       "acc05", "acc10"}


# ---------------------------------------------------------------------------
# viz

def test_viz_flow_ppm(tmp_path):
    flo = tmp_path / "f.flo"
    flow = np.zeros((2, 4, 4))
    flow[0, 1, 2] = 2.0
    write_flo(flo, flow)
    out = tmp_path / "f.ppm"
    assert run(["viz", "--flo", flo, "--out", out]) == 0
    blob = out.read_bytes()
    assert blob.startswith(b"P6\n4 4\n255\n")


def test_viz_missing_file_exits_2(tmp_path):
    assert run(["viz", "--flo", tmp_path / "missing.flo",
                "--out", tmp_path / "o.ppm"]) == 2


def test_flo_roundtrip_via_cli_gen(dataset):
    flow = read_flo(dataset / "sample_00001" / "flow2d_gt.flo")
    assert flow.shape == (2, 8, 8)
