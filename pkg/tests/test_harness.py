import json
import os
import subprocess
import sys

import numpy as np
import pytest

from beamsel.harness import (
    ConfigError,
    PipelineError,
    from_dict,
    load_config,
    run_betasearch,
    run_eval,
    run_gen,
    run_report,
    run_train,
)
from beamsel.harness.cli import main as cli_main


SMALL = {
    "splits": {"n_train": 90, "n_val": 30, "n_test": 24},
    "train": {"epochs": 2},
    "eval": {"scenarios": ["clear", "blind"]},
}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    cfg = from_dict(SMALL)
    run_gen(cfg, out)
    run_train(cfg, out)
    run_betasearch(cfg, out)
    for scenario in cfg.scenarios:
        run_eval(cfg, out, scenario)
    return cfg, out


# -------------------------------------------------------------------- config

def test_defaults_and_unknown_keys():
    cfg = from_dict({})
    assert cfg.num_beams == 32
    assert cfg.kb_clusters == 32      # 0 -> num_beams
    with pytest.raises(ConfigError, match="unknown key: codebok"):
        from_dict({"codebok": {}})
    with pytest.raises(ConfigError, match="unknown key: train.lr"):
        from_dict({"train": {"lr": 0.1}})


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        from_dict({"splits": {"n_train": 0}})
    with pytest.raises(ConfigError):
        from_dict({"eval": {"scenarios": ["nope"]}})
    with pytest.raises(ConfigError):
        from_dict({"eval": {"t_max_ms": 0.0}})
    with pytest.raises(ConfigError):
        from_dict({"corruption": {"x": {"bogus": 1.0}}})


def test_custom_corruption_profile():
    cfg = from_dict({"corruption": {"mist": {"detection_drop_prob": 0.2}},
                     "eval": {"scenarios": ["mist"]}})
    assert cfg.profiles["mist"].detection_drop_prob == 0.2
    assert cfg.profiles["mist"].mask_flip_prob == 0.0


def test_config_hash_changes_with_content():
    a = from_dict({})
    b = from_dict({"seeds": {"master": 2}})
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == from_dict({}).config_hash()


def test_shipped_config_parses():
    path = os.path.join(os.path.dirname(__file__), "..", "configs", "desk.toml")
    cfg = load_config(path)
    # the shipped file spells out the defaults
    assert cfg.config_hash() == from_dict({}).config_hash()


def test_seed_override():
    path = os.path.join(os.path.dirname(__file__), "..", "configs", "desk.toml")
    cfg = load_config(path, seed_override=7)
    assert cfg.master_seed == 7


# ------------------------------------------------------------------ pipeline

def test_gen_writes_split_manifests(small_run):
    cfg, out = small_run
    for split, n in (("train", 90), ("val", 30), ("test", 24)):
        manifest = os.path.join(out, "dataset", split, "manifest.csv")
        with open(manifest) as fh:
            assert len(fh.readlines()) == n + 1


def test_gen_deterministic(tmp_path):
    cfg = from_dict({"splits": {"n_train": 8, "n_val": 2, "n_test": 2}})
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    run_gen(cfg, a)
    run_gen(cfg, b)
    for split in ("train", "val", "test"):
        pa = os.path.join(a, "dataset", split, "manifest.csv")
        pb = os.path.join(b, "dataset", split, "manifest.csv")
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_train_artifacts_exist(small_run):
    cfg, out = small_run
    for name in ("kb.json", "lenet.ckpt", "baseline1.ckpt", "transformer.ckpt"):
        assert os.path.exists(os.path.join(out, name))
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["config_hash"] == cfg.config_hash()
    assert "train" in manifest["wall_clock_s"]


def test_train_requires_dataset(tmp_path):
    cfg = from_dict(SMALL)
    with pytest.raises(PipelineError):
        run_train(cfg, str(tmp_path / "empty"))


def test_betas_per_scenario(small_run):
    cfg, out = small_run
    betas = json.load(open(os.path.join(out, "betas.json")))
    assert set(betas) == {"clear", "blind"}
    for entry in betas.values():
        assert 0.01 <= entry["beta1"] <= 1.0
        assert 0.01 <= entry["beta2"] <= 1.0
    assert os.path.exists(os.path.join(out, "surfaces", "clear.csv"))


def test_eval_report_schema(small_run):
    cfg, out = small_run
    report = json.load(open(os.path.join(out, "reports", "clear.json")))
    assert set(report["methods"]) == {"hybrid", "semantic", "transformer", "baseline1"}
    for block in report["methods"].values():
        assert set(block["topk"]) == {"1", "2", "3", "5"}
        assert "ace" in block and "power_loss_db" in block
        assert "excluded_records" in block
    assert report["frames"] == 24
    assert "latency" not in json.load(open(os.path.join(out, "reports", "clear.json")))


def test_latency_reported_in_manifest(small_run):
    cfg, out = small_run
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    for scenario in cfg.scenarios:
        block = manifest["latency"][scenario]
        assert block["median_ms"] > 0
        assert block["violations"] == len(block["violating_frames"])
        assert block["t_max_ms"] == cfg.t_max_ms


def test_eval_unknown_scenario(small_run):
    cfg, out = small_run
    with pytest.raises(PipelineError):
        run_eval(cfg, out, "fog")    # valid preset, not in this config's list


def test_blind_hybrid_inherits_transformer(small_run):
    cfg, out = small_run
    report = json.load(open(os.path.join(out, "reports", "blind.json")))
    betas = report["betas"]
    if betas["beta1"] >= betas["beta2"]:
        assert report["methods"]["hybrid"]["topk"] == report["methods"]["transformer"]["topk"]
    assert report["semantic_no_detection"] == report["frames"]


def test_report_merges_and_sorts(small_run, tmp_path):
    cfg, out = small_run
    merged = str(tmp_path / "merged.csv")
    rows = run_report([out], merged)
    lines = open(merged).read().strip().split("\n")
    assert lines[0] == "scenario,method,metric,value"
    assert len(lines) == rows + 1
    body = lines[1:]
    assert body == sorted(body)


def test_report_conflicting_hashes(tmp_path):
    for i, master in enumerate((1, 2)):
        out = str(tmp_path / f"r{i}")
        os.makedirs(os.path.join(out, "reports"))
        doc = {"scenario": "clear", "config_hash": f"hash{master}",
               "methods": {"hybrid": {"topk": {"1": 50.0}, "ace": 1.0,
                                      "power_loss_db": 0.0, "excluded_records": 0}}}
        json.dump(doc, open(os.path.join(out, "reports", "clear.json"), "w"))
    with pytest.raises(PipelineError, match="conflicting config hashes"):
        run_report([str(tmp_path / "r0"), str(tmp_path / "r1")], str(tmp_path / "m.csv"))


def test_out_dir_rejects_other_config(small_run):
    _, out = small_run
    other = from_dict({"splits": {"n_train": 91, "n_val": 30, "n_test": 24},
                       "train": {"epochs": 2},
                       "eval": {"scenarios": ["clear", "blind"]}})
    with pytest.raises(PipelineError, match="different config"):
        run_gen(other, out)


# ----------------------------------------------------------------------- cli

def write_config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        "[splits]\nn_train = 40\nn_val = 12\nn_test = 8\n"
        "[train]\nepochs = 1\n"
        '[eval]\nscenarios = ["clear"]\n'
    )
    return str(path)


def test_cli_full_cycle(tmp_path, capsys):
    config = write_config(tmp_path)
    out = str(tmp_path / "run")
    for argv in (
        ["gen", "--config", config, "--out", out],
        ["train", "--config", config, "--out", out],
        ["betasearch", "--config", config, "--out", out],
        ["eval", "--config", config, "--out", out, "--scenario", "clear"],
        ["report", out, "--out", str(tmp_path / "merged.csv")],
    ):
        assert cli_main(argv) == 0, argv
    assert os.path.exists(tmp_path / "merged.csv")


def test_cli_error_json(tmp_path, capsys):
    config = write_config(tmp_path)
    code = cli_main(["train", "--config", config, "--out", str(tmp_path / "nothing")])
    assert code == 1
    err = capsys.readouterr().err
    doc = json.loads(err)
    assert doc["error"] == "PipelineError"


def test_cli_entrypoint_subprocess(tmp_path):
    config = write_config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "beamsel.harness.cli", "gen",
         "--config", config, "--out", str(tmp_path / "sp")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr


def test_cli_seed_flag(tmp_path):
    config = write_config(tmp_path)
    out1, out2 = str(tmp_path / "s1"), str(tmp_path / "s2")
    assert cli_main(["gen", "--config", config, "--out", out1, "--seed", "5"]) == 0
    assert cli_main(["gen", "--config", config, "--out", out2, "--seed", "6"]) == 0
    a = open(os.path.join(out1, "dataset", "train", "manifest.csv"), "rb").read()
    b = open(os.path.join(out2, "dataset", "train", "manifest.csv"), "rb").read()
    assert a != b
