#!/usr/bin/env python3
"""
Command-line tests: the synth -> train -> infer -> eval pipeline, the
diagnostic commands and the exit-code contract. Runs in temporary
directories with a tiny configuration.
"""

import atexit
import json
import os
import shutil
import tempfile

import click
from click.testing import CliRunner

from app import cli
from src.config import Config, RunConfig
from src.decorators.cli_errors import handle_cli_errors
from src.exceptions import ConfigError

TINY = {
    ("sinusoid", "d"): 8,
    ("decoder", "d_model"): 16,
    ("decoder", "n_heads"): 2,
    ("decoder", "n_layers"): 1,
    ("decoder", "ffn_hidden"): 32,
    ("decoder", "window"): 2,
    ("synth", "height"): 4,
    ("synth", "width"): 4,
    ("synth", "n_train"): 6,
    ("synth", "n_test"): 3,
    ("synth", "rare_threshold"): 2,
    ("train", "epochs"): 1,
    ("train", "batch_size"): 3,
    ("train", "init_std"): 0.2,
    ("train", "lr"): 0.005,
}

_FIXTURE = {}


def _tmpdir():
    path = tempfile.mkdtemp(prefix="pairguide-cli-")
    atexit.register(shutil.rmtree, path, True)
    return path


def _run(*args):
    return CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)


def _trained():
    """Dataset, config and checkpoint shared by the read-only tests."""
    if not _FIXTURE:
        root = _tmpdir()
        config_path = os.path.join(root, "tiny.ini")
        with open(config_path, "w", encoding="utf-8") as f:
            f.write(RunConfig().with_overrides(TINY).to_string())
        data, run = os.path.join(root, "data"), os.path.join(root, "run")
        result = _run("synth", "--config", config_path, "--output", data)
        assert result.exit_code == 0, result.output
        result = _run("train", "--config", config_path, "--dataset", data, "--output", run)
        assert result.exit_code == 0, result.output
        _FIXTURE.update(root=root, config=config_path, data=data, run=run,
                        checkpoint=json.loads(result.output)["checkpoint"])
    return _FIXTURE


def test_pipeline_end_to_end():
    fx = _trained()
    assert os.path.isfile(os.path.join(fx["run"], "metrics.jsonl"))
    result = _run("infer", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", fx["checkpoint"])
    assert result.exit_code == 0, result.output
    inferred = json.loads(result.output)
    assert inferred["results"] == os.path.join(fx["run"], "results_test.jsonl")
    assert inferred["records"] > 0

    summary_path = os.path.join(fx["root"], "summary.json")
    result = _run("eval", "--config", fx["config"], "--dataset", fx["data"], "--results", inferred["results"],
                  "--output", summary_path)
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output)
    assert summary["setting"] == "default"
    assert 0.0 <= summary["full"] <= 100.0
    with open(summary_path, encoding="utf-8") as f:
        assert json.load(f) == summary

    known = json.loads(_run("eval", "--config", fx["config"], "--dataset", fx["data"],
                            "--results", inferred["results"], "--setting", "known-objects").output)
    assert known["setting"] == "known_objects"
    vcoco = json.loads(_run("eval", "--config", fx["config"], "--dataset", fx["data"],
                            "--results", inferred["results"], "--protocol", "vcoco").output)
    assert set(vcoco) == {"protocol", "s1", "s2"}


def test_invalid_config_exits_2():
    root = _tmpdir()
    bad = os.path.join(root, "bad.ini")
    with open(bad, "w", encoding="utf-8") as f:
        f.write("[decoder]\nd_model = 30\n")
    result = _run("synth", "--config", bad, "--output", os.path.join(root, "data"))
    assert result.exit_code == 2
    assert "error: config:" in result.output

    unknown = os.path.join(root, "unknown.ini")
    with open(unknown, "w", encoding="utf-8") as f:
        f.write("[decoder]\nwidth = 3\n")
    assert _run("synth", "--config", unknown).exit_code == 2


def test_additive_embeddings_need_matching_widths():
    fx = _trained()
    out = os.path.join(_tmpdir(), "additive")
    result = _run("train", "--config", fx["config"], "--dataset", fx["data"], "--output", out,
                  "--pe-mode", "additive")
    assert result.exit_code == 0, result.output
    result = _run("train", "--config", fx["config"], "--dataset", fx["data"], "--output", out,
                  "--pe-mode", "additive", "--d", 4)
    assert result.exit_code == 2
    assert "additive" in result.output


def test_missing_feature_map_exits_3_without_results():
    fx = _trained()
    data = os.path.join(_tmpdir(), "data")
    shutil.copytree(fx["data"], data)
    os.remove(os.path.join(data, "test", "features", "test_000001.pvfm"))
    out = os.path.join(_tmpdir(), "results.jsonl")
    result = _run("infer", "--config", fx["config"], "--dataset", data, "--checkpoint", fx["checkpoint"],
                  "--output", out)
    assert result.exit_code == 3
    assert "error: io:" in result.output
    assert not os.path.exists(out)


def test_missing_dataset_exits_3():
    fx = _trained()
    result = _run("train", "--config", fx["config"], "--dataset", os.path.join(_tmpdir(), "nothing"))
    assert result.exit_code == 3


def test_attn_viz_writes_eleven_files():
    fx = _trained()
    out = os.path.join(_tmpdir(), "maps")
    result = _run("attn-viz", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", fx["checkpoint"],
                  "--output", out, "--image-id", "test_000000")
    assert result.exit_code == 0, result.output
    files = json.loads(result.output)["files"]
    assert len(files) == 11
    assert all(os.path.isfile(p) for p in files)
    assert sum(p.endswith(".pgm") for p in files) == 10
    assert os.path.basename(files[-1]) == "pair0_layer0_head0_overlay.ppm"

    result = _run("attn-viz", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", fx["checkpoint"],
                  "--output", out, "--image-id", "test_000000", "--pair", 999)
    assert result.exit_code == 2
    result = _run("attn-viz", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", fx["checkpoint"],
                  "--output", out, "--image-id", "missing")
    assert result.exit_code == 2


def test_mask_probe_reports_scores():
    fx = _trained()
    result = _run("mask-probe", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", fx["checkpoint"],
                  "--image-id", "test_000000", "--fraction", 0.25, "--random-trials", 2)
    assert result.exit_code == 0, result.output
    probe = json.loads(result.output)
    assert probe["image_id"] == "test_000000"
    assert len(probe["mask_cells"]) == 4
    assert probe["random_trials"] == 2
    assert 0.0 <= probe["orig_score"] <= 1.0 and 0.0 <= probe["masked_score"] <= 1.0
    assert probe["beats_random"] == (probe["drop"] > probe["random_drop"])

    result = _run("mask-probe", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", fx["checkpoint"],
                  "--image-id", "test_000000", "--fraction", 1.0)
    assert result.exit_code == 2

    result = _run("mask-probe", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", fx["checkpoint"],
                  "--split", "train", "--positives", 3)
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output)
    assert summary["n_probes"] <= 3
    assert {"fraction_dropped", "beats_random", "passed"} <= set(summary)
    assert all(p["random_trials"] == 100 for p in summary["probes"])
    assert all(p["action"] >= 4 for p in summary["probes"])
    if summary["n_probes"]:
        assert summary["beats_random"] == (summary["mean_drop"] > summary["mean_random_drop"])


def test_heatmaps_are_byte_identical_across_seeded_runs():
    fx = _trained()
    run = os.path.join(_tmpdir(), "again")
    result = _run("train", "--config", fx["config"], "--dataset", fx["data"], "--output", run)
    assert result.exit_code == 0, result.output
    checkpoint = json.loads(result.output)["checkpoint"]
    with open(fx["checkpoint"], "rb") as a, open(checkpoint, "rb") as b:
        assert a.read() == b.read()

    outputs = []
    for ckpt in (fx["checkpoint"], checkpoint):
        out = os.path.join(_tmpdir(), "maps")
        result = _run("attn-viz", "--config", fx["config"], "--dataset", fx["data"], "--checkpoint", ckpt,
                      "--output", out, "--image-id", "test_000000")
        assert result.exit_code == 0, result.output
        files = {}
        for path in json.loads(result.output)["files"]:
            with open(path, "rb") as f:
                files[os.path.basename(path)] = f.read()
        outputs.append(files)
    assert len(outputs[0]) == 11
    assert outputs[0] == outputs[1]


def test_gradcheck_command():
    fx = _trained()
    result = _run("gradcheck", "--config", fx["config"], "--max-coords", 2)
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert report["passed"] is True
    assert report["max_rel_error"] < 1e-5


def test_gradcheck_creates_no_directories():
    config = _trained()["config"]
    root = _tmpdir()
    saved = Config.DATA_DIR, Config.RUNS_DIR
    Config.DATA_DIR, Config.RUNS_DIR = os.path.join(root, "data"), os.path.join(root, "runs")
    try:
        result = _run("gradcheck", "--config", config, "--max-coords", 1)
        assert result.exit_code == 0, result.output
        assert os.listdir(root) == []
    finally:
        Config.DATA_DIR, Config.RUNS_DIR = saved


@click.command("crash")
@click.argument("kind")
@handle_cli_errors
def _crash(kind):
    if kind == "index":
        raise IndexError("object class 9 outside [0, 6)")
    if kind == "config":
        raise ConfigError("fusion_lambda must lie in [0, 1]")
    click.get_current_context().exit(5)


def test_unexpected_errors_exit_1_with_one_line():
    result = CliRunner().invoke(_crash, ["index"], catch_exceptions=False)
    assert result.exit_code == 1
    assert result.output.strip().splitlines() == ["error: runtime: object class 9 outside [0, 6)"]
    assert "Traceback" not in result.output

    result = CliRunner().invoke(_crash, ["config"], catch_exceptions=False)
    assert result.exit_code == 2
    assert result.output.strip() == "error: config: fusion_lambda must lie in [0, 1]"

    assert CliRunner().invoke(_crash, ["exit"], catch_exceptions=False).exit_code == 5


def test_config_round_trip_is_a_fixed_point():
    cfg = RunConfig().with_overrides(TINY)
    text = cfg.to_string()
    assert RunConfig.from_string(text).to_string() == text
    assert RunConfig.from_dict(cfg.to_dict()).to_string() == text


def test_seed_environment_override():
    previous = os.environ.get("PVIC_SEED")
    os.environ["PVIC_SEED"] = "7"
    try:
        cfg = RunConfig.load(_trained()["config"])
        assert cfg.train.seed == 7 and cfg.synth.seed == 7
    finally:
        if previous is None:
            del os.environ["PVIC_SEED"]
        else:
            os.environ["PVIC_SEED"] = previous


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
