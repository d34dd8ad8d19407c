#!/usr/bin/env python3
"""
Ablation tests: ordering and chance checks on hand-made results, variant
configs, report rendering and one tiny end-to-end table2 run.
"""

import json
import os
import tempfile

from src.config import RunConfig
from src.repositories.dataset_repository import DatasetRepository
from src.services.ablation_service import (
    ABOVE, NEAR, SUITES, AblationReport, VariantResult, chance_ap, check_context, check_orderings,
    render_report, run_ablation, variant_config,
)
from src.services.synthesis_service import SynthesisService

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
    ("synth", "n_test"): 4,
    ("synth", "rare_threshold"): 2,
    ("train", "epochs"): 1,
    ("train", "batch_size"): 3,
    ("train", "init_std"): 0.2,
    ("train", "lr"): 0.005,
}


def _results(suite, **full):
    variants = {v.name: v for v in SUITES[suite]}
    return {name: VariantResult(variants[name], full=list(values)) for name, values in full.items()}


def test_decoder_must_win_by_five_points_on_every_seed():
    results = _results("table2", A=[10.0, 12.0, 11.0], E=[15.0, 17.5, 16.0])
    [check] = check_orderings("table2", results)
    assert (check.lower, check.higher, check.margin) == ("A", "E", 5.0)
    assert check.per_seed == [True, True, True] and check.holds

    narrow = check_orderings("table2", _results("table2", A=[50.0] * 3, E=[50.1] * 3))[0]
    assert narrow.per_seed == [False, False, False]
    assert not narrow.on_mean and not narrow.holds

    one_seed = check_orderings("table2", _results("table2", A=[10.0, 10.0, 10.0], E=[30.0, 30.0, 14.0]))[0]
    assert one_seed.on_mean
    assert one_seed.per_seed == [True, True, False]
    assert not one_seed.holds


def test_embedding_orderings_use_the_mean_and_ties_fail():
    results = _results("table4", K1=[20.0, 25.0, 20.0], K2=[21.0, 24.0, 21.0], K3=[22.0, 25.0, 22.0])
    first, second = check_orderings("table4", results)
    assert (first.lower, first.higher, second.lower, second.higher) == ("K1", "K2", "K2", "K3")
    assert first.per_seed == [True, False, True]
    assert first.holds and second.holds

    tied = check_orderings("table4", _results("table4", K1=[20.0] * 3, K2=[20.0] * 3, K3=[21.0] * 3))
    assert not tied[0].holds
    assert tied[1].holds


def test_blob_actions_against_chance():
    results = _results("table2", A=[10.0, 10.0], E=[30.0, 30.0])
    results["A"].blob = [12.0, 18.0]
    results["E"].blob = [40.0, 36.0]
    near, above = check_context("table2", results, chance=10.0)
    assert (near.variant, near.relation, near.margin) == ("A", NEAR, 10.0)
    assert (above.variant, above.relation, above.margin) == ("E", ABOVE, 20.0)
    assert near.holds and above.holds
    assert near.blob == 15.0 and above.blob == 38.0

    results["A"].blob = [12.0, 25.0]
    results["E"].blob = [40.0, 29.0]
    near, above = check_context("table2", results, chance=10.0)
    assert near.per_seed == [True, False] and not near.holds
    assert above.per_seed == [True, False] and not above.holds
    assert check_context("table4", results, chance=10.0) == []


def test_report_fails_when_a_context_check_fails():
    results = _results("table2", A=[10.0], B=[11.0], C=[12.0], E=[20.0])
    results["A"].blob = [10.0]
    results["E"].blob = [15.0]
    report = AblationReport("table2", [0], list(results.values()), check_orderings("table2", results),
                            check_context("table2", results, chance=10.0))
    assert all(c.holds for c in report.checks)
    assert not report.passed
    data = report.to_dict()
    assert [c["variant"] for c in data["context"]] == ["A", "E"]
    assert data["passed"] is False


def test_every_variant_config_validates():
    for cfg in (RunConfig(), RunConfig().with_overrides(TINY)):
        for suite, variants in SUITES.items():
            for variant in variants:
                config = variant_config(cfg, variant, seed=3)
                assert config.train.seed == 3
                for (section, key), value in variant.overrides:
                    assert getattr(getattr(config, section), key) == value
    assert variant_config(RunConfig(), SUITES["table4"][-1], 0).decoder.n_layers == 2


def test_render_report():
    results = _results("table2", A=[10.0, 11.0], B=[11.0, 12.0], C=[12.0, 13.0], E=[20.0, 21.0])
    for result in results.values():
        result.rare = [5.0, 6.0]
        result.non_rare = [15.0, 16.0]
        result.blob = [10.0, 12.0]
    results["E"].blob = [40.0, 42.0]
    report = AblationReport("table2", [0, 1], list(results.values()), check_orderings("table2", results),
                            check_context("table2", results, chance=10.0))
    text = render_report(report)
    assert text.startswith("# Ablation `table2`")
    assert "| E | self + cross-attention on map features | 20.50 |" in text
    assert "A < E by at least 5.0 points on every seed: **holds**" in text
    assert "## Blob actions against chance" in text
    assert "- E: 41.00 vs chance 10.00, at least 20.0 points above: **holds**" in text
    assert text.rstrip().endswith("Overall: **PASS**")

    table4 = _results("table4", J2=[1.0], K1=[2.0], K2=[2.0], K3=[3.0], L1=[4.0])
    text = render_report(AblationReport("table4", [0], list(table4.values()), check_orderings("table4", table4)))
    assert "K1 < K2: **violated**" in text
    assert "against chance" not in text
    assert text.rstrip().endswith("Overall: **FAIL**")


def test_chance_ap_bounds():
    cfg = RunConfig().with_overrides(TINY)
    with tempfile.TemporaryDirectory() as root:
        SynthesisService(cfg).emit_dataset(root)
        dataset = DatasetRepository(root)
        chance = chance_ap(dataset, cfg)
        table = dataset.action_table()
        assert set(chance) == {table.interaction_id(a, c) for c, a in table.interactions()}
        assert all(0.0 <= v <= 100.0 for v in chance.values())
        present = {table.interaction_id(g.action, g.object_class) for g in dataset.gt("test")}
        assert all(chance[c] == 0.0 for c in set(chance) - present)


def test_tiny_table2_run_writes_reports():
    cfg = RunConfig().with_overrides(TINY)
    with tempfile.TemporaryDirectory() as root:
        data, out = os.path.join(root, "data"), os.path.join(root, "ablate")
        SynthesisService(cfg).emit_dataset(data)
        report = run_ablation("table2", cfg, data, out, seeds=(0,))
        assert [r.variant.name for r in report.results] == ["A", "B", "C", "E"]
        assert all(len(r.full) == 1 and len(r.blob) == 1 for r in report.results)
        assert len(report.checks) == 1 and len(report.context_checks) == 2
        with open(os.path.join(out, "table2_report.json"), encoding="utf-8") as f:
            stored = json.load(f)
        assert stored["passed"] == report.passed
        assert stored["context"][0]["chance"] == report.context_checks[0].chance
        with open(os.path.join(out, "table2_report.md"), encoding="utf-8") as f:
            assert f.read() == render_report(report)
        assert os.path.isfile(os.path.join(out, "table2", "E", "seed0", "checkpoint.pvck"))


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
