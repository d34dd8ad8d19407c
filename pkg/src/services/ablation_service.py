"""
Decoder ablations on a synthetic dataset.

Each suite trains its variants with identical data and seeds, scores them with
hico_map on the test split and checks the expected mAP orderings. The table2
suite also compares blob-action AP against the AP of a random ranking.
"""

import os
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from src.config import RunConfig
from src.exceptions import ConfigError
from src.repositories.dataset_repository import DatasetRepository
from src.services.evaluation_service import hico_map
from src.services.pairing_service import enumerate_pairs, filter_and_sample
from src.services.trainer_service import TrainerService, predict_split
from src.utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "templates")
TEMPLATE_NAME = "ablation_table.md.j2"


@dataclass(frozen=True)
class Variant:
    name: str
    description: str
    overrides: Tuple[Tuple[Tuple[str, str], object], ...]
    reference: float  # published full mAP on the real benchmark


def _variant(name, description, reference, **flags) -> Variant:
    sections = {"n_layers": "decoder"}
    overrides = tuple(((sections.get(k, "train"), k), v) for k, v in flags.items())
    return Variant(name, description, overrides, reference)


_BACKBONE = {"self_attn": "on", "cross_attn": "on", "feature_head": "window"}

SUITES: Dict[str, List[Variant]] = {
    "table2": [
        _variant("A", "no decoder", 30.71, n_layers=0, self_attn="off", cross_attn="off",
                 pe_mode="none", feature_head="off"),
        _variant("B", "FFN only", 30.98, n_layers=1, self_attn="off", cross_attn="off",
                 pe_mode="none", feature_head="off"),
        _variant("C", "self-attention + FFN", 31.47, n_layers=1, self_attn="on", cross_attn="off",
                 pe_mode="none", feature_head="off"),
        _variant("E", "self + cross-attention on map features", 32.89, n_layers=1, self_attn="on",
                 cross_attn="on", pe_mode="none", feature_head="off"),
    ],
    "table4": [
        _variant("J2", "no positional embedding", 33.59, n_layers=1, pe_mode="none", **_BACKBONE),
        _variant("K1", "standard, additive", 33.43, n_layers=1, pe_mode="additive", **_BACKBONE),
        _variant("K2", "standard, concatenated", 33.72, n_layers=1, pe_mode="concat", **_BACKBONE),
        _variant("K3", "modulated, concatenated", 33.91, n_layers=1, pe_mode="concat_modulated", **_BACKBONE),
        _variant("L1", "modulated, concatenated, 2 layers", 34.18, n_layers=2, pe_mode="concat_modulated", **_BACKBONE),
    ],
}


@dataclass(frozen=True)
class Ordering:
    lower: str
    higher: str
    margin: float = 0.0  # mAP points; 0 means strictly greater, ties fail
    every_seed: bool = False


ORDERINGS: Dict[str, List[Ordering]] = {
    "table2": [Ordering("A", "E", margin=5.0, every_seed=True)],
    "table4": [Ordering("K1", "K2"), Ordering("K2", "K3")],
}

NEAR, ABOVE = "near", "above"

# (variant, relation, points) for blob-action AP against chance
CONTEXT_CHECKS: Dict[str, List[Tuple[str, str, float]]] = {
    "table2": [("A", NEAR, 10.0), ("E", ABOVE, 20.0)],
    "table4": [],
}


@dataclass
class VariantResult:
    variant: Variant
    full: List[float] = field(default_factory=list)
    rare: List[float] = field(default_factory=list)
    non_rare: List[float] = field(default_factory=list)
    blob: List[float] = field(default_factory=list)

    @staticmethod
    def _avg(values: List[float]) -> float:
        return float(np.mean(values)) if values else 0.0

    @property
    def mean_full(self) -> float:
        return self._avg(self.full)

    @property
    def mean_blob(self) -> float:
        return self._avg(self.blob)

    def to_dict(self) -> Dict[str, object]:
        return {
            "name": self.variant.name,
            "description": self.variant.description,
            "reference": self.variant.reference,
            "full": self.full,
            "rare": self.rare,
            "non_rare": self.non_rare,
            "blob": self.blob,
            "mean_full": self.mean_full,
            "mean_rare": self._avg(self.rare),
            "mean_non_rare": self._avg(self.non_rare),
            "mean_blob": self.mean_blob,
        }


@dataclass
class OrderingCheck:
    lower: str
    higher: str
    margin: float
    every_seed: bool
    per_seed: List[bool]
    on_mean: bool

    @property
    def holds(self) -> bool:
        if self.every_seed and not all(self.per_seed):
            return False
        return self.on_mean

    def to_dict(self) -> Dict[str, object]:
        return {
            "lower": self.lower,
            "higher": self.higher,
            "margin": self.margin,
            "every_seed": self.every_seed,
            "per_seed": self.per_seed,
            "on_mean": self.on_mean,
            "holds": self.holds,
        }


@dataclass
class ContextCheck:
    variant: str
    relation: str
    margin: float
    chance: float
    blob: float
    per_seed: List[bool]
    on_mean: bool

    @property
    def holds(self) -> bool:
        return self.on_mean and all(self.per_seed)

    def to_dict(self) -> Dict[str, object]:
        return {
            "variant": self.variant,
            "relation": self.relation,
            "margin": self.margin,
            "chance": self.chance,
            "blob": self.blob,
            "per_seed": self.per_seed,
            "on_mean": self.on_mean,
            "holds": self.holds,
        }


@dataclass
class AblationReport:
    suite: str
    seeds: List[int]
    results: List[VariantResult]
    checks: List[OrderingCheck]
    context_checks: List[ContextCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.holds for c in self.checks) and all(c.holds for c in self.context_checks)

    def to_dict(self) -> Dict[str, object]:
        return {
            "suite": self.suite,
            "seeds": self.seeds,
            "variants": [r.to_dict() for r in self.results],
            "orderings": [c.to_dict() for c in self.checks],
            "context": [c.to_dict() for c in self.context_checks],
            "passed": self.passed,
        }


def variant_config(cfg: RunConfig, variant: Variant, seed: int) -> RunConfig:
    overrides = dict(variant.overrides)
    overrides[("train", "seed")] = seed
    config = cfg.with_overrides(overrides)
    config.validate()
    return config


def blob_interactions(dataset: DatasetRepository, n_geometry_actions: int) -> List[int]:
    table = dataset.action_table()
    return [table.interaction_id(a, c) for c, a in table.interactions() if a >= n_geometry_actions]


def chance_ap(dataset: DatasetRepository, cfg: RunConfig, split: str = "test") -> Dict[int, float]:
    """
    AP in percent of a random ranking, per interaction class: the class's GT
    count over the candidate pairs whose object has its object class, capped
    at 100. Candidates are the pairs the model would score under `cfg.pairing`.
    """
    table = dataset.action_table()
    pairing = cfg.pairing
    candidates: Dict[int, int] = {}
    for image in dataset.detections(split).values():
        dets = filter_and_sample(image.to_detections(pairing.human_class), pairing.score_thresh,
                                 pairing.min_n, pairing.max_n)
        for pair in enumerate_pairs(dets):
            object_class = dets[pair.o].class_id
            candidates[object_class] = candidates.get(object_class, 0) + 1
    positives: Dict[int, int] = {}
    for gt in dataset.gt(split):
        cls = table.interaction_id(gt.action, gt.object_class)
        positives[cls] = positives.get(cls, 0) + 1

    chance = {}
    for object_class, action in table.interactions():
        cls = table.interaction_id(action, object_class)
        n_pairs = candidates.get(object_class, 0)
        chance[cls] = 100.0 * min(1.0, positives.get(cls, 0) / n_pairs) if n_pairs else 0.0
    return chance


def _beats(low: float, high: float, margin: float) -> bool:
    if margin > 0.0:
        return high - low >= margin
    return high > low


def check_orderings(suite: str, results: Dict[str, VariantResult]) -> List[OrderingCheck]:
    checks = []
    for ordering in ORDERINGS[suite]:
        lo, hi = results[ordering.lower], results[ordering.higher]
        per_seed = [_beats(a, b, ordering.margin) for a, b in zip(lo.full, hi.full)]
        on_mean = _beats(lo.mean_full, hi.mean_full, ordering.margin)
        checks.append(OrderingCheck(ordering.lower, ordering.higher, ordering.margin, ordering.every_seed,
                                    per_seed, on_mean))
    return checks


def _against_chance(ap: float, chance: float, relation: str, margin: float) -> bool:
    if relation == NEAR:
        return abs(ap - chance) <= margin
    return ap - chance >= margin


def check_context(suite: str, results: Dict[str, VariantResult], chance: float) -> List[ContextCheck]:
    """`chance` is the mean chance AP over the blob interactions present in the test GT."""
    checks = []
    for name, relation, margin in CONTEXT_CHECKS[suite]:
        result = results[name]
        per_seed = [_against_chance(ap, chance, relation, margin) for ap in result.blob]
        on_mean = _against_chance(result.mean_blob, chance, relation, margin)
        checks.append(ContextCheck(name, relation, margin, chance, result.mean_blob, per_seed, on_mean))
    return checks


def render_report(report: AblationReport) -> str:
    env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), undefined=StrictUndefined,
                      keep_trailing_newline=True, trim_blocks=True, lstrip_blocks=True)
    return env.get_template(TEMPLATE_NAME).render(report=report.to_dict())


def run_ablation(suite: str, cfg: RunConfig, dataset_root: str, out_dir: str,
                 seeds: Sequence[int] = (0, 1, 2)) -> AblationReport:
    """Train and score every variant of `suite` for each seed; writes <suite>_report.md and .json."""
    if suite not in SUITES:
        raise ConfigError(f"suite must be one of {sorted(SUITES)}, got {suite!r}")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    dataset = DatasetRepository(dataset_root)
    table, split, gts = dataset.action_table(), dataset.split(), dataset.gt("test")
    blob_ids = set(blob_interactions(dataset, dataset.config().synth.n_geometry_actions))
    scored_blob = sorted(blob_ids & {table.interaction_id(g.action, g.object_class) for g in gts})
    chance_by_class = chance_ap(dataset, cfg)
    chance = float(np.mean([chance_by_class[c] for c in scored_blob])) if scored_blob else 0.0

    results: Dict[str, VariantResult] = {}
    for variant in SUITES[suite]:
        result = VariantResult(variant)
        for seed in seeds:
            vcfg = variant_config(cfg, variant, seed)
            run_dir = os.path.join(out_dir, suite, variant.name, f"seed{seed}")
            trainer = TrainerService(vcfg, dataset, run_dir)
            trainer.train()
            records = predict_split(trainer.model, dataset, table, "test", vcfg.inference.fusion_lambda)
            scores = hico_map(records, gts, split, table, "default", vcfg.inference.iou_thresh)
            result.full.append(scores.full)
            result.rare.append(scores.rare)
            result.non_rare.append(scores.non_rare)
            blob_aps = [ap for cls, ap in scores.per_class.items() if cls in blob_ids]
            result.blob.append(float(np.mean(blob_aps)) if blob_aps else 0.0)
            logger.info(f"[TRAIN] {suite}/{variant.name} seed {seed}: full mAP {scores.full:.2f}")
        results[variant.name] = result

    report = AblationReport(suite, list(seeds), list(results.values()), check_orderings(suite, results),
                            check_context(suite, results, chance))
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, f"{suite}_report.md"), render_report(report))
    atomic_write_text(os.path.join(out_dir, f"{suite}_report.json"), json.dumps(report.to_dict(), indent=2))
    for check in report.checks:
        level = logging.INFO if check.holds else logging.WARNING
        logger.log(level, f"[TRAIN] ordering {check.lower} < {check.higher} (margin {check.margin}): "
                          f"{'holds' if check.holds else 'violated'} (per seed {check.per_seed})")
    for check in report.context_checks:
        level = logging.INFO if check.holds else logging.WARNING
        logger.log(level, f"[TRAIN] {check.variant} blob AP {check.blob:.2f} vs chance {check.chance:.2f} "
                          f"({check.relation}, {check.margin} points): {'holds' if check.holds else 'violated'}")
    return report
