#!/usr/bin/env python3
"""
Trainer tests: optimizer invariants, checkpoint resume, overfitting a
single scene, NaN handling, inference output and the full-model gradient
check. Each test synthesizes a tiny dataset into a temporary directory.
"""

import json
import os
import tempfile
from collections import defaultdict

import numpy as np

from src.config import RunConfig
from src.exceptions import ConfigError, NumericError, StorageError, TrainingAborted
from src.numcore.params import ParamStore
from src.numcore.rng import make_rng
from src.repositories.checkpoint_repository import CheckpointRepository
from src.repositories.dataset_repository import DatasetRepository
from src.repositories.record_repository import RecordRepository
from src.services.optimizer import AdamW
from src.services.synthesis_service import SynthesisService
from src.services.trainer_service import (
    NAN_DUMP_NAME, TrainerService, gradient_check, infer, load_model, lr_for_epoch, predict_split,
)


def _config(**train):
    overrides = {
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
        ("train", "epochs"): 2,
        ("train", "lr_drop_epoch"): 1,
        ("train", "batch_size"): 2,
        ("train", "init_std"): 0.2,
        ("train", "lr"): 0.005,
    }
    overrides.update({("train", k): v for k, v in train.items()})
    cfg = RunConfig().with_overrides(overrides)
    cfg.validate()
    return cfg


def _dataset(cfg, root):
    SynthesisService(cfg).emit_dataset(root)
    return DatasetRepository(root)


def _values(store):
    return {p.name: p.value.copy() for p in store}


def test_lr_schedule():
    cfg = _config(lr=0.01, lr_drop_epoch=3, lr_drop_factor=5.0)
    assert lr_for_epoch(cfg, 0) == 0.01
    assert lr_for_epoch(cfg, 2) == 0.01
    assert abs(lr_for_epoch(cfg, 3) - 0.002) < 1e-15


def test_zero_lr_leaves_parameters_unchanged():
    cfg = _config(lr=0.0, weight_decay=0.0)
    with tempfile.TemporaryDirectory() as root:
        trainer = TrainerService(cfg, _dataset(cfg, os.path.join(root, "data")), os.path.join(root, "run"))
        before = _values(trainer.model.store)
        ids = trainer.dataset.image_ids("train")
        trainer.train_step(ids[:2])
        trainer.train_step(ids[2:4])
        after = _values(trainer.model.store)
        assert all(np.array_equal(before[n], after[n]) for n in before)


def test_zero_gradient_step_is_exact_shrink():
    store = ParamStore(rng=make_rng(0), init_std=0.5)
    store.linear("lin", 4, 3)
    store.layer_norm("norm", 3)
    before = _values(store)
    optimizer = AdamW(store, lr=0.01, weight_decay=0.1)
    optimizer.step()
    shrink = 1.0 - 0.01 * 0.1
    for param in store:
        assert np.array_equal(param.value, before[param.name] * shrink)


def test_resume_reproduces_the_next_step_bitwise():
    cfg = _config()
    with tempfile.TemporaryDirectory() as root:
        dataset = _dataset(cfg, os.path.join(root, "data"))
        first = TrainerService(cfg, dataset, os.path.join(root, "a"))
        first.train_epoch()
        path = first.save_checkpoint()

        second = TrainerService(cfg, DatasetRepository(dataset.root), os.path.join(root, "b"))
        second.resume(path)
        assert (second.epoch, second.step) == (first.epoch, first.step)

        batch = dataset.image_ids("train")[:2]
        first.train_step(batch)
        second.train_step(batch)
        state_a, state_b = first.state_dict(), second.state_dict()
        assert list(state_a) == list(state_b)
        assert all(np.array_equal(state_a[k], state_b[k]) for k in state_a)


def test_train_writes_checkpoint_metrics_and_config():
    cfg = _config()
    with tempfile.TemporaryDirectory() as root:
        trainer = TrainerService(cfg, _dataset(cfg, os.path.join(root, "data")), os.path.join(root, "run"))
        path = trainer.train()
        assert os.path.isfile(path)
        assert trainer.epoch == 2 and trainer.step == 6
        with open(trainer.metrics_path, encoding="utf-8") as f:
            lines = [json.loads(line) for line in f]
        assert [m["step"] for m in lines] == [1, 2, 3, 4, 5, 6]
        assert np.allclose([m["lr"] for m in lines], [0.005] * 3 + [0.001] * 3, rtol=0, atol=1e-15)
        assert RunConfig.load(os.path.join(trainer.out_dir, "config.ini"), apply_env=False).to_string() == cfg.to_string()

        model = load_model(cfg, path, trainer.table.n_actions)
        assert all(np.array_equal(model.store[n].value, trainer.model.store[n].value)
                   for n in model.store.names())
        try:
            load_model(cfg, path, trainer.table.n_actions + 1)
            assert False, "mismatched checkpoint accepted"
        except ConfigError:
            pass


def test_overfits_a_single_scene():
    cfg = _config(lr=0.01, weight_decay=0.0).with_overrides({
        ("synth", "n_train"): 1, ("synth", "interact_prob"): 1.0,
    })
    with tempfile.TemporaryDirectory() as root:
        trainer = TrainerService(cfg, _dataset(cfg, os.path.join(root, "data")), os.path.join(root, "run"))
        batch = trainer.dataset.image_ids("train")
        losses = [trainer.train_step(batch) for _ in range(50)]
        assert losses[-1] < 0.5 * losses[0]
        assert min(losses[-10:]) < min(losses[:10])


def test_non_finite_loss_aborts_with_dump():
    cfg = _config()
    with tempfile.TemporaryDirectory() as root:
        trainer = TrainerService(cfg, _dataset(cfg, os.path.join(root, "data")), os.path.join(root, "run"))

        def broken(image_id):
            raise NumericError("exp produced a non-finite value")

        trainer.image_loss = broken
        batch = trainer.dataset.image_ids("train")[:2]
        try:
            trainer.train_step(batch)
            assert False, "non-finite loss did not abort"
        except TrainingAborted as e:
            assert e.dump_path == os.path.join(trainer.out_dir, NAN_DUMP_NAME)
            with open(e.dump_path, encoding="utf-8") as f:
                dump = json.load(f)
            assert dump["image_id"] == batch[0]
            assert dump["step"] == 0
        assert trainer.optimizer.step_count == 0


def test_infer_emits_one_record_per_valid_action():
    cfg = _config()
    with tempfile.TemporaryDirectory() as root:
        dataset = _dataset(cfg, os.path.join(root, "data"))
        trainer = TrainerService(cfg, dataset, os.path.join(root, "run"))
        checkpoint = trainer.train()
        out_path = os.path.join(root, "results.jsonl")
        count = infer(cfg, checkpoint, dataset, out_path)

        expected = 0
        for image_id, image in dataset.detections("test").items():
            result = trainer.model.forward(image, dataset.feature_map("test", image_id))
            expected += sum(int(trainer.table.mask(result.dets[p.o].class_id).sum()) for p in result.pairs)
        records = RecordRepository().load_results(out_path)
        assert count == expected == len(records)
        assert all(trainer.table.is_valid(r.action, r.object_class) for r in records)
        assert all(0.0 <= r.score <= 1.0 for r in records)

        shared = defaultdict(set)
        for r in predict_split(trainer.model, dataset, trainer.table, "test", lam=0.0):
            shared[(r.image_id, r.h_box, r.o_box)].add(r.score)
        assert all(len(scores) == 1 for scores in shared.values())


def test_checkpoint_rejects_bad_magic():
    with tempfile.TemporaryDirectory() as root:
        path = os.path.join(root, "bad.pvck")
        with open(path, "wb") as f:
            f.write(b"NOPE\x01\x00\x00\x00")
        try:
            CheckpointRepository().load(path)
            assert False, "bad magic accepted"
        except StorageError:
            pass


def test_checkpoint_file_round_trips_bit_exactly():
    store = ParamStore(rng=make_rng(3), init_std=0.5)
    store.linear("lin", 4, 3)
    store.layer_norm("norm", 3)
    state = store.state_dict()
    state["trainer.step"] = np.array([7.0])
    repo = CheckpointRepository()
    with tempfile.TemporaryDirectory() as root:
        first, second = os.path.join(root, "a.pvck"), os.path.join(root, "b.pvck")
        repo.save(first, state)
        loaded = repo.load(first)
        assert list(loaded) == list(state)
        assert all(np.array_equal(loaded[k], state[k]) and loaded[k].shape == state[k].shape for k in state)
        repo.save(second, loaded)
        with open(first, "rb") as a, open(second, "rb") as b:
            assert a.read() == b.read()
        with open(first, "rb") as f:
            assert f.read(4) == b"PVCK"


def test_full_model_gradient_check():
    for pe_mode in ("concat_modulated", "additive"):
        cfg = _config(pe_mode=pe_mode)
        assert gradient_check(cfg, seed=0, max_coords_per_param=3) < 1e-5


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
