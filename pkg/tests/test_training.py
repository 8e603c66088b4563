import random

import numpy as np
import pytest
import torch

import oracles
from geovis.batch import collate
from geovis.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from geovis.config import make_config
from geovis.data_model import HUMAN, OBJECT, NormalizationSpec
from geovis.errors import ConfigError, DataError
from geovis.evaluation import TASKS, EntityPrediction, frame_accuracy, make_report, oracle_predictions, predict
from geovis.model import build_model
from geovis.synth import make_benchmark
from geovis.training import loss_curve, prepare, resolve_model_config, train


@pytest.fixture(scope="module")
def tiny():
    b = make_benchmark("tiny", 0)
    return b, NormalizationSpec(*b.resolution)


def short_config(b, seqs, **over):
    cfg = make_config("desk", {"train.stage1_steps": 4, "train.stage2_steps": 4, "dataset.stride": 4, **over})
    return resolve_model_config(cfg, seqs, b.label_spaces)


def test_training_is_deterministic(tiny):
    b, norm = tiny
    seqs = prepare(b.sequences, make_config("desk", {"dataset.stride": 4}))
    cfg = short_config(b, seqs)
    a, c = train(cfg, seqs, norm), train(cfg, seqs, norm)
    assert loss_curve(a).tobytes() == loss_curve(c).tobytes()
    for (n, p), (_, q) in zip(a.model.state_dict().items(), c.model.state_dict().items()):
        assert torch.equal(p, q), n


def test_loss_decreases(tiny):
    b, norm = tiny
    seqs = prepare(b.sequences, make_config("desk", {"dataset.stride": 4}))
    cfg = short_config(b, seqs, **{"train.stage1_steps": 30, "train.stage2_steps": 0})
    curve = loss_curve(train(cfg, seqs, norm))
    assert curve[-5:].mean() < curve[:5].mean()


def test_ablation_tag():
    assert make_config("desk", {"ablation.use_ieg": False}).tag() == "GAT_CAF_noIEG_fusion-" + \
        make_config("desk").fusion.variant
    assert make_config("desk", {"ablation.use_ieg": False, "ablation.use_caf": False,
                                "ablation.use_gat": False}).tag() == "GCN_noCAF_noIEG"


def test_no_ieg_model_has_no_ieg(tiny):
    b, _ = tiny
    cfg = short_config(b, b.sequences, **{"ablation.use_ieg": False})
    assert not any("ieg" in n for n, _ in build_model(cfg).named_parameters())


def test_oracle_predictor_scores_perfectly(tiny):
    b, _ = tiny
    preds = oracle_predictions(b.sequences, {k: len(v) for k, v in b.label_spaces.items()})
    assert frame_accuracy(preds, b.sequences) == 1.0
    for task in TASKS:
        rep = make_report(preds, b.sequences, task)
        for kind in ("sub-activity", "affordance"):
            for k in (0.1, 0.25, 0.5):
                assert rep.f1(kind, k) == 1.0


def test_random_predictor_f1_drops_with_k(tiny):
    b, _ = tiny
    rng = random.Random(0)
    preds = {}
    for s in b.sequences:
        for e in s.entities:
            n = len(b.label_spaces[e.kind])
            frames = np.zeros(s.T, dtype=int)
            for start, end, label in oracles.random_partition(rng, s.T, 12, n):
                frames[start:end + 1] = label
            preds.setdefault(s.video_id, {})[e.entity_id] = EntityPrediction(e.kind, np.eye(n)[frames])
    rep = make_report(preds, b.sequences, "joint")
    for kind in rep.kinds:
        assert rep.f1(kind, 0.5) < rep.f1(kind, 0.1)


def test_checkpoint_round_trip(tiny, tmp_path):
    b, norm = tiny
    seqs = prepare(b.sequences, make_config("desk", {"dataset.stride": 4}))
    cfg = short_config(b, seqs)
    model = train(cfg, seqs, norm).model
    save_checkpoint(tmp_path / "m.ckpt", model, cfg, {"note": "x"})
    back, cfg2, index = load_checkpoint(tmp_path / "m.ckpt", expect_hash=cfg.hash())
    assert cfg2.hash() == cfg.hash() and index["seed"] == cfg.train.seed and index["extra"] == {"note": "x"}
    for (n, p), (_, q) in zip(model.state_dict().items(), back.state_dict().items()):
        assert torch.equal(p, q), n
    batch = collate(seqs, norm, cfg.model.max_humans, cfg.model.max_objects)
    with torch.no_grad():
        torch.testing.assert_close(model(batch)["human_logits"], back(batch)["human_logits"], rtol=0, atol=0)
    p1, p2 = predict(model, seqs, norm), predict(back, seqs, norm)
    for vid in p1:
        for eid in p1[vid]:
            np.testing.assert_array_equal(p1[vid][eid].frames, p2[vid][eid].frames)


def test_checkpoint_hash_mismatch(tiny, tmp_path):
    b, _ = tiny
    cfg = short_config(b, b.sequences)
    save_checkpoint(tmp_path / "m.ckpt", build_model(cfg), cfg)
    with pytest.raises(ConfigError, match="config hash"):
        load_checkpoint(tmp_path / "m.ckpt", expect_hash="0" * 16)
    load_checkpoint(tmp_path / "m.ckpt", expect_hash="0" * 16, force=True)


def test_checkpoint_corruption(tiny, tmp_path):
    b, _ = tiny
    cfg = short_config(b, b.sequences)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, build_model(cfg), cfg)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DataError, match="truncated"):
        read_checkpoint(path)
    path.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(DataError, match="bad header"):
        read_checkpoint(path)


def test_resolve_model_config_reads_data(tiny):
    b, _ = tiny
    cfg = resolve_model_config(make_config("desk"), b.sequences, b.label_spaces)
    assert cfg.model.n_sub_activities == len(b.label_spaces[HUMAN])
    assert cfg.model.n_affordances == len(b.label_spaces[OBJECT])
    assert cfg.model.visual_dim == b.sequences[0].entities[0].visual.shape[1]
