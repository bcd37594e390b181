import numpy as np
import pytest

from saccade import autograd as ag
from saccade import io, pipeline as pl
from saccade.config import RunConfig
from saccade.data import as_arrays, gen_dataset
from saccade.temporal import FrameStatus

TINY = dict(
    frames=5, image_height=16, image_width=16, crop_size=8, n_train=24, n_test=12,
    channels=4, head_channels=8, hallucinator_hidden=4, policy_hidden=16, classifier_hidden=8,
    epochs_features=2, epochs_hallucinator=2, epochs_spatial=3, epochs_temporal=2, batch_size=8, k=2,
)


@pytest.fixture(scope="module")
def tiny():
    cfg = RunConfig(**TINY)
    frames, labels = as_arrays(gen_dataset(cfg.n_train, cfg.classes, cfg.image_size, cfg.frames, cfg.seed))
    system = pl.train_system(frames, labels, cfg, ks=[0, cfg.k])
    policy = pl.new_policy(cfg, np.random.default_rng(3))
    # a visibly opinionated policy so that schedules mix all statuses
    policy.head.bias.data[:] = [0.0, 0.3, 0.2]
    return cfg, frames, labels, system, policy


def _heads(*rows):
    return [ag.tensor(np.array(r, dtype=float)) for r in rows]


def test_class_loss_sums_weighted_heads():
    per_head = _heads([[2.0, 0.0, -1.0]], [[0.0, 1.0, 0.0]], [[0.5, 0.5, 3.0]])
    labels = np.array([0])
    ces = [ag.cross_entropy(h, labels).item() for h in per_head]
    assert pl.class_loss(per_head, labels).item() == pytest.approx(sum(ces), abs=1e-12)
    assert pl.class_loss(per_head, labels, (1, 0, 0)).item() == pytest.approx(ces[0], abs=1e-12)
    # hand NLL of the first head
    z = np.array([2.0, 0.0, -1.0])
    assert ces[0] == pytest.approx(np.log(np.exp(z).sum()) - 2.0, abs=1e-10)
    with pytest.raises(ValueError):
        pl.class_loss(per_head, labels, (1, 1))


def test_classify_is_mean_of_heads(rng):
    clf = pl.ThreeHeadClassifier(4, 2, 3, hidden=5, rng=rng)
    low, high = rng.standard_normal((6, 4)), rng.standard_normal((6, 8))
    mean, per_head = pl.classify(low, high, clf)
    np.testing.assert_allclose(mean.data, sum(h.data for h in per_head) / 3, atol=1e-12)


def test_zero_crops_pad_to_one_empty_slot(rng):
    assert pl.pad_crops([], 0, 4).tolist() == [0.0] * 4
    feats = rng.standard_normal((3, 4))
    padded = pl.pad_crops(list(feats), 2, 4)
    np.testing.assert_array_equal(padded, feats[:2].ravel())
    clf = pl.ThreeHeadClassifier(4, 0, 3, hidden=5, rng=rng)
    with pytest.raises(ValueError, match="classifier expects"):
        clf.update(np.zeros(4), np.zeros(8), clf.initial_state())


def test_classify_skips_non_full_frames(rng):
    clf = pl.ThreeHeadClassifier(4, 1, 3, hidden=5, rng=rng)
    low, high = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    F, P, S = FrameStatus.FULL, FrameStatus.PRESCAN, FrameStatus.SKIP
    a, _ = pl.classify(low, high, clf, [F, P, S, F])
    b, _ = pl.classify(low[[0, 3]], high[[0, 3]], clf)
    np.testing.assert_allclose(a.data, b.data, atol=1e-12)


def test_split_bounds_prescan_dim():
    cfg = RunConfig()
    assert pl.prescan_dim(cfg) == 8 * 6 * 6
    assert pl.prescan_dim(cfg.replace(split=4)) == 32 * 6 * 6
    assert pl.prescan_dim(cfg.replace(split=6)) == 32


def test_default_costs():
    cb = pl.pipeline_costs(RunConfig())
    assert cb.o_full == cb.o_pre + cb.o_rest
    assert cb.o_pre / cb.o_full < 0.5
    parts = [pl.pipeline_costs(RunConfig(), k) for k in range(4)]
    assert [p.crops for p in parts] == [k * cb.crop_unit for k in range(4)]
    assert np.all(np.diff([p.o_full for p in parts]) > cb.crop_unit - 1)


def test_always_full_charges_every_frame(tiny):
    cfg, frames, labels, system, _ = tiny
    pipe = system.pipeline(cfg.k)
    res = pl.run_sequence(frames[0], pipe, "always_full")
    assert all(d.status is FrameStatus.FULL for d in res.decisions)
    assert sum(d.flops for d in res.decisions) == cfg.frames * pipe.costs.o_full
    assert [row[3] for row in res.trace] == [-1, 0, 0, 0, 0]


def test_always_full_matches_batched_classify(tiny):
    cfg, frames, _, system, _ = tiny
    pipe = system.pipeline(cfg.k)
    res = pl.run_sequence(frames[1], pipe, "always_full")
    cache = system.cache.subset([1])
    mean, _ = pl.classify(cache.low[0], cache.high(cfg.k)[0], pipe.classifier)
    np.testing.assert_allclose(res.logits, mean.data, atol=1e-9)


def test_rollout_matches_sequential_run(tiny):
    cfg, frames, _, system, policy = tiny
    pipe = system.pipeline(cfg.k, policy=policy)
    n = 8
    per_head, decisions, _ = pl.rollout(
        system.cache.subset(np.arange(n)), cfg.k, policy, pipe.classifier, system.hallucinator,
        pipe.costs, cfg, False, np.random.default_rng(0),
    )
    batched = pl.mean_logits(per_head).data
    seen = set()
    for i in range(n):
        res = pl.run_sequence(frames[i], pipe)
        assert [row[3] for row in res.trace if row[1] is not FrameStatus.SKIP][1:] == [m for m in decisions[i, 1:] if m >= 0]
        np.testing.assert_allclose(res.logits, batched[i], atol=1e-8)
        seen |= {d.status for d in res.decisions}
    assert seen == set(FrameStatus)


def test_rollout_efficiency_loss_value(tiny):
    cfg, _, _, system, policy = tiny
    pipe = system.pipeline(cfg.k, policy=policy)
    cb = pipe.costs
    _, decisions, l_e = pl.rollout(system.cache.subset(np.arange(6)), cfg.k, policy, pipe.classifier,
                                   system.hallucinator, cb, cfg, False, np.random.default_rng(0))
    per_seq = [(cb.o_full + sum(cb.o_full if m == 0 else cb.o_pre for m in row if m >= 0)) / (cfg.frames * cb.o_full)
               for row in decisions]
    assert l_e.item() == pytest.approx(np.mean(per_seq), rel=1e-12)


def test_train_joint_records_two_terms_per_epoch(tiny):
    cfg, _, labels, system, _ = tiny
    policy, clf, rows = pl.train_joint(system.cache, labels, system.classifiers[cfg.k], system.hallucinator,
                                       cfg, 1.0, np.random.default_rng(0))
    assert [(e, t) for e, t, _ in rows] == [(1, "class"), (1, "efficiency"), (2, "class"), (2, "efficiency")]
    assert all(np.isfinite(v) for _, _, v in rows)
    assert clf is not system.classifiers[cfg.k]
    with pytest.raises(ValueError, match="empty"):
        pl.train_joint(system.cache.subset([]), [], clf, system.hallucinator, cfg, 1.0, np.random.default_rng(0))


def test_evaluate_jobs_do_not_change_results(tiny):
    cfg, frames, labels, system, policy = tiny
    pipe = system.pipeline(cfg.k, policy=policy)
    a = pl.evaluate(frames[:6], labels[:6], pipe, jobs=1)
    b = pl.evaluate(frames[:6], labels[:6], pipe, jobs=2)
    assert a["top1"] == b["top1"] and a["stats"] == b["stats"]
    for ra, rb in zip(a["results"], b["results"]):
        assert ra.logits.tobytes() == rb.logits.tobytes()
        assert ra.decisions == rb.decisions


def _stub(make_logits):
    def run(frames, pipe, mode="adaptive"):
        label = int(frames[0, 0, 0, 0])
        return pl.SequenceResult(make_logits(label, frames), [pl.FrameDecision(FrameStatus.FULL, 1.0, 0)])
    return run


def test_evaluate_perfect_stub(tiny, monkeypatch):
    cfg, _, _, system, _ = tiny
    labels = np.arange(30) % 3
    frames = np.zeros((30, 1, 3, 4, 4))
    frames[:, 0, 0, 0, 0] = labels
    monkeypatch.setattr(pl, "run_sequence", _stub(lambda y, f: np.eye(3)[y]))
    out = pl.evaluate(frames, labels, system.pipeline(cfg.k), "always_full")
    assert out["top1"] == 100.0 and out["top5"] == 100.0


def test_evaluate_random_stub_near_chance(tiny, monkeypatch):
    cfg, _, _, system, _ = tiny
    labels = np.arange(400) % 2
    frames = np.zeros((400, 1, 3, 4, 4))
    frames[:, 0, 0, 0, 0] = labels
    frames[:, 0, 1, 0, 0] = np.arange(400)
    monkeypatch.setattr(pl, "run_sequence", _stub(lambda y, f: np.random.default_rng(int(f[0, 1, 0, 0])).standard_normal(2)))
    out = pl.evaluate(frames, labels, system.pipeline(cfg.k), "always_full")
    assert abs(out["top1"] - 50.0) <= 5.0
    assert out["top5"] == 100.0


def test_topk_hits_tie_break():
    logits = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 1.0]])
    assert pl.topk_hits(logits, [1, 2], 1).tolist() == [False, False]
    assert pl.topk_hits(logits, [1, 2], 2).tolist() == [True, True]


def test_checkpoints_round_trip_and_reject_mismatch(tiny, tmp_path):
    cfg, frames, _, system, policy = tiny
    pl.save_backbone(tmp_path / "f", system.backbone, cfg)
    pl.save_classifier(tmp_path / "s", system.classifiers[cfg.k], cfg)
    pl.save_temporal(tmp_path / "t", policy, system.classifiers[cfg.k], cfg)
    pl.save_hallucinator_ckpt(tmp_path / "h", system.hallucinator, cfg)
    bb = pl.load_backbone(tmp_path / "f", cfg)
    np.testing.assert_array_equal(bb.get_flat(), system.backbone.get_flat())
    pol, clf = pl.load_temporal(tmp_path / "t", cfg)
    np.testing.assert_array_equal(pol.get_flat(), policy.get_flat())
    pipe = pl.Pipeline(cfg, bb, pl.load_hallucinator_ckpt(tmp_path / "h", cfg), clf, pol)
    a = pl.run_sequence(frames[0], pipe)
    b = pl.run_sequence(frames[0], system.pipeline(cfg.k, policy=policy))
    assert a.logits.tobytes() == b.logits.tobytes() and a.decisions == b.decisions
    with pytest.raises(io.DimensionMismatchError):
        pl.load_backbone(tmp_path / "f", cfg.replace(channels=5))
    with pytest.raises(io.DimensionMismatchError):
        pl.load_classifier(tmp_path / "s", cfg.replace(k=1))
    with pytest.raises(io.DimensionMismatchError):
        pl.load_temporal(tmp_path / "t", cfg.replace(max_skip=3))
    with pytest.raises(io.BadMagicError):
        pl.load_classifier(tmp_path / "f", cfg)


def test_run_sequence_rejects_bad_mode(tiny):
    cfg, frames, _, system, _ = tiny
    with pytest.raises(ValueError, match="mode"):
        pl.run_sequence(frames[0], system.pipeline(cfg.k), "sometimes")
    with pytest.raises(ValueError, match="policy"):
        pl.run_sequence(frames[0], system.pipeline(cfg.k))


def test_estimator_smoke():
    from sklearn.base import clone

    frames, labels = as_arrays(gen_dataset(12, 2, (16, 16), 3, seed=2))
    est = pl.AdaptiveVideoClassifier(k=1, epochs_features=1, epochs_hallucinator=1, epochs_spatial=1, epochs_temporal=1)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(Exception):
        est.predict(frames)
    est.fit(frames, labels)
    pred = est.predict(frames)
    assert pred.shape == (12,) and set(pred) <= {0, 1}
    stats = est.flops_report()
    assert stats.frames == 12 * 3
    assert 0.0 <= est.score(frames, labels) <= 1.0
