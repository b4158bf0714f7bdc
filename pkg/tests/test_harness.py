import numpy as np
import pytest

from potsherd.errors import EmptyOutline, UnknownLabel
from potsherd.harness import (
    Checkpoint,
    SherdStream,
    StreamSpec,
    TrainConfig,
    classify,
    encode_dataset,
    evaluate,
    make_eval_set,
    metrics_from_probs,
    predict_samples,
    prepare_catalog,
    resolution_sweep,
    stack_batch,
    sweep_csv,
    sweep_sampling,
    synthesize_outline,
    train,
    true_class_ranks,
)
from potsherd.outlinenet import DESK_WIDTHS, desk_config, forward, init_params
from potsherd.pointprep import EVAL_SAMPLING, SamplingConfig
from potsherd.synthgeom import BREAK, SherdOutline

TINY = {"branch_widths": (8, 8, 8, 8), "fusion_widths": (16, 16), "head_widths": (16, 8)}


@pytest.fixture(scope="module")
def small(small_catalog):
    return prepare_catalog(small_catalog, 0.5)


@pytest.fixture(scope="module")
def tiny_ck(small):
    cfg = TrainConfig(steps=3, batch_size=4, lr=1e-3, net=dict(TINY), val_per_class=0, checkpoint_every=0)
    return train(cfg, small).checkpoint


class TestStream:
    def test_deterministic_per_sample(self, small):
        a = SherdStream(small, StreamSpec(), 5).samples(3, 6)
        b = SherdStream(small, StreamSpec(), 5).samples(3, 6)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.loc, y.loc)
            assert x.label == y.label

    def test_workers_do_not_change_data(self, small):
        a = SherdStream(small, StreamSpec(), 5).samples(0, 8)
        with SherdStream(small, StreamSpec(), 5, workers=2) as s:
            b = s.samples(0, 8)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.loc, y.loc)

    def test_class_balance(self, small):
        s = SherdStream(small, StreamSpec(), 1)
        labels = [x.label for x in s.samples(0, 600)]
        counts = np.bincount(labels, minlength=3)
        assert counts.min() > 160  # 200 expected per class
        assert s.generated == 600

    def test_trimmed_batch_is_exact(self, small, rng):
        samples = SherdStream(small, StreamSpec(), 2).samples(0, 5)
        full = stack_batch(samples, trim=False)
        trim = stack_batch(samples)
        assert trim[0].shape[1] == max(x.n_distinct for x in samples) < full[0].shape[1]
        cfg = desk_config(3)
        p = init_params(rng, cfg)
        a, _ = forward(full[0], full[1], p, cfg, "train", np.random.default_rng(0))
        b, _ = forward(trim[0], trim[1], p, cfg, "train", np.random.default_rng(0))
        np.testing.assert_array_equal(a, b)

    def test_synthesized_outline_contract(self, small, rng):
        for sk in small.sketches():
            o = synthesize_outline(sk, rng)
            assert o.class_id == sk.class_id
            assert o.arc_length() >= 20.0
            assert {0, 1} <= set(np.unique(o.sides).tolist())

    def test_eval_set(self, small):
        data = make_eval_set(small, 4, 0)
        assert len(data) == 12
        assert [o.class_id for o in data[:4]] == [small.class_ids[0]] * 4
        again = make_eval_set(small, 4, 0)
        np.testing.assert_array_equal(data[5].points, again[5].points)


class TestTrainConfig:
    def test_from_dict(self):
        cfg = TrainConfig.from_dict({"steps": 5, "sampling": {"K": 256, "resolution": 2.0}, "net": {"K": 256}})
        assert cfg.sampling.K == 256

    def test_unknown_option(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"stepz": 5})

    def test_k_mismatch(self):
        with pytest.raises(ValueError):
            TrainConfig(net={"K": 128})

    def test_bad_loss(self):
        with pytest.raises(ValueError):
            TrainConfig(loss="hinge")

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.lr, cfg.window, cfg.gamma, cfg.checkpoint_every) == (128, 1e-6, 50, 0.8, 1000)
        assert cfg.sampling == SamplingConfig(512, 2.0)


class TestTrain:
    def test_same_seed_same_curve(self, small):
        cfg = TrainConfig(steps=4, batch_size=4, lr=1e-3, net=dict(TINY), val_per_class=0, checkpoint_every=0)
        a, b = train(cfg, small), train(cfg, small)
        assert a.history["loss"] == b.history["loss"]

    def test_outputs_and_checkpoints(self, small, tmp_path):
        cfg = TrainConfig(steps=4, batch_size=4, lr=1e-3, net=dict(TINY), val_per_class=2, checkpoint_every=2,
                          log_every=1, window=2)
        res = train(cfg, small, out_dir=tmp_path)
        for name in ("last.ckpt", "best.ckpt", "train_log.csv", "careloss_log.csv"):
            assert (tmp_path / name).exists()
        header = (tmp_path / "train_log.csv").read_text().splitlines()[0]
        assert header == "step,loss,batch_acc,u_norm,v_norm,gen_samples_per_s,train_samples_per_s"
        assert len((tmp_path / "careloss_log.csv").read_text().splitlines()) == 3
        assert len(res.history["val"]) == 2 and res.best is not None
        assert res.history["refresh"] == [1, 3]

    def test_checkpoint_round_trip(self, tiny_ck, tmp_path, small):
        tiny_ck.save(tmp_path / "m.ckpt")
        back = Checkpoint.load(tmp_path / "m.ckpt")
        assert back.net == tiny_ck.net and back.class_ids == tiny_ck.class_ids and back.step == 3
        for k in tiny_ck.params.keys():
            np.testing.assert_array_equal(back.params[k], tiny_ck.params[k])
        assert back.loss_state == tiny_ck.loss_state
        assert back.adam.step == 3
        for k in tiny_ck.params.keys():
            np.testing.assert_array_equal(back.adam.m[k], tiny_ck.adam.m[k])
        data = make_eval_set(small, 2, 1)
        assert evaluate(back, data).to_dict() == evaluate(tiny_ck, data).to_dict()

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "x.ckpt"
        with open(p, "wb") as fh:
            np.savez(fh, meta=np.array('{"format": "other"}'))
        with pytest.raises(ValueError):
            Checkpoint.load(p)

    @pytest.mark.slow
    def test_four_classes_learn(self):
        """4 parametric classes, 2000 steps: top-1 >= 0.8 on freshly generated training batches."""
        from potsherd.fixtures import make_parametric_catalog

        cat = make_parametric_catalog(n_classes=4, rng=np.random.default_rng(2))
        cfg = TrainConfig(steps=2000, batch_size=32, lr=1e-4, seed=3, net=dict(DESK_WIDTHS), val_per_class=0,
                          checkpoint_every=0)
        ck = train(cfg, cat).checkpoint
        stream = SherdStream(prepare_catalog(cat, 0.5), StreamSpec(), seed=99)
        samples = stream.samples(0, 400)
        probs = predict_samples(ck, samples)
        acc = np.mean(probs.argmax(axis=1) == [s.label for s in samples])
        assert acc >= 0.8, acc


class TestMetrics:
    def test_uniform_model_top_c(self):
        labels = np.repeat(np.arange(10), 5)
        m = metrics_from_probs(np.full((50, 10), 0.1), labels, [str(i) for i in range(10)])
        np.testing.assert_array_equal(m.per_class[10], 1.0)

    def test_mean_and_population_sd(self):
        # class 0: 2 of 5 right, class 1: 3 of 5 right
        probs = np.zeros((10, 2))
        labels = np.array([0] * 5 + [1] * 5)
        right = np.array([1, 1, 0, 0, 0, 1, 1, 1, 0, 0], bool)
        pred = np.where(right, labels, 1 - labels)
        probs[np.arange(10), pred] = 1.0
        m = metrics_from_probs(probs, labels, ["a", "b"], ks=(1,))
        np.testing.assert_allclose(m.per_class[1], [0.4, 0.6])
        assert m.mean[1] == pytest.approx(0.5) and m.sd[1] == pytest.approx(0.1)

    def test_random_guess(self):
        rng = np.random.default_rng(0)
        m = metrics_from_probs(rng.dirichlet(np.ones(10), 10_000), rng.integers(0, 10, 10_000), list("abcdefghij"))
        assert abs(m.mean[1] - 0.1) <= 0.02

    def test_ties_favour_lower_index(self):
        probs = np.array([[0.25, 0.25, 0.25, 0.25]] * 4)
        labels = np.arange(4)
        np.testing.assert_array_equal(true_class_ranks(probs, labels), [0, 1, 2, 3])
        m = metrics_from_probs(probs, labels, list("abcd"), ks=(1, 2))
        np.testing.assert_array_equal(m.per_class[1], [1, 0, 0, 0])
        np.testing.assert_array_equal(m.per_class[2], [1, 1, 0, 0])

    def test_monotone_in_k_and_confusion(self):
        rng = np.random.default_rng(1)
        probs = rng.dirichlet(np.ones(6), 300)
        labels = rng.integers(0, 6, 300)
        m = metrics_from_probs(probs, labels, list("abcdef"), ks=(1, 2, 5, 10))
        for a, b in zip(m.ks, m.ks[1:]):
            assert np.all(m.per_class[a] <= m.per_class[b])
        np.testing.assert_array_equal(m.per_class[10], 1.0)
        assert m.confusion.sum() == 300
        np.testing.assert_array_equal(m.confusion.sum(axis=1), np.bincount(labels, minlength=6))
        np.testing.assert_allclose(np.diag(m.confusion) / m.counts, m.per_class[1])

    def test_classes_without_samples(self):
        probs = np.eye(3)[[0, 0, 1]]
        m = metrics_from_probs(probs, np.array([0, 0, 1]), list("abc"), ks=(1,))
        assert np.isnan(m.per_class[1][2]) and m.mean[1] == 1.0
        assert m.to_dict()["per_class"]["1"][2] is None

    def test_streaming_mean_sd_agree(self):
        rng = np.random.default_rng(2)
        m = metrics_from_probs(rng.dirichlet(np.ones(8), 500), rng.integers(0, 8, 500), list("abcdefgh"), ks=(1, 2))
        for k in m.ks:
            # Welford over per-class accuracies
            n, mean, m2 = 0, 0.0, 0.0
            for x in m.per_class[k]:
                n += 1
                d = x - mean
                mean += d / n
                m2 += d * (x - mean)
            assert abs(mean - m.mean[k]) < 1e-12
            assert abs(np.sqrt(m2 / n) - m.sd[k]) < 1e-12

    def test_csv_reports(self):
        probs = np.eye(2)[[0, 1, 1]]
        m = metrics_from_probs(probs, np.array([0, 1, 0]), ["a", "b"], ks=(1, 2))
        assert m.summary_csv().splitlines()[0] == "k,mean,sd"
        assert m.per_class_csv().splitlines()[1] == "a,2,0.5,1.0"
        assert m.confusion_csv().splitlines() == ["true\\pred,a,b", "a,1,1", "b,0,1"]


class TestEvaluate:
    def test_unknown_label(self, tiny_ck):
        o = SherdOutline([(0, 0), (30, 0), (30, 5), (0, 5)], [0, 0, 1, 1], class_id="nope")
        with pytest.raises(UnknownLabel):
            evaluate(tiny_ck, [o])

    def test_uses_eval_sampling(self, tiny_ck, small):
        data = make_eval_set(small, 1, 0)
        samples = encode_dataset(data, EVAL_SAMPLING, 0, "group_hot", tiny_ck.class_ids)
        assert all(s.K == 1024 for s in samples)

    def test_classify_contract(self, tiny_ck, small):
        o = make_eval_set(small, 1, 3)[0]
        ranked = classify(tiny_ck, o)
        assert sorted(c for c, _ in ranked) == sorted(tiny_ck.class_ids)
        p = [x for _, x in ranked]
        assert p == sorted(p, reverse=True)
        assert sum(p) == pytest.approx(1.0, abs=1e-6)

    def test_classify_ignores_breaks(self, tiny_ck, small):
        o = make_eval_set(small, 1, 3)[0]
        with_break = SherdOutline(np.vstack([o.points, [[500.0, 500.0]]]), np.r_[o.sides, BREAK], o.class_id)
        assert classify(tiny_ck, o) == classify(tiny_ck, with_break)

    def test_classify_only_breaks(self, tiny_ck):
        with pytest.raises(EmptyOutline):
            classify(tiny_ck, SherdOutline([(0, 0), (10, 0), (20, 0)], [BREAK] * 3))

    def test_sweep_single_equals_evaluate(self, tiny_ck, small):
        data = make_eval_set(small, 2, 0)
        rows = resolution_sweep(tiny_ck, data, [1.0], seed=4)
        m = evaluate(tiny_ck, data, ks=(1, 5), sampling=sweep_sampling(1.0), seed=4)
        assert rows == [(1.0, m.mean[1], m.mean[5])]
        assert sweep_csv(rows).splitlines()[0] == "resolution_mm,top1,top5"

    def test_sweep_k_scaling(self):
        assert sweep_sampling(2.0).K == 512
        assert sweep_sampling(1.0).K == 1024
        assert sweep_sampling(0.5).K == 2048
        assert sweep_sampling(0.1).K == 4096
        assert sweep_sampling(8.0).K == 128


@pytest.mark.slow
class TestTrainedModel:
    """Checks on the shared 10-class desk-scale run."""

    def test_classify_training_sketch_top2(self, e2e_run, fixture_catalog):
        ck = e2e_run["result"].checkpoint
        data = make_eval_set(prepare_catalog(fixture_catalog, 0.5), 10, seed=77)
        hits = sum(ck.class_ids.index(o.class_id) in
                   [ck.class_ids.index(c) for c, _ in classify(ck, o, seed=i)[:2]] for i, o in enumerate(data))
        assert hits / len(data) >= 0.9, hits

    def test_evaluate_insensitive_to_sampling_seed(self, e2e_run):
        ck, data = e2e_run["result"].checkpoint, e2e_run["held_out"]
        tops = [evaluate(ck, data, ks=(1,), seed=s).mean[1] for s in range(5)]
        assert max(tops) - min(tops) <= 0.02, tops  # every seed within +-0.01 of the midpoint

    def test_generation_outpaces_training(self, e2e_run):
        h = e2e_run["result"].history
        assert h["gen_samples_per_s"] > h["train_samples_per_s"]
