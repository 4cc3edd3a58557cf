from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import pairwise_auc
from trafficlang import nn
from trafficlang.errors import DegenerateClass, DegenerateLabels, NoPairSamples, ShapeMismatch
from trafficlang.experiments import (FeatureSet, SplitSpec, auc_differences, balance_binary, binary_hits,
                                     embedding_sweep, eval_binary, knockout_split, knockout_summary,
                                     multilabel_report, pair_samples, roc_auc, run_binary, run_knockout,
                                     run_multilabel, split_dataset, train)
from trafficlang.models import ModelConfig, build_model
from trafficlang.traffic import CLASSES, make_labels

COMBOS = [("YouTube",), ("Netflix",), ("YouTube", "Amazon"), ("CNNNews",), ("FoxNews", "DailyMotion"),
          ("YouTube", "Amazon", "Netflix"), ("Amazon",), ("DailyMotion",)]


def toy_set(n=60, seed=0, vocab=20, combos=COMBOS):
    r = np.random.default_rng(seed)
    labels = [make_labels(combos[i % len(combos)]) for i in range(n)]
    clients = [len(l) for l in labels]
    return FeatureSet([f"s{i:03d}" for i in range(n)], r.integers(0, vocab + 1, (n, 200)), labels, clients)


class FixedModel:
    """Stands in for a trained model: returns preset activations."""

    def __init__(self, acts, mode="categorical-2"):
        self.acts = np.asarray(acts, dtype=float)
        self.config = SimpleNamespace(output_mode=mode, seed=0, to_dict=lambda: {})

    def predict(self, inputs):
        return self.acts[: len(inputs)]


class TestSplit:
    @given(st.integers(5, 80), st.integers(0, 2**32 - 1), st.booleans())
    def test_partition(self, n, seed, stratify):
        ds = toy_set(n)
        tr, te = split_dataset(ds, SplitSpec(0.8, seed, stratify))
        assert set(tr.sample_ids).isdisjoint(te.sample_ids)
        assert sorted(tr.sample_ids + te.sample_ids) == ds.sample_ids

    def test_fraction(self):
        tr, te = split_dataset(toy_set(100), SplitSpec(seed=3))
        assert (len(tr), len(te)) == (80, 20)

    def test_seeded(self):
        ds = toy_set(50)
        assert split_dataset(ds, SplitSpec(seed=1))[1].sample_ids == split_dataset(ds, SplitSpec(seed=1))[1].sample_ids
        assert split_dataset(ds, SplitSpec(seed=1))[1].sample_ids != split_dataset(ds, SplitSpec(seed=2))[1].sample_ids

    def test_rows_stay_aligned(self):
        ds = toy_set(30)
        tr, _ = split_dataset(ds)
        for sid, row, lab in zip(tr.sample_ids, tr.inputs, tr.labels):
            i = ds.sample_ids.index(sid)
            assert np.array_equal(row, ds.inputs[i]) and lab == ds.labels[i]

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            SplitSpec(1.0)

    def test_misaligned_set(self):
        with pytest.raises(ShapeMismatch):
            FeatureSet(["a"], np.zeros((2, 200)), [frozenset()], [0])


class TestBalance:
    def test_undersamples_majority(self):
        combos = [("YouTube",)] * 7 + [("Netflix",)] * 3
        ds = toy_set(100, combos=combos)
        bal = balance_binary(ds, "YouTube", seed=0)
        y = bal.binary_labels("YouTube")
        assert (y.sum(), len(y) - y.sum()) == (30, 30)
        assert set(bal.sample_ids) <= set(ds.sample_ids)
        # every minority sample survives
        assert {s for s, l in zip(ds.sample_ids, ds.labels) if "Netflix" in l} <= set(bal.sample_ids)

    def test_already_balanced(self):
        ds = toy_set(10, combos=[("YouTube",), ("Netflix",)])
        assert balance_binary(ds, "YouTube", 0).sample_ids == ds.sample_ids

    def test_degenerate(self):
        with pytest.raises(DegenerateClass):
            balance_binary(toy_set(10, combos=[("Netflix",)]), "YouTube", 0)


def tiny(arch="kim", mode="multilabel-6", seed=0, vocab=20):
    kw = dict(embedding_dim=4, kim_channels=4, kim_widths=(1, 2)) if arch == "kim" else {}
    if arch == "berger":
        kw = dict(embedding_dim=4, berger_hidden=4)
    return build_model(ModelConfig(arch, output_mode=mode, seed=seed, **kw), vocab)


class TestTrain:
    def test_deterministic(self):
        ds = toy_set(40)
        runs = [train(tiny(), ds.inputs, ds.multilabel_targets(), epochs=2, seed=5) for _ in range(2)]
        assert runs[0][1] == runs[1][1]
        for name in runs[0][0].params:
            assert np.array_equal(runs[0][0].params[name].data, runs[1][0].params[name].data)

    def test_history_length(self):
        ds = toy_set(20)
        _, hist = train(tiny(), ds.inputs, ds.multilabel_targets(), epochs=3)
        assert len(hist) == 3 and all(np.isfinite(hist))

    def test_single_step_reduces_loss(self):
        ds = toy_set(32)
        y = ds.multilabel_targets()
        improved = 0
        for seed in range(20):
            m = tiny(seed=seed)
            before = float(nn.bce_loss(m.forward(ds.inputs), y).data)
            train(m, ds.inputs, y, epochs=1, batch_size=32, lr=1e-3)
            improved += float(nn.bce_loss(m.forward(ds.inputs), y).data) < before
        assert improved >= 19

    def test_loss_falls_on_learnable_task(self):
        ds = toy_set(40, combos=[("YouTube",), ("Netflix",)])
        ds.inputs[::2, :] = 1  # YouTube rows are all token 1
        _, hist = train(tiny(), ds.inputs, ds.multilabel_targets(), epochs=15, lr=1e-2)
        assert hist[-1] < 0.5 * hist[0]

    def test_recurrent_clip_runs(self):
        ds = toy_set(8)
        _, hist = train(tiny("berger"), ds.inputs, ds.multilabel_targets(), epochs=1)
        assert np.isfinite(hist[0])

    def test_rejects(self):
        ds = toy_set(8)
        with pytest.raises(ValueError):
            train(tiny(), ds.inputs, ds.multilabel_targets(), epochs=0)
        with pytest.raises(ShapeMismatch):
            train(tiny(), ds.inputs, ds.multilabel_targets()[:3], epochs=1)


class TestBinaryAccuracy:
    def test_hits_and_ties(self):
        acts = [[0.2, 0.8], [0.9, 0.1], [0.5, 0.5], [0.7, 0.3]]
        assert binary_hits(acts, [1, 0, 1, 1]).tolist() == [True, True, False, False]
        assert binary_hits([[0.5, 0.5]], [0]).tolist() == [False]

    def test_eval_binary(self):
        ds = toy_set(4, combos=[("YouTube",), ("Netflix",)])
        model = FixedModel([[0.1, 0.9], [0.9, 0.1], [0.6, 0.4], [0.3, 0.3]])
        # labels: Y N Y N -> hit, hit, miss, tie-miss
        assert eval_binary(model, ds, "YouTube") == 0.5

    def test_hard_wired_negative_vote(self):
        model = FixedModel(np.tile([0.9, 0.1], (5, 1)))
        assert eval_binary(model, toy_set(5, combos=[("Netflix",)]), "YouTube") == 1.0
        assert eval_binary(model, toy_set(5, combos=[("YouTube",)]), "YouTube") == 0.0

    def test_needs_binary_model(self):
        with pytest.raises(ValueError):
            eval_binary(FixedModel(np.zeros((1, 6)), "multilabel-6"), toy_set(1), "YouTube")


class TestROC:
    def test_perfect(self):
        pts, auc = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0 and pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)

    def test_inverted(self):
        assert roc_auc([0.1, 0.2, 0.8], [1, 1, 0])[1] == 0.0

    def test_all_tied(self):
        pts, auc = roc_auc([0.3] * 6, [1, 0, 1, 0, 0, 1])
        assert auc == 0.5 and pts == [(0.0, 0.0), (1.0, 1.0)]

    def test_degenerate(self):
        with pytest.raises(DegenerateLabels):
            roc_auc([0.1, 0.2], [1, 1])

    @given(st.lists(st.tuples(st.integers(0, 6).map(lambda v: v / 6), st.integers(0, 1)), min_size=2, max_size=40)
           .filter(lambda r: 0 < sum(y for _, y in r) < len(r)))
    def test_matches_pairwise_oracle(self, rows):
        s, y = zip(*rows)
        pts, auc = roc_auc(s, y)
        assert abs(auc - pairwise_auc(s, y)) <= 1e-9
        assert all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(pts, pts[1:]))
        assert len(pts) == len(set(s)) + 1


class TestMultilabelReport:
    def test_client_subset_filter(self):
        ds = toy_set(16)
        acts = np.random.default_rng(0).random((16, 6))
        rep = multilabel_report(acts, ds, min_clients=2)
        keep = [i for i in range(16) if ds.client_counts[i] >= 2]
        assert rep.sample_ids == [ds.sample_ids[i] for i in keep]
        assert rep.subset == {"min_clients": 2, "n_samples": len(keep)}
        assert set(rep.per_class) == set(CLASSES)

    def test_min_one_is_unfiltered(self):
        ds = toy_set(16)
        acts = np.random.default_rng(0).random((16, 6))
        one, zero = multilabel_report(acts, ds, 1), multilabel_report(acts, ds, 0)
        assert one.per_class == zero.per_class and one.scores == zero.scores
        assert one.sample_ids == ds.sample_ids

    def test_filter_beyond_max_clients(self):
        ds = toy_set(16)
        rep = multilabel_report(np.random.default_rng(0).random((16, 6)), ds, min_clients=5)
        assert rep.subset["n_samples"] == 0 and all(v["auc"] is None for v in rep.per_class.values())

    def test_missing_class_gives_null(self):
        ds = toy_set(6, combos=[("YouTube",), ("Netflix",)])
        rep = multilabel_report(np.full((6, 6), 0.5), ds)
        assert rep.per_class["FoxNews"]["auc"] is None and rep.per_class["YouTube"]["auc"] == 0.5

    def test_auc_differences(self):
        ds = toy_set(16)
        acts = np.random.default_rng(1).random((16, 6))
        full, sub = multilabel_report(acts, ds, 1), multilabel_report(acts, ds, 2)
        diffs = auc_differences(full, sub)
        for c in CLASSES:
            a, b = full.per_class[c]["auc"], sub.per_class[c]["auc"]
            assert diffs[c] == (None if a is None or b is None else a - b)


class TestKnockout:
    @given(st.integers(0, 2**32 - 1))
    def test_split_algebra(self, seed):
        ds = toy_set(48)
        pair = ("YouTube", "Amazon")
        tr, te, removed = knockout_split(ds, pair, SplitSpec(seed=seed))
        std_tr, std_te = split_dataset(ds, SplitSpec(seed=seed))
        assert not any(make_labels(pair) <= l for l in tr.labels)
        assert sorted(tr.sample_ids + te.sample_ids) == ds.sample_ids
        assert set(te.sample_ids) == set(std_te.sample_ids) | set(removed)
        assert set(removed) <= set(std_tr.sample_ids)

    def test_ten_pair_samples(self):
        combos = [("YouTube", "Amazon")] * 10 + [("YouTube",)] * 20 + [("Amazon",)] * 20 + [("Netflix",)] * 10
        ds = toy_set(60, combos=combos)
        tr, te, removed = knockout_split(ds, ("Amazon", "YouTube"), SplitSpec(seed=3))
        std_tr, std_te = split_dataset(ds, SplitSpec(seed=3))
        pair_ids = {s for s, l in zip(ds.sample_ids, ds.labels) if len(l) == 2}
        assert len(pair_ids) == 10 and pair_ids <= set(te.sample_ids)
        assert set(te.sample_ids) == pair_ids | set(std_te.sample_ids)
        # single-label YouTube and Amazon samples keep their standard placement
        singles = {s for s, l in zip(std_tr.sample_ids, std_tr.labels) if len(l) == 1}
        assert singles <= set(tr.sample_ids)

    def test_absent_pair(self):
        with pytest.raises(NoPairSamples):
            knockout_split(toy_set(20), ("FoxNews", "Netflix"))

    def test_pair_must_be_two(self):
        with pytest.raises(ValueError):
            knockout_split(toy_set(20), ("YouTube", "YouTube"))

    def test_pair_samples(self):
        ds = toy_set(24)
        got = pair_samples(ds, ("Amazon", "YouTube"))
        assert got.sample_ids and all({"Amazon", "YouTube"} <= l for l in got.labels)

    def test_summary(self):
        acts = np.zeros((4, 6))
        y, a = CLASSES.index("YouTube"), CLASSES.index("Amazon")
        acts[0, [y, a]] = [0.9, 0.7]  # both
        acts[1, [y, a]] = [0.6, 0.2]  # one
        acts[2, [y, a]] = [0.1, 0.5]  # one, at the threshold
        acts[3, [y, a]] = [0.4, 0.4]  # none
        s = knockout_summary(acts, ("YouTube", "Amazon"))
        assert s["max_fraction"] == 0.75 and s["both_fraction"] == 0.25 and s["n_samples"] == 4

    def test_summary_hard_wired(self):
        both = knockout_summary(np.full((3, 6), 0.9), ("YouTube", "Amazon"))
        assert (both["max_fraction"], both["both_fraction"]) == (1.0, 1.0)
        acts = np.full((3, 6), 0.1)
        acts[:, CLASSES.index("Amazon")] = 0.9
        one = knockout_summary(acts, ("YouTube", "Amazon"))
        assert (one["max_fraction"], one["both_fraction"]) == (1.0, 0.0)
        assert one["pair"] == ["Amazon", "YouTube"] and one["activations"] == [[0.9, 0.1]] * 3


class TestRunners:
    def test_run_binary_report(self):
        ds = toy_set(40)
        model, rep = run_binary(ds, "kim", "YouTube", seed=2, epochs=1, kim_channels=4, embedding_dim=4)
        assert rep.kind == "binary" and 0 <= rep.accuracy <= 1
        assert rep.subset["test_size"] == 8 and len(rep.scores) == 8
        assert model.config.output_mode == "categorical-2"

    def test_run_multilabel_reports(self):
        _, reps = run_multilabel(toy_set(40, vocab=5), "kim", seed=2, epochs=1, kim_channels=4, embedding_dim=4)
        assert sorted(reps) == [1, 2, 3]
        assert reps[1].subset["n_samples"] >= reps[3].subset["n_samples"]

    def test_run_knockout(self):
        _, rep = run_knockout(toy_set(48), "kim", ("YouTube", "Amazon"), seed=1, epochs=1, kim_channels=4)
        assert rep.subset["train_pair_free"] and rep.extra["n_samples"] == len(rep.sample_ids) > 0
        # the summary is reproducible from the dumped activation pairs alone
        pairs = np.array(rep.extra["activations"])
        assert rep.extra["max_fraction"] == float((pairs.max(axis=1) >= 0.5).mean())
        assert rep.extra["both_fraction"] == float((pairs.min(axis=1) >= 0.5).mean())

    def test_wrong_features(self):
        with pytest.raises(ShapeMismatch):
            run_binary(toy_set(20), "cruz", "YouTube", seed=0, epochs=1)

    def test_sweep(self):
        ds = toy_set(30)
        accs, reps = embedding_sweep(ds, "kim", [3], "YouTube", seed=4, epochs=1)
        again, _ = embedding_sweep(ds, "kim", [3], "YouTube", seed=4, epochs=1)
        assert list(accs) == [3] and accs == again
        assert reps[3].config["embedding_dim"] == 3

    def test_sweep_same_split(self):
        _, reps = embedding_sweep(toy_set(30), "kim", [2, 3], "YouTube", seed=4, epochs=1)
        assert reps[2].sample_ids == reps[3].sample_ids

    def test_sweep_empty(self):
        with pytest.raises(ValueError):
            embedding_sweep(toy_set(10), "kim", [], "YouTube", seed=0)
