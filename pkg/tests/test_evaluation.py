import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import confusion_counts, prf
from vfcommit.evaluation import (
    ConfusionMatrix,
    ablation_unique_tp,
    compute_metrics,
    format_f1_table,
    metrics_from_matrix,
    split_dataset,
)
from vfcommit.ingest import CommitRecord, LabeledDataset


def dataset(n_pos, n_neg):
    recs = [CommitRecord(f"p{i}", label=True) for i in range(n_pos)]
    recs += [CommitRecord(f"n{i}", label=False) for i in range(n_neg)]
    random.Random(0).shuffle(recs)
    return LabeledDataset(recs)


def test_split_stratified_counts():
    train, test = split_dataset(dataset(20, 80), 0.8, seed=1)
    assert (len(train), train.positive_count) == (80, 16)
    assert (len(test), test.positive_count) == (20, 4)


@given(st.integers(2, 30), st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_split_partitions(n_pos, n_neg, frac, seed):
    data = dataset(n_pos, n_neg)
    train, test = split_dataset(data, frac, seed)
    a, b = {r.id for r in train}, {r.id for r in test}
    assert not a & b and a | b == {r.id for r in data}
    assert train.positive_count >= 1 and test.positive_count >= 1


def test_split_deterministic_and_errors():
    data = dataset(10, 40)
    assert split_dataset(data, 0.8, 3)[0].records == split_dataset(data, 0.8, 3)[0].records
    with pytest.raises(ValueError):
        split_dataset(data, 1.0)
    with pytest.raises(ValueError, match="at least 2"):
        split_dataset(dataset(1, 10), 0.8)


def test_metrics_hand_arithmetic():
    r = metrics_from_matrix(ConfusionMatrix(tp=8, fp=2, fn=2, tn=5))
    assert (r.precision, r.recall) == (0.8, 0.8)
    assert r.f1 == pytest.approx(0.8, abs=1e-15)


def test_metrics_zero_conventions():
    assert metrics_from_matrix(ConfusionMatrix(0, 3, 4, 1)).f1 == 0.0
    r = metrics_from_matrix(ConfusionMatrix(0, 0, 0, 9))
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_metrics_id_mismatch():
    with pytest.raises(ValueError, match="differ"):
        compute_metrics([("a", True)], [("b", True)])


@given(st.lists(st.tuples(st.booleans(), st.booleans()), max_size=40))
def test_metrics_match_brute_force(pairs):
    preds = [(str(i), p) for i, (p, _) in enumerate(pairs)]
    gold = [(str(i), g) for i, (_, g) in enumerate(pairs)]
    r = compute_metrics(preds, gold)
    m = r.matrix
    assert (m.tp, m.fp, m.fn, m.tn) == confusion_counts(dict(preds), dict(gold))
    assert m.total == len(pairs)
    p, rc, f = prf(m.tp, m.fp, m.fn)
    assert (r.precision, r.recall) == (p, rc)
    if p + rc > 0:
        assert r.f1 == pytest.approx(2 * p * rc / (p + rc), abs=1e-12)
        assert r.f1 <= (p + rc) / 2 + 1e-12


def test_ablation_cases():
    rep = ablation_unique_tp({"message": {"a"}, "issue": {"b"}, "patch": {"c"}})
    assert rep.uniques == {"message": 1, "issue": 1, "patch": 1} and rep.total_discovered == 3
    same = {"x", "y"}
    rep = ablation_unique_tp({"message": same, "issue": same, "patch": same})
    assert rep.uniques == {"message": 0, "issue": 0, "patch": 0} and rep.total_discovered == 2
    assert ablation_unique_tp({}).total_discovered == 0


def test_f1_table_format():
    table = format_f1_table({"ours": {"message": 0.76, "issue": 0.65, "patch": 0.76, "ensemble": 0.79}})
    assert table.splitlines()[0] == "| Model | Message | Issue | Patch | Ensemble |"
    assert table.splitlines()[-1] == "| ours | 0.76 | 0.65 | 0.76 | 0.79 |"
