import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wipgest.dataset import WindowConfig, make_loso_split
from wipgest.evaluator import (
    ConfusionMatrix,
    confusion_matrix,
    latency_benchmark,
    loso_suite,
    metrics,
    nearest_neighbor_baseline,
    window_size_study,
    window_study_to_csv,
    window_study_to_dict,
)
from wipgest.model import PCTMCD, ModelConfig
from wipgest.trainer import TrainConfig

TINY = ModelConfig(embed_dims=(8, 8), neighbor_dim=16, attention_dim=16, fused_dim=32, classifier_dims=(16, 8))
QUICK = TrainConfig(epochs=1, batch_size=64)


def test_confusion_examples():
    cm = confusion_matrix([0, 1, 1], [0, 0, 1])
    assert cm.counts[0, 0] == 1 and cm.counts[0, 1] == 1 and cm.counts[1, 1] == 1
    assert cm.counts.sum() == 3
    perfect = confusion_matrix(np.arange(9), np.arange(9))
    np.testing.assert_array_equal(perfect.normalized(), np.eye(9))
    with pytest.raises(ValueError):
        confusion_matrix([], [])
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0])


def test_metrics_examples():
    m = metrics(confusion_matrix(np.arange(9), np.arange(9)))
    assert m.mean_class_accuracy == m.overall_accuracy == 1.0
    m = metrics(confusion_matrix([0, 1, 1], [0, 0, 1]))
    assert m.mean_class_accuracy == pytest.approx(0.75)
    assert m.overall_accuracy == pytest.approx(2 / 3)
    assert m.per_class_accuracy[2] is None and "jogging" in m.absent_classes
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(np.zeros((9, 9), dtype=np.int64)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=1, max_size=80), st.permutations(range(9)))
def test_metric_invariants(pairs, perm):
    pred, lab = np.array(pairs).T
    cm = confusion_matrix(pred, lab)
    m = metrics(cm)
    assert m.overall_accuracy == np.mean(pred == lab)
    rows = cm.counts.sum(1)
    np.testing.assert_allclose(cm.normalized().sum(1)[rows > 0], 1.0, atol=1e-9)
    present = [a for a in m.per_class_accuracy if a is not None]
    assert m.mean_class_accuracy == pytest.approx(np.mean(present))
    perm = np.array(perm)
    m2 = metrics(confusion_matrix(perm[pred], perm[lab]))
    assert m2.mean_class_accuracy == pytest.approx(m.mean_class_accuracy)
    for c in range(9):
        assert m2.per_class_accuracy[perm[c]] == m.per_class_accuracy[c]


def test_latency_report():
    rep = latency_benchmark(PCTMCD(seed=0), n_trials=20)
    assert rep.window_duration_ms == 180.0
    assert rep.total_ms == 180.0 + rep.inference_median_ms
    assert 0 < rep.inference_median_ms <= rep.inference_p95_ms
    assert WindowConfig.for_size(3).duration_ms == 90.0


def test_nearest_neighbor_baseline(small_dataset):
    split = make_loso_split(small_dataset, "S01")
    rep = nearest_neighbor_baseline(split)
    assert 0.0 <= rep.overall_accuracy <= 1.0
    assert sum(rep.support) == len(split.target_test)


@pytest.fixture(scope="module")
def loso(small_dataset):
    return loso_suite(small_dataset, WindowConfig(), TINY, QUICK)


def test_loso_rows_and_average(loso):
    assert [r.subject for r in loso.rows] == ["S01", "S02", "S03"]
    avg = loso.average
    assert avg["overall_accuracy"] == pytest.approx(np.mean([r.metrics.overall_accuracy for r in loso.rows]))
    assert avg["mean_class_accuracy"] == pytest.approx(np.mean([r.metrics.mean_class_accuracy for r in loso.rows]))
    assert "nn_overall_accuracy" in avg
    lines = loso.to_csv().strip().splitlines()
    assert len(lines) == 1 + 3 + 1 and lines[-1].startswith("average")
    d = loso.to_dict()
    assert d["kind"] == "loso" and len(d["rows"]) == 3


def test_loso_excludes_target_labels(loso, small_dataset):
    for row in loso.rows:
        split = make_loso_split(small_dataset, row.subject)
        assert row.subject not in set(split.source.subject_ids)
        assert row.n_source == len(split.source)


def test_loso_needs_two_subjects(small_dataset):
    with pytest.raises(ValueError):
        loso_suite(small_dataset[:1], WindowConfig(), TINY, QUICK)


def test_window_study(small_dataset, loso):
    rows = window_size_study(small_dataset, [3, 6], TINY, QUICK, subjects=["S01"], reports={6: loso})
    assert [r.size for r in rows] == [3, 6]
    assert [r.duration_ms for r in rows] == [90.0, 180.0]
    assert rows[1].overall_accuracy == loso.average["overall_accuracy"]
    assert window_study_to_dict(rows)["kind"] == "window_study"
    assert window_study_to_csv(rows).splitlines()[0] == "size,mean_class_accuracy,overall_accuracy,duration_ms"
    with pytest.raises(ValueError):
        window_size_study(small_dataset, [0], TINY, QUICK)
