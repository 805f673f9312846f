import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plnet import metrics
from plnet.metrics import ConfusionCounts

counts = st.integers(min_value=0, max_value=500)


def test_edge_set_basics():
    assert metrics.edge_set(np.diag([1.0, 2.0, 3.0])) == set()
    om = np.zeros((3, 3))
    om[0, 1] = om[1, 0] = 0.3
    assert metrics.edge_set(om) == {(0, 1)}


def test_edge_set_threshold_monotone():
    rng = np.random.default_rng(0)
    om = rng.normal(0, 1, (6, 6))
    om = om + om.T
    for lo, hi in [(1e-8, 0.5), (0.2, 1.0)]:
        assert metrics.edge_set(om, hi) <= metrics.edge_set(om, lo)


def test_confusion_examples():
    e = {(0, 1), (0, 2)}
    t = {(0, 1), (1, 2)}
    c = metrics.confusion(e, t, 3)
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 0)
    c = metrics.confusion(set(), set(), 4)
    assert c.tn == 6 and c.total == 6
    perfect = metrics.confusion(t, t, 3)
    assert perfect.fp == 0 and perfect.fn == 0


@given(counts, counts, counts, counts)
def test_confusion_total_and_mcc_range(tp, tn, fp, fn):
    c = ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)
    v = metrics.mcc(c)
    assert -1.0 <= v <= 1.0


def test_mcc_values():
    assert metrics.mcc(ConfusionCounts(1, 1, 1, 1)) == 0.0
    assert metrics.mcc(ConfusionCounts(tp=3, tn=5, fp=0, fn=0)) == 1.0
    # frozen direct evaluation: (2*3 - 1*1)/sqrt(3*3*4*4) = 5/12
    assert metrics.mcc(ConfusionCounts(tp=2, tn=3, fp=1, fn=1)) == \
        pytest.approx(5.0 / 12.0, abs=1e-12)
    assert metrics.mcc(ConfusionCounts(tp=0, tn=0, fp=0, fn=0)) == 0.0


@given(counts, counts, counts, counts)
def test_mcc_symmetries(tp, tn, fp, fn):
    c = ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)
    swapped = ConfusionCounts(tp=tn, tn=tp, fp=fn, fn=fp)
    negated = ConfusionCounts(tp=fp, tn=fn, fp=tp, fn=tn)
    assert metrics.mcc(swapped) == pytest.approx(metrics.mcc(c), abs=1e-12)
    assert metrics.mcc(negated) == pytest.approx(-metrics.mcc(c), abs=1e-12)


def test_precision_recall():
    assert metrics.precision_recall(ConfusionCounts(tp=3, tn=0, fp=0, fn=2)) \
        == (1.0, 0.6)
    assert metrics.precision_recall(ConfusionCounts(tp=3, tn=0, fp=1, fn=0)) \
        == (0.75, 1.0)
    p, r = metrics.precision_recall(ConfusionCounts(tp=2, tn=0, fp=1, fn=1))
    assert p == pytest.approx(2 / 3) and r == pytest.approx(2 / 3)
    assert metrics.precision_recall(ConfusionCounts()) == (0.0, 0.0)


def test_mofe():
    om = np.array([[1.0, 0.2], [0.2, 2.0]])
    assert metrics.mofe(om, om) == 0.0
    shifted = om + np.diag([5.0, -3.0])
    assert metrics.mofe(shifted, om) == 0.0  # diagonal is excluded
    other = om.copy()
    other[0, 1] = other[1, 0] = 0.5
    assert metrics.mofe(other, om) == pytest.approx(0.4242640687119285,
                                                    abs=1e-12)
    with pytest.raises(ValueError):
        metrics.mofe(np.eye(2), np.eye(3))
