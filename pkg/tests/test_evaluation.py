import numpy as np
import pytest
from scipy import stats

from localdti.evaluation import confusion, isolated_counts, ks_distance, qq_chi2, roc, roc_from_scores
from localdti.volume import DecisionMask, GridShape, LabelVolume, ScalarVolume


@pytest.fixture
def truth(rng):
    g = GridShape(10, 10, 4)
    label = rng.integers(1, 5, g.dims)
    label[0] = 0
    return LabelVolume(g, label)


def _dec(truth, reject):
    return DecisionMask(truth.shape, reject & truth.mask, truth.mask)


def test_confusion_examples(truth):
    perfect = confusion(_dec(truth, truth.anisotropic), truth)
    assert perfect.sensitivity == 1.0 and perfect.specificity == 1.0
    none = confusion(_dec(truth, np.zeros(truth.shape.dims, bool)), truth)
    assert none.sensitivity == 0.0 and none.specificity == 1.0
    flipped = confusion(_dec(truth, truth.isotropic), truth)
    assert flipped.sensitivity == 0.0 and flipped.specificity == 0.0
    assert perfect.total == truth.mask.sum()


def test_confusion_shape_mismatch(truth):
    other = LabelVolume(GridShape(3, 3, 3), np.ones((3, 3, 3)))
    with pytest.raises(ValueError):
        confusion(_dec(truth, truth.anisotropic), other)


def test_roc_perfect_and_random(rng):
    y = rng.random(10000) < 0.3
    assert roc_from_scores(y.astype(float), y).auc == 1.0
    assert roc_from_scores(rng.random(10000), y).auc == pytest.approx(0.5, abs=0.02)
    with pytest.raises(ValueError):
        roc_from_scores([1.0, 2.0], [True, True])


def test_roc_symmetry_and_monotone(rng):
    y = rng.random(3000) < 0.4
    s = rng.normal(size=3000) + y
    a = roc_from_scores(s, y, "greater")
    b = roc_from_scores(-s, y, "greater")
    assert a.auc + b.auc == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(a.fpr) >= 0) and np.all(np.diff(a.tpr) >= 0)
    assert a.points[0].tolist() == [0.0, 0.0] and a.points[-1].tolist() == [1.0, 1.0]
    assert a.auc == pytest.approx(np.trapezoid(a.tpr, a.fpr) if hasattr(np, "trapezoid") else np.trapz(a.tpr, a.fpr), abs=1e-12)


def test_roc_ties_and_oracle(rng):
    y = rng.random(2000) < 0.5
    s = np.round(rng.normal(size=2000) + y, 1)
    pos, neg = s[y], s[~y]
    mann_whitney = (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (pos.size * neg.size)
    assert roc_from_scores(s, y).auc == pytest.approx(mann_whitney, abs=1e-12)


def test_roc_monotone_transform_and_direction(rng):
    y = rng.random(2000) < 0.5
    p = rng.random(2000) ** (1 + y)
    a = roc_from_scores(p, y, "less")
    b = roc_from_scores(1 - p, y, "greater")
    c = roc_from_scores(np.log(p), y, "less")
    assert np.array_equal(a.fpr, b.fpr) and np.array_equal(a.tpr, b.tpr)
    assert a.auc == pytest.approx(c.auc, abs=1e-15)
    with pytest.raises(ValueError):
        roc_from_scores(p, y, "sideways")


def test_roc_volume_respects_mask(truth, rng):
    data = np.where(truth.anisotropic, 1.0, 0.0)
    vol = ScalarVolume(truth.shape, np.where(truth.mask, data, np.nan))
    assert roc(vol, truth, "greater").auc == 1.0


def test_qq_chi2_draws(rng):
    # 10^6 draws: at 10^5 the 1st percentile alone has ~3% relative error
    x = stats.chi2.rvs(2, size=1000000, random_state=rng)
    q = qq_chi2(x, np.ones(x.size, bool))
    assert q.max_relative_deviation < 0.05
    assert q.percent[0] == 1 and q.percent[-1] == 99
    assert ks_distance(x) < 0.005


def test_qq_constant_and_too_few():
    q = qq_chi2(np.full(500, 2.0), np.ones(500, bool))
    assert np.all(q.empirical == 2.0)
    with pytest.raises(ValueError):
        qq_chi2(np.ones(50), np.ones(50, bool))


def test_isolated_counts_examples():
    r = np.zeros((7, 7, 7), bool)
    r[3, 3, 3] = True
    assert isolated_counts(r) == (1, 0)
    r[4, 4, 4] = True  # diagonal neighbour in the 26-connected cube
    assert isolated_counts(r) == (0, 2)
    r = np.zeros((9, 9, 9), bool)
    r[2:7, 2:7, 2:7] = True
    assert isolated_counts(r) == (0, 0)


def test_isolated_counts_brute_force(rng):
    r = rng.random((8, 7, 6)) < 0.08
    s1 = s2 = 0
    for v in zip(*np.nonzero(r)):
        lo = [max(c - 1, 0) for c in v]
        n = r[lo[0] : v[0] + 2, lo[1] : v[1] + 2, lo[2] : v[2] + 2].sum()
        s1 += n == 1
        s2 += n == 2
    assert isolated_counts(r) == (s1, s2)
