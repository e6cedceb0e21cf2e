import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import cohen_kappa_score

from psiconn.committee import (CVReport, RandomCommittee, RandomTreeClassifier,
                               class_order, confusion_matrix, cross_validate, kappa,
                               per_class_rates)
from psiconn.exceptions import StratificationError

LABELS = ["IN", "IH", "EX", "EH"]


def _hand_kappa(M):
    n = sum(sum(r) for r in M)
    po = sum(M[k][k] for k in range(len(M))) / n
    pe = sum(sum(M[k]) * sum(r[k] for r in M) for k in range(len(M))) / n ** 2
    return (po - pe) / (1 - pe)


def _hand_rates(M, k):
    n = sum(sum(r) for r in M)
    tp = M[k][k]
    fn = sum(M[k]) - tp
    fp = sum(r[k] for r in M) - tp
    tn = n - tp - fn - fp
    tpr, fpr, prec = tp / (tp + fn), fp / (fp + tn), tp / (tp + fp)
    return tpr, fpr, prec, 2 * prec * tpr / (prec + tpr)


FIXED = [
    [[45, 5], [15, 35]],
    [[10, 2, 1, 0], [3, 9, 0, 1], [0, 1, 12, 2], [1, 0, 3, 8]],
    [[50, 0, 0, 0], [0, 47, 3, 0], [0, 0, 50, 0], [2, 0, 1, 47]],
    [[7, 3, 5], [2, 11, 4], [6, 1, 9]],
]


@pytest.mark.parametrize("M", FIXED)
def test_metrics_match_hand_formulas(M):
    assert abs(kappa(M) - _hand_kappa(M)) <= 1e-12
    rates = per_class_rates(M)
    for k in range(len(M)):
        tpr, fpr, prec, f1 = _hand_rates(M, k)
        assert abs(rates["tp_rate"][k] - tpr) <= 1e-12
        assert abs(rates["fp_rate"][k] - fpr) <= 1e-12
        assert abs(rates["precision"][k] - prec) <= 1e-12
        assert abs(rates["f1"][k] - f1) <= 1e-12


def test_kappa_examples():
    assert kappa([[5, 0], [0, 5]]) == 1.0
    assert kappa([[2, 2], [2, 2]]) == 0.0
    assert kappa([[45, 5], [15, 35]]) == pytest.approx(0.60, abs=1e-12)
    assert kappa([[4, 0], [0, 0]]) == 0.0
    with pytest.raises(ValueError):
        kappa([[0, 0], [0, 0]])


def test_kappa_agrees_with_sklearn(rng):
    y = rng.integers(0, 4, 300)
    p = np.where(rng.random(300) < 0.6, y, rng.integers(0, 4, 300))
    M = confusion_matrix(y, p, range(4))
    assert kappa(M) == pytest.approx(cohen_kappa_score(y, p), abs=1e-12)


def test_chance_kappa():
    rng = np.random.default_rng(99)
    y = np.repeat(LABELS, 500)
    p = rng.choice(LABELS, size=2000)
    assert -0.05 <= kappa(confusion_matrix(y, p, LABELS)) <= 0.05


def test_diagonal_report():
    rep = CVReport(LABELS, np.diag([5, 6, 7, 8]))
    assert rep.accuracy == 1 and rep.kappa == 1 and rep.f1 == [1.0] * 4


@given(st.lists(st.integers(0, 30), min_size=16, max_size=16))
def test_report_invariants(cells):
    M = np.array(cells).reshape(4, 4)
    if M.sum() == 0:
        return
    rep = CVReport(LABELS, M)
    assert rep.accuracy == pytest.approx(np.trace(M) / M.sum())
    for vals in (rep.tp_rate, rep.fp_rate, rep.precision, rep.f1):
        assert all(0.0 <= v <= 1.0 for v in vals)


def test_report_text_rows():
    text = CVReport(LABELS, np.diag([1, 1, 1, 1])).to_text("Theta")
    rows = [line.split("\t")[0] for line in text.splitlines()]
    assert rows[-4:] == ["TP Rate", "FP Rate", "Precision", "F1 score"]
    assert "Label\tIN\tIH\tEX\tEH" in text


def test_class_order():
    assert list(class_order(["EH", "IN", "EX", "IH"])) == LABELS
    assert list(class_order(["b", "a"])) == ["a", "b"]


class TestTree:
    def test_single_row_is_a_leaf(self):
        tree = RandomTreeClassifier().fit([[1.0, 2.0]], ["EX"])
        assert tree.n_nodes == 1 and tree.predict([[9.0, 9.0]])[0] == "EX"

    def test_separable_training_accuracy(self, rng):
        X = rng.standard_normal((200, 2))
        y = np.where(X[:, 0] + 0.001 > 0.3, "IN", "EH")
        tree = RandomTreeClassifier(random_state=3).fit(X, y)
        assert (tree.predict(X) == y).mean() == 1.0

    def test_deterministic(self, rng):
        X, y = rng.standard_normal((80, 6)), rng.choice(LABELS, 80)
        probe = rng.standard_normal((100, 6))
        a = RandomTreeClassifier(random_state=5).fit(X, y).predict(probe)
        b = RandomTreeClassifier(random_state=5).fit(X, y).predict(probe)
        np.testing.assert_array_equal(a, b)

    def test_split_features_come_from_candidates(self, rng):
        X, y = rng.standard_normal((120, 16)), rng.choice(LABELS, 120)
        tree = RandomTreeClassifier(random_state=1).fit(X, y)
        assert tree.max_features_ == 5
        for node, f in enumerate(tree.feature_):
            if f >= 0:
                assert f in tree.candidates_[node]

    def test_leaves_pure_or_unsplittable(self, rng):
        X = np.round(rng.standard_normal((150, 3)), 1)
        y = rng.choice(LABELS, 150)
        tree = RandomTreeClassifier(random_state=2).fit(X, y)
        leaves = tree.apply(X)
        for leaf in np.unique(leaves):
            rows = X[leaves == leaf]
            pure = len(set(y[leaves == leaf])) == 1
            assert pure or (rows == rows[0]).all()

    def test_width_mismatch(self, rng):
        tree = RandomTreeClassifier().fit(rng.standard_normal((10, 3)), ["IN", "EX"] * 5)
        with pytest.raises(ValueError, match="width"):
            tree.predict(np.zeros((1, 4)))


class TestCommittee:
    def _data(self, rng, n=200):
        X = rng.standard_normal((n, 8))
        y = np.array(LABELS)[(X[:, 0] > 0).astype(int) * 2 + (X[:, 1] > 0)]
        X[:, :2] += 0.3 * rng.standard_normal((n, 2))
        return X, y

    def test_proba_is_mean_of_trees(self, rng):
        X, y = self._data(rng)
        com = RandomCommittee(random_state=4).fit(X, y)
        P = com.predict_proba(X[:20])
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        manual = np.mean([RandomTreeClassifier(random_state=4 + t, classes=com.classes_)
                          .fit(X, y).predict_proba(X[:20]) for t in range(10)], axis=0)
        np.testing.assert_allclose(P, manual, atol=1e-15)

    def test_identical_trees(self, rng):
        X, y = self._data(rng)
        com = RandomCommittee(n_estimators=1, random_state=8).fit(X, y)
        tree = RandomTreeClassifier(random_state=8).fit(X, y)
        np.testing.assert_array_equal(com.predict_proba(X), tree.predict_proba(X))

    def test_ties_resolve_in_phase_order(self):
        X = np.array([[0.0], [0.0]])
        com = RandomCommittee(n_estimators=3).fit(X, ["EH", "IH"])
        assert com.predict([[0.0]])[0] == "IH"

    def test_committee_log_loss_beats_worst_tree(self, rng):
        X, y = self._data(rng, 400)
        com = RandomCommittee(random_state=0).fit(X[:300], y[:300])
        order = {c: k for k, c in enumerate(com.classes_)}
        yi = np.array([order[v] for v in y[300:]])

        def loss(P):
            return -np.mean(np.log(np.clip(P[np.arange(len(yi)), yi], 1e-3, 1)))

        worst = max(loss(t._proba(np.ascontiguousarray(X[300:])))
                    for t in com.estimators_)
        assert loss(com.predict_proba(X[300:])) < worst

    def test_cross_validate_pools_folds(self, rng):
        X, y = self._data(rng)
        rep = cross_validate(X, y, folds=10, seed=1)
        np.testing.assert_array_equal(rep.confusion.sum(axis=1),
                                      [np.sum(y == c) for c in rep.labels])
        assert rep.accuracy > 0.7

    def test_stratification_error(self, rng):
        y = np.array(["IN"] * 20 + ["EX"] * 5)
        with pytest.raises(StratificationError):
            cross_validate(rng.standard_normal((25, 3)), y, folds=10)
