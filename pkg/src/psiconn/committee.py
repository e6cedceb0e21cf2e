"""Random trees, the random committee ensemble, and cross-validated metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _tree
from .signal_io import PHASE_LABELS
from .validation import check_class_support

_SEED_MASK = (1 << 63) - 1


def class_order(y):
    """Phase labels in IN, IH, EX, EH order; other labels sorted."""
    present = set(np.unique(np.asarray(y)).tolist())
    if present <= set(PHASE_LABELS):
        return np.array([c for c in PHASE_LABELS if c in present])
    return np.array(sorted(present))


def encode_labels(y, classes):
    lookup = {c: k for k, c in enumerate(np.asarray(classes).tolist())}
    try:
        return np.array([lookup[v] for v in np.asarray(y).tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc} not among classes") from None


def default_max_features(n_features):
    return int(np.floor(np.log2(n_features))) + 1 if n_features > 0 else 1


class RandomTreeClassifier(ClassifierMixin, BaseEstimator):
    """Unpruned decision tree choosing each split among K random features.

    At every internal node K distinct features are drawn uniformly; the split
    is the information-gain-maximising threshold over those candidates. Ties
    go to the lowest feature id, then the lowest threshold. Leaves store class
    counts, so ``predict_proba`` returns the leaf class distribution.

    Parameters
    ----------
    max_features : int, optional
        K; defaults to ``floor(log2(n_features)) + 1``.
    random_state : int, default 0
    classes : sequence, optional
        Fix the class axis (used by the committee so every tree agrees).
    """

    def __init__(self, max_features=None, random_state=0, classes=None):
        self.max_features = max_features
        self.random_state = random_state
        self.classes = classes

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[0] < 1:
            raise ValueError("empty table")
        classes = (np.asarray(self.classes) if self.classes is not None
                   else class_order(y))
        return self._fit_encoded(np.ascontiguousarray(X), encode_labels(y, classes),
                                 classes)

    def _fit_encoded(self, X, yi, classes):
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        K = self.max_features or default_max_features(X.shape[1])
        K = int(min(max(K, 1), X.shape[1]))
        self.max_features_ = K
        seed = int(self.random_state or 0) & _SEED_MASK
        (self.feature_, self.threshold_, self.left_, self.right_,
         self.counts_, self.candidates_) = _tree.grow_tree(
            X, yi, len(classes), K, seed)
        return self

    @property
    def n_nodes(self):
        return len(self.feature_)

    def apply(self, X):
        check_is_fitted(self, "feature_")
        X = self._check_width(X)
        return _tree.apply_tree(X, self.feature_, self.threshold_,
                                self.left_, self.right_)

    def _check_width(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"row width {X.shape[1]} differs from training width "
                f"{self.n_features_in_}")
        return np.ascontiguousarray(X)

    def predict_proba(self, X):
        check_is_fitted(self, "feature_")
        return self._proba(self._check_width(X))

    def _proba(self, X):
        leaves = _tree.apply_tree(X, self.feature_, self.threshold_,
                                  self.left_, self.right_)
        c = self.counts_[leaves]
        return c / c.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class RandomCommittee(ClassifierMixin, BaseEstimator):
    """Average of ``n_estimators`` random trees seeded ``random_state + t``.

    Ties in the averaged distribution resolve to the earliest class in
    IN, IH, EX, EH order.
    """

    def __init__(self, n_estimators=10, max_features=None, random_state=0):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = class_order(y)
        self.n_features_in_ = X.shape[1]
        base = int(self.random_state or 0)
        X = np.ascontiguousarray(X)
        yi = encode_labels(y, self.classes_)
        self.estimators_ = [
            RandomTreeClassifier(self.max_features, base + t, classes=self.classes_)
            ._fit_encoded(X, yi, self.classes_)
            for t in range(self.n_estimators)]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"row width {X.shape[1]} differs from training width "
                f"{self.n_features_in_}")
        X = np.ascontiguousarray(X)
        return np.mean([t._proba(X) for t in self.estimators_], axis=0)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


# --------------------------------------------------------------------------
# metrics

def kappa(confusion) -> float:
    """Cohen's kappa from a confusion matrix (rows = truth, cols = prediction)."""
    M = np.asarray(confusion, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("confusion matrix must be square")
    if (M < 0).any():
        raise ValueError("confusion counts must be nonnegative")
    total = M.sum()
    if total <= 0:
        raise ValueError("confusion matrix is all zero")
    p_o = np.trace(M) / total
    p_e = float(M.sum(axis=1) @ M.sum(axis=0)) / total ** 2
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1 - p_e))


def _ratio(a, b):
    return float(a / b) if b > 0 else 0.0


def per_class_rates(confusion) -> dict:
    """One-vs-rest TP rate, FP rate, precision and F1 for every class index."""
    M = np.asarray(confusion, dtype=np.float64)
    total = M.sum()
    out = {"tp_rate": [], "fp_rate": [], "precision": [], "f1": []}
    for k in range(M.shape[0]):
        tp = M[k, k]
        fn = M[k].sum() - tp
        fp = M[:, k].sum() - tp
        tn = total - tp - fn - fp
        rec = _ratio(tp, tp + fn)
        prec = _ratio(tp, tp + fp)
        out["tp_rate"].append(rec)
        out["fp_rate"].append(_ratio(fp, fp + tn))
        out["precision"].append(prec)
        out["f1"].append(_ratio(2 * prec * rec, prec + rec))
    return out


def confusion_matrix(y_true, y_pred, labels):
    pos = {c: k for k, c in enumerate(list(labels))}
    M = np.zeros((len(pos), len(pos)), dtype=np.int64)
    for t, p in zip(np.asarray(y_true).tolist(), np.asarray(y_pred).tolist()):
        M[pos[t], pos[p]] += 1
    return M


@dataclass
class CVReport:
    labels: list
    confusion: np.ndarray
    accuracy: float = field(init=False)
    kappa: float = field(init=False)
    tp_rate: list = field(init=False)
    fp_rate: list = field(init=False)
    precision: list = field(init=False)
    f1: list = field(init=False)
    folds: int = 10
    seed: int = 0
    cv_unit: str = "epoch"

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        total = self.confusion.sum()
        self.accuracy = float(np.trace(self.confusion) / total)
        self.kappa = kappa(self.confusion)
        rates = per_class_rates(self.confusion)
        self.tp_rate = rates["tp_rate"]
        self.fp_rate = rates["fp_rate"]
        self.precision = rates["precision"]
        self.f1 = rates["f1"]

    @classmethod
    def from_confusion(cls, labels, confusion, **kw):
        return cls(list(labels), confusion, **kw)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "labels": list(self.labels),
            "per_class": {lab: {"tp_rate": self.tp_rate[k],
                                "fp_rate": self.fp_rate[k],
                                "precision": self.precision[k],
                                "f1": self.f1[k]}
                          for k, lab in enumerate(self.labels)},
            "confusion": self.confusion.tolist(),
            "folds": self.folds,
            "seed": self.seed,
            "cv_unit": self.cv_unit,
        }

    def to_text(self, band_name=None) -> str:
        """Plain-text table with the rows TP Rate, FP Rate, Precision, F1 score."""
        lines = []
        if band_name:
            lines.append(f"EEG band\t{band_name}")
        lines.append(f"Cross-validation accuracy\t{100 * self.accuracy:.2f} %")
        lines.append("\t".join(["Label"] + list(self.labels)))
        for title, vals in (("TP Rate", self.tp_rate), ("FP Rate", self.fp_rate),
                            ("Precision", self.precision), ("F1 score", self.f1)):
            lines.append("\t".join([title] + [f"{v:.3f}" for v in vals]))
        return "\n".join(lines) + "\n"


def stratified_folds(y, folds, seed):
    """Test-index arrays of a shuffled stratified K-fold split."""
    check_class_support(y, folds)
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return [test for _, test in skf.split(np.zeros(len(y)), y)]


def cross_val_predict(X, y, folds=10, seed=0, n_estimators=10, max_features=None):
    """Out-of-fold committee predictions."""
    X = np.ascontiguousarray(check_array(X, dtype=np.float64))
    y = np.asarray(y)
    pred = np.empty(len(y), dtype=object)
    labels = class_order(y)
    for test in stratified_folds(y, folds, seed):
        train = np.ones(len(y), dtype=bool)
        train[test] = False
        model = RandomCommittee(n_estimators, max_features, seed)
        model.fit(X[train], y[train])
        pred[test] = model.predict(X[test])
    return pred, labels


def cross_validate(X, y, folds=10, seed=0, n_estimators=10, max_features=None):
    """Stratified K-fold CV of a random committee; metrics pooled over folds."""
    pred, labels = cross_val_predict(X, y, folds, seed, n_estimators, max_features)
    M = confusion_matrix(y, pred, labels)
    return CVReport(list(labels), M, folds=folds, seed=seed)
