"""Input checks shared by the estimators and pipeline stages."""
import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import StratificationError


def check_epochs(X):
    """Validate a stack of epochs ``[n_epochs, n_samples, n_channels]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected [n_epochs, n_samples, n_channels], got {X.shape}")
    if X.shape[0] == 0 or X.shape[2] < 2:
        raise ValueError("need at least one epoch and two channels")
    if not np.isfinite(X).all():
        raise ValueError("epochs contain non-finite values")
    return X


def check_antisymmetric(M, atol=1e-12):
    M = check_array(M, ensure_2d=True, dtype=np.float64)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if not np.allclose(M, -M.T, rtol=0, atol=atol * scale):
        raise ValueError("matrix is not antisymmetric")
    return M


def check_mask(mask, n_features):
    """Boolean mask of length ``n_features`` from a mask or feature-id list."""
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n_features,):
            raise ValueError(f"mask has shape {mask.shape}, expected ({n_features},)")
        return mask
    out = np.zeros(n_features, dtype=bool)
    ids = mask.astype(int).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= n_features):
        raise ValueError("feature id out of range")
    out[ids] = True
    return out


def check_class_support(y, n_folds):
    """Raise unless every class has at least ``n_folds`` rows."""
    labels, counts = np.unique(np.asarray(y), return_counts=True)
    if len(labels) < 2:
        raise StratificationError("need at least two classes")
    thin = {str(l): int(c) for l, c in zip(labels, counts) if c < n_folds}
    if thin:
        raise StratificationError(
            f"classes with fewer than {n_folds} rows: {thin}")
