"""Windowing and feature representations.

Sessions are cut into fixed-length windows (the model's input unit),
each labeled with its final frame's label: "what error state are we in
right now".  Three feature representations are supported downstream:
raw (identity), z-score normalization, and PCA to a variance target.

The transformers follow the scikit-learn estimator contract
(fit/transform/get_params) and are fit on training windows only; they
accept either pooled frames of shape (n, d) or stacked windows of shape
(n, W, d) and transform along the last axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corpus import Session

REPRESENTATIONS = ("raw", "normalized", "pca")


@dataclass
class Window:
    """A fixed-length multimodal subsequence with a single class label.

    ``raw_label`` is the final frame's label in {0..3}; ``class_index``
    is filled in once a splitting scheme relabels the window.
    """

    participant_id: str
    start_frame: int
    features: dict[str, np.ndarray]
    raw_label: int
    class_index: int | None = field(default=None, compare=False)


def make_windows(session: Session, labels: np.ndarray, window: int, stride: int) -> list[Window]:
    """Cut a labeled session into windows starting at 0, stride, 2*stride, ...

    A window is emitted while start + window <= num_frames; if the
    session is shorter than one window the result is empty.  Feature
    slices are copies, so windows can be mutated without touching the
    session or each other.
    """
    if window < 1:
        raise ValueError("window length must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(labels) != session.num_frames:
        raise ValueError("labels length does not match session frames")
    out = []
    for start in range(0, session.num_frames - window + 1, stride):
        feats = {m: mat[start : start + window].copy() for m, mat in session.features.items()}
        out.append(
            Window(
                participant_id=session.participant_id,
                start_frame=start,
                features=feats,
                raw_label=int(labels[start + window - 1]),
            )
        )
    return out


def stack_windows(windows: list[Window], modality: str) -> np.ndarray:
    """Stack one modality across windows into an (n, W, d) array."""
    if not windows:
        raise ValueError("no windows to stack")
    return np.stack([w.features[modality] for w in windows])


def _as_frames(X: np.ndarray) -> np.ndarray:
    """Accept (n, d) frames or (n, W, d) windows; return pooled (N, d) frames."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        return X
    if X.ndim == 3:
        return X.reshape(-1, X.shape[-1])
    raise ValueError(f"expected a 2-D or 3-D array, got shape {X.shape}")


def check_feature_array(X: np.ndarray, name: str = "X") -> np.ndarray:
    """Validate a feature array: 2-D or 3-D, float-convertible, all finite."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2-D (frames) or 3-D (windows), got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


class FrameNormalizer(BaseEstimator, TransformerMixin):
    """Per-coordinate z-scoring fit on pooled training frames.

    Uses the population standard deviation; coordinates that are
    constant in training (sigma = 0) transform to exactly 0.
    """

    def fit(self, X, y=None):
        frames = _as_frames(check_feature_array(X))
        if frames.shape[0] == 0:
            raise ValueError("cannot fit a normalizer on an empty training set")
        self.mean_ = frames.mean(axis=0)
        self.scale_ = frames.std(axis=0)
        self.n_features_in_ = frames.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "mean_"):
            raise NotFittedError("FrameNormalizer is not fitted")
        X = check_feature_array(X)
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[-1]}"
            )
        safe = np.where(self.scale_ > 0, self.scale_, 1.0)
        out = (X - self.mean_) / safe
        if (self.scale_ == 0).any():
            out = np.where(self.scale_ > 0, out, 0.0)
        return out


class PrincipalComponents(BaseEstimator, TransformerMixin):
    """PCA via symmetric eigendecomposition of the training frame covariance.

    Keeps the smallest number of leading components whose cumulative
    explained variance reaches ``variance_target``.  Components are
    sorted by descending eigenvalue, and each is sign-fixed so its
    largest-magnitude coordinate is positive; without that convention
    the projection would be seed- and library-dependent.
    """

    def __init__(self, variance_target: float = 0.95):
        self.variance_target = variance_target

    def fit(self, X, y=None):
        if not 0.0 < self.variance_target <= 1.0:
            raise ValueError("variance_target must be in (0, 1]")
        frames = _as_frames(check_feature_array(X))
        if frames.shape[0] < 2:
            raise ValueError("PCA needs at least 2 training frames")
        self.mean_ = frames.mean(axis=0)
        centered = frames - self.mean_
        cov = centered.T @ centered / frames.shape[0]
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        eigvals = np.clip(eigvals[order], 0.0, None)
        eigvecs = eigvecs[:, order]
        total = float(eigvals.sum())
        if total <= 0.0:
            warnings.warn("training data has zero variance; keeping one component")
            r = 1
            ratios = np.zeros_like(eigvals)
        else:
            ratios = eigvals / total
            r = int(np.argmax(np.cumsum(ratios) >= self.variance_target - 1e-12)) + 1
        components = eigvecs[:, :r]
        # sign convention: largest-magnitude coordinate of each component positive
        flat = np.argmax(np.abs(components), axis=0)
        signs = np.sign(components[flat, np.arange(r)])
        signs[signs == 0] = 1.0
        components = components * signs
        self.components_ = components
        self.explained_variance_ = eigvals[:r]
        self.explained_variance_ratio_ = ratios[:r]
        self.retained_variance_ = float(ratios[:r].sum())
        self.n_components_ = r
        self.n_features_in_ = frames.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "components_"):
            raise NotFittedError("PrincipalComponents is not fitted")
        X = check_feature_array(X)
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[-1]}"
            )
        return (X - self.mean_) @ self.components_
