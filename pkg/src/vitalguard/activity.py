"""Posture/activity recognition feeding the agent's profile vector.

A nearest-centroid classifier over simple per-channel window statistics
(mean, std, mean absolute first difference), standardized with global
training moments.  Deterministic, fast, and adequate for gating the
activity-conditioned baselines; removing it is the activity ablation.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .dataset import N_ACTIVITIES
from .errors import ModelNotReady
from .persist import array_from_json, array_to_json, load_document, save_document


def extract_features(window_data):
    """Per-channel [mean, std, mean |first difference|]; shape (3*C,)."""
    data = np.asarray(window_data, dtype=np.float64)
    mean = data.mean(axis=1)
    std = data.std(axis=1)
    mad = np.abs(np.diff(data, axis=1)).mean(axis=1)
    return np.concatenate([mean, std, mad])


def profile_vector(activity, n_classes=N_ACTIVITIES):
    """One-hot activity profile; sums to one by construction."""
    a = np.zeros(n_classes)
    a[activity] = 1.0
    return a


def uniform_profile(n_classes=N_ACTIVITIES):
    """The activity-agnostic profile used by the ablated pipeline."""
    return np.full(n_classes, 1.0 / n_classes)


class ActivityRecognizer(BaseEstimator, ClassifierMixin):
    """Nearest-centroid recognizer on standardized window statistics."""

    def __init__(self, n_classes=N_ACTIVITIES):
        self.n_classes = n_classes

    def fit(self, windows, labels=None):
        """Train from a list of Window objects or (features, labels)."""
        if labels is None:
            feats = np.stack([extract_features(w.data) for w in windows])
            labels = np.array([w.activity for w in windows])
        else:
            feats = np.asarray(windows, dtype=np.float64)
            labels = np.asarray(labels)
        self.feature_mean_ = feats.mean(axis=0)
        self.feature_std_ = np.maximum(feats.std(axis=0), 1e-12)
        standardized = (feats - self.feature_mean_) / self.feature_std_
        centroids = {}
        for act in range(self.n_classes):
            mask = labels == act
            if not mask.any():
                warnings.warn(f"activity {act} has no training windows; skipped")
                continue
            centroids[act] = standardized[mask].mean(axis=0)
        self.classes_ = np.array(sorted(centroids))
        self.centroids_ = np.stack([centroids[a] for a in self.classes_])
        return self

    def _check_fitted(self):
        if not hasattr(self, "centroids_"):
            raise ModelNotReady("recognizer is not trained")

    def predict_one(self, window_data):
        """Nearest centroid; exact distance ties go to the lowest code."""
        self._check_fitted()
        f = (extract_features(window_data) - self.feature_mean_) / self.feature_std_
        d2 = ((self.centroids_ - f) ** 2).sum(axis=1)
        return int(self.classes_[int(np.argmin(d2))])  # argmin takes first=lowest code

    def predict(self, windows):
        return np.array([self.predict_one(w.data if hasattr(w, "data") else w)
                         for w in windows])

    def predict_profile(self, window_data, temperature=0.5):
        """Soft activity profile from centroid distances; shape (n_classes,).

        Softmax over negative squared distances with an adaptive scale
        proportional to the nearest distance: a window close to some
        centroid yields a near-one-hot profile, while a window far from
        every centroid (heavy corruption) yields a near-flat one, so
        downstream consumers degrade toward activity-agnostic behavior
        instead of committing to a confidently wrong class.
        """
        self._check_fitted()
        f = (extract_features(window_data) - self.feature_mean_) / self.feature_std_
        d2 = ((self.centroids_ - f) ** 2).sum(axis=1)
        scale = temperature * d2.min() + 1e-12
        logits = -(d2 - d2.min()) / scale
        w = np.exp(logits)
        p = np.zeros(self.n_classes)
        p[self.classes_] = w / w.sum()
        return p

    def recognize(self, window_data):
        """One-hot activity profile for one window."""
        return profile_vector(self.predict_one(window_data), self.n_classes)

    def save(self, path):
        self._check_fitted()
        save_document(path, "activity-recognizer", {
            "n_classes": self.n_classes,
            "classes": self.classes_.tolist(),
            "centroids": array_to_json(self.centroids_),
            "feature_mean": array_to_json(self.feature_mean_),
            "feature_std": array_to_json(self.feature_std_),
        })

    @classmethod
    def load(cls, path):
        doc = load_document(path, "activity-recognizer")
        model = cls(n_classes=doc["n_classes"])
        model.classes_ = np.array(doc["classes"])
        model.centroids_ = array_from_json(doc["centroids"])
        model.feature_mean_ = array_from_json(doc["feature_mean"])
        model.feature_std_ = array_from_json(doc["feature_std"])
        return model
