"""Plan recovery: cross-informed plans and per-class weights.

The two levels of the solved transport inform each other through the label
indicator matrices: the class plan masks the sample plan (which pairs of
samples have compatible classes) and the sample plan aggregates into a
class-pair mass matrix. Row sums of the recovered class plan give the
per-source-class weights used to reweight the classification loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_float_array, check_labels, check_prediction_matrix
from .ot import TransportPlan

__all__ = [
    "ClassWeights",
    "indicator_from_labels",
    "pseudo_labels",
    "sample_weight_matrix",
    "class_weight_matrix",
    "recover_sample_plan",
    "recover_class_plan",
    "bilevel_weights",
]


@dataclass(frozen=True)
class ClassWeights:
    """Normalized per-source-class weights.

    ``omega`` sums to 1; ``degenerate`` flags the uniform fallback used when
    the recovered class plan carried no mass (early training).
    """

    omega: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        omega = as_float_array(self.omega, "omega", ndim=1)
        if np.any(omega < 0) or not np.all(np.isfinite(omega)):
            raise ValueError("omega must be nonnegative and finite")
        object.__setattr__(self, "omega", omega)

    @classmethod
    def uniform(cls, k):
        return cls(np.full(k, 1.0 / k))

    @property
    def n_classes(self):
        return self.omega.size

    @property
    def rescaled(self):
        """Weights scaled so a uniform ``omega`` becomes exactly all-ones.

        Dividing by the mean keeps the reweighted loss on the same scale as
        the plain one; the constant case is short-circuited so the
        uniform-weights reduction is exact in floating point.
        """
        if np.all(self.omega == self.omega[0]):
            return np.ones_like(self.omega)
        return self.omega / float(np.mean(self.omega))


def indicator_from_labels(labels, k):
    """One-hot n x K assignment matrix from integer class labels."""
    labels = check_labels(labels, k)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def pseudo_labels(pt):
    """Hard labels from target predictions: row argmax, ties to the lowest index."""
    pt = check_prediction_matrix(pt, "target predictions")
    return np.argmax(pt, axis=1)


def _values(plan, name):
    if isinstance(plan, TransportPlan):
        return plan.values
    return as_float_array(plan, name, ndim=2)


def _check_recovery(sample_plan, class_plan, source_indicator, target_indicator):
    g1 = _values(sample_plan, "sample plan")
    g2 = _values(class_plan, "class plan")
    s = as_float_array(source_indicator, "source indicator", ndim=2)
    t = as_float_array(target_indicator, "target indicator", ndim=2)
    k = g2.shape[0]
    if g2.shape != (k, k):
        raise ValueError(f"class plan must be square, got {g2.shape}")
    if s.shape != (g1.shape[0], k):
        raise ValueError(
            f"source indicator shape {s.shape} does not match plan rows {g1.shape[0]} and K={k}"
        )
    if t.shape != (g1.shape[1], k):
        raise ValueError(
            f"target indicator shape {t.shape} does not match plan columns {g1.shape[1]} and K={k}"
        )
    return g1, g2, s, t


def sample_weight_matrix(class_plan, source_indicator, target_indicator):
    """n_s x n_t weight matrix: class-plan mass between each sample pair's classes."""
    g2 = _values(class_plan, "class plan")
    s = as_float_array(source_indicator, "source indicator", ndim=2)
    t = as_float_array(target_indicator, "target indicator", ndim=2)
    return s @ g2 @ t.T


def class_weight_matrix(sample_plan, source_indicator, target_indicator):
    """K x K weight matrix: sample-plan mass aggregated per class pair."""
    g1 = _values(sample_plan, "sample plan")
    s = as_float_array(source_indicator, "source indicator", ndim=2)
    t = as_float_array(target_indicator, "target indicator", ndim=2)
    return s.T @ g1 @ t


def recover_sample_plan(sample_plan, class_plan, source_indicator, target_indicator):
    """Sample plan masked by the class plan's mass between the paired classes."""
    g1, g2, s, t = _check_recovery(sample_plan, class_plan, source_indicator, target_indicator)
    return TransportPlan((s @ g2 @ t.T) * g1)


def recover_class_plan(sample_plan, class_plan, source_indicator, target_indicator):
    """Class plan masked by the sample-plan mass aggregated per class pair."""
    g1, g2, s, t = _check_recovery(sample_plan, class_plan, source_indicator, target_indicator)
    return TransportPlan((s.T @ g1 @ t) * g2)


def bilevel_weights(recovered_class_plan):
    """Per-source-class weights: row sums of the recovered class plan, normalized.

    Row ``k`` collects the mass leaving source class ``k``; classes that
    ship no mass get weight zero (the outlier signature). Sums use
    ``math.fsum`` so relabeling classes permutes the weights exactly. An
    all-zero plan falls back to uniform weights with ``degenerate=True``.
    """
    g2 = _values(recovered_class_plan, "recovered class plan")
    if g2.shape[0] != g2.shape[1]:
        raise ValueError(f"recovered class plan must be square, got {g2.shape}")
    if np.any(g2 < 0) or not np.all(np.isfinite(g2)):
        raise ValueError("recovered class plan must be nonnegative and finite")
    k = g2.shape[0]
    rows = np.array([math.fsum(g2[i, :]) for i in range(k)])
    total = math.fsum(rows)
    if total == 0.0:
        return ClassWeights(np.full(k, 1.0 / k), degenerate=True)
    return ClassWeights(rows / total)
