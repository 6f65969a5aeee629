"""Synthetic partial-domain-adaptation tasks.

Source classes are spherical Gaussian clusters with means on a circle in
the first two feature dimensions; the target domain draws only the first
``k_target`` classes, with every mean translated by a fixed shift vector.
Target labels are kept for evaluation only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SyntheticPdaTask", "generate_task"]


@dataclass(frozen=True)
class SyntheticPdaTask:
    xs: np.ndarray  # (n_s, d)
    ys: np.ndarray  # (n_s,)
    xt: np.ndarray  # (n_t, d)
    yt: np.ndarray  # (n_t,) hidden labels, evaluation only
    k_source: int
    k_target: int
    class_means: np.ndarray  # (k_source, d)
    shift: np.ndarray  # (d,)
    cov_scale: float
    seed: int

    @property
    def shared_classes(self):
        return tuple(range(self.k_target))

    @property
    def outlier_classes(self):
        return tuple(range(self.k_target, self.k_source))

    @property
    def n_features(self):
        return self.xs.shape[1]


def _class_counts(n, k):
    """Split n samples over k classes as evenly as possible, each >= 1."""
    if n < k:
        raise ValueError(f"cannot place {n} samples into {k} classes with at least one each")
    counts = np.full(k, n // k, dtype=np.int64)
    counts[: n % k] += 1
    return counts


def generate_task(
    k_source,
    k_target,
    n_s,
    n_t,
    d,
    shift_scale,
    seed,
    radius=4.0,
    cov_scale=1.0,
):
    """Build a deterministic synthetic PDA task.

    Class means sit on a circle of the given radius in the first two
    coordinates (zero elsewhere); samples add isotropic Gaussian noise of
    scale ``cov_scale``. The domain shift is a random direction inside the
    mean plane with norm ``shift_scale``, so the stated scale acts fully on
    the class geometry. Identical arguments give bit-identical tasks.

    Parameters
    ----------
    k_source : int
        Number of source classes (>= 1).
    k_target : int
        Number of target classes; ``1 <= k_target <= k_source``. The target
        uses the first ``k_target`` classes.
    n_s, n_t : int
        Domain sizes; must allow at least one sample per existing class.
    d : int
        Feature dimension, >= 2.
    shift_scale : float
        Norm of the target-domain translation (0 disables the shift).
    seed : int
        Seeds both the sampling and the shift direction.
    """
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if not 1 <= k_target <= k_source:
        raise ValueError(f"need 1 <= k_target <= k_source, got {k_target} vs {k_source}")
    if shift_scale < 0:
        raise ValueError(f"shift_scale must be >= 0, got {shift_scale}")
    if cov_scale <= 0:
        raise ValueError(f"cov_scale must be > 0, got {cov_scale}")

    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(k_source) / k_source
    means = np.zeros((k_source, d))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)

    if shift_scale > 0:
        direction = np.zeros(d)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        direction[0], direction[1] = np.cos(angle), np.sin(angle)
        shift = shift_scale * direction
    else:
        rng.uniform(0.0, 2.0 * np.pi)  # keep the stream layout identical
        shift = np.zeros(d)

    counts_s = _class_counts(n_s, k_source)
    counts_t = _class_counts(n_t, k_target)

    ys = np.repeat(np.arange(k_source), counts_s)
    xs = means[ys] + cov_scale * rng.standard_normal((n_s, d))
    yt = np.repeat(np.arange(k_target), counts_t)
    xt = means[yt] + shift + cov_scale * rng.standard_normal((n_t, d))

    return SyntheticPdaTask(
        xs=xs,
        ys=ys,
        xt=xt,
        yt=yt,
        k_source=int(k_source),
        k_target=int(k_target),
        class_means=means,
        shift=shift,
        cov_scale=float(cov_scale),
        seed=int(seed),
    )
