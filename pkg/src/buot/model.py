"""Linear softmax predictor, training losses, analytic gradients, Adam.

The representation learner is the identity, so the predictor is a single
linear layer followed by a row softmax. All losses are sums over samples
(a mean toggle exists for learning-rate stability); probabilities are
clamped at 1e-12 before any logarithm. Gradients are derived by hand and
checked against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import NonFiniteError, as_float_array, check_finite, check_prediction_matrix
from .bilevel import BilevelConfig, BilevelSolution, _sign_matrix, buot_objective
from .recovery import ClassWeights

__all__ = [
    "SoftmaxModel",
    "Gradients",
    "Adam",
    "softmax",
    "loss_ce",
    "loss_rce",
    "loss_entropy",
    "loss_buot",
    "grad_total",
]

PROB_CLAMP = 1e-12


def softmax(logits):
    """Row softmax stabilized by per-row max subtraction."""
    z = as_float_array(logits, "logits", ndim=2)
    check_finite(z, "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SoftmaxModel:
    """Linear-softmax classifier: ``P = softmax(X W + b)``."""

    weights: np.ndarray  # (d, K)
    bias: np.ndarray  # (K,)

    def __post_init__(self):
        self.weights = as_float_array(self.weights, "weights", ndim=2)
        self.bias = as_float_array(self.bias, "bias", ndim=1)
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ValueError("bias length must match the number of classes")
        check_finite(self.weights, "weights")
        check_finite(self.bias, "bias")

    @classmethod
    def zeros(cls, n_features, n_classes):
        return cls(np.zeros((n_features, n_classes)), np.zeros(n_classes))

    @property
    def n_features(self):
        return self.weights.shape[0]

    @property
    def n_classes(self):
        return self.weights.shape[1]

    def logits(self, x):
        x = as_float_array(x, "features", ndim=2)
        check_finite(x, "features")
        return x @ self.weights + self.bias

    def predict_proba(self, x):
        return softmax(self.logits(x))

    def predict_labels(self, x):
        return np.argmax(self.predict_proba(x), axis=1)

    def copy(self):
        return SoftmaxModel(self.weights.copy(), self.bias.copy())


def _check_onehot(y, n_classes):
    y = as_float_array(y, "labels", ndim=2)
    if y.shape[1] != n_classes:
        raise ValueError(f"label matrix has {y.shape[1]} columns, expected {n_classes}")
    if not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise ValueError("label matrix rows must be one-hot")
    return y


def _log_clamped(p):
    return np.log(np.maximum(p, PROB_CLAMP))


def _class_factors(weights, n_classes):
    """Per-class loss factors from ClassWeights (rescaled) or a raw vector."""
    if weights is None:
        return np.ones(n_classes)
    if isinstance(weights, ClassWeights):
        return weights.rescaled
    w = as_float_array(weights, "class weights", ndim=1)
    if w.shape[0] != n_classes:
        raise ValueError("class weights length must match the number of classes")
    return w


def loss_ce(p, y, mean=False):
    """Cross entropy ``sum(-Y * log P)``, summed over samples by default."""
    p = check_prediction_matrix(p, "predictions")
    y = _check_onehot(y, p.shape[1])
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    total = float(-(y * _log_clamped(p)).sum())
    return total / p.shape[0] if mean else total


def loss_rce(p, y, weights, mean=False):
    """Reweighted cross entropy ``sum(-w_j * Y_ij * log P_ij)``.

    ``weights`` is a ClassWeights (its rescaled form is used, so uniform
    weights reproduce `loss_ce` exactly) or an already-rescaled vector.
    """
    p = check_prediction_matrix(p, "predictions")
    y = _check_onehot(y, p.shape[1])
    w = _class_factors(weights, p.shape[1])
    total = float(-(w[None, :] * y * _log_clamped(p)).sum())
    return total / p.shape[0] if mean else total


def loss_entropy(p, mean=False):
    """Prediction entropy ``sum(-P * log P)`` over all rows."""
    p = check_prediction_matrix(p, "predictions")
    total = float(-(p * _log_clamped(p)).sum())
    return total / p.shape[0] if mean else total


def loss_buot(ps, pt, sol, cfg, mu1=None, nu1=None, mu2=None, nu2=None):
    """Bi-level transport loss at fixed plans (see `buot_objective`)."""
    if not isinstance(sol, BilevelSolution):
        raise TypeError("sol must be a BilevelSolution")
    value = buot_objective(ps, pt, sol.sample_plan, sol.class_plan, cfg, mu1, nu1, mu2, nu2)
    if not np.isfinite(value):
        raise NonFiniteError(f"bi-level loss is non-finite ({value!r})")
    return value


@dataclass
class Gradients:
    weights: np.ndarray
    bias: np.ndarray


def _softmax_backward(p, dloss_dp):
    """Chain a gradient w.r.t. probabilities through the row softmax."""
    inner = p * dloss_dp
    return inner - p * inner.sum(axis=1, keepdims=True)


def _frobenius_grad_wrt_predictions(ps, pt, g1, g2, cost_mode):
    """Gradient of the coupling term of the bi-level loss w.r.t. ps and pt.

    Differentiating ``sum (ps_i - M * pt_j)^2 G1 G2`` at fixed plans gives a
    term linear in the prediction itself (weighted by the plan marginals)
    plus a sign-corrected bilinear term in the other domain's predictions.
    """
    sign = _sign_matrix(ps.shape[1], cost_mode)
    r1 = g1.sum(axis=1)
    c1 = g1.sum(axis=0)
    r2 = g2.sum(axis=1)
    c2 = g2.sum(axis=0)
    grad_ps = 2.0 * ps * np.outer(r1, r2) - 2.0 * (g1 @ pt) @ (sign * g2).T
    grad_pt = 2.0 * pt * np.outer(c1, c2) - 2.0 * (g1.T @ ps) @ (sign * g2)
    return grad_ps, grad_pt


def grad_total(
    model,
    xs,
    ys_onehot,
    xt,
    sol,
    weights,
    cfg,
    lambda_buot,
    lambda_t,
    mean=False,
):
    """Analytic gradient of ``L_rce + lambda_t * L_ent + lambda * L_buot``.

    The transport plans inside ``sol`` are treated as constants (the
    alternating scheme fixes them while the predictor updates); the
    coupling term still propagates through both prediction matrices. Terms
    with a zero coefficient are skipped entirely, so the reduction to the
    plain cross-entropy gradient is exact.

    Parameters
    ----------
    model : SoftmaxModel
    xs, ys_onehot : source batch features (n_s, d) and one-hot labels (n_s, K)
    xt : target batch features (n_t, d); may be None when both
        ``lambda_t`` and ``lambda_buot`` are zero
    sol : BilevelSolution or None
        Required when ``lambda_buot`` is nonzero.
    weights : ClassWeights, vector, or None
        Per-class factors for the reweighted cross entropy.
    cfg : BilevelConfig
        Supplies the cost mode of the coupling term.
    """
    xs = as_float_array(xs, "source features", ndim=2)
    ps = model.predict_proba(xs)
    y = _check_onehot(ys_onehot, model.n_classes)
    w = _class_factors(weights, model.n_classes)

    # reweighted CE: dL/dZ_s = w_row * (P - Y), w_row = factor of the true class
    row_factor = y @ w
    dz_s = row_factor[:, None] * (ps - y)
    if mean:
        dz_s = dz_s / xs.shape[0]

    dz_t = None
    pt = None
    if lambda_t != 0.0 or lambda_buot != 0.0:
        if xt is None:
            raise ValueError("target features are required when lambda_t or lambda_buot is nonzero")
        xt = as_float_array(xt, "target features", ndim=2)
        pt = model.predict_proba(xt)

    if lambda_t != 0.0:
        logp = _log_clamped(pt)
        dent_dp = -(logp + 1.0)
        dz = _softmax_backward(pt, dent_dp)
        if mean:
            dz = dz / xt.shape[0]
        dz_t = lambda_t * dz

    if lambda_buot != 0.0:
        if sol is None:
            raise ValueError("a BilevelSolution is required when lambda_buot is nonzero")
        grad_ps, grad_pt = _frobenius_grad_wrt_predictions(
            ps, pt, sol.sample_plan.values, sol.class_plan.values, cfg.cost_mode
        )
        dz_s = dz_s + lambda_buot * _softmax_backward(ps, grad_ps)
        extra_t = lambda_buot * _softmax_backward(pt, grad_pt)
        dz_t = extra_t if dz_t is None else dz_t + extra_t

    grad_w = xs.T @ dz_s
    grad_b = dz_s.sum(axis=0)
    if dz_t is not None:
        grad_w = grad_w + xt.T @ dz_t
        grad_b = grad_b + dz_t.sum(axis=0)
    return Gradients(grad_w, grad_b)


class Adam:
    """Adam with bias correction; mutates the model in place on `step`."""

    def __init__(self, eta, beta1=0.9, beta2=0.999, eps=1e-8):
        if not eta > 0:
            raise ValueError(f"eta must be positive, got {eta!r}")
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = None
        self._v = None

    def step(self, model, grads):
        gw = as_float_array(grads.weights, "weight gradient", ndim=2)
        gb = as_float_array(grads.bias, "bias gradient", ndim=1)
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteError("gradients contain non-finite values")
        if gw.shape != model.weights.shape or gb.shape != model.bias.shape:
            raise ValueError("gradient shapes do not match the model")
        if self._m is None:
            self._m = [np.zeros_like(model.weights), np.zeros_like(model.bias)]
            self._v = [np.zeros_like(model.weights), np.zeros_like(model.bias)]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for param, m, v, g in (
            (model.weights, self._m[0], self._v[0], gw),
            (model.bias, self._m[1], self._v[1], gb),
        ):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            param -= self.eta * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return model
