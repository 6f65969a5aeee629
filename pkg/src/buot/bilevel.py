"""Label-aware transport cost and the alternating bi-level UOT solver.

The bi-level model couples a sample-level plan (n_s x n_t) and a
class-level plan (K x K) through a 4-index cost tensor built from the two
prediction matrices. Contracting that tensor against one plan yields the
effective cost matrix for the other; `contract_oracle` evaluates the
contraction literally while `contract_fast` uses the rank-structured
decomposition that removes one factor of K (respectively n) from the cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import NonFiniteError, as_float_array, check_cost_matrix, check_prediction_matrix
from .ot import TransportPlan, kl_divergence, plan_entropy, scaling_uot, sinkhorn_balanced

__all__ = [
    "BilevelConfig",
    "BilevelSolution",
    "label_sign_matrix",
    "label_aware_cost",
    "contract_oracle",
    "contract_fast",
    "contract",
    "solve_bilevel",
    "buot_objective",
]

COST_MODES = ("label_aware", "squared_euclidean")
BALANCE_MODES = ("uot", "ot")
KERNEL_MODES = ("fast", "oracle")


@dataclass
class BilevelConfig:
    """Hyperparameters of the alternating bi-level solver.

    ``lambda1``/``lambda2`` weight the entropy of the sample-level and
    class-level plans (they are also the entropic strengths of the inner
    solves); ``beta1``/``beta2`` are the corresponding marginal relaxation
    strengths. ``t_uot`` alternation rounds are performed, each solving both
    levels to ``inner_tol``.
    """

    lambda1: float = 0.05
    lambda2: float = 0.05
    beta1: float = 1.0
    beta2: float = 1.0
    t_uot: int = 5
    inner_tol: float = 1e-9
    inner_max_iter: int = 1000
    cost_mode: str = "label_aware"
    balance_mode: str = "uot"
    kernel_mode: str = "fast"

    def validate(self):
        for name in ("lambda1", "lambda2", "beta1", "beta2", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.t_uot < 1:
            raise ValueError(f"t_uot must be >= 1, got {self.t_uot}")
        if self.inner_max_iter < 1:
            raise ValueError(f"inner_max_iter must be >= 1, got {self.inner_max_iter}")
        if self.cost_mode not in COST_MODES:
            raise ValueError(f"cost_mode must be one of {COST_MODES}, got {self.cost_mode!r}")
        if self.balance_mode not in BALANCE_MODES:
            raise ValueError(f"balance_mode must be one of {BALANCE_MODES}, got {self.balance_mode!r}")
        if self.kernel_mode not in KERNEL_MODES:
            raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}, got {self.kernel_mode!r}")
        return self


@dataclass
class BilevelSolution:
    """Output of `solve_bilevel`: both plans plus per-round diagnostics."""

    sample_plan: TransportPlan
    class_plan: TransportPlan
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = True
    kernel_seconds: float = 0.0
    kernel_calls: int = 0


def label_sign_matrix(k):
    """K x K matrix with +1 on the diagonal and -1 off it.

    Encodes the class-match rule of the label-aware cost: the cross term of
    the squared difference flips sign exactly when the class indices differ.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return np.where(np.eye(k, dtype=bool), 1.0, -1.0)


def _sign_matrix(k, cost_mode):
    if cost_mode == "label_aware":
        return label_sign_matrix(k)
    if cost_mode == "squared_euclidean":
        return np.ones((k, k))
    raise ValueError(f"unknown cost_mode {cost_mode!r}")


def label_aware_cost(a, b, same_class):
    """Pairwise cost between two prediction entries.

    ``(a - b)**2`` when the class indices match, ``(a + b)**2`` otherwise,
    so transporting mass between different classes is penalized: for
    ``a, b in [0, 1]`` the same-class cost is at most 1 while the
    different-class cost reaches 4.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a < 0) or np.any(a > 1) or np.any(b < 0) or np.any(b > 1):
        raise ValueError("prediction entries must lie in [0, 1]")
    sign = 1.0 if same_class else -1.0
    out = (a - sign * b) ** 2
    return float(out) if out.ndim == 0 else out


def _check_contract_inputs(ps, pt, plan, over):
    ps = check_prediction_matrix(ps, "source predictions")
    pt = check_prediction_matrix(pt, "target predictions")
    if ps.shape[1] != pt.shape[1]:
        raise ValueError(
            f"source and target must share the class count, got {ps.shape[1]} vs {pt.shape[1]}"
        )
    k = ps.shape[1]
    values = plan.values if isinstance(plan, TransportPlan) else as_float_array(plan, "plan", ndim=2)
    if over == "samples":
        expected = (ps.shape[0], pt.shape[0])
    elif over == "classes":
        expected = (k, k)
    else:
        raise ValueError(f"over must be 'samples' or 'classes', got {over!r}")
    if values.shape != expected:
        raise ValueError(f"plan has shape {values.shape}, expected {expected} for over={over!r}")
    return ps, pt, values, k


def contract_oracle(ps, pt, plan, over, cost_mode="label_aware"):
    """Literal tensor contraction; the reference the fast kernel is checked against.

    Builds the explicit 4-index cost tensor slab by slab (one slab per
    source class to bound memory) and contracts it against the plan.
    Complexity O(n_s * n_t * K^2) either way.

    Parameters
    ----------
    ps, pt : array-like
        Row-stochastic prediction matrices, shapes (n_s, K) and (n_t, K).
    plan : TransportPlan or ndarray
        The plan being contracted: (n_s, n_t) for ``over='samples'``
        (output is K x K), (K, K) for ``over='classes'`` (output is
        n_s x n_t).
    cost_mode : str
        ``label_aware`` or ``squared_euclidean`` (the latter ignores class
        indices).
    """
    ps, pt, values, k = _check_contract_inputs(ps, pt, plan, over)
    return _contract_oracle_impl(ps, pt, values, over, _sign_matrix(k, cost_mode))


def _contract_oracle_impl(ps, pt, values, over, sign):
    k = ps.shape[1]
    n_s, n_t = ps.shape[0], pt.shape[0]
    if over == "samples":
        out = np.empty((k, k))
        for i2 in range(k):
            # slab[i1, j1, j2] = (ps[i1, i2] - sign[i2, j2] * pt[j1, j2])^2
            slab = (ps[:, i2][:, None, None] - sign[i2][None, None, :] * pt[None, :, :]) ** 2
            out[i2, :] = np.einsum("abj,ab->j", slab, values)
        return out
    out = np.zeros((n_s, n_t))
    for i2 in range(k):
        slab = (ps[:, i2][:, None, None] - sign[i2][None, None, :] * pt[None, :, :]) ** 2
        out += slab @ values[i2, :]
    return out


def _contract_fast_impl(ps, pt, values, over, sign):
    r = values.sum(axis=1)
    c = values.sum(axis=0)
    if over == "samples":
        sq = (ps**2).T @ r
        tq = c @ (pt**2)
        cross = ps.T @ values @ pt
        return sq[:, None] + tq[None, :] - 2.0 * sign * cross
    sq = (ps**2) @ r
    tq = (pt**2) @ c
    cross = ps @ (sign * values) @ pt.T
    return sq[:, None] + tq[None, :] - 2.0 * cross


def contract_fast(ps, pt, plan, over, cost_mode="label_aware"):
    """Contraction through the decomposition ``c - 2*M .* (P' G P)``.

    Expanding each squared term splits the tensor contraction into two
    marginal-weighted square terms plus a sign-corrected bilinear term:

    ``over='samples'``:  ``(Ps^2)' r 1' + 1 c' (Pt^2)  -  2 M .* (Ps' G Pt)``
    ``over='classes'``:  ``(Ps^2) r 1'  + 1 c' (Pt^2)' -  2 Ps (M .* G) Pt'``

    where ``r`` and ``c`` are the row/column marginals of the contracted
    plan ``G`` (the actual marginals, so the identity holds for unbalanced
    plans too) and ``M`` is the +/-1 class-match matrix. Cost O(n K^2 + n^2 K)
    instead of O(n^2 K^2).
    """
    ps, pt, values, k = _check_contract_inputs(ps, pt, plan, over)
    return _contract_fast_impl(ps, pt, values, over, _sign_matrix(k, cost_mode))


def contract(ps, pt, plan, over, cost_mode="label_aware", kernel_mode="fast"):
    """Dispatch between the fast and the literal contraction kernel."""
    if kernel_mode == "fast":
        return contract_fast(ps, pt, plan, over, cost_mode)
    if kernel_mode == "oracle":
        return contract_oracle(ps, pt, plan, over, cost_mode)
    raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}, got {kernel_mode!r}")


def _uniform(n):
    return np.full(n, 1.0 / n)


def _default_marginals(ps, pt, mu1, nu1, mu2, nu2):
    k = ps.shape[1]
    mu1 = _uniform(ps.shape[0]) if mu1 is None else as_float_array(mu1, "mu1", ndim=1)
    nu1 = _uniform(pt.shape[0]) if nu1 is None else as_float_array(nu1, "nu1", ndim=1)
    mu2 = _uniform(k) if mu2 is None else as_float_array(mu2, "mu2", ndim=1)
    nu2 = _uniform(k) if nu2 is None else as_float_array(nu2, "nu2", ndim=1)
    return mu1, nu1, mu2, nu2


def buot_objective(ps, pt, sample_plan, class_plan, cfg, mu1=None, nu1=None, mu2=None, nu2=None):
    """Full bi-level objective at the given pair of plans.

    Frobenius coupling term (via the sample-direction contraction dotted
    with the class plan), minus the weighted entropies, plus the weighted
    KL marginal penalties against the four reference histograms.
    """
    ps = check_prediction_matrix(ps, "source predictions")
    pt = check_prediction_matrix(pt, "target predictions")
    g1 = sample_plan.values if isinstance(sample_plan, TransportPlan) else as_float_array(sample_plan, "sample plan", ndim=2)
    g2 = class_plan.values if isinstance(class_plan, TransportPlan) else as_float_array(class_plan, "class plan", ndim=2)
    mu1, nu1, mu2, nu2 = _default_marginals(ps, pt, mu1, nu1, mu2, nu2)

    effective = contract(ps, pt, g1, "samples", cfg.cost_mode, cfg.kernel_mode)
    coupling = float((effective * g2).sum())
    entropy = cfg.lambda1 * plan_entropy(g1) + cfg.lambda2 * plan_entropy(g2)
    relax = cfg.beta1 * (
        kl_divergence(g1.sum(axis=1), mu1) + kl_divergence(g1.sum(axis=0), nu1)
    ) + cfg.beta2 * (
        kl_divergence(g2.sum(axis=1), mu2) + kl_divergence(g2.sum(axis=0), nu2)
    )
    return coupling - entropy + relax


def solve_bilevel(ps, pt, cfg=None, mu1=None, nu1=None, mu2=None, nu2=None, warm_start=None):
    """Alternate the two levels of the bi-level transport problem.

    Starting from the outer-product plans ``mu1 nu1'`` and ``mu2 nu2'``,
    each round (i) contracts the class plan into an effective sample-level
    cost and re-solves the sample plan, then (ii) contracts the fresh
    sample plan into an effective class-level cost and re-solves the class
    plan. The inner solver is the unbalanced scaling iteration
    (``balance_mode='uot'``) or balanced Sinkhorn (``'ot'``); its duals are
    warm-started across rounds.

    Parameters
    ----------
    ps, pt : array-like
        Prediction matrices, shapes (n_s, K) and (n_t, K).
    cfg : BilevelConfig, optional
        Defaults to ``BilevelConfig()``.
    mu1, nu1, mu2, nu2 : array-like, optional
        Marginal histograms; default uniform.
    warm_start : BilevelSolution, optional
        Reuse the dual potentials of a previous solution on a same-shaped
        problem as the initial guess of the inner solves. Affects only the
        iteration count (the inner problems are still solved to
        ``inner_tol``); ignored when the shapes do not match.

    Returns
    -------
    BilevelSolution
        ``objective_trace`` holds the full objective after every round; it
        is non-increasing up to the inner solver tolerance. Raises
        ``NonFiniteError`` if the objective leaves the finite range.
    """
    cfg = (cfg or BilevelConfig()).validate()
    ps = check_prediction_matrix(ps, "source predictions")
    pt = check_prediction_matrix(pt, "target predictions")
    if ps.shape[1] != pt.shape[1]:
        raise ValueError("source and target must share the class count")
    mu1, nu1, mu2, nu2 = _default_marginals(ps, pt, mu1, nu1, mu2, nu2)
    sign = _sign_matrix(ps.shape[1], cfg.cost_mode)
    kernel = _contract_fast_impl if cfg.kernel_mode == "fast" else _contract_oracle_impl

    g1 = TransportPlan(np.outer(mu1, nu1))
    g2 = TransportPlan(np.outer(mu2, nu2))
    duals1 = duals2 = None
    if warm_start is not None:
        prev1, prev2 = warm_start.sample_plan.duals, warm_start.class_plan.duals
        if (
            prev1 is not None
            and prev2 is not None
            and prev1[0].shape == mu1.shape
            and prev1[1].shape == nu1.shape
            and prev2[0].shape == mu2.shape
            and prev2[1].shape == nu2.shape
        ):
            duals1, duals2 = prev1, prev2
    kernel_seconds = 0.0
    kernel_calls = 0
    trace = []

    def inner(mu, nu, cost, epsilon, beta, duals):
        if cfg.balance_mode == "ot":
            return sinkhorn_balanced(mu, nu, cost, epsilon, cfg.inner_max_iter, cfg.inner_tol)
        return scaling_uot(
            mu, nu, cost, epsilon, beta, cfg.inner_max_iter, cfg.inner_tol, init_duals=duals
        )

    for _ in range(cfg.t_uot):
        t0 = time.perf_counter()
        cost1 = kernel(ps, pt, g2.values, "classes", sign)
        kernel_seconds += time.perf_counter() - t0
        kernel_calls += 1
        g1 = inner(mu1, nu1, check_cost_matrix(cost1, "effective sample cost"), cfg.lambda1, cfg.beta1, duals1)
        duals1 = g1.duals

        t0 = time.perf_counter()
        cost2 = kernel(ps, pt, g1.values, "samples", sign)
        kernel_seconds += time.perf_counter() - t0
        kernel_calls += 1
        cost2 = check_cost_matrix(cost2, "effective class cost")
        g2 = inner(mu2, nu2, cost2, cfg.lambda2, cfg.beta2, duals2)
        duals2 = g2.duals

        # the round's second contraction doubles as the coupling term
        value = (
            float((cost2 * g2.values).sum())
            - cfg.lambda1 * plan_entropy(g1.values)
            - cfg.lambda2 * plan_entropy(g2.values)
            + cfg.beta1
            * (kl_divergence(g1.row_marginal, mu1) + kl_divergence(g1.col_marginal, nu1))
            + cfg.beta2
            * (kl_divergence(g2.row_marginal, mu2) + kl_divergence(g2.col_marginal, nu2))
        )
        if not np.isfinite(value):
            raise NonFiniteError(f"bi-level objective became non-finite ({value!r})")
        trace.append(value)

    return BilevelSolution(
        sample_plan=g1,
        class_plan=g2,
        objective_trace=trace,
        converged=bool(g1.converged and g2.converged),
        kernel_seconds=kernel_seconds,
        kernel_calls=kernel_calls,
    )
