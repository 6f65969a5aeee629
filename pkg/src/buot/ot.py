"""Entropic optimal transport and unbalanced-OT scaling solvers.

Both solvers run in the log domain (dual potentials updated through
max-stabilized log-sum-exp), so small regularization strengths do not
underflow the Gibbs kernel. Plans are materialized once at the end as
``exp((f + g - C) / epsilon)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_float_array, check_cost_matrix, check_histogram

__all__ = [
    "TransportPlan",
    "sinkhorn_balanced",
    "scaling_uot",
    "plan_entropy",
    "kl_divergence",
    "uot_objective",
]


@dataclass(frozen=True)
class TransportPlan:
    """A dense nonnegative coupling together with solver diagnostics.

    The marginals are always recomputed from ``values`` so they can never go
    stale. ``duals`` holds the final log-domain potentials ``(f, g)`` when
    the plan came out of a solver; they can seed a warm start.
    """

    values: np.ndarray
    converged: bool = True
    n_iter: int = 0
    message: str = ""
    objective_trace: tuple = ()
    duals: tuple | None = None

    def __post_init__(self):
        values = as_float_array(self.values, "plan", ndim=2)
        if not np.all(np.isfinite(values)):
            raise ValueError("plan contains non-finite entries")
        if np.any(values < 0):
            raise ValueError("plan contains negative entries")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def row_marginal(self):
        return self.values.sum(axis=1)

    @property
    def col_marginal(self):
        return self.values.sum(axis=0)

    @property
    def total_mass(self):
        return float(self.values.sum())


def _plan_values(plan):
    if isinstance(plan, TransportPlan):
        return plan.values
    return as_float_array(plan, "plan", ndim=2)


def plan_entropy(plan):
    """Entropy ``-sum(p * (log(p) - 1))`` of a plan, with 0*log(0) = 0.

    This convention makes the entropic solver's fixed point exact: the
    derivative of ``-eps * H`` at the Gibbs kernel cancels the cost term.
    """
    p = _plan_values(plan)
    if np.any(np.isnan(p)):
        raise ValueError("plan contains NaN entries")
    if np.any(p < 0):
        raise ValueError("plan contains negative entries")
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * (np.log(p[pos]) - 1.0)
    return float(-out.sum())


def kl_divergence(p, q):
    """Generalized Kullback-Leibler divergence for unnormalized masses.

    Returns ``sum(p * log(p / q) - p + q)``; valid for any nonnegative
    vectors, zero iff ``p == q``, and ``inf`` when ``p`` puts mass where
    ``q`` has none.
    """
    p = check_histogram(p, "p")
    q = check_histogram(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    if np.any((p > 0) & (q == 0)):
        return float("inf")
    pos = p > 0
    terms = np.zeros_like(p)
    terms[pos] = p[pos] * np.log(p[pos] / q[pos]) - p[pos]
    return float((terms + q).sum())


def uot_objective(plan, mu, nu, cost, epsilon, beta):
    """Primal value ``<C, P> - eps*H(P) + beta*(KL(P1|mu) + KL(P'1|nu))``."""
    p = _plan_values(plan)
    c = as_float_array(cost, "cost", ndim=2)
    mu = check_histogram(mu, "mu")
    nu = check_histogram(nu, "nu")
    transport = float((c * p).sum())
    marg = kl_divergence(p.sum(axis=1), mu) + kl_divergence(p.sum(axis=0), nu)
    return transport - epsilon * plan_entropy(p) + beta * marg


def _log_weights(h):
    with np.errstate(divide="ignore"):
        return np.log(h)


def _lse(a, axis):
    """Log-sum-exp with max subtraction; rows/cols that are all -inf give -inf."""
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        s = np.exp(a - m_safe).sum(axis=axis)
    out = np.squeeze(m_safe, axis=axis) + np.log(np.maximum(s, 0.0))
    return np.where(np.isfinite(np.squeeze(m, axis=axis)), out, -np.inf)


def _materialize(f, g, cost, epsilon):
    with np.errstate(invalid="ignore"):
        log_p = (f[:, None] + g[None, :] - cost) / epsilon
    # -inf potentials (zero-mass rows/columns) give exact zero entries
    return np.exp(np.where(np.isnan(log_p), -np.inf, log_p))


def _check_common(mu, nu, cost, epsilon):
    mu = check_histogram(mu, "mu")
    nu = check_histogram(nu, "nu")
    cost = check_cost_matrix(cost, "cost", shape=(mu.size, nu.size))
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    return mu, nu, cost


def sinkhorn_balanced(mu, nu, cost, epsilon, max_iter=1000, tol=1e-9):
    """Entropy-regularized OT between two probability histograms.

    Alternates the log-domain potential updates

    ``f = eps*(log mu - LSE_j((g_j - C_ij)/eps))``,
    ``g = eps*(log nu - LSE_i((f_i - C_ij)/eps))``,

    and stops when the plan's worst marginal violation drops to ``tol``.

    Parameters
    ----------
    mu, nu : array-like
        Probability histograms (each sums to 1 within 1e-12).
    cost : array-like, shape (len(mu), len(nu))
        Finite nonnegative cost matrix.
    epsilon : float
        Entropic regularization strength, > 0.
    max_iter : int
        Iteration budget.
    tol : float
        Convergence threshold on ``max(|P1 - mu|_inf, |P'1 - nu|_inf)``.

    Returns
    -------
    TransportPlan
        ``converged`` is True iff the marginal residual reached ``tol``.
        Entries are strictly positive wherever both marginals are.
    """
    mu, nu, cost = _check_common(mu, nu, cost, epsilon)
    mu = check_histogram(mu, "mu", probability=True)
    nu = check_histogram(nu, "nu", probability=True)

    log_mu, log_nu = _log_weights(mu), _log_weights(nu)
    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    cost_eps = cost / epsilon

    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = epsilon * (log_mu - _lse(g[None, :] / epsilon - cost_eps, axis=1))
        g = epsilon * (log_nu - _lse(f[:, None] / epsilon - cost_eps, axis=0))
        plan = _materialize(f, g, cost, epsilon)
        residual = max(
            float(np.max(np.abs(plan.sum(axis=1) - mu))),
            float(np.max(np.abs(plan.sum(axis=0) - nu))),
        )
        if residual <= tol:
            return TransportPlan(plan, True, it, duals=(f, g))

    message = f"marginal residual {residual:.3e} > tol {tol:.3e} after {max_iter} iterations"
    zero_entries = int((mu == 0).sum() + (nu == 0).sum())
    if zero_entries:
        message += (
            f"; {zero_entries} zero-mass histogram entries present — the "
            "corresponding rows/columns are matched exactly but may slow the "
            "remaining constraints (infeasible-entry diagnostic)"
        )
    return TransportPlan(_materialize(f, g, cost, epsilon), False, max_iter, message, duals=(f, g))


def _lse_into(shifts, cost_eps, buf):
    """``LSE_j(shifts_j - cost_eps_ij)`` per row, max-stabilized, using ``buf``."""
    np.subtract(shifts[None, :], cost_eps, out=buf)
    m = buf.max(axis=1)
    np.subtract(buf, m[:, None], out=buf)
    np.exp(buf, out=buf)
    return m + np.log(buf.sum(axis=1))


def scaling_uot(
    mu,
    nu,
    cost,
    epsilon,
    beta,
    max_iter=1000,
    tol=1e-9,
    objective_every=0,
    init_duals=None,
):
    """Unbalanced entropic OT with KL marginal penalties, one ``beta`` per call.

    Minimizes ``<C, P> - eps*H(P) + beta*(KL(P1|mu) + KL(P'1|nu))`` by the
    multiplicative scaling iteration

    ``a <- (mu / K b)^(beta/(beta+eps))``,
    ``b <- (nu / K' a)^(beta/(beta+eps))``,  ``K = exp(-C/eps)``,

    run on the log scalings ``u = log a``, ``v = log b`` (potentials over
    epsilon) so the Gibbs kernel never under- or overflows regardless of
    ``cost/eps``. Convergence is declared when the log-scaling vectors move
    by at most ``tol`` in infinity norm between successive iterations. For
    ``beta -> inf`` the exponent tends to 1 and the iteration degenerates to
    balanced Sinkhorn.

    Parameters
    ----------
    mu, nu : array-like
        Nonnegative mass vectors; zero entries give exactly-zero plan
        rows/columns.
    cost : array-like, shape (len(mu), len(nu))
    epsilon : float
        Entropic regularization, > 0.
    beta : float
        Marginal relaxation strength, > 0 (shared by both marginals).
    objective_every : int
        When > 0, record the primal objective every that many iterations
        into ``objective_trace`` (plus the final iterate).
    init_duals : tuple of (f, g), optional
        Warm start from a previous solve on a nearby problem (same shapes
        and epsilon). Changes the iteration count, not the fixed point.

    Returns
    -------
    TransportPlan
    """
    mu, nu, cost = _check_common(mu, nu, cost, epsilon)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    n, m = mu.size, nu.size

    if mu.sum() == 0.0 or nu.sum() == 0.0:
        # one side carries no mass: the zero plan is optimal and exact
        plan = np.zeros((n, m))
        trace = (uot_objective(plan, mu, nu, cost, epsilon, beta),) if objective_every > 0 else ()
        duals = (np.full(n, -np.inf), np.full(m, -np.inf))
        return TransportPlan(plan, True, 0, "empty marginal", trace, duals)

    fp = beta / (beta + epsilon)
    log_mu, log_nu = _log_weights(mu), _log_weights(nu)
    if init_duals is not None:
        u = as_float_array(init_duals[0], "init f", ndim=1) / epsilon
        v = as_float_array(init_duals[1], "init g", ndim=1) / epsilon
        if u.shape != mu.shape or v.shape != nu.shape:
            raise ValueError("init_duals shapes do not match the histograms")
        u, v = u.copy(), v.copy()
    else:
        u = np.zeros(n)
        v = np.zeros(m)
    # a poisoned warm start (non-finite duals on positive-mass entries) resets
    # to the cold value; the iteration recovers the fixed point either way
    u[~np.isfinite(u) & (mu > 0)] = 0.0
    v[~np.isfinite(v) & (nu > 0)] = 0.0
    u[mu == 0] = -np.inf
    v[nu == 0] = -np.inf
    has_zero = bool((mu == 0).any() or (nu == 0).any())

    cost_eps = cost / epsilon
    # Multiplicative iterations on the scaling vectors themselves are a few
    # times cheaper than log-sum-exp updates but can only be trusted while
    # exp(+-cost/eps) and the scaling transients stay inside double range;
    # past this bound every update runs in the log domain.
    multiplicative = float(cost_eps.max()) <= 200.0

    trace = []
    converged = False
    it = 0

    if multiplicative:
        gibbs = np.exp(-cost_eps)
        gibbs_t = np.ascontiguousarray(gibbs.T)
        with np.errstate(over="ignore"):
            a = np.exp(u)
            b = np.exp(v)
        mu_pos = mu > 0
        nu_pos = nu > 0

        def current_plan():
            return (a[:, None] * gibbs) * b[None, :]

        if objective_every > 0:
            trace.append(uot_objective(current_plan(), mu, nu, cost, epsilon, beta))
        with np.errstate(divide="ignore", invalid="ignore"):
            log_a = np.log(a)
            log_b = np.log(b)
            for it in range(1, max_iter + 1):
                a = (mu / (gibbs @ b)) ** fp
                if has_zero:
                    a[~mu_pos] = 0.0
                b = (nu / (gibbs_t @ a)) ** fp
                if has_zero:
                    b[~nu_pos] = 0.0
                log_a_new = np.log(a)
                log_b_new = np.log(b)
                du = np.abs(log_a_new - log_a)
                dv = np.abs(log_b_new - log_b)
                if has_zero:
                    du = np.where(np.isnan(du), 0.0, du)
                    dv = np.where(np.isnan(dv), 0.0, dv)
                change = max(float(du.max()), float(dv.max()))
                log_a, log_b = log_a_new, log_b_new
                if objective_every > 0 and it % objective_every == 0:
                    trace.append(uot_objective(current_plan(), mu, nu, cost, epsilon, beta))
                if change <= tol:
                    converged = True
                    break
        u, v = log_a, log_b
    else:
        cost_eps_t = np.ascontiguousarray(cost_eps.T)
        buf = np.empty_like(cost_eps)
        buf_t = np.empty_like(cost_eps_t)

        def current_plan():
            return _materialize(u * epsilon, v * epsilon, cost, epsilon)

        if objective_every > 0:
            trace.append(uot_objective(current_plan(), mu, nu, cost, epsilon, beta))
        for it in range(1, max_iter + 1):
            u_new = fp * (log_mu - _lse_into(v, cost_eps, buf))
            v_new = fp * (log_nu - _lse_into(u_new, cost_eps_t, buf_t))
            if has_zero:
                # -inf minus -inf on zero-mass entries; those never move
                with np.errstate(invalid="ignore"):
                    du = np.abs(u_new - u)
                    dv = np.abs(v_new - v)
                du = np.where(np.isnan(du), 0.0, du)
                dv = np.where(np.isnan(dv), 0.0, dv)
            else:
                du = np.abs(u_new - u)
                dv = np.abs(v_new - v)
            change = max(float(du.max()), float(dv.max()))
            u, v = u_new, v_new
            if objective_every > 0 and it % objective_every == 0:
                trace.append(uot_objective(current_plan(), mu, nu, cost, epsilon, beta))
            if change <= tol:
                converged = True
                break

    plan = current_plan()
    if objective_every > 0 and it % objective_every != 0:
        trace.append(uot_objective(plan, mu, nu, cost, epsilon, beta))
    message = "" if converged else f"log-scaling change still above tol after {max_iter} iterations"
    return TransportPlan(plan, converged, it, message, tuple(trace), duals=(u * epsilon, v * epsilon))
