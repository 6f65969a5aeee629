"""Two-stage training loop, evaluation metrics, and the target-class sweep.

Stage one trains the predictor on source cross entropy alone (warm-up);
stage two adds, per iteration, a bi-level transport solve on the current
batches, class weights recovered from it, and the combined loss
``L_rce + lambda_t * L_ent + lambda * L_buot``. The transport plans are
fixed during each parameter update. Source and target batches come from
independent RNG streams so removing the target-dependent terms reproduces
a source-only run bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._validation import NonFiniteError
from .bilevel import solve_bilevel
from .datasets import SyntheticPdaTask, generate_task
from .model import Adam, SoftmaxModel, grad_total, loss_buot, loss_ce, loss_entropy, loss_rce
from .recovery import (
    ClassWeights,
    bilevel_weights,
    indicator_from_labels,
    pseudo_labels,
    recover_class_plan,
    recover_sample_plan,
)

__all__ = [
    "IterationRecord",
    "TrainReport",
    "EvalMetrics",
    "fit_buot",
    "train",
    "evaluate",
    "source_only_config",
    "sweep_target_classes",
    "SweepResult",
]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    acc_s: float
    acc_t: float | None
    ce: float
    rce: float | None
    ent: float | None
    buot: float | None
    total: float
    omega: tuple | None


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    final_omega: ClassWeights | None = None
    final_source_accuracy: float = float("nan")
    final_target_accuracy: float | None = None
    final_plans: dict | None = None
    weight_uses: int = 0
    buot_evals: int = 0
    warmup_weight_uses: int = 0
    warmup_buot_evals: int = 0
    kernel_seconds: float = 0.0
    kernel_calls: int = 0
    buot_iterations: int = 0
    warmup_seconds: float = 0.0
    buot_seconds: float = 0.0

    @property
    def kernel_seconds_per_iteration(self):
        if self.buot_iterations == 0:
            return 0.0
        return self.kernel_seconds / self.buot_iterations

    def buot_trace(self):
        return [r.buot for r in self.rows if r.buot is not None]

    def moving_average_nonincreasing(self, window=50, slack=0.05):
        """Check the transport-loss trend over the final half of training.

        Smooths the logged transport loss with a trailing moving average and
        requires every step over the final half to rise by at most ``slack``
        times the range of the smoothed trace (batch noise allowance).
        """
        trace = np.asarray(self.buot_trace(), dtype=np.float64)
        if trace.size < 2:
            return True
        w = max(1, min(window, trace.size))
        kernel = np.ones(w) / w
        smooth = np.convolve(trace, kernel, mode="valid")
        half = smooth[smooth.size // 2 :]
        if half.size < 2:
            return True
        span = float(smooth.max() - smooth.min())
        rises = np.diff(half)
        return bool(np.all(rises <= slack * span + 1e-12))


class _EpochBatcher:
    """Uniform sampling without replacement per epoch; short tails are dropped."""

    def __init__(self, n, batch_size, rng):
        if batch_size > n:
            raise ValueError(f"batch size {batch_size} exceeds population {n}")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._order = None
        self._pos = 0

    def next(self):
        if self._order is None or self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch


def _accuracy(model, x, y):
    return float(np.mean(model.predict_labels(x) == y))


def fit_buot(xs, ys, xt, cfg, yt=None):
    """Run the full two-stage loop on raw arrays.

    Parameters
    ----------
    xs, ys : source features (n_s, d) and integer labels (n_s,)
    xt : target features (n_t, d)
    cfg : BuotConfig
    yt : optional target labels; only used to log target accuracy

    Returns
    -------
    (SoftmaxModel, TrainReport)
    """
    # only the solver/training blocks constrain raw-array training; the task
    # block's size rules apply to task generation and are checked in train()
    cfg.solver.validate()
    cfg.training.validate()
    tr = cfg.training
    solver = cfg.solver
    k = cfg.task.k_source
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    ys = np.asarray(ys)
    if tr.batch_size_source > xs.shape[0] or tr.batch_size_target > xt.shape[0]:
        raise ValueError("batch sizes exceed the available samples")

    model = SoftmaxModel.zeros(xs.shape[1], k)
    optimizer = Adam(tr.eta)
    rng_source = np.random.default_rng([tr.train_seed, 0])
    rng_target = np.random.default_rng([tr.train_seed, 1])
    batches_s = _EpochBatcher(xs.shape[0], tr.batch_size_source, rng_source)
    batches_t = _EpochBatcher(xt.shape[0], tr.batch_size_target, rng_target)

    y_onehot = indicator_from_labels(ys, k)
    method_active = tr.use_weights or tr.use_buot_loss or tr.lambda_t != 0.0
    lambda_buot = tr.lambda_buot if tr.use_buot_loss else 0.0

    report = TrainReport()
    last_omega = None
    prev_sol = None  # warm-starts the next iteration's inner solves
    t_start = time.perf_counter()
    warmup_end = t_start

    for it in range(1, tr.t_max + 1):
        idx_s = batches_s.next()
        xb, yb = xs[idx_s], y_onehot[idx_s]
        in_warmup = it <= tr.t_warm

        if in_warmup or not method_active:
            ps = model.predict_proba(xb)
            ce = loss_ce(ps, yb, mean=tr.mean_reduction)
            total = ce
            rce = ent = bu = None
            grads = grad_total(model, xb, yb, None, None, None, solver, 0.0, 0.0, tr.mean_reduction)
        else:
            idx_t = batches_t.next()
            xb_t = xt[idx_t]
            ps = model.predict_proba(xb)
            pt = model.predict_proba(xb_t)

            sol = None
            if tr.use_buot_loss or tr.use_weights:
                sol = solve_bilevel(ps, pt, solver, warm_start=prev_sol)
                prev_sol = sol
                report.kernel_seconds += sol.kernel_seconds
                report.kernel_calls += sol.kernel_calls

            if tr.use_weights:
                s_ind = indicator_from_labels(ys[idx_s], k)
                t_ind = indicator_from_labels(pseudo_labels(pt), k)
                weights = bilevel_weights(recover_class_plan(sol.sample_plan, sol.class_plan, s_ind, t_ind))
                report.weight_uses += 1
                if in_warmup:
                    report.warmup_weight_uses += 1
            else:
                weights = ClassWeights.uniform(k)
            last_omega = weights

            ce = loss_ce(ps, yb, mean=tr.mean_reduction)
            rce = loss_rce(ps, yb, weights, mean=tr.mean_reduction)
            ent = loss_entropy(pt, mean=tr.mean_reduction)
            if tr.use_buot_loss:
                bu = loss_buot(ps, pt, sol, solver)
                report.buot_evals += 1
                if in_warmup:
                    report.warmup_buot_evals += 1
            else:
                bu = None
            total = rce + tr.lambda_t * ent + (lambda_buot * bu if bu is not None else 0.0)
            grads = grad_total(
                model, xb, yb, xb_t, sol, weights, solver, lambda_buot, tr.lambda_t, tr.mean_reduction
            )
            report.buot_iterations += 1

        if not np.isfinite(total):
            raise NonFiniteError(
                f"training loss became non-finite at iteration {it}: "
                f"ce={ce!r} rce={rce!r} ent={ent!r} buot={bu!r}"
            )
        optimizer.step(model, grads)

        if it == tr.t_warm:
            warmup_end = time.perf_counter()

        if it % tr.log_interval == 0 or it == tr.t_max:
            acc_s = _accuracy(model, xs, ys)
            acc_t = _accuracy(model, xt, yt) if yt is not None else None
            report.rows.append(
                IterationRecord(
                    iteration=it,
                    acc_s=acc_s,
                    acc_t=acc_t,
                    ce=ce,
                    rce=rce,
                    ent=ent,
                    buot=bu,
                    total=total,
                    omega=tuple(last_omega.omega) if last_omega is not None else None,
                )
            )

    t_end = time.perf_counter()
    if tr.t_warm == 0:
        warmup_end = t_start
    report.warmup_seconds = warmup_end - t_start
    report.buot_seconds = t_end - warmup_end

    report.final_source_accuracy = _accuracy(model, xs, ys)
    report.final_target_accuracy = _accuracy(model, xt, yt) if yt is not None else None

    if method_active and (tr.use_weights or tr.use_buot_loss):
        ps_full = model.predict_proba(xs)
        pt_full = model.predict_proba(xt)
        sol = solve_bilevel(ps_full, pt_full, solver)
        s_ind = indicator_from_labels(ys, k)
        t_ind = indicator_from_labels(pseudo_labels(pt_full), k)
        recovered_class = recover_class_plan(sol.sample_plan, sol.class_plan, s_ind, t_ind)
        recovered_sample = recover_sample_plan(sol.sample_plan, sol.class_plan, s_ind, t_ind)
        report.final_omega = bilevel_weights(recovered_class)
        report.final_plans = {
            "gamma1": sol.sample_plan.values,
            "gamma2": sol.class_plan.values,
            "gamma1_recovered": recovered_sample.values,
            "gamma2_recovered": recovered_class.values,
        }

    return model, report


def train(task, cfg):
    """Run `fit_buot` on a synthetic task (hidden target labels drive logging)."""
    if not isinstance(task, SyntheticPdaTask):
        raise TypeError("task must be a SyntheticPdaTask")
    cfg.validate()
    return fit_buot(task.xs, task.ys, task.xt, cfg, yt=task.yt)


def source_only_config(cfg):
    """The matched baseline: every target-dependent loss term disabled."""
    return cfg.replace(training={"use_weights": False, "use_buot_loss": False, "lambda_t": 0.0})


@dataclass(frozen=True)
class EvalMetrics:
    source_accuracy: float
    target_accuracy: float
    per_class_source: tuple
    per_class_target: tuple
    weighted_source_risk: float
    target_risk: float
    generalization_gap: float


def evaluate(model, task, class_weights=None):
    """Accuracies, per-class accuracies, and the weighted-risk gap.

    ``weighted_source_risk`` averages the per-class source error rates with
    the supplied class weights (uniform when absent); the generalization
    gap is its absolute difference from the target error rate.
    """
    pred_s = model.predict_labels(task.xs)
    pred_t = model.predict_labels(task.xt)
    acc_s = float(np.mean(pred_s == task.ys))
    acc_t = float(np.mean(pred_t == task.yt))

    per_class_s = []
    for c in range(task.k_source):
        mask = task.ys == c
        per_class_s.append(float(np.mean(pred_s[mask] == c)) if mask.any() else float("nan"))
    per_class_t = []
    for c in range(task.k_source):
        mask = task.yt == c
        per_class_t.append(float(np.mean(pred_t[mask] == c)) if mask.any() else float("nan"))

    if class_weights is None:
        w = np.full(task.k_source, 1.0 / task.k_source)
    elif isinstance(class_weights, ClassWeights):
        w = class_weights.omega
    else:
        w = np.asarray(class_weights, dtype=np.float64)
    errors = 1.0 - np.asarray(per_class_s)
    valid = ~np.isnan(errors)
    denom = float(w[valid].sum())
    weighted_risk = float((w[valid] * errors[valid]).sum() / denom) if denom > 0 else float("nan")
    target_risk = 1.0 - acc_t

    return EvalMetrics(
        source_accuracy=acc_s,
        target_accuracy=acc_t,
        per_class_source=tuple(per_class_s),
        per_class_target=tuple(per_class_t),
        weighted_source_risk=weighted_risk,
        target_risk=target_risk,
        generalization_gap=abs(weighted_risk - target_risk),
    )


@dataclass(frozen=True)
class SweepRow:
    k_target: int
    seed: int
    accuracy: float
    baseline_accuracy: float


@dataclass
class SweepResult:
    rows: list
    summary: list  # dicts per k_target: means and 95% confidence half-widths
    trend_correlation: float  # Pearson r between k_target and the margin


def _ci95(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    half = stats.t.ppf(0.975, values.size - 1) * values.std(ddof=1) / np.sqrt(values.size)
    return float(half)


def sweep_target_classes(cfg, k_values, seeds):
    """Final accuracy of the full method vs the source-only baseline per cell.

    Each (k_target, seed) cell regenerates the task with that seed and
    trains both configurations with matched task and training seeds.
    """
    rows = []
    for k_target in k_values:
        for seed in seeds:
            cell = cfg.replace(task={"k_target": int(k_target), "task_seed": int(seed)})
            cell = cell.replace(training={"train_seed": int(seed)})
            task = generate_task(
                cell.task.k_source,
                cell.task.k_target,
                cell.task.n_s,
                cell.task.n_t,
                cell.task.d,
                cell.task.shift_scale,
                cell.task.task_seed,
            )
            _, report = train(task, cell)
            _, base_report = train(task, source_only_config(cell))
            rows.append(
                SweepRow(
                    k_target=int(k_target),
                    seed=int(seed),
                    accuracy=report.final_target_accuracy,
                    baseline_accuracy=base_report.final_target_accuracy,
                )
            )

    summary = []
    margins_by_k = []
    for k_target in k_values:
        cell_rows = [r for r in rows if r.k_target == k_target]
        accs = [r.accuracy for r in cell_rows]
        base = [r.baseline_accuracy for r in cell_rows]
        margins = [a - b for a, b in zip(accs, base)]
        margins_by_k.append((k_target, float(np.mean(margins))))
        summary.append(
            {
                "k_target": int(k_target),
                "mean_accuracy": float(np.mean(accs)),
                "ci95_accuracy": _ci95(accs),
                "mean_baseline": float(np.mean(base)),
                "ci95_baseline": _ci95(base),
                "mean_margin": float(np.mean(margins)),
            }
        )

    if len(margins_by_k) >= 2:
        ks = np.asarray([m[0] for m in margins_by_k], dtype=np.float64)
        ms = np.asarray([m[1] for m in margins_by_k], dtype=np.float64)
        if np.std(ks) > 0 and np.std(ms) > 0:
            trend = float(np.corrcoef(ks, ms)[0, 1])
        else:
            trend = 0.0
    else:
        trend = 0.0
    return SweepResult(rows=rows, summary=summary, trend_correlation=trend)
