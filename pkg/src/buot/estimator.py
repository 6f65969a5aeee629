"""Scikit-learn style front end for the bi-level transport trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import BuotConfig
from .training import fit_buot

__all__ = ["BuotClassifier"]


class BuotClassifier(BaseEstimator, ClassifierMixin):
    """Partial-domain-adaptation classifier trained with bi-level UOT.

    A linear softmax predictor is warmed up on labeled source samples,
    then adapted to an unlabeled target domain: each iteration couples the
    two domains' prediction matrices through a sample-level and a
    class-level unbalanced transport plan, recovers per-class weights that
    suppress source classes absent from the target, and minimizes the
    reweighted cross entropy plus target entropy plus the transport loss.

    Parameters
    ----------
    lambda1, lambda2 : float
        Entropic strengths of the sample-level / class-level inner solves.
    beta1, beta2 : float
        Marginal relaxation strengths of the two levels.
    t_uot : int
        Alternation rounds of the bi-level solve per iteration.
    inner_tol, inner_max_iter : float, int
        Inner scaling-solver stopping rule.
    cost_mode : {'label_aware', 'squared_euclidean'}
    balance_mode : {'uot', 'ot'}
    kernel_mode : {'fast', 'oracle'}
        Contraction kernel: the decomposed form or the literal tensor
        contraction (equal results, different cost).
    lambda_buot : float
        Weight of the transport loss in the training objective.
    lambda_t : float
        Weight of the target-entropy loss.
    eta : float
        Adam learning rate.
    t_warm, t_max : int
        Warm-up iterations and total iterations.
    batch_size_source, batch_size_target : int
    random_state : int
        Seeds batch sampling (the classifier itself is deterministic).
    log_interval : int
        Spacing of the per-iteration records kept on ``report_``.
    mean_reduction : bool
        Average losses over the batch instead of summing.

    Attributes
    ----------
    classes_ : ndarray of the distinct source labels
    coef_ : ndarray, shape (n_classes, n_features)
    intercept_ : ndarray, shape (n_classes,)
    class_weights_ : ndarray, shape (n_classes,)
        Final recovered class weights (sum to 1); near-zero entries flag
        source classes judged absent from the target domain.
    report_ : TrainReport with per-iteration diagnostics

    Examples
    --------
    >>> clf = BuotClassifier(t_warm=50, t_max=200)
    >>> clf.fit(Xs, ys, Xt)                      # doctest: +SKIP
    >>> labels = clf.predict(Xt)                 # doctest: +SKIP
    """

    def __init__(
        self,
        lambda1=0.05,
        lambda2=0.05,
        beta1=1.0,
        beta2=1.0,
        t_uot=5,
        inner_tol=1e-9,
        inner_max_iter=1000,
        cost_mode="label_aware",
        balance_mode="uot",
        kernel_mode="fast",
        lambda_buot=1.0,
        lambda_t=0.1,
        eta=0.01,
        t_warm=100,
        t_max=1000,
        batch_size_source=64,
        batch_size_target=64,
        random_state=0,
        log_interval=10,
        mean_reduction=False,
    ):
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.beta1 = beta1
        self.beta2 = beta2
        self.t_uot = t_uot
        self.inner_tol = inner_tol
        self.inner_max_iter = inner_max_iter
        self.cost_mode = cost_mode
        self.balance_mode = balance_mode
        self.kernel_mode = kernel_mode
        self.lambda_buot = lambda_buot
        self.lambda_t = lambda_t
        self.eta = eta
        self.t_warm = t_warm
        self.t_max = t_max
        self.batch_size_source = batch_size_source
        self.batch_size_target = batch_size_target
        self.random_state = random_state
        self.log_interval = log_interval
        self.mean_reduction = mean_reduction

    def _build_config(self, n_classes, n_s, n_t, d):
        cfg = BuotConfig()
        cfg.task.k_source = n_classes
        cfg.task.k_target = n_classes  # unknown at fit time; not used by fit_buot
        cfg.task.n_s = n_s
        cfg.task.n_t = n_t
        cfg.task.d = d
        cfg.solver.lambda1 = self.lambda1
        cfg.solver.lambda2 = self.lambda2
        cfg.solver.beta1 = self.beta1
        cfg.solver.beta2 = self.beta2
        cfg.solver.t_uot = self.t_uot
        cfg.solver.inner_tol = self.inner_tol
        cfg.solver.inner_max_iter = self.inner_max_iter
        cfg.solver.cost_mode = self.cost_mode
        cfg.solver.balance_mode = self.balance_mode
        cfg.solver.kernel_mode = self.kernel_mode
        cfg.training.lambda_buot = self.lambda_buot
        cfg.training.lambda_t = self.lambda_t
        cfg.training.eta = self.eta
        cfg.training.t_warm = self.t_warm
        cfg.training.t_max = self.t_max
        cfg.training.batch_size_source = min(self.batch_size_source, n_s)
        cfg.training.batch_size_target = min(self.batch_size_target, n_t)
        cfg.training.train_seed = self.random_state
        cfg.training.log_interval = self.log_interval
        cfg.training.mean_reduction = self.mean_reduction
        return cfg

    def fit(self, Xs, ys, Xt, yt=None):
        """Train on labeled source samples and unlabeled target samples.

        Parameters
        ----------
        Xs : array-like, shape (n_source_samples, n_features)
        ys : array-like, shape (n_source_samples,)
            Source class labels (any hashable values; encoded internally).
        Xt : array-like, shape (n_target_samples, n_features)
        yt : array-like, optional
            Target labels, used only to log target accuracy during training.

        Returns
        -------
        self
        """
        Xs = np.asarray(Xs, dtype=np.float64)
        Xt = np.asarray(Xt, dtype=np.float64)
        if Xs.ndim != 2 or Xt.ndim != 2:
            raise ValueError("Xs and Xt must be 2-dimensional")
        if Xs.shape[1] != Xt.shape[1]:
            raise ValueError(
                f"feature mismatch: Xs has {Xs.shape[1]} features, Xt has {Xt.shape[1]}"
            )
        ys = np.asarray(ys)
        if ys.shape != (Xs.shape[0],):
            raise ValueError("ys must have one label per source sample")

        self.classes_, ys_enc = np.unique(ys, return_inverse=True)
        yt_enc = None
        if yt is not None:
            lookup = {label: idx for idx, label in enumerate(self.classes_)}
            yt_enc = np.asarray([lookup.get(label, -1) for label in np.asarray(yt)])

        cfg = self._build_config(len(self.classes_), Xs.shape[0], Xt.shape[0], Xs.shape[1])
        model, report = fit_buot(Xs, ys_enc, Xt, cfg, yt=yt_enc)

        self.model_ = model
        self.report_ = report
        self.coef_ = model.weights.T
        self.intercept_ = model.bias
        self.n_features_in_ = Xs.shape[1]
        self.class_weights_ = (
            report.final_omega.omega if report.final_omega is not None else None
        )
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"X must have shape (n, {self.n_features_in_})")
        return self.model_.predict_proba(X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
