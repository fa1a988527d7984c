"""scikit-learn compatible classifier trained with (adaptive) outlier exposure."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from aoe import model as mlp
from aoe import objectives as obj
from aoe.detection import Detector, ScoreKind, calibrate_threshold
from aoe.exceptions import InvalidArgumentError
from aoe.numkernel import softmax
from aoe.rng import SeededRng

METHODS = ("ce_only", "oe", "aoe_joint", "aoe_alternating", "fixed_T")


def parse_alpha(alpha, horizon=100) -> obj.AlphaSchedule:
    """Accept a number, an :class:`AlphaSchedule`, or ``"fixed:c"``/``"cosine"``/..."""
    if isinstance(alpha, obj.AlphaSchedule):
        return alpha
    if isinstance(alpha, (int, float)):
        return obj.AlphaSchedule("fixed", float(alpha), horizon)
    kind, _, arg = str(alpha).strip().lower().partition(":")
    if kind == "fixed":
        return obj.AlphaSchedule("fixed", float(arg or 0.5), horizon)
    return obj.AlphaSchedule(kind, 0.0, horizon)


class OutlierExposureClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier whose auxiliary outliers are supervised by OE or AOE.

    Parameters
    ----------
    method : {"ce_only", "oe", "aoe_joint", "aoe_alternating", "fixed_T"}
        ``oe`` pulls outlier predictions to uniform. The ``aoe_*`` methods pull
        them toward their own temperature-smoothed predictions while a learnable
        temperature is driven toward high entropy, either in one joint update or
        in alternating T / theta updates. ``fixed_T`` uses the smoothed target
        with the temperature frozen at ``fixed_T_value``.
    hidden_layer_sizes : tuple of int, default=(64, 64)
    epochs, batch_size : int
        ``batch_size`` applies to both the ID and the outlier mini-batch.
    lr, momentum, weight_decay : float
        SGD with momentum and cosine-annealed learning rate.
    alpha : float, str or AlphaSchedule, default="cosine"
        Outlier loss weight, possibly scheduled per epoch.
    temp_init, eta_T, t_min, t_max : float
        Temperature initialisation, step size and clip range.
    fixed_T_value : float, default=4.5
        Temperature used by ``method="fixed_T"``.
    kl_direction : {"uniform_first", "target_first"}
        Argument order of the uniform-alignment KL term.
    stop_gradient_target : bool, default=True
        Treat the smoothed target as a constant on the theta path.
    t_update_interval : int, default=1
        Update T once every this many theta steps.
    standardize : bool, default=True
        Scale inputs by the ID training mean and std before the network.
    score : str, default="msp"
        OOD score used by :meth:`score_samples` (``"msp"`` or ``"energy[:T]"``).
    random_state : int, default=0
        Seed for initialisation and mini-batch shuffling.

    Attributes
    ----------
    params_ : MlpParams
    temperature_ : TemperatureState
    classes_ : ndarray
    history_ : list of dict
        One entry per epoch with mean losses, alpha, lr and T.
    """

    def __init__(self, method="aoe_joint", hidden_layer_sizes=(64, 64), epochs=100,
                 batch_size=128, lr=0.1, momentum=0.9, weight_decay=5e-4, alpha="cosine",
                 alpha_horizon=100, temp_init=1.5, eta_T=0.01, t_min=1.0, t_max=10.0,
                 fixed_T_value=4.5, kl_direction="uniform_first", stop_gradient_target=True,
                 t_update_interval=1, standardize=True, score="msp", random_state=0):
        self.method = method
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.alpha = alpha
        self.alpha_horizon = alpha_horizon
        self.temp_init = temp_init
        self.eta_T = eta_T
        self.t_min = t_min
        self.t_max = t_max
        self.fixed_T_value = fixed_T_value
        self.kl_direction = kl_direction
        self.stop_gradient_target = stop_gradient_target
        self.t_update_interval = t_update_interval
        self.standardize = standardize
        self.score = score
        self.random_state = random_state

    def _validate_params(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.t_update_interval < 1:
            raise InvalidArgumentError("t_update_interval must be >= 1")
        if self.method == "fixed_T" and not self.t_min <= self.fixed_T_value <= self.t_max:
            raise InvalidArgumentError("fixed_T_value must lie in [t_min, t_max]")

    def _initial_temperature(self):
        if self.method == "fixed_T":
            return obj.TemperatureState(self.fixed_T_value, self.t_min, self.t_max, 0.0, False)
        learnable = self.method in ("aoe_joint", "aoe_alternating")
        return obj.TemperatureState(self.temp_init, self.t_min, self.t_max, self.eta_T, learnable)

    def fit(self, X, y, X_outlier=None, epoch_callback=None):
        """Train on labelled ID data ``(X, y)`` and unlabelled outliers ``X_outlier``.

        ``epoch_callback(estimator, record)`` runs after every epoch.
        """
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise InvalidArgumentError("need at least 2 classes")
        self.n_features_in_ = X.shape[1]
        if X_outlier is None:
            X_outlier = np.empty((0, X.shape[1]))
        X_outlier = check_array(X_outlier, dtype=np.float64, ensure_min_samples=0)
        if X_outlier.shape[0] and X_outlier.shape[1] != X.shape[1]:
            raise InvalidArgumentError("outliers and ID data differ in feature count")
        if self.method != "ce_only" and X_outlier.shape[0] == 0:
            raise InvalidArgumentError(f"method {self.method!r} needs X_outlier")

        if self.standardize:
            self.mean_ = X.mean(axis=0)
            self.scale_ = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        X = (X - self.mean_) / self.scale_
        X_outlier = (X_outlier - self.mean_) / self.scale_

        K = len(self.classes_)
        dims = (X.shape[1], *tuple(self.hidden_layer_sizes), K)
        rng = SeededRng(self.random_state)
        self.params_ = mlp.init_params(dims, rng)
        opt = mlp.OptimizerState.for_params(
            self.params_, lr_base=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, total_epochs=self.epochs)
        self.temperature_ = self._initial_temperature()
        schedule = parse_alpha(self.alpha, self.alpha_horizon)
        self.history_ = []

        n_id, n_ood = len(X), len(X_outlier)
        bs = self.batch_size
        n_batches = math.ceil(n_id / bs)
        step = 0
        for epoch in range(self.epochs):
            opt.epoch = epoch
            alpha_t = 0.0 if self.method == "ce_only" else obj.alpha_at(schedule, epoch)
            perm_id = rng.permutation(n_id)
            perm_ood = rng.permutation(n_ood) if n_ood else None
            sums = np.zeros(4)
            for i in range(n_batches):
                idx = perm_id[i * bs:(i + 1) * bs]
                batch_id = (X[idx], y_enc[idx])
                if n_ood:
                    x_ood = X_outlier[perm_ood[np.arange(i * bs, (i + 1) * bs) % n_ood]]
                else:
                    x_ood = np.empty((0, X.shape[1]))
                update_T = step % self.t_update_interval == 0
                br = self._step(opt, batch_id, x_ood, alpha_t, update_T)
                sums += (br.ce_id, br.align_T_to_uniform, br.align_pred_to_target, br.total)
                step += 1
            ce, a, b, total = sums / n_batches
            record = {"epoch": epoch, "ce_id": ce, "alignA": a, "alignB": b, "total": total,
                      "alpha": alpha_t, "T": self.temperature_.T, "lr": mlp.cosine_lr(opt)}
            self.history_.append(record)
            if epoch_callback is not None:
                epoch_callback(self, record)
        return self

    def _step(self, opt, batch_id, x_ood, alpha_t, update_T):
        kw = dict(kl_direction=self.kl_direction, stop_gradient_target=self.stop_gradient_target)
        if self.method in ("ce_only", "oe"):
            _, _, br = obj.oe_step(self.params_, opt, batch_id, x_ood, alpha_t)
        elif self.method == "aoe_joint":
            *_, br = obj.joint_step(self.params_, opt, self.temperature_, batch_id, x_ood,
                                    alpha_t, update_T=update_T, **kw)
        else:
            # fixed_T shares the alternating path with a frozen temperature
            *_, br = obj.alternating_step(self.params_, opt, self.temperature_, batch_id, x_ood,
                                          alpha_t, update_T=update_T, **kw)
        return br

    def decision_function(self, X):
        """Raw logits, one column per class."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return mlp.forward(self.params_, (X - self.mean_) / self.scale_)

    def predict_proba(self, X):
        # the learned temperature is a training device only; inference uses T = 1
        return softmax(self.decision_function(X))

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def score_samples(self, X):
        """OOD score per row; higher means more in-distribution."""
        return ScoreKind.parse(str(self.score))(self.decision_function(X))

    def calibrate_detector(self, X_id, tpr_target=0.95) -> Detector:
        """Detector whose threshold keeps ``tpr_target`` of ``X_id`` classified ID."""
        kind = ScoreKind.parse(str(self.score))
        self.detector_ = Detector(kind, calibrate_threshold(self.score_samples(X_id), tpr_target))
        return self.detector_

    def predict_ood(self, X):
        """Boolean mask, True where the calibrated detector flags OOD."""
        check_is_fitted(self, "detector_")
        return self.score_samples(X) < self.detector_.threshold
