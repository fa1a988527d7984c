"""Training objectives: OE, adaptive-confidence OE (joint / alternating), K+1 variant.

Every loss returns a :class:`LossResult` carrying per-row upstream gradients
(``grad_id[i]`` is the gradient of row ``i``'s own loss, already multiplied
by its weight) so that :func:`aoe.model.backward` can average them, plus the
scalar derivative of the batch loss with respect to the temperature.

Per OOD row with ``p = s(z)``, ``q = s(z/T)`` and ``u = 1/K``:

* uniform alignment ("term A"):   KL(u || q)   (or KL(q || u) if reversed)
* target alignment  ("term B"):   KL(q || p)

In joint mode both terms enter the loss on ``theta`` and ``T``; in alternating
mode ``T`` follows term A alone and ``theta`` follows CE + alpha * term B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from aoe import model as mlp
from aoe.exceptions import InvalidArgumentError
from aoe.numkernel import log_softmax, softmax

MODES = ("joint", "alternating")
KL_DIRECTIONS = ("uniform_first", "target_first")
ALPHA_KINDS = ("fixed", "exponential", "cosine", "linear")


@dataclass
class TemperatureState:
    T: float = 1.5
    t_min: float = 1.0
    t_max: float = 10.0
    lr_T: float = 0.01
    learnable: bool = True

    def __post_init__(self):
        if not 0 < self.t_min <= self.t_max:
            raise InvalidArgumentError("need 0 < t_min <= t_max")
        if self.lr_T < 0:
            raise InvalidArgumentError("lr_T must be >= 0")
        self.clamp()

    def clamp(self) -> "TemperatureState":
        self.T = float(min(max(self.T, self.t_min), self.t_max))
        return self

    def descend(self, grad_T: float) -> "TemperatureState":
        """Projected gradient step on T (no-op when not learnable)."""
        if self.learnable:
            self.T = self.T - self.lr_T * float(grad_T)
            self.clamp()
        return self


@dataclass(frozen=True)
class AlphaSchedule:
    kind: str = "fixed"
    value: float = 0.5
    horizon: int = 100

    def __post_init__(self):
        if self.kind not in ALPHA_KINDS:
            raise InvalidArgumentError(f"unknown alpha schedule {self.kind!r}")
        if self.kind == "fixed" and self.value < 0:
            raise InvalidArgumentError("fixed alpha must be >= 0")
        if self.horizon < 1:
            raise InvalidArgumentError("horizon must be >= 1")


def alpha_at(schedule: AlphaSchedule, t: int) -> float:
    if t < 0:
        raise InvalidArgumentError("epoch must be >= 0")
    if schedule.kind == "fixed":
        return float(schedule.value)
    if schedule.kind == "exponential":
        return 1.0 - math.exp(-t / 35.0)
    if schedule.kind == "cosine":
        return 0.5 - math.cos((t + 1) * math.pi / schedule.horizon) / 2.0
    return min(1.0, (t + 1) / schedule.horizon)


@dataclass
class LossBreakdown:
    ce_id: float
    align_T_to_uniform: float
    align_pred_to_target: float
    total: float
    alpha_used: float


class LossResult(NamedTuple):
    breakdown: LossBreakdown
    grad_id: np.ndarray
    grad_ood: np.ndarray
    grad_T: float


def _check_logits(z, name):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a matrix")
    return z


def _id_block(id_logits, K):
    if np.size(id_logits) == 0:
        return np.zeros((0, K))
    return _check_logits(id_logits, "id_logits")


def _ce_terms(id_logits, id_labels, K):
    """Mean CE and per-row gradients ``p - onehot``."""
    if id_logits.shape[0] == 0:
        return 0.0, np.zeros((0, K))
    if id_logits.shape[1] != K:
        raise InvalidArgumentError("ID and OOD logits disagree on the class count")
    y = np.asarray(id_labels, dtype=np.int64)
    if y.shape != (id_logits.shape[0],):
        raise InvalidArgumentError("one label per ID row required")
    if np.any(y < 0) or np.any(y >= K):
        raise InvalidArgumentError(f"ID labels must lie in [0, {K})")
    logp = log_softmax(id_logits)
    rows = np.arange(len(y))
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return float(-np.mean(logp[rows, y])), grad


def loss_oe(id_logits, id_labels, ood_logits, alpha: float) -> LossResult:
    """CE on ID rows plus ``alpha * KL(u || s(z))`` on OOD rows."""
    ood = _check_logits(ood_logits, "ood_logits")
    K = ood.shape[1]
    if K < 2:
        raise InvalidArgumentError("need at least 2 classes")
    ce, g_id = _ce_terms(_id_block(id_logits, K), id_labels, K)
    if ood.shape[0]:
        logp = log_softmax(ood)
        kl_rows = -math.log(K) - logp.mean(axis=1)
        kl = float(np.mean(np.maximum(kl_rows, 0.0)))
        g_ood = alpha * (np.exp(logp) - 1.0 / K)
    else:
        kl, g_ood = 0.0, np.zeros((0, K))
    total = ce + alpha * kl
    return LossResult(LossBreakdown(ce, kl, 0.0, total, float(alpha)), g_id, g_ood, 0.0)


def soft_target(ood_logits, T: float) -> np.ndarray:
    return softmax(_check_logits(ood_logits, "ood_logits"), T)


class OodTerms(NamedTuple):
    """Per-row values and derivatives of the two alignment terms."""

    term_a: np.ndarray
    term_b: np.ndarray
    da_dz: np.ndarray
    db_dz: np.ndarray
    da_dT: np.ndarray
    db_dT: np.ndarray


def ood_alignment_terms(z, T: float, kl_direction: str = "uniform_first",
                        stop_gradient_target: bool = True) -> OodTerms:
    z = _check_logits(z, "ood_logits")
    if kl_direction not in KL_DIRECTIONS:
        raise InvalidArgumentError(f"kl_direction must be one of {KL_DIRECTIONS}")
    N, K = z.shape
    T = float(T)
    logq = log_softmax(z, T)
    logp = log_softmax(z)
    q = np.exp(logq)
    p = np.exp(logp)
    Eq_z = np.sum(q * z, axis=1)

    if kl_direction == "uniform_first":
        term_a = -math.log(K) - logq.mean(axis=1)
        da_dz = (q - 1.0 / K) / T
        da_dT = (z.mean(axis=1) - Eq_z) / T**2
    else:
        term_a = np.sum(q * logq, axis=1) + math.log(K)
        Eq_l = np.sum(q * logq, axis=1)
        da_dz = q * (logq - Eq_l[:, None]) / T
        da_dT = (Eq_l * Eq_z - np.sum(q * logq * z, axis=1)) / T**2

    c = logq - logp
    Eq_c = np.sum(q * c, axis=1)
    term_b = Eq_c
    db_dz = p - q
    if not stop_gradient_target:
        db_dz = db_dz + q * (c - Eq_c[:, None]) / T
    db_dT = (Eq_c * Eq_z - np.sum(q * c * z, axis=1)) / T**2
    return OodTerms(np.maximum(term_a, 0.0), np.maximum(term_b, 0.0),
                    da_dz, db_dz, da_dT, db_dT)


def _combine(ce, g_id, terms: OodTerms, alpha, mode, K):
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}")
    n_ood = len(terms.term_a)
    if n_ood == 0:
        br = LossBreakdown(ce, 0.0, 0.0, ce, float(alpha))
        return LossResult(br, g_id, np.zeros((0, K)), 0.0)
    a = float(np.mean(terms.term_a))
    b = float(np.mean(terms.term_b))
    if mode == "joint":
        total = ce + alpha * (a + b)
        g_ood = alpha * (terms.da_dz + terms.db_dz)
        g_T = float(alpha * np.mean(terms.da_dT + terms.db_dT))
    else:
        total = ce + alpha * b
        g_ood = alpha * terms.db_dz
        # the temperature subproblem is unweighted
        g_T = float(np.mean(terms.da_dT))
    return LossResult(LossBreakdown(ce, a, b, total, float(alpha)), g_id, g_ood, g_T)


def loss_aoe(id_logits, id_labels, ood_logits, temp: TemperatureState, alpha: float,
             mode: str = "joint", kl_direction: str = "uniform_first",
             stop_gradient_target: bool = True) -> LossResult:
    ood = _check_logits(ood_logits, "ood_logits")
    K = ood.shape[1]
    if K < 2:
        raise InvalidArgumentError("need at least 2 classes")
    ce, g_id = _ce_terms(_id_block(id_logits, K), id_labels, K)
    terms = ood_alignment_terms(ood, temp.T, kl_direction, stop_gradient_target)
    return _combine(ce, g_id, terms, alpha, mode, K)


def loss_aoe_kplus1(ood_logits_kplus1, temp: TemperatureState, mode: str = "joint",
                    alpha: float = 1.0, kl_direction: str = "uniform_first",
                    stop_gradient_target: bool = True) -> LossResult:
    """OOD alignment terms on the first K of K+1 logits; the extra logit gets zero gradient."""
    z = _check_logits(ood_logits_kplus1, "ood_logits")
    K = z.shape[1] - 1
    if K < 2:
        raise InvalidArgumentError("K+1 logits need at least 2 ID columns")
    res = loss_aoe(np.zeros((0, K)), np.zeros(0, dtype=np.int64), z[:, :K], temp, alpha,
                   mode, kl_direction, stop_gradient_target)
    g = np.zeros_like(z)
    g[:, :K] = res.grad_ood
    return res._replace(grad_ood=g, grad_id=np.zeros((0, K + 1)))


def temperature_gradient(ood_logits, T: float, kl_direction: str = "uniform_first") -> float:
    """d/dT of the mean uniform-alignment term at fixed logits."""
    return float(np.mean(ood_alignment_terms(ood_logits, T, kl_direction).da_dT))


def _theta_update(params, opt_state, x_id, y_id, x_ood, res: LossResult):
    grads = mlp.backward(params, x_id, res.grad_id) if len(x_id) else None
    if len(x_ood):
        g_ood = mlp.backward(params, x_ood, res.grad_ood)
        grads = g_ood if grads is None else grads + g_ood
    if grads is not None:
        mlp.sgd_step(params, opt_state, grads)


def oe_step(params, opt_state, batch_id, batch_ood, alpha: float):
    """One SGD step on the OE objective; ``alpha = 0`` is plain CE training."""
    x_id, y_id = batch_id
    x_ood = np.asarray(batch_ood, dtype=np.float64)
    res = loss_oe(mlp.forward(params, x_id), y_id, mlp.forward(params, x_ood), alpha)
    _theta_update(params, opt_state, x_id, y_id, x_ood, res)
    return params, opt_state, res.breakdown


def joint_step(params, opt_state, temp: TemperatureState, batch_id, batch_ood, alpha: float,
               kl_direction="uniform_first", stop_gradient_target=True, update_T=True):
    """Simultaneous update of theta and T on the joint objective.

    Both gradients are evaluated at the current (theta, T) before either moves.
    """
    x_id, y_id = batch_id
    x_ood = np.asarray(batch_ood, dtype=np.float64)
    res = loss_aoe(mlp.forward(params, x_id), y_id, mlp.forward(params, x_ood), temp, alpha,
                   "joint", kl_direction, stop_gradient_target)
    _theta_update(params, opt_state, x_id, y_id, x_ood, res)
    if update_T:
        temp.descend(res.grad_T)
    return params, opt_state, temp, res.breakdown


def alternating_step(params, opt_state, temp: TemperatureState, batch_id, batch_ood,
                     alpha: float, kl_direction="uniform_first", stop_gradient_target=True,
                     update_T=True):
    """T step on the uniform-alignment term, then a theta step with the new T frozen."""
    x_id, y_id = batch_id
    x_ood = np.asarray(batch_ood, dtype=np.float64)
    ood_logits = mlp.forward(params, x_ood)
    if update_T and len(x_ood):
        temp.descend(temperature_gradient(ood_logits, temp.T, kl_direction))
    res = loss_aoe(mlp.forward(params, x_id), y_id, ood_logits, temp, alpha,
                   "alternating", kl_direction, stop_gradient_target)
    _theta_update(params, opt_state, x_id, y_id, x_ood, res)
    return params, opt_state, temp, res.breakdown
