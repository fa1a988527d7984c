"""FPR at fixed TPR, AUROC, ID accuracy and margin diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from aoe.detection import ScoreKind, calibrate_threshold
from aoe.exceptions import InvalidArgumentError
from aoe.synthdata import OOD_LABEL


def _nonempty(a, name):
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    return a


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    id_s = _nonempty(id_scores, "id_scores")
    ood_s = _nonempty(ood_scores, "ood_scores")
    lam = calibrate_threshold(id_s, tpr_target)
    return float(np.count_nonzero(ood_s >= lam)) / ood_s.size


def auroc(id_scores, ood_scores) -> float:
    """Mann-Whitney estimate of P(id > ood), ties counting one half."""
    id_s = _nonempty(id_scores, "id_scores")
    ood_s = _nonempty(ood_scores, "ood_scores")
    n, m = id_s.size, ood_s.size
    ranks = rankdata(np.concatenate([id_s, ood_s]), method="average")
    u = ranks[:n].sum() - n * (n + 1) / 2.0
    return float(u / (n * m))


def id_accuracy(logits, labels) -> float:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or len(y) != len(z):
        raise InvalidArgumentError("logits must be (N, K) with one label per row")
    if np.any(y == OOD_LABEL) or np.any(y < 0) or np.any(y >= z.shape[1]):
        raise InvalidArgumentError("labels must be ID class indices")
    if len(y) == 0:
        raise InvalidArgumentError("no rows")
    # np.argmax breaks ties toward the lowest index
    return float(np.mean(np.argmax(z, axis=1) == y))


def separation_margin(id_scores, ood_scores) -> float:
    return float(_nonempty(id_scores, "id_scores").mean() - _nonempty(ood_scores, "ood_scores").mean())


def top2_margins(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise InvalidArgumentError("need at least 2 logits")
    part = np.sort(z, axis=-1)
    return part[..., -1] - part[..., -2]


def oversoftening_mean_margin(ood_logits) -> float:
    """Mean top-1 minus top-2 logit gap; small values mean over-softened outputs."""
    return float(np.mean(top2_margins(np.atleast_2d(ood_logits))))


@dataclass
class EvalReport:
    fpr95: float
    auroc: float
    id_acc: float
    separation_margin: float
    oversoftening_mean_margin: float
    n_id: int
    n_ood: int
    # ingredients of the MSP separation bound: mean ID / OOD margins, OOD margin variance
    mu_id_margin: float = float("nan")
    mu_ood_margin: float = float("nan")
    var_ood_margin: float = float("nan")
    frac_negative_id_margin: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def signed_margins(logits, labels) -> np.ndarray:
    """True-class logit minus the best other logit (negative when misclassified)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(y))
    true = z[rows, y]
    other = z.copy()
    other[rows, y] = -np.inf
    return true - other.max(axis=1)


def evaluate(id_logits, id_labels, ood_logits, score: ScoreKind = ScoreKind(),
             tpr_target: float = 0.95) -> EvalReport:
    id_s = score(id_logits)
    ood_s = score(ood_logits)
    ood_m = top2_margins(ood_logits)
    id_signed = signed_margins(id_logits, id_labels)
    return EvalReport(
        fpr95=fpr_at_tpr(id_s, ood_s, tpr_target),
        auroc=auroc(id_s, ood_s),
        id_acc=id_accuracy(id_logits, id_labels),
        separation_margin=separation_margin(id_s, ood_s),
        oversoftening_mean_margin=float(ood_m.mean()),
        n_id=int(len(id_s)),
        n_ood=int(len(ood_s)),
        mu_id_margin=float(top2_margins(id_logits).mean()),
        mu_ood_margin=float(ood_m.mean()),
        var_ood_margin=float(ood_m.var()),
        frac_negative_id_margin=float(np.mean(id_signed < 0)),
    )
