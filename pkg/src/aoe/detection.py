"""OOD scores and the thresholded detector. Higher score means more ID-like."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from aoe.exceptions import InvalidArgumentError
from aoe.numkernel import log_sum_exp, softmax

ID, OOD = "ID", "OOD"


@dataclass(frozen=True)
class ScoreKind:
    name: str = "msp"
    energy_T: float = 1.0

    def __post_init__(self):
        if self.name not in ("msp", "energy"):
            raise InvalidArgumentError(f"unknown score {self.name!r}")
        if not self.energy_T > 0:
            raise InvalidArgumentError("energy temperature must be > 0")

    @classmethod
    def parse(cls, text: str) -> "ScoreKind":
        """``"msp"`` or ``"energy"`` / ``"energy:2.0"``."""
        name, _, arg = text.strip().lower().partition(":")
        return cls(name, float(arg) if arg else 1.0)

    def __str__(self):
        return "msp" if self.name == "msp" else f"energy:{self.energy_T!r}"

    def __call__(self, logits) -> np.ndarray:
        if self.name == "msp":
            return msp_score(logits)
        return energy_score(logits, self.energy_T)


def msp_score(logits):
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise InvalidArgumentError("MSP needs at least 2 classes")
    out = np.max(softmax(z), axis=-1)
    return float(out) if out.ndim == 0 else out


def energy_score(logits, T_e: float = 1.0):
    """``T_e * logsumexp(z / T_e)`` (negated free energy)."""
    if not T_e > 0:
        raise InvalidArgumentError("T_e must be > 0")
    z = np.asarray(logits, dtype=np.float64)
    return T_e * log_sum_exp(z / T_e)


def _required_count(n: int, tpr_target: float) -> int:
    # guard against 0.95 * 20 landing a hair above an integer
    return max(1, math.ceil(tpr_target * n - 1e-9))


def calibrate_threshold(id_scores, tpr_target: float = 0.95) -> float:
    """Largest lambda keeping at least ceil(tpr * N) ID scores >= lambda."""
    s = np.asarray(id_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise InvalidArgumentError("id_scores is empty")
    if not 0.0 < tpr_target < 1.0:
        raise InvalidArgumentError("tpr_target must lie in (0, 1)")
    desc = np.sort(s)[::-1]
    return float(desc[_required_count(s.size, tpr_target) - 1])


@dataclass(frozen=True)
class Detector:
    kind: ScoreKind
    threshold: float

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise InvalidArgumentError("threshold must be finite")

    @classmethod
    def calibrated(cls, kind: ScoreKind, id_logits, tpr_target=0.95) -> "Detector":
        return cls(kind, calibrate_threshold(kind(id_logits), tpr_target))

    def score(self, logits):
        return self.kind(logits)

    def classify(self, logits):
        return classify(self, logits)


def classify(det: Detector, logits):
    """``"ID"`` iff score >= threshold (ties are ID)."""
    s = det.kind(logits)
    if np.ndim(s) == 0:
        return ID if s >= det.threshold else OOD
    return np.where(np.asarray(s) >= det.threshold, ID, OOD)
