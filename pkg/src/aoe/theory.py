"""Closed-form margin dynamics and temperature bounds, with numerical checks.

Notation: for logits ``z`` let ``a`` be the top index and ``b`` the
runner-up (lowest index on ties), ``m = z_a - z_b`` and
``R(z, b) = sum_{k != a, b} exp(z_k - z_b)``. A gradient step toward a
tempered target ``q_T = s(z/T)`` moves the margin by exactly

    m+ = m - eta * [h(m, R(z, b)) - h(m/T, R(z/T, b))],
    h(x, R) = (e^x - 1) / (e^x + 1 + R).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from aoe.exceptions import InvalidArgumentError, PreconditionError
from aoe.numkernel import softmax
from aoe.rng import SeededRng

MARGIN_TOL = 1e-12
SANDWICH_SLACK = 1e-12
LIMIT_T = 1e9


@dataclass(frozen=True)
class MarginReport:
    m: float
    a: int
    b: int
    R: float


def _row(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size < 2:
        raise InvalidArgumentError("need at least 2 logits")
    return z


def _top2(z):
    a = int(np.argmax(z))
    rest = z.copy()
    rest[a] = -np.inf
    return a, int(np.argmax(rest))


def _R(z, a, b, T=1.0) -> float:
    mask = np.ones(z.size, dtype=bool)
    mask[[a, b]] = False
    return float(np.sum(np.exp((z[mask] - z[b]) / T)))


def logit_margin(z) -> MarginReport:
    z = _row(z)
    a, b = _top2(z)
    return MarginReport(float(z[a] - z[b]), a, b, _R(z, a, b))


def h_func(x, R):
    """(e^x - 1) / (e^x + 1 + R), evaluated without overflow for large x."""
    x = np.asarray(x, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if np.any(R < 0):
        raise InvalidArgumentError("R must be >= 0")
    with np.errstate(over="ignore"):
        big = x > 0
        en = np.exp(-np.where(big, x, 0.0))
        pos = -np.expm1(-np.where(big, x, 0.0)) / (1.0 + (1.0 + R) * en)
        ex = np.exp(np.where(big, 0.0, x))
        neg = np.expm1(np.where(big, 0.0, x)) / (ex + 1.0 + R)
    out = np.where(big, pos, neg)
    return float(out) if out.ndim == 0 else out


def _contraction(z, T, eta):
    """eta * [h(m, R(z,b)) - h(m/T, R(z/T,b))], indices frozen from z."""
    a, b = _top2(z)
    m = z[a] - z[b]
    return eta * (h_func(m, _R(z, a, b)) - h_func(m / T, _R(z, a, b, T))), m


def predicted_margin_after_step(z, T: float, eta: float) -> float:
    z = _row(z)
    if T < 1:
        raise InvalidArgumentError("T must be >= 1")
    if eta <= 0:
        raise InvalidArgumentError("eta must be > 0")
    dm, m = _contraction(z, T, eta)
    return float(m - dm)


class MarginStep(NamedTuple):
    explicit: float
    predicted: float
    order_changed: bool


def margin_step(z, T: float, eta: float) -> MarginStep:
    """Explicit step ``z - eta (p - q_T)`` versus the closed-form margin update."""
    z = _row(z)
    a, b = _top2(z)
    z_new = z - eta * (softmax(z) - softmax(z, T))
    a2, b2 = _top2(z_new)
    return MarginStep(float(z_new[a] - z_new[b]), predicted_margin_after_step(z, T, eta),
                    (a2, b2) != (a, b))


def verify_thm2(z, T: float, eta: float) -> float:
    step = margin_step(z, T, eta)
    return abs(step.explicit - step.predicted)


def uniform_step(z, eta: float) -> np.ndarray:
    """One gradient step on KL(u || s(z)); raises if eta could flip a gap."""
    z = _row(z)
    gaps = np.abs(z[:, None] - z[None, :])
    nonzero = gaps[gaps > 0]
    if eta <= 0:
        raise PreconditionError("eta must be > 0")
    if nonzero.size and eta > nonzero.min() / 2:
        raise PreconditionError(
            f"eta={eta} exceeds half the smallest nonzero logit gap ({nonzero.min() / 2})")
    return z - eta * (softmax(z) - 1.0 / z.size)


def verify_prop1(z, eta: float) -> np.ndarray:
    """Boolean matrix: pairwise gap did not grow (diagonal trivially True)."""
    z = _row(z)
    z_new = uniform_step(z, eta)
    before = np.abs(z[:, None] - z[None, :])
    after = np.abs(z_new[:, None] - z_new[None, :])
    return after <= before + 1e-12


@dataclass
class ContractionCurve:
    points: list
    delta_inf: float

    @property
    def strictly_ordered(self) -> bool:
        return all(0.0 < dm < self.delta_inf for _, dm in self.points)

    @property
    def monotone(self) -> bool:
        d = [dm for _, dm in self.points]
        return all(x < y for x, y in zip(d, d[1:]))


def contraction_curve(z, eta: float, T_grid) -> ContractionCurve:
    """Margin contraction at each finite T and in the uniform-target limit."""
    z = _row(z)
    rep = logit_margin(z)
    pts = []
    for T in T_grid:
        if T <= 1:
            raise InvalidArgumentError("grid temperatures must exceed 1")
        dm, _ = _contraction(z, float(T), eta)
        pts.append((float(T), float(dm)))
    return ContractionCurve(pts, float(eta * h_func(rep.m, rep.R)))


class MspBounds(NamedTuple):
    lower: float
    msp: float
    upper: float

    def holds(self, slack: float = SANDWICH_SLACK) -> bool:
        return self.msp - self.lower >= -slack and self.upper - self.msp >= -slack


def msp_margin_bounds(z) -> MspBounds:
    z = _row(z)
    m = logit_margin(z).m
    K = z.size
    lower = 1.0 / (1.0 + (K - 1) * math.exp(-m))
    upper = 1.0 / (1.0 + math.exp(-m))
    return MspBounds(lower, float(np.max(softmax(z))), upper)


@dataclass
class GenBoundConstants:
    C1_prime: float
    C2_prime: float
    mu_x: np.ndarray
    var_f: np.ndarray
    T_star: float | None
    g_at_Tstar: float | None

    @property
    def defined(self) -> bool:
        return self.T_star is not None


def g_bound(T, C1: float, C2: float):
    """Leading temperature-dependent terms of the pseudo-label KL bound."""
    T = np.asarray(T, dtype=np.float64)
    return -C1 / T + C2 / T**2


def genbound_constants(logit_batch) -> GenBoundConstants:
    z = np.atleast_2d(np.asarray(logit_batch, dtype=np.float64))
    if z.shape[0] == 0:
        raise InvalidArgumentError("empty logit batch")
    mu = z.mean(axis=1)
    # centred forms, anchored on the first entry so constant rows give exact zeros
    shifted = z - z[:, :1]
    dev = shifted - shifted.mean(axis=1, keepdims=True)
    var = (dev**2).mean(axis=1)
    C1 = float(np.mean(np.sum(softmax(z) * dev, axis=1)))
    C2 = 0.5 * float(np.mean(var))
    if C1 > 0 and C2 > 0:
        t_star = 2.0 * C2 / C1
        g = float(g_bound(t_star, C1, C2))
    else:
        t_star, g = None, None
    return GenBoundConstants(C1, C2, mu, var, t_star, g)


def constants_from_values(C1: float, C2: float) -> GenBoundConstants:
    t_star = 2.0 * C2 / C1 if C1 > 0 and C2 > 0 else None
    g = float(g_bound(t_star, C1, C2)) if t_star is not None else None
    return GenBoundConstants(C1, C2, np.array([]), np.array([]), t_star, g)


def optimal_temperature_grid(consts: GenBoundConstants, step: float = 1e-3) -> np.ndarray:
    return np.arange(1, int(math.ceil(10 * consts.T_star / step)) + 1) * step


def verify_optimal_temperature(consts: GenBoundConstants, grid=None, step: float = 1e-3) -> bool:
    """Grid argmin of g lies within one step of T*, and g(T*) < 0 = g(inf)."""
    if not (consts.C1_prime > 0 and consts.C2_prime > 0):
        raise InvalidArgumentError("need C1' > 0 and C2' > 0")
    if grid is None:
        grid = optimal_temperature_grid(consts, step)
    grid = np.asarray(grid, dtype=np.float64)
    vals = g_bound(grid, consts.C1_prime, consts.C2_prime)
    t_hat = grid[int(np.argmin(vals))]
    spacing = float(np.max(np.diff(grid))) if grid.size > 1 else step
    return bool(abs(t_hat - consts.T_star) <= spacing * (1 + 1e-9) and consts.g_at_Tstar < 0.0)


# ---------------------------------------------------------------- theory suite

@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_residual: float
    trials: int
    detail: str = ""


def _rand_logits(rng, K, scale=3.0):
    return np.array(rng.normal(0.0, scale, size=K))


def check_margin_update(rng, trials):
    worst = 0.0
    for _ in range(trials):
        K = 2 + rng.below(7)
        z = _rand_logits(rng, K)
        T = rng.uniform(1.0, 100.0)
        eta = rng.uniform(1e-4, 0.1)
        worst = max(worst, verify_thm2(z, T, eta))
    return CheckResult("margin_update_exact", worst <= MARGIN_TOL, worst, trials,
                       f"tol={MARGIN_TOL}")


def check_uniform_contraction(rng, trials):
    worst = 0.0
    ok = True
    for _ in range(trials):
        K = 2 + rng.below(9)
        z = _rand_logits(rng, K)
        gaps = np.abs(z[:, None] - z[None, :])
        eta = min(0.1, gaps[gaps > 0].min() / 2)
        z_new = uniform_step(z, eta)
        growth = np.abs(z_new[:, None] - z_new[None, :]) - gaps
        worst = max(worst, float(growth.max()))
        ok &= bool(np.all(verify_prop1(z, eta)))
    return CheckResult("uniform_contraction", ok, worst, trials,
                       "residual = max pairwise gap growth")


def check_finite_T_order(rng, trials):
    ok = True
    worst_limit = 0.0
    for _ in range(trials):
        K = 2 + rng.below(9)
        z = _rand_logits(rng, K)
        while logit_margin(z).m <= 1e-6:
            z = _rand_logits(rng, K)
        eta = rng.uniform(1e-3, 0.1)
        grid = sorted({1.0 + 1e-3, 1.0 + rng.uniform(1e-3, 99.0), 100.0})
        curve = contraction_curve(z, eta, grid)
        ok &= curve.strictly_ordered
        dm_lim, _ = _contraction(z, LIMIT_T, eta)
        worst_limit = max(worst_limit, abs(dm_lim - curve.delta_inf))
    ok &= worst_limit <= 1e-6
    return CheckResult("finite_T_contracts_less", ok, worst_limit, trials,
                       "residual = |dm(T=1e9) - dm_inf|")


def check_msp_sandwich(rng, trials):
    worst = 0.0
    worst_k2 = 0.0
    for _ in range(trials):
        K = 2 + rng.below(9)
        bounds = msp_margin_bounds(_rand_logits(rng, K))
        slack = min(bounds.msp - bounds.lower, bounds.upper - bounds.msp)
        worst = min(worst, slack)
        if K == 2:
            worst_k2 = max(worst_k2, abs(bounds.upper - bounds.msp),
                           abs(bounds.lower - bounds.msp))
    ok = worst >= -SANDWICH_SLACK and worst_k2 <= 1e-12
    return CheckResult("msp_margin_sandwich", ok, max(-worst, worst_k2), trials,
                       "residual = max(violation, K=2 equality gap)")


def check_h_properties():
    R_grid = np.linspace(0.0, 10.0, 21)
    x_grid = np.linspace(-5.0, 10.0, 100)
    zero = float(np.max(np.abs(h_func(0.0, R_grid))))
    inc = all(np.all(np.diff(h_func(x_grid, R)) > 0) for R in R_grid)
    xs = x_grid[x_grid > 0]
    dec = all(np.all(np.diff(h_func(x, R_grid)) < 0) for x in xs)
    return CheckResult("h_kernel_properties", zero == 0.0 and inc and dec, zero,
                       len(R_grid) * len(x_grid), "h(0,R)=0, increasing in x, decreasing in R (x>0)")


def check_genbound(step=1e-3):
    values = np.round(np.arange(1, 51) * 0.1, 10)
    ok = True
    worst = 0.0
    n = 0
    for C1 in values:
        for C2 in values:
            c = constants_from_values(float(C1), float(C2))
            ok &= verify_optimal_temperature(c, step=step)
            worst = max(worst, abs(c.g_at_Tstar + C1**2 / (4 * C2)))
            ok &= c.g_at_Tstar < 0
            n += 1
    ok &= worst <= 1e-12
    return CheckResult("optimal_temperature_corollaries", bool(ok), float(worst), n,
                       "residual = |g(T*) + C1^2/(4 C2)|")


def run_theory_suite(trials: int = 1000, seed: int = 0) -> dict:
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    rng = SeededRng(seed)
    checks = [
        check_margin_update(rng, trials),
        check_uniform_contraction(rng, trials),
        check_finite_T_order(rng, trials),
        check_msp_sandwich(rng, trials),
        check_h_properties(),
        check_genbound(),
    ]
    return {
        "seed": int(seed),
        "trials": int(trials),
        "all_passed": all(c.passed for c in checks),
        "checks": [asdict(c) for c in checks],
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
