"""Weighted norms, capacity integrals, and forcing aggregates (log-domain).

The certification powers ``alpha`` sit in the hundreds, so quantities like
``integral(phi * u**alpha)`` or the capacity integrals routinely exceed double
range.  Every potentially huge quantity here is computed and returned as a
natural logarithm (``logsumexp`` over cell contributions); only root-tamed
values (norms, forcing masses) are returned in linear scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import logsumexp

from .constitutive import FlowModel, WeightSet, eval_weights
from .exponents import ExponentBundle, ParameterError
from .geometry import SIDES, BoundaryForcing, Grid

__all__ = [
    "FieldSet",
    "KFunctionals",
    "materialize_fields",
    "log1pexp",
    "safe_log",
    "log_integral",
    "log_weighted_power",
    "lp_phi_norm",
    "log_weighted_power_spacetime",
    "lp_phi_norm_spacetime",
    "k_functionals",
    "forcing_defect_mass",
    "forcing_defect_series",
    "cumulative_time_integral",
    "log_boundary_defect_q3",
    "log_psi_T",
    "log_n1",
    "log_n2",
    "log_n3",
    "unweighted_norm_constant",
]


def log1pexp(x: float | np.ndarray) -> float | np.ndarray:
    """log(1 + exp(x)), stable for any magnitude of x."""
    return np.logaddexp(0.0, x)


def safe_log(values: np.ndarray) -> np.ndarray:
    """Elementwise log with log(0) = -inf and no warnings."""
    values = np.asarray(values, dtype=np.float64)
    out = np.full(values.shape, -np.inf)
    pos = values > 0.0
    out[pos] = np.log(values[pos])
    return out


def log_integral(grid: Grid, log_cells: np.ndarray) -> float:
    """log of the midpoint-rule integral of exp(log_cells) over the domain."""
    return float(logsumexp(np.asarray(log_cells, dtype=np.float64).ravel()) + math.log(grid.cell_area))


@dataclass(frozen=True)
class FieldSet:
    """Porosity and flux-bound weight fields materialized on a grid."""

    model: FlowModel
    grid: Grid
    phi: np.ndarray
    log_phi: np.ndarray
    weights: WeightSet
    log_w1: np.ndarray
    log_w3: np.ndarray
    log_w4: np.ndarray


def materialize_fields(model: FlowModel, grid: Grid) -> FieldSet:
    X, Y = grid.cell_centers
    phi = model.phi(X, Y)
    w = eval_weights(model, X, Y)
    return FieldSet(
        model=model,
        grid=grid,
        phi=phi,
        log_phi=np.log(phi),
        weights=w,
        log_w1=np.log(w.W1),
        log_w3=np.log(w.W3),
        log_w4=np.log(w.W4),
    )


# ---------------------------------------------------------------------------
# Weighted norms of solution snapshots
# ---------------------------------------------------------------------------


def log_weighted_power(grid: Grid, phi: np.ndarray, u: np.ndarray, alpha: float) -> float:
    """log of integral(phi * u**alpha) over the domain."""
    return log_integral(grid, safe_log(phi) + alpha * safe_log(u))


def lp_phi_norm(grid: Grid, phi: np.ndarray, u: np.ndarray, alpha: float) -> float:
    """Weighted Lebesgue norm (integral(phi u^alpha))**(1/alpha)."""
    return float(np.exp(log_weighted_power(grid, phi, u, alpha) / alpha))


def log_weighted_power_spacetime(
    grid: Grid,
    phi: np.ndarray,
    snapshots: np.ndarray,
    times: np.ndarray,
    alpha: float,
) -> float:
    """log of the space-time integral of phi u^alpha (trapezoid in time)."""
    times = np.asarray(times, dtype=np.float64)
    if times.size < 2:
        raise ValueError("need at least two snapshots for a time integral")
    per_t = np.array(
        [log_weighted_power(grid, phi, u, alpha) for u in snapshots], dtype=np.float64
    )
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return float(logsumexp(per_t + safe_log(w)))


def lp_phi_norm_spacetime(
    grid: Grid,
    phi: np.ndarray,
    snapshots: np.ndarray,
    times: np.ndarray,
    alpha: float,
) -> float:
    return float(
        np.exp(log_weighted_power_spacetime(grid, phi, snapshots, times, alpha) / alpha)
    )


# ---------------------------------------------------------------------------
# Capacity functionals K0..K6
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KFunctionals:
    """The seven capacity integrals as log values (+inf marks divergence)."""

    log_values: tuple[float, ...]
    alpha: float

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(np.asarray(self.log_values))

    @property
    def infinite_indices(self) -> tuple[int, ...]:
        return tuple(j for j, v in enumerate(self.log_values) if not np.isfinite(v))

    @property
    def all_finite(self) -> bool:
        return not self.infinite_indices


def _k_logs(fields: FieldSet, bundle: ExponentBundle, alpha: float) -> list[float]:
    grid = fields.grid
    lp = fields.log_phi
    a, lam, r = bundle.a, bundle.lam, bundle.r
    r1 = bundle.r1

    e2 = alpha * (1.0 - a) - 1.0 + lam + a
    if e2 <= 0.0:
        raise ParameterError(f"alpha(1-a)-1+lam+a > 0 required for K2 (got {e2:.6g})")
    d3 = alpha * (1.0 - r1) - 2.0 * lam * r1
    if d3 <= 0.0:
        raise ParameterError(f"alpha(1-r1)-2 lam r1 > 0 required for K3 (got {d3:.6g})")
    b4 = bundle.beta_star(alpha)
    if not b4 < alpha:
        raise ParameterError(f"alpha > beta_star(alpha) required for K4 (got beta_star={b4:.6g})")

    k0 = math.log1p(grid.integrate(fields.phi))
    k1 = (1.0 + bundle.mu1(alpha) / alpha) * log_integral(grid, -lp)
    k2 = (e2 / alpha) * log_integral(grid, -((alpha + 1.0 - lam - a) / e2) * lp)
    k3 = (d3 / (alpha * r1)) * log_integral(
        grid, -(2.0 * lam * r1 / d3) * lp - (r1 * alpha / d3) * fields.log_w1
    )
    k4 = ((alpha - b4) / alpha) * (1.0 + bundle.mu1_tilde(alpha) / alpha) * log_integral(
        grid,
        -((alpha + b4) / (alpha - b4)) * lp
        - (b4 * alpha / (2.0 * lam * (alpha - b4))) * fields.log_w1,
    )
    k5 = log_integral(
        grid, -((alpha - lam - 1.0) / (lam + 1.0)) * lp + (alpha / (lam + 1.0)) * fields.log_w4
    )
    k6 = log_integral(
        grid, ((alpha + r) / (r - lam * (5.0 - 4.0 * a) + 1.0)) * fields.log_w3
    )
    return [k0, k1, k2, k3, k4, k5, k6]


def k_functionals(
    fields: FieldSet,
    bundle: ExponentBundle,
    alpha: float | None = None,
    check_refinement: bool = True,
    divergence_ratio: float = 4.0,
) -> KFunctionals:
    """Capacity integrals at power ``alpha`` (default: the bundle's beta1).

    With ``check_refinement`` each integral is recomputed on a once-refined
    grid; an integral that grows by more than ``divergence_ratio`` is treated
    as divergent and reported as +inf.
    """
    if alpha is None:
        alpha = bundle.beta1
    logs = _k_logs(fields, bundle, alpha)
    if check_refinement:
        fine = materialize_fields(fields.model, fields.grid.refine())
        logs_fine = _k_logs(fine, bundle, alpha)
        thresh = math.log(divergence_ratio)
        logs = [
            math.inf if (lf - lc) > thresh else lc
            for lc, lf in zip(logs, logs_fine)
        ]
    logs = [lv if np.isfinite(lv) else math.inf for lv in logs]
    return KFunctionals(log_values=tuple(float(v) for v in logs), alpha=float(alpha))


# ---------------------------------------------------------------------------
# Boundary forcing aggregates
# ---------------------------------------------------------------------------


def _boundary_defect_cells(
    grid: Grid, forcing: BoundaryForcing, t: float, e1: float, e2: float
) -> float:
    """integral over the boundary of (psi1^-)^e1 + (psi2^-)^e2 at time t."""
    total = 0.0
    for side in SIDES:
        p1 = forcing.psi1_on(grid, side, t)
        p2 = forcing.psi2_on(grid, side, t)
        n1 = np.maximum(-p1, 0.0)
        n2 = np.maximum(-p2, 0.0)
        total += float(np.sum(n1**e1 + n2**e2)) * grid.boundary_measure(side)
    return total


def forcing_defect_mass(
    fields: FieldSet,
    forcing: BoundaryForcing,
    bundle: ExponentBundle,
    t: float,
    alpha: float | None = None,
) -> float:
    """Forcing mass M(t) = 1 + boundary integral of the negative-part powers."""
    if alpha is None:
        alpha = bundle.beta1
    r, lam = bundle.r, bundle.lam
    e1 = (alpha + r) / (r + lam)
    e2 = (alpha + r) / r
    return 1.0 + _boundary_defect_cells(fields.grid, forcing, t, e1, e2)


def forcing_defect_series(
    fields: FieldSet,
    forcing: BoundaryForcing,
    bundle: ExponentBundle,
    times: np.ndarray,
    alpha: float | None = None,
) -> np.ndarray:
    return np.array(
        [forcing_defect_mass(fields, forcing, bundle, float(t), alpha) for t in times]
    )


def cumulative_time_integral(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral of a time series, starting at zero."""
    return cumulative_trapezoid(np.asarray(values), np.asarray(times), initial=0.0)


def log_boundary_defect_q3(
    fields: FieldSet, forcing: BoundaryForcing, bundle: ExponentBundle, times: np.ndarray
) -> float:
    """log of the space-time boundary integral of the q3-th defect powers."""
    q3 = bundle.q3
    series = np.array(
        [_boundary_defect_cells(fields.grid, forcing, float(t), q3, q3) for t in times]
    )
    total = float(np.trapezoid(series, np.asarray(times)))
    return float(safe_log(np.array([total]))[0])


def log_psi_T(
    fields: FieldSet, forcing: BoundaryForcing, bundle: ExponentBundle, times: np.ndarray
) -> float:
    """log of the boundary-defect factor 1 + (q3 space-time integral)^pow."""
    denom = bundle.p3 * (2.0 - bundle.a) - 1.0
    power = bundle.p3 * (2.0 - bundle.a) / (bundle.q3 * denom)
    return float(log1pexp(power * log_boundary_defect_q3(fields, forcing, bundle, times)))


# ---------------------------------------------------------------------------
# Composite capacity factors
# ---------------------------------------------------------------------------


def log_n1(fields: FieldSet, bundle: ExponentBundle) -> float:
    """log of the first single-rung capacity factor."""
    grid = fields.grid
    lp = fields.log_phi
    a = bundle.a
    q1, q2, q4, q5 = bundle.q1, bundle.q2, bundle.q4, bundle.q5
    p1, p2, p3, p4, p5 = bundle.p1, bundle.p2, bundle.p3, bundle.p4, bundle.p5

    a1 = (1.0 / q1) * log_integral(grid, q1 * fields.log_w4 - (q1 / p1) * lp)
    a2 = (1.0 / q2) * log_integral(grid, q2 * fields.log_w3 - (q2 / p2) * lp)
    a3 = (1.0 / (p3 * q4)) * log_integral(grid, -(q4 / p4) * lp)
    a4 = ((1.0 - a) / (q5 * (p3 * (2.0 - a) - 1.0))) * log_integral(
        grid, -(q5 / (1.0 - a)) * fields.log_w1 - (q5 / p5) * lp
    )
    brace = float(logsumexp([0.0, a1, a2, a3, a4]))
    return math.log1p(grid.integrate(fields.phi)) + brace


def log_n2(fields: FieldSet, bundle: ExponentBundle) -> float:
    """log of the second (gain-rung) capacity factor."""
    grid = fields.grid
    lp = fields.log_phi
    r1, lam, rstar = bundle.r1, bundle.lam, bundle.rstar

    t1 = min(1.0 - r1, 2.0 * lam / (1.0 + lam)) * math.log1p(grid.integrate(fields.phi))
    t2 = (rstar / 2.0) * log_integral(grid, (2.0 / rstar - 1.0) * lp)
    inner = (r1 / (1.0 - r1)) * log1pexp(-lp) + (r1 / (1.0 - r1) ** 2) * log1pexp(
        -fields.log_w1
    )
    t3 = ((1.0 - r1) / r1) * log1pexp(log_integral(grid, inner))
    return t1 + t2 + t3


def log_n3(fields: FieldSet, bundle: ExponentBundle) -> float:
    """log of the combined capacity factor max(N1, N2)."""
    return max(log_n1(fields, bundle), log_n2(fields, bundle))


def unweighted_norm_constant(fields: FieldSet, alpha: float, eta: float) -> float:
    """integral(phi^(-eta/(alpha-eta))), the unweighted-norm comparison factor."""
    if not 0.0 < eta < alpha:
        raise ParameterError(f"need 0 < eta < alpha (got eta={eta}, alpha={alpha})")
    return float(np.exp(log_integral(fields.grid, -(eta / (alpha - eta)) * fields.log_phi)))
