"""Certification of the a priori estimates against solver trajectories.

The chain being certified runs: a differential inequality for the weighted
energy J(t) = integral(phi u^alpha) (gradient energy on the left, a
superlinear power of 1 + J plus a boundary-forcing mass on the right); its
integrated norm envelope delta(t)^(-1/mu_star); a geometric ladder of powers
beta_j = kappa_tilde^j alpha0 whose single rung bounds the L^(kappa alpha)
norm by L^(kappa_tilde alpha) norms; and the limit of that ladder, a sup-norm
bound with fully explicit exponents.

The exponents are exact (see :mod:`forchflow.exponents`); the prefactors are
not, so this module makes them quantitative in two ways:

* constants that admit explicit formulas in terms of the empirically
  estimated trace/Sobolev constants are derived
  (:func:`derive_iteration_constants`);
* genuinely generic constants are fitted as the largest left/right ratio
  observed on calibration trajectories (:func:`fit_energy_growth`,
  :func:`certify_sup_bound`) and certified by their stability under grid
  refinement and parameter sweeps, then re-checked on disjoint runs.

Powers up to beta_1 > 300 force all norm algebra into log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .constitutive import FlowModel
from .exponents import ExponentBundle, MoserLimits, ParameterError
from .functionals import (
    FieldSet,
    KFunctionals,
    cumulative_time_integral,
    forcing_defect_series,
    k_functionals,
    log1pexp,
    log_integral,
    log_psi_T,
    log_weighted_power,
    materialize_fields,
    unweighted_norm_constant,
)
from .harness import EmpiricalConstants
from .solver import Trajectory

__all__ = [
    "DivergentCapacityError",
    "EnergyFit",
    "EnvelopeResult",
    "IterationSchedule",
    "SequenceBound",
    "SupRunResult",
    "SupCertification",
    "CertificationReport",
    "derive_iteration_constants",
    "fit_energy_growth",
    "fit_stability",
    "norm_envelope",
    "iteration_schedule",
    "sequence_bound",
    "certify_sup_bound",
    "growth_exponent_margin",
]


class DivergentCapacityError(RuntimeError):
    """A capacity integral required by an estimate is infinite."""

    def __init__(self, indices: Sequence[int]):
        self.indices = tuple(int(j) for j in indices)
        names = ", ".join(f"K{j}" for j in self.indices)
        super().__init__(f"divergent capacity integral(s): {names}")


# ---------------------------------------------------------------------------
# Explicit ladder constants from the estimated trace/Sobolev constants
# ---------------------------------------------------------------------------


def derive_iteration_constants(
    constants: EmpiricalConstants,
    bundle: ExponentBundle,
    c_z: float,
) -> EmpiricalConstants:
    """Fill c8, c9, c10 from their explicit formulas.

    The single-rung estimates of the ladder admit explicit prefactors once
    the trace pair (c5, c6), the Sobolev constant c7, the drift bound c_z,
    and the splitting exponent p3 are fixed:

        c0  = 2^(a-1)
        C1  = max{1, (2 + 2^(2(lam+1)(1-a)+1) / c0) * c_z^(2-a)}
        C2  = max{C1, c5^(1/p3),
                  [4^(3+lam) (c6 p3)^(2-a)]^(1/(p3(2-a)-1)), 4 lam}
        c8  = 36 C2 / lam
        c9  = 144 C2
        c10 = 3 * 2^(11+2 lam) * max{1, c7^(2-a)} * max{c8, c9}^(5/2)

    Since C1 >= 1, all three results exceed 1 regardless of lam.  The inputs
    and intermediates are recorded in the metadata.
    """
    if not c_z > 0.0:
        raise ParameterError(f"drift bound c_z must be positive (got {c_z})")
    a, lam, p3 = bundle.a, bundle.lam, bundle.p3
    c0 = 2.0 ** (a - 1.0)
    ctilde1 = max(1.0, (2.0 + 2.0 ** (2.0 * (lam + 1.0) * (1.0 - a) + 1.0) / c0) * c_z ** (2.0 - a))
    ctilde2 = max(
        ctilde1,
        constants.c5 ** (1.0 / p3),
        (4.0 ** (3.0 + lam) * (constants.c6 * p3) ** (2.0 - a))
        ** (1.0 / (p3 * (2.0 - a) - 1.0)),
        4.0 * lam,
    )
    c8 = 36.0 * ctilde2 / lam
    c9 = 144.0 * ctilde2
    c10 = (
        3.0
        * 2.0 ** (11.0 + 2.0 * lam)
        * max(1.0, constants.c7 ** (2.0 - a))
        * max(c8, c9) ** 2.5
    )
    meta = dict(constants.metadata)
    meta["iteration_constants"] = {
        "c_z": float(c_z),
        "p3": p3,
        "a": a,
        "lam": lam,
        "ctilde1": ctilde1,
        "ctilde2": ctilde2,
    }
    return replace(constants, c8=c8, c9=c9, c10=c10, metadata=meta)


# ---------------------------------------------------------------------------
# Energy differential inequality: fitting the growth constant
# ---------------------------------------------------------------------------


def _log_grad_energy(fields: FieldSet, u: np.ndarray, alpha: float) -> float:
    """log of integral(u^(alpha-lam-1) (1+u)^(-2 lam) |grad u|^(2-a) W1)."""
    model = fields.model
    lam, a = model.lam, model.law.a_exponent
    grid = fields.grid
    dudx, dudy = grid.gradient(u)
    with np.errstate(divide="ignore"):
        log_u = np.log(u)
        log_g = np.log(np.hypot(dudx, dudy))
    cells = (
        (alpha - lam - 1.0) * log_u
        - 2.0 * lam * np.log1p(u)
        + (2.0 - a) * log_g
        + fields.log_w1
    )
    return log_integral(grid, cells)


@dataclass(frozen=True)
class EnergyFit:
    """Fitted growth constant of the weighted-energy differential inequality.

    ``cbar`` is the largest observed ratio of

        d/dt J(t) + grad_coef * (gradient energy)(t)

    to the right-hand shape chi^gamma_star [ (1+J)^(1+mu_star/alpha) + M(t) ]
    along the trajectory (0 when the left side never turns positive).  The
    time derivative uses centered differences on snapshots, one-sided at the
    endpoints.
    """

    alpha: float
    cbar: float
    grad_coef: float
    chi_star: float
    times: tuple[float, ...]
    ratios: tuple[float, ...]
    argmax_time: float
    n_snapshots: int
    skip_initial: int = 1
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "cbar": self.cbar,
            "grad_coef": self.grad_coef,
            "chi_star": self.chi_star,
            "argmax_time": self.argmax_time,
            "n_snapshots": self.n_snapshots,
            "skip_initial": self.skip_initial,
            "times": list(self.times),
            "ratios": list(self.ratios),
            "metadata": self.metadata,
        }


def fit_energy_growth(
    traj: Trajectory,
    bundle: ExponentBundle,
    alpha: float | None = None,
    *,
    skip_initial: int = 1,
    kfuncs: KFunctionals | None = None,
    fields: FieldSet | None = None,
) -> EnergyFit:
    """Fit the energy-inequality growth constant on one trajectory.

    Requires ``alpha`` above the structural threshold ``alpha_star`` and all
    capacity integrals finite (:class:`DivergentCapacityError` otherwise,
    naming the offending indices).  A trajectory that never increases its
    energy and has no gradient activity (e.g. the zero solution) fits
    ``cbar = 0``.

    The first ``skip_initial`` snapshots are excluded from the fitted
    maximum (all ratios are still reported): initial data that is not
    compatible with the boundary flux adjusts through a layer whose
    one-sided difference quotient sharpens under grid refinement, so
    including it would destroy the refinement stability that certifies the
    fit.  The same convention must be used when re-checking the inequality
    on assertion runs.
    """
    if alpha is None:
        alpha = bundle.beta1
    if not alpha > bundle.alpha_star:
        raise ParameterError(
            f"energy fit needs alpha > alpha_star = {bundle.alpha_star:.6g} "
            f"(got alpha = {alpha:.6g})"
        )
    model, grid = traj.model, traj.grid
    if fields is None:
        fields = materialize_fields(model, grid)
    if kfuncs is None:
        kfuncs = k_functionals(fields, bundle, alpha)
    if not kfuncs.all_finite:
        raise DivergentCapacityError(kfuncs.infinite_indices)

    times = np.asarray(traj.times, dtype=np.float64)
    if skip_initial < 0:
        raise ValueError("skip_initial must be nonnegative")
    if times.size < skip_initial + 2:
        raise ValueError(
            f"need at least skip_initial + 2 = {skip_initial + 2} snapshots "
            f"to difference the energy (got {times.size})"
        )
    chi = model.chi_star
    lam, a = model.lam, model.law.a_exponent
    coef = alpha * (alpha - lam) / (2.0 ** (3.0 - a) * lam * chi * chi)

    log_j = np.array(
        [log_weighted_power(grid, fields.phi, u, alpha) for u in traj.snapshots]
    )
    log_ie = np.array([_log_grad_energy(fields, u, alpha) for u in traj.snapshots])
    m_series = forcing_defect_series(fields, traj.forcing, bundle, times, alpha)
    log_rhs = bundle.gamma_star * math.log(chi) + np.logaddexp(
        (1.0 + bundle.mu_star / alpha) * log1pexp(log_j), np.log(m_series)
    )

    # difference the energy in a scaled linear domain so that powers far
    # outside float range cancel against the right-hand side in log space
    log_ci = math.log(coef) + log_ie
    scale = max(0.0, float(np.max(log_j)), float(np.max(log_ci)))
    jlin = np.exp(log_j - scale)
    ilin = np.exp(log_ci - scale)
    djdt = np.empty_like(jlin)
    djdt[0] = (jlin[1] - jlin[0]) / (times[1] - times[0])
    djdt[-1] = (jlin[-1] - jlin[-2]) / (times[-1] - times[-2])
    if jlin.size > 2:
        djdt[1:-1] = (jlin[2:] - jlin[:-2]) / (times[2:] - times[:-2])
    lhs_scaled = djdt + ilin

    ratios = []
    for value, lr in zip(lhs_scaled, log_rhs):
        if value == 0.0:
            ratios.append(0.0)
            continue
        log_mag = math.log(abs(value)) + scale - lr
        mag = math.exp(log_mag) if log_mag < 700.0 else math.inf
        ratios.append(math.copysign(mag, value))
    window = ratios[skip_initial:]
    cbar = max(0.0, max(window))
    argmax = skip_initial + int(np.argmax(window))
    return EnergyFit(
        alpha=float(alpha),
        cbar=float(cbar),
        grad_coef=float(coef),
        chi_star=float(chi),
        times=tuple(float(t) for t in times),
        ratios=tuple(float(v) for v in ratios),
        argmax_time=float(times[argmax]),
        n_snapshots=int(times.size),
        skip_initial=int(skip_initial),
        metadata={"grid": [grid.nx, grid.ny], "omega_tilde": model.rot.omega_tilde},
    )


def fit_stability(fits: Iterable[EnergyFit]) -> dict:
    """Spread of fitted growth constants across a sweep (refinements, rotation).

    ``ratio`` is max/min over the fits (1 when all are zero, inf when some
    are zero and some are not); ``variation`` is ratio - 1.
    """
    values = [f.cbar for f in fits]
    if not values:
        raise ValueError("need at least one fit")
    vmax, vmin = max(values), min(values)
    if vmax == 0.0:
        ratio = 1.0
    elif vmin <= 0.0:
        ratio = math.inf
    else:
        ratio = vmax / vmin
    return {"min": vmin, "max": vmax, "ratio": ratio, "variation": ratio - 1.0}


# ---------------------------------------------------------------------------
# Integrated norm envelope
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeResult:
    """Closed-form envelope of the weighted alpha-norm along one trajectory.

    With V0 = 1 + integral(phi u0^alpha) and M(t) the boundary forcing mass,
    the fitted differential inequality integrates to

        ||u(t)||_{L^alpha_phi} <= V0^(1/alpha) delta(t)^(-1/mu_star),
        delta(t) = 1 - (2 mu_star chi^gamma_star cbar / alpha)
                       V0^(mu_star/alpha) int_0^t M,

    valid while the forcing budget lasts: int_0^T M <= smallness_budget.
    When the budget is exhausted inside the horizon, ``admissible`` is False
    and ``largest_admissible_t`` carries the crossing time; envelope entries
    past the crossing are +inf.  ``margins`` are log(bound) - log(simulated).
    """

    alpha: float
    mu_star: float
    cbar: float
    chi_star: float
    log_v0: float
    smallness_budget: float
    mass_integral: float
    admissible: bool
    largest_admissible_t: float | None
    start_index: int
    anchor_time: float
    times: tuple[float, ...]
    delta: tuple[float, ...]
    log_bound: tuple[float, ...]
    log_norm: tuple[float, ...]
    margins: tuple[float, ...]
    eta: float | None = None
    eta_factor: float | None = None
    log_bound_eta: tuple[float, ...] | None = None
    log_norm_eta: tuple[float, ...] | None = None
    metadata: dict = field(default_factory=dict)

    def to_rows(self) -> tuple[list[str], list[list[float]]]:
        """Envelope series as CSV-ready header + rows."""
        header = ["t", "delta", "log_bound", "bound", "log_norm", "norm", "log_margin"]
        if self.eta is not None:
            header += ["log_bound_unweighted", "log_norm_unweighted"]
        rows = []
        for i, t in enumerate(self.times):
            row = [
                t,
                self.delta[i],
                self.log_bound[i],
                _safe_exp(self.log_bound[i]),
                self.log_norm[i],
                _safe_exp(self.log_norm[i]),
                self.margins[i],
            ]
            if self.eta is not None:
                row += [self.log_bound_eta[i], self.log_norm_eta[i]]
            rows.append(row)
        return header, rows

    def to_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "mu_star": self.mu_star,
            "cbar": self.cbar,
            "chi_star": self.chi_star,
            "log_v0": self.log_v0,
            "smallness_budget": self.smallness_budget,
            "mass_integral": self.mass_integral,
            "admissible": self.admissible,
            "largest_admissible_t": self.largest_admissible_t,
            "start_index": self.start_index,
            "anchor_time": self.anchor_time,
            "times": list(self.times),
            "delta": list(self.delta),
            "log_bound": list(self.log_bound),
            "log_norm": list(self.log_norm),
            "margins": list(self.margins),
            "metadata": self.metadata,
        }
        if self.eta is not None:
            out["eta"] = self.eta
            out["eta_factor"] = self.eta_factor
            out["log_bound_unweighted"] = list(self.log_bound_eta)
            out["log_norm_unweighted"] = list(self.log_norm_eta)
        return out


def _safe_exp(x: float) -> float:
    if x == -math.inf:
        return 0.0
    return math.exp(x) if x < 700.0 else math.inf


def norm_envelope(
    traj: Trajectory,
    bundle: ExponentBundle,
    cbar: float,
    alpha: float | None = None,
    *,
    start_index: int = 0,
    eta: float | None = None,
    fields: FieldSet | None = None,
) -> EnvelopeResult:
    """Evaluate the norm envelope on a trajectory with a given fitted constant.

    ``cbar`` must come from calibration runs disjoint from ``traj`` for the
    comparison to be meaningful.  ``eta`` additionally reports the unweighted
    L^eta bound through the porosity comparison factor (requires
    0 < eta < alpha and a finite comparison integral).

    ``start_index`` anchors the envelope at a later snapshot (the estimate is
    invariant under time translation); use the same value as the fit's
    ``skip_initial`` when the initial data is not compatible with the
    boundary flux, since the fitted inequality only holds after the
    adjustment layer.  The result then covers ``times[start_index:]``.
    """
    if alpha is None:
        alpha = bundle.beta1
    if cbar < 0.0:
        raise ValueError(f"growth constant must be nonnegative (got {cbar})")
    if start_index < 0 or start_index >= len(traj.times) - 1:
        raise ValueError(
            f"start_index must leave at least two snapshots "
            f"(got {start_index} with {len(traj.times)} snapshots)"
        )
    model, grid = traj.model, traj.grid
    if fields is None:
        fields = materialize_fields(model, grid)
    chi = model.chi_star
    mu_star, gamma_star = bundle.mu_star, bundle.gamma_star

    times = np.asarray(traj.times[start_index:], dtype=np.float64)
    snapshots = traj.snapshots[start_index:]
    log_j0 = log_weighted_power(grid, fields.phi, snapshots[0], alpha)
    log_v0 = float(log1pexp(log_j0))

    m_series = forcing_defect_series(fields, traj.forcing, bundle, times, alpha)
    cum_m = cumulative_time_integral(times, m_series)
    mass_integral = float(cum_m[-1])

    chi_gamma = chi**gamma_star
    if cbar > 0.0:
        budget = (
            alpha
            / (2.0 * mu_star * chi_gamma * cbar)
            * math.exp(-(mu_star / alpha) * log_v0)
        )
    else:
        budget = math.inf
    admissible = mass_integral <= budget

    drain = (2.0 * mu_star * chi_gamma * cbar / alpha) * math.exp(
        (mu_star / alpha) * log_v0
    )
    delta = 1.0 - drain * cum_m

    largest_t: float | None = None
    if not admissible:
        # linear interpolation of the cumulative forcing to the budget crossing
        idx = int(np.argmax(cum_m > budget))
        t0, t1 = times[idx - 1], times[idx]
        c0, c1 = cum_m[idx - 1], cum_m[idx]
        largest_t = float(t0 + (budget - c0) / (c1 - c0) * (t1 - t0))

    log_bound = np.where(
        delta > 0.0,
        log_v0 / alpha - np.log(np.maximum(delta, 1e-300)) / mu_star,
        math.inf,
    )
    log_norm = np.array(
        [log_weighted_power(grid, fields.phi, u, alpha) / alpha for u in snapshots]
    )
    margins = log_bound - log_norm

    eta_factor = None
    log_bound_eta = None
    log_norm_eta = None
    if eta is not None:
        c_comp = unweighted_norm_constant(fields, alpha, eta)
        eta_factor = c_comp ** (1.0 / eta - 1.0 / alpha)
        log_bound_eta = tuple(float(v) for v in math.log(eta_factor) + log_bound)
        log_norm_eta = tuple(
            float(log_integral(grid, eta * _safe_log_array(u)) / eta)
            for u in snapshots
        )

    return EnvelopeResult(
        alpha=float(alpha),
        mu_star=float(mu_star),
        cbar=float(cbar),
        chi_star=float(chi),
        log_v0=log_v0,
        smallness_budget=float(budget),
        mass_integral=mass_integral,
        admissible=bool(admissible),
        largest_admissible_t=largest_t,
        start_index=int(start_index),
        anchor_time=float(times[0]),
        times=tuple(float(t) for t in times),
        delta=tuple(float(d) for d in delta),
        log_bound=tuple(float(v) for v in log_bound),
        log_norm=tuple(float(v) for v in log_norm),
        margins=tuple(float(v) for v in margins),
        eta=None if eta is None else float(eta),
        eta_factor=eta_factor,
        log_bound_eta=log_bound_eta,
        log_norm_eta=log_norm_eta,
        metadata={"grid": [grid.nx, grid.ny]},
    )


def _safe_log_array(u: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(u))


# ---------------------------------------------------------------------------
# Ladder schedule and its infinite products
# ---------------------------------------------------------------------------


def _alpha0_threshold_terms(bundle: ExponentBundle) -> list[tuple[str, float]]:
    """Named lower-bound terms for the ladder base power (max = alpha0_min)."""
    kt, a, lam = bundle.kappa_tilde, bundle.a, bundle.lam
    rstar, r1 = bundle.rstar, bundle.r1
    return [
        ("ladder start (1-lam-a)/(kappa_tilde-1)", (1.0 - lam - a) / (kt - 1.0)),
        (
            "splitting p2(lam(5-4a)-1)/(kappa_tilde-p2)",
            bundle.p2 * (lam * (5.0 - 4.0 * a) - 1.0) / (kt - bundle.p2),
        ),
        (
            "splitting p5(a+3lam-1)/((1-a)(kappa_tilde-p6))",
            bundle.p5 * (a + 3.0 * lam - 1.0) / ((1.0 - a) * (kt - bundle.p6)),
        ),
        ("damping window 2lam/(1-r1)", 2.0 * lam / (1.0 - r1)),
        (
            "ladder gap (lam+a-1)/(1+rstar/2-kappa_tilde^2)",
            (lam + a - 1.0) / (1.0 + rstar / 2.0 - kt**2),
        ),
        (
            "interior excess 2(2-a)(r+a+lam-1)/(kappa_tilde rstar (1-a))",
            2.0 * (2.0 - a) * (bundle.r + a + lam - 1.0) / (kt * rstar * (1.0 - a)),
        ),
        (
            "envelope floor (2lam(2+rstar)/((1-a)rstar)+2/rstar)/kappa_tilde",
            (2.0 * lam * (2.0 + rstar) / ((1.0 - a) * rstar) + 2.0 / rstar) / kt,
        ),
        (
            "boundary excess (2 max(r,rtilde)(1+2/rstar)+4lam/rstar)/kappa_tilde",
            (
                2.0 * max(bundle.r, bundle.rtilde) * (1.0 + 2.0 / rstar)
                + 4.0 * lam / rstar
            )
            / kt,
        ),
    ]


@dataclass(frozen=True)
class IterationSchedule:
    """Ladder powers, time nodes, and converged products for the sup bound.

    ``beta[j] = kappa_tilde^j alpha0`` with nested window starts
    ``t_nodes[j] = sigma T (1 - 2^-j)``; ``chain_margins[j]`` is
    kappa(beta_j) beta_j - beta_{j+2}, which must stay positive for the
    ladder to gain a full factor kappa_tilde^2 of integrability per rung
    pair.  ``mu_tilde``/``nu_tilde``/``g_product`` are the infinite products
    truncated where the consecutive partial-product gap first drops below
    ``product_tol`` (``stabilized`` False if the cap was hit);
    ``tail_bound`` bounds the remaining log-series by geometric comparison.
    """

    alpha0: float
    kappa_tilde: float
    sigma: float
    horizon: float
    beta: tuple[float, ...]
    t_nodes: tuple[float, ...]
    chain_margins: tuple[float, ...]
    l0: float
    mu_tilde: float
    nu_tilde: float
    g_product: float
    omega: float
    omega0: float
    omega1: float
    omega2: float
    omega3: float
    truncation_j: int
    truncation_gap: float
    stabilized: bool
    tail_bound: float
    upper_prefactor: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "alpha0": self.alpha0,
            "kappa_tilde": self.kappa_tilde,
            "sigma": self.sigma,
            "horizon": self.horizon,
            "l0": self.l0,
            "mu_tilde": self.mu_tilde,
            "nu_tilde": self.nu_tilde,
            "g_product": self.g_product,
            "omega": self.omega,
            "omega0": self.omega0,
            "omega1": self.omega1,
            "omega2": self.omega2,
            "omega3": self.omega3,
            "truncation_j": self.truncation_j,
            "truncation_gap": self.truncation_gap,
            "stabilized": self.stabilized,
            "tail_bound": self.tail_bound,
            "beta_head": list(self.beta[:8]),
            "t_nodes_head": list(self.t_nodes[:8]),
            "min_chain_margin": min(self.chain_margins),
            "metadata": self.metadata,
        }
        if self.upper_prefactor is not None:
            out["upper_prefactor"] = self.upper_prefactor
        return out


def iteration_schedule(
    bundle: ExponentBundle,
    sigma: float,
    horizon: float,
    alpha0: float | None = None,
    *,
    j_chain: int = 50,
    product_tol: float = 1e-10,
    product_cap: int = 10_000,
    c10: float | None = None,
) -> IterationSchedule:
    """Build the power ladder and its converged products.

    ``alpha0`` must exceed every structural lower bound; otherwise a
    :class:`ParameterError` names the binding term.  ``c10`` (from
    :func:`derive_iteration_constants`) additionally reports the theoretical
    prefactor [2^(1+mu_bar) c10 (kappa_tilde alpha0)^(6+5/(2(1-a)))]^omega.
    """
    if not 0.0 < sigma < 1.0:
        raise ParameterError(f"window fraction sigma must lie in (0, 1) (got {sigma})")
    if not horizon > 0.0:
        raise ParameterError(f"horizon must be positive (got {horizon})")
    if alpha0 is None:
        alpha0 = bundle.alpha0
    terms = _alpha0_threshold_terms(bundle)
    name, threshold = max(terms, key=lambda item: item[1])
    if not alpha0 > threshold:
        raise ParameterError(
            f"ladder base power alpha0 = {alpha0:.6g} must exceed "
            f"{threshold:.6g}; binding condition: {name}"
        )

    kt = bundle.kappa_tilde
    j_all = np.arange(j_chain + 3, dtype=np.float64)
    beta = alpha0 * kt**j_all
    t_nodes = sigma * horizon * (1.0 - 2.0 ** (-j_all))
    chain = beta[: j_chain + 1] * (1.0 + bundle.rstar / 2.0 - kt**2) + (
        1.0 - bundle.lam - bundle.a
    )

    l0 = 1.0 / (alpha0 * (1.0 - 1.0 / kt) ** 2)
    h1, h3, lam = bundle.h1, bundle.h3, bundle.lam
    inv_gain = 1.0 / (1.0 + bundle.rstar / 2.0)

    # running partial products until the consecutive gap stabilizes
    sum_lr = 0.0
    sum_ls = 0.0
    trunc_j = None
    gap = math.inf
    j = 0
    log_s0 = None
    while j < product_cap:
        bj = alpha0 * kt**j
        log_r = math.log1p(-h1 / bj) - math.log1p(inv_gain / bj)
        log_s = math.log1p(h3 / bj) + math.log1p(3.0 * lam / bj)
        if j == 0:
            log_s0 = log_s
        prev = (math.exp(sum_lr), math.exp(sum_ls))
        sum_lr += log_r
        sum_ls += log_s
        cur = (math.exp(sum_lr), math.exp(sum_ls))
        gap = max(abs(cur[0] - prev[0]), abs(cur[1] - prev[1]))
        if trunc_j is None and j >= 1 and gap < product_tol:
            trunc_j = j
            break
        j += 1
    stabilized = trunc_j is not None
    if trunc_j is None:
        trunc_j = product_cap
    # continue the sums to (near) convergence for the reported limits
    jj = trunc_j + 1
    while jj < max(4 * trunc_j + 8, 64):
        bj = alpha0 * kt**jj
        sum_lr += math.log1p(-h1 / bj) - math.log1p(inv_gain / bj)
        sum_ls += math.log1p(h3 / bj) + math.log1p(3.0 * lam / bj)
        jj += 1
    bj_tail = alpha0 * kt ** (trunc_j + 1)
    tail_bound = max(h3 + 3.0 * lam, 2.0 * h1 + 1.0) * kt / ((kt - 1.0) * bj_tail)

    mu_tilde = math.exp(sum_lr)
    nu_tilde = math.exp(sum_ls)
    g_product = math.exp(sum_ls - log_s0)
    omega = g_product * l0
    mu_bar = bundle.mu_bar

    prefactor = None
    if c10 is not None:
        log_inner = (
            (1.0 + mu_bar) * math.log(2.0)
            + math.log(c10)
            + (6.0 + 5.0 / (2.0 * (1.0 - bundle.a))) * math.log(kt * alpha0)
        )
        prefactor = _safe_exp(omega * log_inner)

    return IterationSchedule(
        alpha0=float(alpha0),
        kappa_tilde=float(kt),
        sigma=float(sigma),
        horizon=float(horizon),
        beta=tuple(float(b) for b in beta),
        t_nodes=tuple(float(t) for t in t_nodes),
        chain_margins=tuple(float(c) for c in chain),
        l0=float(l0),
        mu_tilde=float(mu_tilde),
        nu_tilde=float(nu_tilde),
        g_product=float(g_product),
        omega=float(omega),
        omega0=float((2.0 + bundle.gamma_iter * mu_bar) * omega),
        omega1=float((1.0 + mu_bar) * omega),
        omega2=float(mu_bar * omega),
        omega3=float((2.0 + mu_bar) * omega),
        truncation_j=int(trunc_j),
        truncation_gap=float(gap),
        stabilized=bool(stabilized),
        tail_bound=float(tail_bound),
        upper_prefactor=prefactor,
        metadata={"product_tol": product_tol, "product_cap": product_cap},
    )


# ---------------------------------------------------------------------------
# Generic recursion bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceBound:
    """Limsup bound for y_{j+1} <= A^(w_j/k_j) (y_j^(r_j) + y_j^(s_j))^(1/k_j).

    With beta_j = r_j/k_j and gamma_j = s_j/k_j the bound is

        limsup y_j <= (2A)^(G alpha_bar) max{y0^beta_bar, y0^gamma_bar},

    where alpha_bar = sum w_j/k_j, beta_bar/gamma_bar are the products of
    beta_j/gamma_j, and G is the largest product of gamma factors over any
    contiguous window starting at j >= 1 (at least 1).
    """

    y0: float
    a_factor: float
    alpha_bar: float
    beta_bar: float
    gamma_bar: float
    g_factor: float
    log_bound: float
    bound: float
    truncation_j: int
    final_gap: float

    def to_dict(self) -> dict:
        return {
            "y0": self.y0,
            "a_factor": self.a_factor,
            "alpha_bar": self.alpha_bar,
            "beta_bar": self.beta_bar,
            "gamma_bar": self.gamma_bar,
            "g_factor": self.g_factor,
            "log_bound": self.log_bound,
            "bound": self.bound,
            "truncation_j": self.truncation_j,
            "final_gap": self.final_gap,
        }


def sequence_bound(
    y0: float,
    kappa: Callable[[int], float],
    r_low: Callable[[int], float],
    s_high: Callable[[int], float],
    omega: Callable[[int], float],
    a_factor: float,
    *,
    tol: float = 1e-10,
    cap: int = 10_000,
) -> SequenceBound:
    """Evaluate the recursion bound from term generators.

    ``kappa``/``r_low``/``s_high``/``omega`` map the step index j to the
    recursion parameters; they are validated (k_j > 0, s_j >= r_j > 0,
    w_j >= 1) as consumed.  The three series are truncated when their
    consecutive gaps all drop below ``tol``; failure to stabilize within
    ``cap`` terms raises (divergent family).
    """
    if not a_factor >= 1.0:
        raise ParameterError(f"recursion prefactor A must be >= 1 (got {a_factor})")
    if y0 < 0.0:
        raise ParameterError(f"y0 must be nonnegative (got {y0})")

    alpha_bar = 0.0
    log_beta = 0.0
    log_gamma = 0.0
    best_window = 0.0
    current_window = 0.0
    settled = 0
    trunc_j = None
    gap = math.inf
    for j in range(cap):
        kj, rj, sj, wj = kappa(j), r_low(j), s_high(j), omega(j)
        if not kj > 0.0:
            raise ParameterError(f"kappa_{j} must be positive (got {kj})")
        if not 0.0 < rj <= sj:
            raise ParameterError(f"need 0 < r_{j} <= s_{j} (got r={rj}, s={sj})")
        if not wj >= 1.0:
            raise ParameterError(f"omega_{j} must be >= 1 (got {wj})")
        d_alpha = wj / kj
        d_beta = math.log(rj / kj)
        d_gamma = math.log(sj / kj)
        alpha_bar += d_alpha
        log_beta += d_beta
        log_gamma += d_gamma
        if j >= 1:
            # largest contiguous log-sum of gamma factors over windows with
            # start index >= 1
            current_window = max(d_gamma, current_window + d_gamma)
            best_window = max(best_window, current_window)
        gap = max(abs(d_alpha), abs(d_beta), abs(d_gamma))
        if gap < tol:
            settled += 1
            if settled >= 4:
                trunc_j = j
                break
        else:
            settled = 0
    if trunc_j is None:
        raise ParameterError(
            f"recursion series did not stabilize within {cap} terms "
            f"(last gap {gap:.3g}); the alpha_bar series appears divergent"
        )

    beta_bar = math.exp(log_beta)
    gamma_bar = math.exp(log_gamma)
    g_factor = math.exp(max(0.0, best_window))
    with np.errstate(divide="ignore"):
        log_y0 = float(np.log(y0))
    log_bound = g_factor * alpha_bar * math.log(2.0 * a_factor) + max(
        beta_bar * log_y0, gamma_bar * log_y0
    )
    return SequenceBound(
        y0=float(y0),
        a_factor=float(a_factor),
        alpha_bar=alpha_bar,
        beta_bar=beta_bar,
        gamma_bar=gamma_bar,
        g_factor=g_factor,
        log_bound=float(log_bound),
        bound=_safe_exp(log_bound),
        truncation_j=int(trunc_j),
        final_gap=float(gap),
    )


# ---------------------------------------------------------------------------
# Final sup-norm certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupRunResult:
    """One run of the sup-bound sweep: measured sup against the bound shape."""

    label: str
    eps: float
    horizon: float
    chi_star: float
    sup_u: float
    log_shape: float
    ratio: float | None
    delta_horizon: float
    log_u0_norm: float
    log_psi: float
    admissible: bool
    largest_admissible_t: float | None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "eps": self.eps,
            "horizon": self.horizon,
            "chi_star": self.chi_star,
            "sup_u": self.sup_u,
            "log_shape": self.log_shape,
            "ratio": self.ratio,
            "delta_horizon": self.delta_horizon,
            "log_u0_norm": self.log_u0_norm,
            "log_psi": self.log_psi,
            "admissible": self.admissible,
            "largest_admissible_t": self.largest_admissible_t,
        }


@dataclass(frozen=True)
class SupCertification:
    """Sweep-level sup-bound fit.

    ``chat`` is the largest measured sup over shape ratio across admissible
    runs; ``spread`` is the max/min ratio over runs with positive sup (the
    fitted prefactor must be stable for the shape to be believed).
    """

    alpha: float
    cbar: float
    runs: tuple[SupRunResult, ...]
    chat: float
    spread: float
    exponents: dict

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "cbar": self.cbar,
            "chat": self.chat,
            "spread": self.spread,
            "exponents": self.exponents,
            "runs": [r.to_dict() for r in self.runs],
        }


def certify_sup_bound(
    cases: Sequence[tuple[str, Trajectory, float]],
    bundle: ExponentBundle,
    cbar: float,
    *,
    limits: MoserLimits | None = None,
) -> SupCertification:
    """Fit the sup-bound prefactor over a sweep of (label, trajectory, eps).

    For each run the measured sup of u over U x [eps, T] is compared to the
    shape chi^omega0 (1+T)^omega1 eps^-omega2 (1 + ||u0||)^nu_tilde
    delta(T)^(-nu_tilde/mu_star) Psi_T^omega2 evaluated in log domain, with
    delta from :func:`norm_envelope` at the first ladder power.  Runs whose
    forcing budget fails the smallness window are recorded as inadmissible
    (carrying the largest admissible horizon) and excluded from the fit.
    """
    if limits is None:
        limits = bundle.moser_limits()
    alpha = bundle.beta1
    results = []
    for label, traj, eps in cases:
        horizon = float(traj.times[-1])
        if not 0.0 < eps < min(1.0, horizon):
            raise ParameterError(
                f"run {label!r}: eps must lie in (0, min(1, T)) = "
                f"(0, {min(1.0, horizon):.6g}) (got {eps})"
            )
        model, grid = traj.model, traj.grid
        fields = materialize_fields(model, grid)
        envelope = norm_envelope(traj, bundle, cbar, alpha, fields=fields)
        log_psi = log_psi_T(fields, traj.forcing, bundle, traj.times)
        log_u0_norm = (
            log_weighted_power(grid, fields.phi, traj.snapshots[0], alpha) / alpha
        )
        times = np.asarray(traj.times)
        window = times >= eps - 1e-12 * horizon
        sup_u = float(max(np.max(u) for u, keep in zip(traj.snapshots, window) if keep))
        delta_T = envelope.delta[-1]
        if not envelope.admissible:
            results.append(
                SupRunResult(
                    label=label, eps=float(eps), horizon=horizon,
                    chi_star=model.chi_star, sup_u=sup_u, log_shape=math.nan,
                    ratio=None, delta_horizon=delta_T, log_u0_norm=log_u0_norm,
                    log_psi=log_psi, admissible=False,
                    largest_admissible_t=envelope.largest_admissible_t,
                )
            )
            continue
        log_shape = (
            limits.omega0 * math.log(model.chi_star)
            + limits.omega1 * math.log1p(horizon)
            - limits.omega2 * math.log(eps)
            + limits.nu_tilde * log1pexp(log_u0_norm)
            - (limits.nu_tilde / bundle.mu_star) * math.log(delta_T)
            + limits.omega2 * log_psi
        )
        ratio = 0.0 if sup_u == 0.0 else _safe_exp(math.log(sup_u) - log_shape)
        results.append(
            SupRunResult(
                label=label, eps=float(eps), horizon=horizon,
                chi_star=model.chi_star, sup_u=sup_u, log_shape=float(log_shape),
                ratio=float(ratio), delta_horizon=delta_T,
                log_u0_norm=log_u0_norm, log_psi=log_psi, admissible=True,
                largest_admissible_t=None,
            )
        )
    positive = [r.ratio for r in results if r.admissible and r.ratio and r.ratio > 0.0]
    chat = max(positive) if positive else 0.0
    spread = (max(positive) / min(positive)) if len(positive) >= 2 else 1.0
    return SupCertification(
        alpha=float(alpha),
        cbar=float(cbar),
        runs=tuple(results),
        chat=float(chat),
        spread=float(spread),
        exponents={
            "omega0": limits.omega0,
            "omega1": limits.omega1,
            "omega2": limits.omega2,
            "omega3": limits.omega3,
            "mu_tilde": limits.mu_tilde,
            "nu_tilde": limits.nu_tilde,
            "mu_star": bundle.mu_star,
        },
    )


def growth_exponent_margin(
    sup_base: float, sup_varied: float, factor_ratio: float, exponent: float
) -> float:
    """Log-margin of "measured sup growth stays within one shape factor".

    For two runs identical except for one shape input (rotation chi or window
    start eps) whose factor grew by ``factor_ratio`` >= 1, the measured sup
    may grow by at most factor_ratio^exponent; the returned margin

        exponent * log(factor_ratio) - log(sup_varied / sup_base)

    is nonnegative when the claim holds.
    """
    if not factor_ratio >= 1.0:
        raise ValueError(f"factor_ratio must be >= 1 (got {factor_ratio})")
    if not (sup_base > 0.0 and sup_varied > 0.0):
        raise ValueError("both sups must be positive for a growth comparison")
    return exponent * math.log(factor_ratio) - (
        math.log(sup_varied) - math.log(sup_base)
    )


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------


@dataclass
class CertificationReport:
    """Versioned, JSON-serializable certification record.

    Every pass/fail entry carries its numeric margin; sections hold the
    full sub-reports (exponents, constants, fits, envelope, schedule, sup
    sweep).  No timestamps: identical inputs must produce identical bytes.
    """

    config: dict
    exponents: dict
    sections: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    schema: str = "forchflow.certification/1"

    def add_criterion(self, name: str, passed: bool, margin: float, detail: str = "") -> None:
        self.criteria.append(
            {
                "name": str(name),
                "passed": bool(passed),
                "margin": float(margin),
                "detail": str(detail),
            }
        )

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.criteria)

    def to_dict(self) -> dict:
        import forchflow

        return {
            "schema": self.schema,
            "tool_version": forchflow.__version__,
            "config": self.config,
            "exponents": self.exponents,
            "sections": self.sections,
            "criteria": list(self.criteria),
            "passed": self.passed,
        }


def bundle_summary(bundle: ExponentBundle) -> dict:
    """Headline exponents of a validated family, JSON-ready."""
    return {
        "n": bundle.n,
        "a": bundle.a,
        "lam": bundle.lam,
        "r1": bundle.r1,
        "r": bundle.r,
        "rtilde": bundle.rtilde,
        "rstar": bundle.rstar,
        "kappa_tilde": bundle.kappa_tilde,
        "p": [bundle.p1, bundle.p2, bundle.p3, bundle.p4, bundle.p5, bundle.p6],
        "alpha0": bundle.alpha0,
        "alpha0_min": bundle.alpha0_min,
        "beta1": bundle.beta1,
        "alpha_star": bundle.alpha_star,
        "mu_star": bundle.mu_star,
        "gamma_star": bundle.gamma_star,
        "gamma_iter": bundle.gamma_iter,
        "h1": bundle.h1,
        "h2": bundle.h2,
        "h3": bundle.h3,
        "mu_bar": bundle.mu_bar,
    }
