"""Property-testing harness for the weighted inequality toolkit.

Three layers:

1. ``fuzz_elementary`` — randomized checks of the five scalar power
   inequalities that every later estimate leans on (split/crude sum-power
   bounds, the reverse difference bound in two components, and the two
   middle-power absorption bounds).

2. ``estimate_constants`` — empirical calibration of the universal constants
   that the assembled estimates need but that no closed form provides: the
   unweighted Sobolev embedding constant ``chat_p``, the two-term boundary
   trace pair ``(c5, c6)``, the weighted-embedding pair ``c3 = c4`` (found by
   monotone bisection against the single-weight interior inequality), and the
   parabolic embedding constant ``c7 = chat_{r1 p}``.  Estimates are inflated
   by a safety factor and stamped with the hash of the corpus they came from.

3. ``verify_composites`` — end-to-end verification of the three composite
   weighted inequalities (interior, boundary-trace, and space-time) with the
   fully assembled right-hand sides: every structural factor (weight
   integrals, doubling factors, epsilon powers, the min-form of the
   leading-order terms) is built exactly as the estimates use it, in log
   space so that the enormous doubling factors at certification-scale
   exponents stay representable.

All checks run on a reproducible synthetic corpus of piecewise-smooth fields
on the unit square with matched strictly-positive weight presets.  Members
are generated from per-member child seeds, so a corpus is a prefix of any
longer corpus with the same master seed, and every member records its source
expression and parameters.  Corpus members are independent of each other;
evaluation order never affects results, and reports are merged by member
index.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .exponents import ExponentBundle, compute_exponents
from .expressions import FieldExpr
from .functionals import log1pexp, safe_log
from .geometry import SIDES, Grid, PorousDomain

__all__ = [
    "UNIT_DOMAIN",
    "CorpusMember",
    "WeightPreset",
    "WEIGHT_PRESETS",
    "TIME_SHAPES",
    "FunctionCorpus",
    "CompositeParams",
    "EmpiricalConstants",
    "margin_sum_split",
    "margin_sum_crude",
    "margin_diff_lower",
    "margin_middle_split",
    "margin_middle_capped",
    "fuzz_elementary",
    "single_weight_needed_c",
    "single_weight_margin",
    "estimate_constants",
    "verify_composites",
]

UNIT_DOMAIN = (0.0, 1.0, 0.0, 1.0)

_LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Elementary power inequalities
# ---------------------------------------------------------------------------
#
# Each margin function returns (rhs - lhs) / scale for an inequality written
# as lhs <= rhs, with scale = max(|lhs|, |rhs|, 1); nonnegative margins mean
# the inequality holds.


def _rel_margin(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1.0)
    return (rhs - lhs) / scale


def margin_sum_split(x, y, p):
    """(x+y)^p <= 2^{(p-1)+} (x^p + y^p) for x, y >= 0, p > 0."""
    x, y, p = np.asarray(x, float), np.asarray(y, float), np.asarray(p, float)
    lhs = (x + y) ** p
    rhs = 2.0 ** np.maximum(p - 1.0, 0.0) * (x**p + y**p)
    return _rel_margin(lhs, rhs)


def margin_sum_crude(x, y, p):
    """(x+y)^p <= 2^p (x^p + y^p) for x, y >= 0, p > 0."""
    x, y, p = np.asarray(x, float), np.asarray(y, float), np.asarray(p, float)
    lhs = (x + y) ** p
    rhs = 2.0**p * (x**p + y**p)
    return _rel_margin(lhs, rhs)


def margin_diff_lower(x1, x2, y1, y2, p):
    """|x-y|^p >= 2^{-(p-1)+} |x|^p - |y|^p for 2-vectors x, y and p > 0."""
    x1, x2 = np.asarray(x1, float), np.asarray(x2, float)
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    p = np.asarray(p, float)
    big = np.hypot(x1 - y1, x2 - y2) ** p
    small = 2.0 ** (-np.maximum(p - 1.0, 0.0)) * np.hypot(x1, x2) ** p - np.hypot(y1, y2) ** p
    # inequality is big >= small
    return _rel_margin(small, big)


def margin_middle_split(x, alpha, beta, gamma):
    """x^beta <= x^alpha + x^gamma for gamma >= beta >= alpha (alpha > 0 if x = 0)."""
    x = np.asarray(x, float)
    alpha, beta, gamma = (np.asarray(v, float) for v in (alpha, beta, gamma))
    lhs = x**beta
    rhs = x**alpha + x**gamma
    return _rel_margin(lhs, rhs)


def margin_middle_capped(x, beta, gamma):
    """x^beta <= 1 + x^gamma for x >= 0, gamma >= beta >= 0, not both x and beta zero."""
    x = np.asarray(x, float)
    beta, gamma = np.asarray(beta, float), np.asarray(gamma, float)
    lhs = x**beta
    rhs = 1.0 + x**gamma
    return _rel_margin(lhs, rhs)


def _sample_magnitudes(rng: np.random.Generator, n: int, zero_frac: float = 0.05) -> np.ndarray:
    vals = 10.0 ** rng.uniform(-8.0, 4.0, n)
    vals[rng.random(n) < zero_frac] = 0.0
    return vals


def fuzz_elementary(count: int, seed: int, rel_slack: float = 1e-12) -> dict:
    """Fuzz the five scalar inequalities; returns a violation report.

    ``count`` samples are drawn per inequality.  A sample violates when its
    relative margin falls below ``-rel_slack``.  Sampling mixes log-uniform
    magnitudes over [1e-8, 1e4] with exact zeros and forced ties so the
    equality cases are exercised.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    names = (
        "sum_power_split",
        "sum_power_crude",
        "difference_power_lower",
        "middle_power_split",
        "middle_power_capped",
    )
    stats = {name: {"checked": 0, "violations": 0, "min_margin": math.inf} for name in names}

    chunk = 250_000
    done = 0
    while done < count:
        n = min(chunk, count - done)
        done += n

        x = _sample_magnitudes(rng, n)
        y = _sample_magnitudes(rng, n)
        tie = rng.random(n) < 0.05
        y[tie] = x[tie]
        p = 10.0 ** rng.uniform(-2.0, 0.903, n)  # roughly [0.01, 8]

        amp = 10.0 ** rng.uniform(-4.0, 3.0, n)
        vx1, vx2, vy1, vy2 = (rng.normal(0.0, 1.0, n) * amp for _ in range(4))

        exps = np.sort(rng.uniform(0.0, 6.0, (n, 3)), axis=1)
        al, be, ga = exps[:, 0], exps[:, 1], exps[:, 2]
        m1 = rng.random(n) < 0.1
        be = np.where(m1, al, be)
        m2 = rng.random(n) < 0.1
        ga = np.where(m2, be, ga)
        x4 = _sample_magnitudes(rng, n)
        al = np.where(x4 == 0.0, np.maximum(al, 1e-6), al)
        be = np.maximum(be, al)
        ga = np.maximum(ga, be)

        pair = np.sort(rng.uniform(0.0, 6.0, (n, 2)), axis=1)
        be5, ga5 = pair[:, 0], pair[:, 1]
        m3 = rng.random(n) < 0.1
        ga5 = np.where(m3, be5, ga5)
        x5 = _sample_magnitudes(rng, n)
        be5 = np.where(x5 == 0.0, np.maximum(be5, 1e-6), be5)
        ga5 = np.maximum(ga5, be5)

        margins = {
            "sum_power_split": margin_sum_split(x, y, p),
            "sum_power_crude": margin_sum_crude(x, y, p),
            "difference_power_lower": margin_diff_lower(vx1, vx2, vy1, vy2, p),
            "middle_power_split": margin_middle_split(x4, al, be, ga),
            "middle_power_capped": margin_middle_capped(x5, be5, ga5),
        }
        for name, marg in margins.items():
            entry = stats[name]
            entry["checked"] += int(marg.size)
            entry["violations"] += int(np.count_nonzero(marg < -rel_slack))
            entry["min_margin"] = min(entry["min_margin"], float(np.min(marg)))

    worst_name = min(stats, key=lambda k: stats[k]["min_margin"])
    return {
        "count": int(count),
        "seed": int(seed),
        "rel_slack": float(rel_slack),
        "violations": int(sum(s["violations"] for s in stats.values())),
        "per_inequality": stats,
        "worst": {"inequality": worst_name, "margin": stats[worst_name]["min_margin"]},
    }


# ---------------------------------------------------------------------------
# Synthetic function corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusMember:
    """One corpus field: a parsed expression with exact symbolic gradient."""

    name: str
    family: str
    source: str
    params: dict
    expr: FieldExpr
    grad_x: FieldExpr
    grad_y: FieldExpr

    def value(self, x, y, t: float = 0.0) -> np.ndarray:
        return self.expr(x, y, t, domain=UNIT_DOMAIN)

    def grad(self, x, y, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.grad_x(x, y, t, domain=UNIT_DOMAIN),
            self.grad_y(x, y, t, domain=UNIT_DOMAIN),
        )

    def describe(self) -> dict:
        return {
            "name": self.name,
            "family": self.family,
            "source": self.source,
            "params": self.params,
        }


@dataclass(frozen=True)
class WeightPreset:
    """Matched weight triple: measure weight omega, density phi, flux weight w."""

    name: str
    phi_source: str
    w_source: str
    omega_source: str

    @cached_property
    def phi(self) -> FieldExpr:
        return FieldExpr.parse(self.phi_source)

    @cached_property
    def w(self) -> FieldExpr:
        return FieldExpr.parse(self.w_source)

    @cached_property
    def omega(self) -> FieldExpr:
        return FieldExpr.parse(self.omega_source)


WEIGHT_PRESETS: tuple[WeightPreset, ...] = (
    WeightPreset("unit", "1.0", "1.0", "1.0"),
    WeightPreset("tilted", "0.6 + 0.3 * x + 0.1 * y", "0.5 + 0.4 * y", "0.8 + 0.2 * x"),
    WeightPreset(
        "wavy",
        "1.0 + 0.35 * sin(pi * x) * cos(2 * pi * y)",
        "1.0 + 0.3 * cos(pi * x) * sin(pi * y)",
        "1.0 + 0.25 * sin(pi * y)",
    ),
    WeightPreset(
        "edge-root",
        "0.2 + dist_boundary(x, y) ** 0.5",
        "dist_boundary(x, y) ** 0.5",
        "1.0",
    ),
    WeightPreset(
        "edge-linear",
        "dist_boundary(x, y)",
        "0.15 + dist_boundary(x, y)",
        "0.5 + dist_boundary(x, y)",
    ),
)

# Positive time profiles on [0, 1] used by the space-time verifier.
TIME_SHAPES: tuple[tuple[str, str], ...] = (
    ("steady", "1.0"),
    ("ramp", "0.4 + 0.6 * t"),
    ("decay", "exp(-0.8 * t)"),
    ("wave", "1.0 + 0.5 * sin(pi * t)"),
)

_FAMILY_CYCLE = ("trig", "bump", "edge", "mixed", "collar")
_EDGE_POWERS = (0.5, 1.0, 2.0)


def _member_source(family: str, rng: np.random.Generator, index: int) -> tuple[str, dict]:
    if family == "constant":
        level = float(rng.uniform(0.5, 2.0))
        return f"{level:.6f}", {"level": round(level, 6)}
    if family == "trig":
        c0 = float(rng.uniform(0.3, 1.5))
        n_modes = 1 if rng.random() < 0.6 else 2
        parts = [f"{c0:.6f}"]
        modes = []
        for _ in range(n_modes):
            amp = float(rng.uniform(0.2, 1.2)) * (1.0 if rng.random() < 0.7 else -1.0)
            kx = int(rng.integers(1, 5))
            ky = int(rng.integers(1, 5))
            phx = float(rng.uniform(0.0, 2.0 * math.pi))
            phy = float(rng.uniform(0.0, 2.0 * math.pi))
            parts.append(
                f"{amp:.6f} * sin({kx} * pi * x + {phx:.6f}) * sin({ky} * pi * y + {phy:.6f})"
            )
            modes.append({"amp": round(amp, 6), "kx": kx, "ky": ky})
        return " + ".join(parts), {"offset": round(c0, 6), "modes": modes}
    if family == "bump":
        base = float(rng.uniform(0.05, 0.6))
        amp = float(rng.uniform(0.5, 3.0)) * (1.0 if rng.random() < 0.8 else -1.0)
        cx = float(rng.uniform(0.2, 0.8))
        cy = float(rng.uniform(0.2, 0.8))
        sigma = float(rng.uniform(0.08, 0.35))
        denom = 2.0 * sigma * sigma
        src = (
            f"{base:.6f} + {amp:.6f} * "
            f"exp(-((x - {cx:.6f}) ** 2 + (y - {cy:.6f}) ** 2) / {denom:.6f})"
        )
        return src, {
            "base": round(base, 6),
            "amp": round(amp, 6),
            "center": [round(cx, 6), round(cy, 6)],
            "sigma": round(sigma, 6),
        }
    if family == "edge":
        power = _EDGE_POWERS[(index // len(_FAMILY_CYCLE)) % len(_EDGE_POWERS)]
        scale = float(rng.uniform(0.5, 2.5))
        return f"{scale:.6f} * dist_boundary(x, y) ** {power}", {
            "power": power,
            "scale": round(scale, 6),
        }
    if family == "mixed":
        power = _EDGE_POWERS[(index // len(_FAMILY_CYCLE)) % len(_EDGE_POWERS)]
        scale = float(rng.uniform(0.5, 2.0))
        ripple = float(rng.uniform(0.15, 0.45))
        kx = int(rng.integers(1, 4))
        ky = int(rng.integers(1, 4))
        src = (
            f"{scale:.6f} * dist_boundary(x, y) ** {power} * "
            f"(1.0 + {ripple:.6f} * sin({kx} * pi * x) * cos({ky} * pi * y))"
        )
        return src, {
            "power": power,
            "scale": round(scale, 6),
            "ripple": round(ripple, 6),
            "kx": kx,
            "ky": ky,
        }
    if family == "collar":
        width = float(rng.uniform(0.05, 0.2))
        height = float(rng.uniform(0.5, 2.0))
        src = f"{height:.6f} * max(0.0, 1.0 - dist_boundary(x, y) / {width:.6f})"
        return src, {"width": round(width, 6), "height": round(height, 6)}
    raise ValueError(f"unknown corpus family {family!r}")


@dataclass(frozen=True)
class FunctionCorpus:
    """Reproducible corpus of piecewise-smooth fields with weight presets.

    Member ``i`` draws its parameters from the ``i``-th child of the master
    seed, so ``generate(seed, n)`` is a prefix of ``generate(seed, m)`` for
    any ``m > n``.  Member 0 is always a positive constant (the trace-ratio
    anchor); the remaining members cycle through the five families.
    """

    seed: int
    members: tuple[CorpusMember, ...]
    presets: tuple[WeightPreset, ...] = WEIGHT_PRESETS

    @classmethod
    def generate(
        cls,
        seed: int,
        n_members: int = 200,
        presets: tuple[WeightPreset, ...] = WEIGHT_PRESETS,
    ) -> "FunctionCorpus":
        if n_members < 1:
            raise ValueError("corpus needs at least one member")
        children = np.random.SeedSequence(seed).spawn(n_members)
        members = []
        for i, child in enumerate(children):
            rng = np.random.default_rng(child)
            family = "constant" if i == 0 else _FAMILY_CYCLE[(i - 1) % len(_FAMILY_CYCLE)]
            source, params = _member_source(family, rng, i)
            expr = FieldExpr.parse(source)
            gx, gy = expr.gradient()
            members.append(
                CorpusMember(
                    name=f"m{i:03d}-{family}",
                    family=family,
                    source=source,
                    params=params,
                    expr=expr,
                    grad_x=gx,
                    grad_y=gy,
                )
            )
        return cls(seed=seed, members=tuple(members), presets=presets)

    @property
    def n_members(self) -> int:
        return len(self.members)

    def preset_for(self, index: int) -> WeightPreset:
        return self.presets[index % len(self.presets)]

    def describe(self) -> dict:
        return {
            "seed": int(self.seed),
            "members": [m.describe() for m in self.members],
            "presets": [p.name for p in self.presets],
        }

    def corpus_hash(self) -> str:
        payload = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Quadrature and per-member field evaluation
# ---------------------------------------------------------------------------


def _unit_grid(n: int) -> Grid:
    return Grid(PorousDomain(), n, n)


@dataclass
class _MemberFields:
    """Corpus member and weight preset evaluated on one quadrature grid."""

    grid: Grid
    absu: np.ndarray
    gmag: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    omega: np.ndarray
    absu_boundary: np.ndarray
    boundary_measure: np.ndarray

    @cached_property
    def log_absu(self) -> np.ndarray:
        return safe_log(self.absu)

    @cached_property
    def log_gmag(self) -> np.ndarray:
        return safe_log(self.gmag)

    @cached_property
    def log_phi(self) -> np.ndarray:
        return safe_log(self.phi)

    @cached_property
    def log_w(self) -> np.ndarray:
        return safe_log(self.w)

    @cached_property
    def log_omega(self) -> np.ndarray:
        return safe_log(self.omega)

    @cached_property
    def log_absu_boundary(self) -> np.ndarray:
        return safe_log(self.absu_boundary)


def _evaluate_member(member: CorpusMember, preset: WeightPreset, grid: Grid) -> _MemberFields:
    X, Y = grid.cell_centers
    # constant subexpressions evaluate to scalars; broadcast everything to the
    # full cell array so the quadrature sums see every cell
    val = np.broadcast_to(np.asarray(member.value(X, Y), float), X.shape).copy()
    gx, gy = member.grad(X, Y)
    gmag = np.hypot(
        np.broadcast_to(np.asarray(gx, float), X.shape),
        np.broadcast_to(np.asarray(gy, float), X.shape),
    )
    dom = UNIT_DOMAIN

    def mat(expr: FieldExpr) -> np.ndarray:
        out = np.asarray(expr(X, Y, 0.0, domain=dom), float)
        return np.broadcast_to(out, X.shape).copy()

    bvals, bmeas = [], []
    for side in SIDES:
        xb, yb = grid.boundary_midpoints(side)
        vb = np.broadcast_to(np.asarray(member.value(xb, yb), float), xb.shape).copy()
        bvals.append(np.abs(vb))
        bmeas.append(np.full(xb.shape, grid.boundary_measure(side)))
    return _MemberFields(
        grid=grid,
        absu=np.abs(val),
        gmag=gmag,
        phi=mat(preset.phi),
        w=mat(preset.w),
        omega=mat(preset.omega),
        absu_boundary=np.concatenate(bvals),
        boundary_measure=np.concatenate(bmeas),
    )


def _log_area(fields: _MemberFields, log_cells: np.ndarray) -> float:
    return float(logsumexp(np.ravel(log_cells)) + math.log(fields.grid.cell_area))


def _pow_log(power: float, log_vals: np.ndarray) -> np.ndarray:
    """power * log_vals with the 0 * (-inf) = 0 convention (x^0 = 1 at x = 0)."""
    if power == 0.0:
        return np.zeros_like(log_vals)
    return power * log_vals


def _log_boundary(fields: _MemberFields, log_vals: np.ndarray) -> float:
    return float(logsumexp(log_vals + np.log(fields.boundary_measure)))


# ---------------------------------------------------------------------------
# Generic exponent parameters of the composite inequalities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompositeParams:
    """Free parameters (p, s, beta, r, r1) of the weighted inequalities in n=2.

    ``p`` is the gradient power, ``s`` the low-order power offset, ``beta``
    the damping power of the 1/(1+|u|)^beta factor, ``r`` the excess power on
    the left-hand side, and ``r1`` the integrability index of the flux
    weight.  All interpolation exponents derive from these five numbers.
    """

    p: float
    s: float
    beta: float
    r: float
    r1: float
    n: int = 2

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError("gradient power p must exceed 1")
        if not (self.n / (self.n + self.p) < self.r1 < 1.0):
            raise ValueError("integrability index r1 must lie in (n/(n+p), 1)")
        if not (1.0 <= self.r1 * self.p < self.n):
            raise ValueError("r1 * p must lie in [1, n)")
        if self.r < 0.0:
            raise ValueError("excess power r must be nonnegative")
        if self.beta < 0.0:
            raise ValueError("damping power beta must be nonnegative")

    @classmethod
    def from_bundle(cls, bundle: ExponentBundle) -> "CompositeParams":
        return cls(
            p=bundle.p_deg,
            s=bundle.s_low,
            beta=bundle.beta_weight,
            r=bundle.r,
            r1=bundle.r1,
            n=bundle.n,
        )

    @property
    def rstar(self) -> float:
        return 1.0 + self.p / self.n - 1.0 / self.r1

    @property
    def rtilde(self) -> float:
        return (self.r * self.p + self.s - self.p) / (self.p - 1.0)

    def m(self, alpha: float) -> float:
        return (alpha - self.s + self.p) / self.p

    def theta(self, alpha: float, rr: float | None = None) -> float:
        rr = self.r if rr is None else rr
        return (alpha + 2.0 * rr) / (alpha * (1.0 + self.rstar) + 2.0 * (self.p - self.s))

    def theta_tilde(self, alpha: float) -> float:
        return self.theta(alpha, self.rtilde)

    def mu1(self, alpha: float, rr: float | None = None) -> float:
        rr = self.r if rr is None else rr
        th = self.theta(alpha, rr)
        return (rr + th * (self.s - self.p)) / (1.0 - th)

    def mu1_tilde(self, alpha: float) -> float:
        th = self.theta_tilde(alpha)
        return (self.rtilde + th * (self.s - self.p)) / (1.0 - th)

    def beta_star(self, alpha: float) -> float:
        th = self.theta_tilde(alpha)
        return self.beta / ((self.p - 1.0) * (1.0 - th) * (1.0 + self.mu1_tilde(alpha) / alpha))

    def kappa(self, alpha: float) -> float:
        return 1.0 + self.rstar / 2.0 + (self.p - self.s) / alpha

    def theta0(self, alpha: float) -> float:
        return 1.0 / (1.0 + self.rstar * alpha / (2.0 * (alpha - self.s + self.p)))

    def theta0_hat(self, alpha: float) -> float:
        return self.theta0(alpha) - self.beta / (self.kappa(alpha) * alpha)

    # -- precondition reports (None when all hold) ----------------------

    def single_weight_reason(self, alpha: float, r: float | None = None) -> str | None:
        """Preconditions of the undamped single-weight interior inequality."""
        r = self.r if r is None else r
        if alpha < self.s:
            return f"alpha = {alpha:g} < s = {self.s:g}"
        if alpha <= (self.p - self.s) / (self.p - 1.0):
            return f"alpha = {alpha:g} <= (p - s)/(p - 1) = {(self.p - self.s) / (self.p - 1.0):g}"
        bound = 2.0 * (r + self.s - self.p) / self.rstar
        if alpha <= bound:
            return f"alpha = {alpha:g} <= 2(r + s - p)/rstar = {bound:g}"
        return None

    def interior_reason(self, alpha: float) -> str | None:
        if alpha < self.s:
            return f"alpha = {alpha:g} < s = {self.s:g}"
        if alpha <= (self.p - self.s) / (self.p - 1.0):
            return f"alpha = {alpha:g} <= (p - s)/(p - 1) = {(self.p - self.s) / (self.p - 1.0):g}"
        bound = 2.0 * (self.r + self.s - self.p) / self.rstar
        if alpha <= bound:
            return f"alpha = {alpha:g} <= 2(r + s - p)/rstar = {bound:g}"
        damped = self.r1 * self.beta / (1.0 - self.r1)
        if alpha <= damped:
            return f"alpha = {alpha:g} <= r1*beta/(1 - r1) = {damped:g}"
        return None

    def trace_reason(self, alpha: float) -> str | None:
        if alpha < self.s:
            return f"alpha = {alpha:g} < s = {self.s:g}"
        if alpha <= (self.p - self.s) / (self.p - 1.0):
            return f"alpha = {alpha:g} <= (p - s)/(p - 1) = {(self.p - self.s) / (self.p - 1.0):g}"
        if self.rtilde < 0.0:
            return f"boundary excess power rtilde = {self.rtilde:g} < 0 is not supported"
        bound = 2.0 * (self.rtilde + self.s - self.p) / self.rstar
        if alpha <= bound:
            return f"alpha = {alpha:g} <= 2(rtilde + s - p)/rstar = {bound:g}"
        damped = self.r1 * self.beta / (1.0 - self.r1)
        if alpha <= damped:
            return f"alpha = {alpha:g} <= r1*beta/(1 - r1) = {damped:g}"
        bstar = self.beta_star(alpha)
        if alpha <= bstar:
            return f"alpha = {alpha:g} <= beta_star(alpha) = {bstar:g}"
        return None

    def spacetime_reason(self, alpha: float) -> str | None:
        if alpha < self.s:
            return f"alpha = {alpha:g} < s = {self.s:g}"
        if alpha <= (self.p - self.s) / (self.p - 1.0):
            return f"alpha = {alpha:g} <= (p - s)/(p - 1) = {(self.p - self.s) / (self.p - 1.0):g}"
        bound = 2.0 * (self.s - self.p) / self.rstar
        if alpha <= bound:
            return f"alpha = {alpha:g} <= 2(s - p)/rstar = {bound:g}"
        damped = self.beta / (1.0 - self.r1)
        if alpha < damped:
            return f"alpha = {alpha:g} < beta/(1 - r1) = {damped:g}"
        return None


# ---------------------------------------------------------------------------
# Empirical constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalConstants:
    """Calibrated universal constants with provenance and corpus hash.

    ``c3``/``c4`` enter the doubling factors of the interior inequality,
    ``(c5, c6)`` are the two-term boundary trace pair, ``c7`` the parabolic
    embedding constant, and ``chat`` the unweighted Sobolev constants keyed
    by their gradient power.  ``c8``..``c10`` and ``cbar_alpha`` are filled
    by the later fitting stages and stay ``None`` until then.
    """

    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    chat: tuple[tuple[float, float], ...]
    safety: float
    corpus_hash: str
    n_members: int
    provenance: str = "estimated"
    c8: float | None = None
    c9: float | None = None
    c10: float | None = None
    cbar_alpha: float | None = None
    metadata: dict = field(default_factory=dict)

    def chat_for(self, p: float, tol: float = 1e-9) -> float:
        for key, value in self.chat:
            if abs(key - p) <= tol:
                return value
        raise KeyError(f"no Sobolev constant estimated for gradient power {p!r}")

    def to_dict(self) -> dict:
        out = {
            "c3_c4": self.c3,
            "c3": self.c3,
            "c4": self.c4,
            "c5": self.c5,
            "c6": self.c6,
            "c7": self.c7,
            "chat": {f"{p:.12g}": v for p, v in self.chat},
            "safety": self.safety,
            "corpus_hash": self.corpus_hash,
            "n_members": self.n_members,
            "provenance": self.provenance,
            "metadata": self.metadata,
        }
        for name in ("c8", "c9", "c10", "cbar_alpha"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EmpiricalConstants":
        """Rebuild a constants record from its ``to_dict`` form (e.g. JSON)."""
        try:
            chat = tuple(
                sorted((float(k), float(v)) for k, v in data["chat"].items())
            )
            return cls(
                c3=float(data["c3"]),
                c4=float(data["c4"]),
                c5=float(data["c5"]),
                c6=float(data["c6"]),
                c7=float(data["c7"]),
                chat=chat,
                safety=float(data["safety"]),
                corpus_hash=str(data["corpus_hash"]),
                n_members=int(data["n_members"]),
                provenance=str(data.get("provenance", "estimated")),
                c8=None if data.get("c8") is None else float(data["c8"]),
                c9=None if data.get("c9") is None else float(data["c9"]),
                c10=None if data.get("c10") is None else float(data["c10"]),
                cbar_alpha=(
                    None if data.get("cbar_alpha") is None else float(data["cbar_alpha"])
                ),
                metadata=dict(data.get("metadata", {})),
            )
        except KeyError as exc:
            raise ValueError(f"constants record is missing field {exc.args[0]!r}") from None


def _sobolev_ratio(fields: _MemberFields, p: float, n_dim: int = 2) -> float:
    """||f||_{p*} / (int |grad f|^p + int |f|^p)^{1/p} with p* = n p/(n - p)."""
    if not p < n_dim:
        raise ValueError("Sobolev ratio needs gradient power p < n")
    pstar = n_dim * p / (n_dim - p)
    grid = fields.grid
    norm_star = grid.integrate(fields.absu**pstar) ** (1.0 / pstar)
    denom = grid.integrate(fields.gmag**p) + grid.integrate(fields.absu**p)
    if denom <= 0.0:
        return 0.0
    return norm_star / denom ** (1.0 / p)


def _trace_data(fields: _MemberFields) -> tuple[float, float, float]:
    """(area integral of |f|, area integral of |grad f|, boundary integral of |f|)."""
    grid = fields.grid
    a = grid.integrate(fields.absu)
    b = grid.integrate(fields.gmag)
    t = float(np.sum(fields.absu_boundary * fields.boundary_measure))
    return a, b, t


def _single_weight_terms(
    fields: _MemberFields, pa: CompositeParams, alpha: float, r: float
) -> dict | None:
    """Shared integrals of the single-weight interior inequality.

    Returns None for degenerate members (identically zero).  All entries are
    logarithms; the inequality reads, with J = int |u|^alpha phi,

        int |u|^(alpha+r) omega
            <= eps * int |u|^(alpha-s) |grad u|^p W
               + (c4 2^m)^(theta p) * Phi1 * J^(1 + r/alpha)
               + eps^(-theta/(1-theta)) (c3 m 2^m)^(theta p/(1-theta))
                 * Phi2 * J^(1 + mu1/alpha)
    """
    p, s, r1 = pa.p, pa.s, pa.r1
    th = pa.theta(alpha, r)
    mu1 = pa.mu1(alpha, r)
    mm = pa.m(alpha)
    log_lhs = _log_area(fields, (alpha + r) * fields.log_absu + fields.log_omega)
    log_J = _log_area(fields, alpha * fields.log_absu + fields.log_phi)
    if not np.isfinite(log_lhs) or not np.isfinite(log_J):
        return None
    log_I = _log_area(
        fields,
        _pow_log(alpha - s, fields.log_absu) + p * fields.log_gmag + fields.log_w,
    )
    denom_g1 = alpha * (p - 1.0) + s - p
    log_G1 = (denom_g1 / alpha) * _log_area(
        fields, -((alpha - s + p) / denom_g1) * fields.log_phi
    )
    log_G2 = ((1.0 - r1) / r1) * _log_area(fields, -(r1 / (1.0 - r1)) * fields.log_w)
    q3 = 1.0 / ((1.0 - th) * (1.0 + mu1 / alpha))
    log_G3 = (1.0 + mu1 / alpha) * _log_area(
        fields, -fields.log_phi + q3 * fields.log_omega
    )
    return {
        "theta": th,
        "mu1": mu1,
        "m": mm,
        "log_lhs": log_lhs,
        "log_I": log_I,
        "log_J": log_J,
        "log_G1": log_G1,
        "log_G2": log_G2,
        "log_G3": log_G3,
        "log_Phi1": th * log_G1 + (1.0 - th) * log_G3,
        "log_Phi2": (th / (1.0 - th)) * log_G2 + log_G3,
    }


def single_weight_margin(
    fields_or_member,
    pa: CompositeParams,
    alpha: float,
    r: float,
    eps: float,
    c3: float,
    c4: float,
    preset: WeightPreset | None = None,
    quad_n: int = 96,
) -> float:
    """Log-domain margin (log RHS - log LHS) of the single-weight inequality."""
    fields = _coerce_fields(fields_or_member, preset, quad_n)
    terms = _single_weight_terms(fields, pa, alpha, r)
    if terms is None:
        return math.inf
    th, mu1, mm = terms["theta"], terms["mu1"], terms["m"]
    p = pa.p
    log_t1 = (
        th * p * (math.log(c4) + mm * _LOG2)
        + terms["log_Phi1"]
        + (1.0 + r / alpha) * terms["log_J"]
    )
    log_t2 = (
        (th * p / (1.0 - th)) * (math.log(c3) + math.log(mm) + mm * _LOG2)
        - (th / (1.0 - th)) * math.log(eps)
        + terms["log_Phi2"]
        + (1.0 + mu1 / alpha) * terms["log_J"]
    )
    log_rhs = logsumexp([math.log(eps) + terms["log_I"], log_t1, log_t2])
    return float(log_rhs - terms["log_lhs"])


def _needed_c_from_terms(terms: dict, pa: CompositeParams, alpha: float, r: float, eps: float) -> float:
    """Bisection core of the c3 = c4 calibration on precomputed integrals."""
    log_eI = math.log(eps) + terms["log_I"]
    if log_eI >= terms["log_lhs"]:
        return 0.0
    # log(LHS - eps I), computed stably from the log values
    log_target = terms["log_lhs"] + math.log1p(-math.exp(log_eI - terms["log_lhs"]))
    th, mu1, mm = terms["theta"], terms["mu1"], terms["m"]
    p = pa.p
    base_t1 = th * p * mm * _LOG2 + terms["log_Phi1"] + (1.0 + r / alpha) * terms["log_J"]
    base_t2 = (
        (th * p / (1.0 - th)) * (math.log(mm) + mm * _LOG2)
        - (th / (1.0 - th)) * math.log(eps)
        + terms["log_Phi2"]
        + (1.0 + mu1 / alpha) * terms["log_J"]
    )

    def excess(log_c: float) -> float:
        t1 = th * p * log_c + base_t1
        t2 = (th * p / (1.0 - th)) * log_c + base_t2
        return float(np.logaddexp(t1, t2)) - log_target

    lo, hi = -80.0, 80.0
    if excess(lo) >= 0.0:
        return 0.0
    if excess(hi) < 0.0:  # pragma: no cover - would need absurd integrals
        raise ArithmeticError("single-weight calibration failed to bracket the constant")
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return math.exp(hi)


def single_weight_needed_c(
    fields_or_member,
    pa: CompositeParams,
    alpha: float,
    r: float,
    eps: float,
    preset: WeightPreset | None = None,
    quad_n: int = 96,
) -> float:
    """Smallest c = c3 = c4 making the single-weight inequality hold.

    Monotone bisection on log c: both right-hand terms increase with c, so
    the root of (sum of c-terms) = (LHS - eps * gradient term) is unique.
    Returns 0 when the gradient term alone already dominates.
    """
    fields = _coerce_fields(fields_or_member, preset, quad_n)
    terms = _single_weight_terms(fields, pa, alpha, r)
    if terms is None:
        return 0.0
    return _needed_c_from_terms(terms, pa, alpha, r, eps)


def _coerce_fields(fields_or_member, preset: WeightPreset | None, quad_n: int) -> _MemberFields:
    if isinstance(fields_or_member, _MemberFields):
        return fields_or_member
    if preset is None:
        raise ValueError("a weight preset is required when passing a corpus member")
    return _evaluate_member(fields_or_member, preset, _unit_grid(quad_n))


def estimate_constants(
    corpus: FunctionCorpus,
    params: CompositeParams | None = None,
    *,
    quad_n: int = 96,
    safety: float = 1.1,
    min_members: int = 50,
    calibration_alphas: tuple[float, ...] = (2.0, 3.0, 12.0, 72.0),
    calibration_rs: tuple[float, ...] | None = None,
    calibration_eps: tuple[float, ...] = (0.01, 0.1, 1.0),
) -> EmpiricalConstants:
    """Calibrate c3..c7 on a corpus; estimates are inflated by ``safety``.

    * ``chat_p``: max over members of the Sobolev ratio at gradient powers
      {r1 p, p} (p* = n p/(n - p)); ``c7`` is the value at r1 p.
    * ``(c5, c6)``: smallest (by total size) pair with
      boundary integral <= c5 * area integral + c6 * gradient integral
      across the whole corpus, found by linear programming.
    * ``c3 = c4``: max over members, exponent configurations, and epsilon of
      the smallest constant making the single-weight interior inequality
      hold, found by monotone bisection.
    """
    if corpus.n_members < min_members:
        raise ValueError(
            f"corpus has {corpus.n_members} members; at least {min_members} required"
        )
    pa = params if params is not None else CompositeParams.from_bundle(compute_exponents())
    grid = _unit_grid(quad_n)
    if calibration_rs is None:
        calibration_rs = (0.0, pa.r)

    sob_powers = sorted({round(pa.r1 * pa.p, 12), round(pa.p, 12)})
    sob_max = {p: 0.0 for p in sob_powers}
    sob_argmax = {p: None for p in sob_powers}
    rows_a, rows_b, rows_t = [], [], []
    c34_needed = 0.0
    c34_binding = None

    for i, member in enumerate(corpus.members):
        preset = corpus.preset_for(i)
        fields = _evaluate_member(member, preset, grid)

        for p in sob_powers:
            ratio = _sobolev_ratio(fields, p)
            if ratio > sob_max[p]:
                sob_max[p] = ratio
                sob_argmax[p] = member.name

        a, b, t = _trace_data(fields)
        if a > 0.0:
            rows_a.append(a)
            rows_b.append(b)
            rows_t.append(t)

        for alpha in calibration_alphas:
            for r in calibration_rs:
                trial = replace(pa, r=r) if r != pa.r else pa
                if trial.single_weight_reason(alpha, r) is not None:
                    continue
                terms = _single_weight_terms(fields, trial, alpha, r)
                if terms is None:
                    continue
                for eps in calibration_eps:
                    needed = _needed_c_from_terms(terms, trial, alpha, r, eps)
                    if needed > c34_needed:
                        c34_needed = needed
                        c34_binding = {
                            "member": member.name,
                            "preset": preset.name,
                            "alpha": alpha,
                            "r": r,
                            "eps": eps,
                        }

    if not rows_a:
        raise ValueError("corpus contains no member with a nonzero area integral")
    res = linprog(
        c=[1.0, 1.0],
        A_ub=-np.column_stack([rows_a, rows_b]),
        b_ub=-np.asarray(rows_t),
        bounds=[(0.0, None), (0.0, None)],
        method="highs",
    )
    if not res.success:  # pragma: no cover - LP is always feasible (scale c5 up)
        raise ArithmeticError(f"trace-constant linear program failed: {res.message}")
    c5_raw, c6_raw = float(res.x[0]), float(res.x[1])

    chat = tuple((p, safety * sob_max[p]) for p in sob_powers)
    c34 = safety * c34_needed
    return EmpiricalConstants(
        c3=c34,
        c4=c34,
        c5=safety * c5_raw,
        c6=safety * c6_raw,
        c7=safety * sob_max[round(pa.r1 * pa.p, 12)],
        chat=chat,
        safety=safety,
        corpus_hash=corpus.corpus_hash(),
        n_members=corpus.n_members,
        metadata={
            "quad_n": quad_n,
            "sobolev_argmax": {f"{p:.12g}": sob_argmax[p] for p in sob_powers},
            "trace_objective": c5_raw + c6_raw,
            "trace_pair_raw": [c5_raw, c6_raw],
            "c3_c4_raw": c34_needed,
            "c3_c4_binding": c34_binding,
            "calibration_alphas": list(calibration_alphas),
            "calibration_rs": list(calibration_rs),
            "calibration_eps": list(calibration_eps),
            "params": {
                "p": pa.p,
                "s": pa.s,
                "beta": pa.beta,
                "r": pa.r,
                "r1": pa.r1,
            },
        },
    )


# ---------------------------------------------------------------------------
# Composite inequality assembly (log domain)
# ---------------------------------------------------------------------------


def _interior_terms(
    fields: _MemberFields,
    pa: CompositeParams,
    constants: EmpiricalConstants,
    alpha: float,
) -> dict | None:
    """Epsilon-independent pieces of the damped interior inequality."""
    p, s, beta, r, r1 = pa.p, pa.s, pa.beta, pa.r, pa.r1
    th = pa.theta(alpha)
    mu1 = pa.mu1(alpha)
    mm = pa.m(alpha)
    log_J = _log_area(fields, alpha * fields.log_absu + fields.log_phi)
    log_lhs = _log_area(fields, (alpha + r) * fields.log_absu + fields.log_omega)
    if not np.isfinite(log_lhs) or not np.isfinite(log_J):
        return None
    log_I = _log_area(
        fields,
        _pow_log(alpha - s, fields.log_absu)
        - beta * np.log1p(fields.absu)
        + p * fields.log_gmag
        + fields.log_w,
    )
    denom_g1 = alpha * (p - 1.0) + s - p
    log_G1 = (denom_g1 / alpha) * _log_area(
        fields, -((alpha - s + p) / denom_g1) * fields.log_phi
    )
    q3 = 1.0 / ((1.0 - th) * (1.0 + mu1 / alpha))
    log_G3 = (1.0 + mu1 / alpha) * _log_area(
        fields, -fields.log_phi + q3 * fields.log_omega
    )
    dd = alpha * (1.0 - r1) - r1 * beta
    log_Gt2 = (dd / (alpha * r1)) * _log_area(
        fields, -(r1 * beta / dd) * fields.log_phi - (r1 * alpha / dd) * fields.log_w
    )
    log_E1 = log1pexp(_log_area(fields, fields.log_phi))

    log_D1 = th * p * (math.log(constants.c4) + mm * _LOG2)
    log_D2 = (th * p / (1.0 - th)) * (math.log(constants.c3) + math.log(mm) + mm * _LOG2)
    bhat1 = (beta * th / (1.0 - th)) * (1.0 + 1.0 / alpha)
    muh1 = mu1 + beta * th / (1.0 - th)
    muh2 = min(r, mu1)
    muh3 = max(r, muh1)
    log_min_form = min(
        float(logsumexp([(1.0 + muh2 / alpha) * log_J, (1.0 + muh3 / alpha) * log_J])),
        (1.0 + muh3 / alpha) * log1pexp(log_J),
    )
    return {
        "log_lhs": log_lhs,
        "log_I": log_I,
        "log_J": log_J,
        "log_min_form": log_min_form,
        "log_term_1": log_D1 + th * log_G1 + (1.0 - th) * log_G3,
        "log_term_2": (
            (1.0 + bhat1) * _LOG2
            + log_D2
            + (th / (1.0 - th)) * log_Gt2
            + log_G3
            + (beta * th / (alpha * (1.0 - th))) * log_E1
        ),
        "eps_power_2": th / (1.0 - th),
    }


def _interior_rhs_log(terms: dict, eps: float) -> float:
    log_coeff = logsumexp(
        [
            terms["log_term_1"],
            terms["log_term_2"] - terms["eps_power_2"] * math.log(eps),
        ]
    )
    return float(
        logsumexp(
            [math.log(eps) + terms["log_I"], log_coeff + terms["log_min_form"]]
        )
    )


def _trace_terms(
    fields: _MemberFields,
    pa: CompositeParams,
    constants: EmpiricalConstants,
    alpha: float,
) -> dict | None:
    """Epsilon-independent pieces of the damped boundary-trace inequality."""
    p, s, beta, r, r1 = pa.p, pa.s, pa.beta, pa.r, pa.r1
    rt = pa.rtilde
    th = pa.theta(alpha)
    tht = pa.theta_tilde(alpha)
    mu1 = pa.mu1(alpha)
    mut = pa.mu1_tilde(alpha)
    mm = pa.m(alpha)
    bstar = pa.beta_star(alpha)

    log_J = _log_area(fields, alpha * fields.log_absu + fields.log_phi)
    log_lhs = _log_boundary(fields, (alpha + r) * fields.log_absu_boundary)
    if not np.isfinite(log_lhs) or not np.isfinite(log_J):
        return None
    log_I = _log_area(
        fields,
        _pow_log(alpha - s, fields.log_absu)
        - beta * np.log1p(fields.absu)
        + p * fields.log_gmag
        + fields.log_w,
    )
    denom_g1 = alpha * (p - 1.0) + s - p
    log_G1 = (denom_g1 / alpha) * _log_area(
        fields, -((alpha - s + p) / denom_g1) * fields.log_phi
    )
    log_G4 = (1.0 + mu1 / alpha) * _log_area(fields, -fields.log_phi)
    dd = alpha * (1.0 - r1) - r1 * beta
    log_Gt2 = (dd / (alpha * r1)) * _log_area(
        fields, -(r1 * beta / dd) * fields.log_phi - (r1 * alpha / dd) * fields.log_w
    )
    log_Gt5 = ((alpha - bstar) / alpha) * (1.0 + mut / alpha) * _log_area(
        fields,
        -((alpha + bstar) / (alpha - bstar)) * fields.log_phi
        - (bstar / beta) * (alpha / (alpha - bstar)) * fields.log_w,
    )
    log_E1 = log1pexp(_log_area(fields, fields.log_phi))

    log_D1 = th * p * (math.log(constants.c4) + mm * _LOG2)
    log_D2 = (th * p / (1.0 - th)) * (math.log(constants.c3) + math.log(mm) + mm * _LOG2)
    log_D1t = tht * p * (math.log(constants.c4) + mm * _LOG2)
    log_D2t = (tht * p / (1.0 - tht)) * (math.log(constants.c3) + math.log(mm) + mm * _LOG2)
    bhat1 = (beta * th / (1.0 - th)) * (1.0 + 1.0 / alpha)
    bhat2 = (beta / (p - 1.0)) * (1.0 + 1.0 / alpha)
    bhat3 = (beta / (1.0 - tht)) * (1.0 / (p - 1.0) + tht)

    log_z1 = math.log(constants.c5) + log_D1
    log_z2 = (1.0 / (1.0 - th)) * math.log(constants.c5) + log_D2
    log_z3 = (p / (p - 1.0)) * math.log(constants.c6 * (alpha + r))
    log_z4 = log_z3 + log_D1t
    log_z5 = (1.0 / (1.0 - tht)) * log_z3 + log_D2t

    muh1 = mu1 + beta * th / (1.0 - th)
    muh4 = min(r, mu1, rt, mut)
    muh5 = max(r, muh1, rt + beta / (p - 1.0), mut + bhat3)
    log_min_form = min(
        float(logsumexp([(1.0 + muh4 / alpha) * log_J, (1.0 + muh5 / alpha) * log_J])),
        (1.0 + muh5 / alpha) * log1pexp(log_J),
    )
    return {
        "log_lhs": log_lhs,
        "log_I": log_I,
        "log_J": log_J,
        "log_min_form": log_min_form,
        "log_term_1": log_z1 + th * log_G1 + (1.0 - th) * log_G4,
        "log_term_2": (
            (1.0 + bhat1) * _LOG2
            + log_z2
            + (beta * th / (alpha * (1.0 - th))) * log_E1
            + (th / (1.0 - th)) * log_Gt2
            + log_G4
        ),
        "log_term_3": (
            (1.0 + bhat2) * _LOG2
            + log_z4
            + (beta / (alpha * (p - 1.0))) * log_E1
            + tht * log_G1
            + (1.0 - tht) * log_Gt5
        ),
        "log_term_4": (
            (1.0 + bhat3 * (1.0 + 1.0 / alpha)) * _LOG2
            + log_z5
            + (bhat3 / alpha) * log_E1
            + (tht / (1.0 - tht)) * log_Gt2
            + log_Gt5
        ),
        "eps_power_2": th / (1.0 - th),
        "eps_power_3": 1.0 / (p - 1.0),
        "eps_power_4": 1.0 / (p - 1.0) + (p / (p - 1.0)) * tht / (1.0 - tht),
    }


def _trace_rhs_log(terms: dict, eps: float) -> float:
    log_eps = math.log(eps)
    log_coeff = logsumexp(
        [
            terms["log_term_1"],
            terms["log_term_2"] - terms["eps_power_2"] * log_eps,
            terms["log_term_3"] - terms["eps_power_3"] * log_eps,
            terms["log_term_4"] - terms["eps_power_4"] * log_eps,
        ]
    )
    return float(
        logsumexp(
            [
                math.log(3.0 * eps) + terms["log_I"],
                log_coeff + terms["log_min_form"],
            ]
        )
    )


def _time_nodes(n_time: int) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid nodes and weights on [0, 1]."""
    t = np.linspace(0.0, 1.0, n_time)
    w = np.full(n_time, t[1] - t[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return t, w


def _spacetime_check(
    fields: _MemberFields,
    pa: CompositeParams,
    constants: EmpiricalConstants,
    alpha: float,
    tau: FieldExpr,
    n_time: int = 9,
) -> dict | None:
    """Space-time inequality for u(x, t) = f(x) * tau(t) on the unit time window."""
    p, s, beta, r1 = pa.p, pa.s, pa.beta, pa.r1
    kap = pa.kappa(alpha)
    th0 = pa.theta0(alpha)
    th0h = pa.theta0_hat(alpha)
    mm = pa.m(alpha)

    t_nodes, t_weights = _time_nodes(n_time)
    log_tw = np.log(t_weights)
    taus = np.array([float(tau(0.0, 0.0, tk)) for tk in t_nodes])
    if np.any(taus <= 0.0):
        raise ValueError("time profile must be strictly positive on [0, 1]")
    log_taus = np.log(taus)

    lhs_slices = np.empty(n_time)
    ihat_slices = np.empty(n_time)
    jhat_slices = np.empty(n_time)
    salpha_slices = np.empty(n_time)
    for k in range(n_time):
        log_uk = fields.log_absu + log_taus[k]
        uk = fields.absu * taus[k]
        lhs_slices[k] = _log_area(fields, kap * alpha * log_uk + fields.log_phi)
        ihat_slices[k] = _log_area(
            fields,
            _pow_log(alpha - s, log_uk)
            - beta * np.log1p(uk)
            + p * (fields.log_gmag + log_taus[k])
            + fields.log_w,
        )
        jhat_slices[k] = _log_area(fields, (alpha - s + p) * log_uk + fields.log_phi)
        salpha_slices[k] = _log_area(fields, alpha * log_uk + fields.log_phi)

    log_lhs = float(logsumexp(lhs_slices + log_tw)) / (kap * alpha)
    if not np.isfinite(log_lhs):
        return None
    log_Ihat = float(logsumexp(ihat_slices + log_tw))
    log_Jhat = float(logsumexp(jhat_slices + log_tw))
    log_S = float(np.max(salpha_slices)) / alpha

    log_E1 = log1pexp(_log_area(fields, fields.log_phi))
    log_E2 = (pa.rstar / 2.0) * _log_area(
        fields, (2.0 / pa.rstar - 1.0) * fields.log_phi
    )
    e3_integrand = (r1 / (1.0 - r1)) * log1pexp(-fields.log_phi) + (
        r1 / (1.0 - r1) ** 2
    ) * log1pexp(-fields.log_w)
    log_E3 = ((1.0 - r1) / r1) * log1pexp(_log_area(fields, e3_integrand))
    log_Phi3 = (
        (1.0 + beta + 1.0 / r1) * _LOG2
        + p * math.log(constants.c7)
        + (1.0 / r1) * math.log(mm)
        + (beta / alpha) * log_E1
        + log_E2
        + log_E3
    )
    log_rhs = (log_Phi3 + float(logsumexp([log_Ihat, log_Jhat]))) / (kap * alpha) + float(
        logsumexp([(1.0 - th0) * log_S, (1.0 - th0h) * log_S])
    )
    return {"log_lhs": log_lhs, "log_rhs": log_rhs}


# ---------------------------------------------------------------------------
# Composite verification driver
# ---------------------------------------------------------------------------

_LEMMA_NAMES = ("interior", "trace", "spacetime")


def _new_lemma_stats() -> dict:
    return {
        "checked": 0,
        "trivial": 0,
        "skipped": [],
        "violations": [],
        "eps_tradeoff_failures": 0,
        "min_margin": None,
        "min_margin_case": None,
        "results": [],
    }


def _record(stats: dict, case: dict, margin_floor: float) -> None:
    margin = case["margin"]
    if margin is None or math.isinf(margin):
        stats["trivial"] += 1
        case["margin"] = None
        case["trivial"] = True
    else:
        stats["checked"] += 1
        case["trivial"] = False
        if margin < margin_floor:
            stats["violations"].append(dict(case))
        if stats["min_margin"] is None or margin < stats["min_margin"]:
            stats["min_margin"] = margin
            stats["min_margin_case"] = {
                k: case[k] for k in ("member", "preset", "alpha", "eps")
            }
    stats["results"].append(case)


def verify_composites(
    corpus: FunctionCorpus,
    bundle: ExponentBundle,
    constants: EmpiricalConstants,
    *,
    alphas: Sequence[float] | None = None,
    eps_grid: Sequence[float] = (0.1, 1.0, 10.0),
    quad_n: int = 96,
    n_time: int = 9,
    margin_floor: float = -1e-9,
    require_disjoint: bool = True,
) -> dict:
    """Verify the three composite weighted inequalities over a corpus.

    For each member (with its paired weight preset), each alpha, and each
    epsilon in ``eps_grid``, the fully assembled right-hand side is compared
    against the quadrature left-hand side.  Margins are logarithmic
    (log RHS - log LHS); a case with zero left-hand side counts as trivial.
    Members failing a lemma's exponent preconditions are skipped with the
    violated condition spelled out.  The constants must come from a corpus
    disjoint from this one (checked by hash) unless ``require_disjoint`` is
    switched off for diagnostics.
    """
    corpus_hash = corpus.corpus_hash()
    if require_disjoint and constants.corpus_hash == corpus_hash:
        raise ValueError(
            "constants were calibrated on this same corpus; verification "
            "requires a disjoint calibration corpus"
        )
    pa = CompositeParams.from_bundle(bundle)
    if alphas is None:
        alphas = (bundle.alpha_star, bundle.beta1)
    grid = _unit_grid(quad_n)
    eps_grid = tuple(float(e) for e in eps_grid)

    report: dict = {
        "params": {
            "p": pa.p,
            "s": pa.s,
            "beta": pa.beta,
            "r": pa.r,
            "r1": pa.r1,
            "rstar": pa.rstar,
            "rtilde": pa.rtilde,
        },
        "alphas": [float(a) for a in alphas],
        "eps_grid": list(eps_grid),
        "quadrature": {"n": quad_n, "n_time": n_time},
        "constants": {
            "c3": constants.c3,
            "c4": constants.c4,
            "c5": constants.c5,
            "c6": constants.c6,
            "c7": constants.c7,
            "corpus_hash": constants.corpus_hash,
        },
        "corpus": {
            "seed": corpus.seed,
            "n_members": corpus.n_members,
            "hash": corpus_hash,
        },
        "lemmas": {name: _new_lemma_stats() for name in _LEMMA_NAMES},
    }
    lemmas = report["lemmas"]

    for i, member in enumerate(corpus.members):
        preset = corpus.preset_for(i)
        fields = _evaluate_member(member, preset, grid)
        tau_name, tau_src = TIME_SHAPES[i % len(TIME_SHAPES)]
        tau = FieldExpr.parse(tau_src)

        for alpha in alphas:
            base = {"member": member.name, "preset": preset.name, "alpha": float(alpha)}

            reason = pa.interior_reason(alpha)
            if reason is not None:
                lemmas["interior"]["skipped"].append({**base, "reason": reason})
            else:
                terms = _interior_terms(fields, pa, constants, alpha)
                rhs_by_eps = {}
                for eps in eps_grid:
                    case = dict(base, eps=eps)
                    if terms is None:
                        case.update(log_lhs=None, log_rhs=None, margin=None)
                    else:
                        log_rhs = _interior_rhs_log(terms, eps)
                        rhs_by_eps[eps] = log_rhs
                        case.update(
                            log_lhs=terms["log_lhs"],
                            log_rhs=log_rhs,
                            margin=log_rhs - terms["log_lhs"],
                        )
                    _record(lemmas["interior"], case, margin_floor)
                if len(rhs_by_eps) == len(eps_grid) and not _eps_tradeoff_ok(rhs_by_eps):
                    lemmas["interior"]["eps_tradeoff_failures"] += 1

            reason = pa.trace_reason(alpha)
            if reason is not None:
                lemmas["trace"]["skipped"].append({**base, "reason": reason})
            else:
                terms = _trace_terms(fields, pa, constants, alpha)
                rhs_by_eps = {}
                for eps in eps_grid:
                    case = dict(base, eps=eps)
                    if terms is None:
                        case.update(log_lhs=None, log_rhs=None, margin=None)
                    else:
                        log_rhs = _trace_rhs_log(terms, eps)
                        rhs_by_eps[eps] = log_rhs
                        case.update(
                            log_lhs=terms["log_lhs"],
                            log_rhs=log_rhs,
                            margin=log_rhs - terms["log_lhs"],
                        )
                    _record(lemmas["trace"], case, margin_floor)
                if len(rhs_by_eps) == len(eps_grid) and not _eps_tradeoff_ok(rhs_by_eps):
                    lemmas["trace"]["eps_tradeoff_failures"] += 1

            reason = pa.spacetime_reason(alpha)
            if reason is not None:
                lemmas["spacetime"]["skipped"].append({**base, "reason": reason})
            else:
                case = dict(base, eps=None, time_shape=tau_name)
                result = _spacetime_check(fields, pa, constants, alpha, tau, n_time)
                if result is None:
                    case.update(log_lhs=None, log_rhs=None, margin=None)
                else:
                    case.update(
                        log_lhs=result["log_lhs"],
                        log_rhs=result["log_rhs"],
                        margin=result["log_rhs"] - result["log_lhs"],
                    )
                _record(lemmas["spacetime"], case, margin_floor)

    report["violations_total"] = sum(len(lemmas[n]["violations"]) for n in _LEMMA_NAMES)
    return report


def _eps_tradeoff_ok(rhs_by_eps: dict[float, float]) -> bool:
    """Sanity check on the epsilon structure of an assembled right-hand side.

    The gradient term grows and the compensating term shrinks with epsilon,
    so the sum of the two extreme evaluations must dominate twice the best
    one: log(RHS(min eps) + RHS(max eps)) >= log 2 + min over the grid.
    """
    lo = rhs_by_eps[min(rhs_by_eps)]
    hi = rhs_by_eps[max(rhs_by_eps)]
    best = min(rhs_by_eps.values())
    return bool(np.logaddexp(lo, hi) >= _LOG2 + best - 1e-12)
