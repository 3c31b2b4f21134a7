"""Constitutive layer: momentum power law, rotation, and flux inversion.

The momentum law is a heterogeneous power law

    g(x, s) = sum_{k} a_k(x) * s**d_k,   0 = d_0 < d_1 < ... < d_K,

with a_0, a_K > 0 and a_k >= 0.  Rotation enters through the skew map
``J v = k x v`` (in 2-D the 90-degree rotation), producing the vector map

    F_{x,z}(v) = g(x, |v|) v + z J v,

which is odd and bijective.  The pseudo-pressure flux is its inverse

    X(x, u, y) = F_{x, rstar(x) * u**lam}^{-1}(y),

with ``rstar = 2 cbar Omega / phi``.  ``eval_weights`` provides the pointwise
weight fields W0..W4 entering the two-sided flux bounds

    |X(x, z, y)| <= W0 |y|**(1-a),
    X(x, z, y) . y >= W1 |y|**(2-a) / (chi*^2 (1+z)^(2 lam)) - W2,

with a = d_K / (1 + d_K), which ``verify_flux_bounds`` checks by fuzzing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .expressions import FieldExpr
from .geometry import PorousDomain

__all__ = [
    "ForchheimerLaw",
    "FluidEOS",
    "RotationGravity",
    "FlowModel",
    "WeightSet",
    "ConvergenceError",
    "constant_law",
    "random_law",
    "invert_F",
    "invert_F_3d",
    "verify_flux_bounds",
]


class ConvergenceError(RuntimeError):
    """Raised when an inversion fails its residual tolerance."""


def _eval_field(spec, x, y, domain=None):
    """Evaluate a coefficient specification at sample points."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(spec, (int, float)):
        return np.full(x.shape, float(spec))
    if isinstance(spec, str):
        spec = FieldExpr.parse(spec)
    if isinstance(spec, FieldExpr):
        out = spec(x, y, domain=domain)
    else:
        out = spec(x, y)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), x.shape).copy()


@dataclass
class ForchheimerLaw:
    """Momentum power law with heterogeneous nonnegative coefficients."""

    degrees: Sequence[float]
    coefficients: Sequence  # each: number | expression string | FieldExpr | callable

    def __post_init__(self):
        d = np.asarray(self.degrees, dtype=np.float64)
        if d.ndim != 1 or d.size < 2:
            raise ValueError("law needs at least the degree-0 term and one positive degree")
        if d[0] != 0.0:
            raise ValueError("first degree must be exactly 0 (Darcy term)")
        if np.any(np.diff(d) <= 0.0):
            raise ValueError("degrees must be strictly increasing")
        if len(self.coefficients) != d.size:
            raise ValueError("need one coefficient per degree")
        self.degrees = d

    @property
    def degree_top(self) -> float:
        return float(self.degrees[-1])

    @property
    def a_exponent(self) -> float:
        """a = d_K / (1 + d_K) in (0, 1)."""
        return self.degree_top / (1.0 + self.degree_top)

    def coeff_matrix(self, x, y, domain=None) -> np.ndarray:
        """Coefficient values at sample points: (M, K) array for flat x, y."""
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        cols = [_eval_field(c, x, y, domain) for c in self.coefficients]
        mat = np.stack(cols, axis=1)
        if np.any(mat < 0.0) or np.any(mat[:, 0] <= 0.0) or np.any(mat[:, -1] <= 0.0):
            raise ValueError("law coefficients must satisfy a_0, a_K > 0 and a_k >= 0")
        return np.ascontiguousarray(mat)

    def g(self, coeffs: np.ndarray, s: np.ndarray) -> np.ndarray:
        """g(x, s) given a precomputed coefficient matrix."""
        return kernels.eval_power_law(coeffs, self.degrees, np.asarray(s, dtype=np.float64).ravel())


def constant_law(coefficients: Sequence[float], degrees: Sequence[float]) -> ForchheimerLaw:
    return ForchheimerLaw(degrees=degrees, coefficients=[float(c) for c in coefficients])


def random_law(rng: np.random.Generator, heterogeneous: bool = False) -> ForchheimerLaw:
    """Draw a random admissible law (used by the inversion fuzz suites)."""
    n_pos = int(rng.integers(1, 5))  # number of positive-degree terms
    degrees = np.concatenate([[0.0], np.sort(rng.uniform(0.25, 4.0, size=n_pos))])
    while np.any(np.diff(degrees) < 1e-3):  # keep degrees separated
        degrees = np.concatenate([[0.0], np.sort(rng.uniform(0.25, 4.0, size=n_pos))])
    base = 10.0 ** rng.uniform(-2.0, 2.0, size=n_pos + 1)
    # interior coefficients may vanish
    for k in range(1, n_pos):
        if rng.uniform() < 0.3:
            base[k] = 0.0

    coeffs: list = []
    for k, b in enumerate(base):
        if heterogeneous and b > 0.0 and rng.uniform() < 0.7:
            kx, ky = (float(v) for v in rng.uniform(0.5, 3.0, size=2))
            ph = float(rng.uniform(0.0, 2.0 * np.pi))
            amp = float(rng.uniform(0.1, 0.45))
            coeffs.append(
                FieldExpr.parse(
                    f"{float(b)!r} * (1.0 + {amp!r} * sin({kx!r} * x + {ph!r}) * cos({ky!r} * y))"
                )
            )
        else:
            coeffs.append(float(b))
    return ForchheimerLaw(degrees=degrees, coefficients=coeffs)


@dataclass(frozen=True)
class FluidEOS:
    """Equation of state: fixes the pseudo-pressure exponent and the scale cbar."""

    kind: str
    lam: float
    cbar: float

    @staticmethod
    def isentropic(gamma: float, c: float) -> "FluidEOS":
        if gamma <= 0.0 or c <= 0.0:
            raise ValueError("isentropic EOS needs gamma > 0 and c > 0")
        lam = 1.0 / (gamma + 1.0)
        cbar = ((gamma + 1.0) / (c * gamma)) ** (1.0 / (gamma + 1.0))
        return FluidEOS("isentropic", lam, cbar)

    @staticmethod
    def slightly_compressible(varpi: float) -> "FluidEOS":
        if varpi <= 0.0:
            raise ValueError("slightly compressible EOS needs varpi > 0")
        return FluidEOS("slightly_compressible", 1.0, float(varpi))


@dataclass
class RotationGravity:
    """Angular speed and gravity in config (unscaled) units.

    ``e0x``/``e0y`` give the unit gravity direction as expressions of t
    (the frame rotates, so the direction may be time-dependent).
    """

    omega_tilde: float = 0.0
    gravity_tilde: float = 0.0
    e0x: object = "0.0"
    e0y: object = "-1.0"

    def __post_init__(self):
        if isinstance(self.e0x, str):
            self.e0x = FieldExpr.parse(self.e0x)
        if isinstance(self.e0y, str):
            self.e0y = FieldExpr.parse(self.e0y)

    def e0(self, t: float) -> tuple[float, float]:
        ex = float(self.e0x(0.0, 0.0, t=t))
        ey = float(self.e0y(0.0, 0.0, t=t))
        return ex, ey


@dataclass(frozen=True)
class WeightSet:
    """Pointwise weight fields of the two-sided flux bounds (cell arrays)."""

    W0: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    W4: np.ndarray
    chi0: np.ndarray
    ctilde4: np.ndarray
    a_exponent: float
    chi_star: float


@dataclass
class FlowModel:
    """Bundle of law + EOS + rotation + porosity over a domain."""

    law: ForchheimerLaw
    eos: FluidEOS
    rot: RotationGravity
    phi_tilde: object  # porosity field spec (pre-scaling)
    domain: PorousDomain = field(default_factory=PorousDomain)

    @property
    def lam(self) -> float:
        return self.eos.lam

    @property
    def cbar(self) -> float:
        return self.eos.cbar

    @property
    def Omega(self) -> float:
        return self.cbar * self.rot.omega_tilde

    @property
    def Ggrav(self) -> float:
        return self.cbar**2 * self.rot.gravity_tilde

    @property
    def chi_star(self) -> float:
        return 1.0 + self.Omega

    @property
    def c_Z(self) -> float:
        return self.Ggrav + self.domain.max_radius

    def phi(self, x, y) -> np.ndarray:
        """Scaled porosity phi = cbar * phi_tilde."""
        out = self.cbar * _eval_field(self.phi_tilde, np.asarray(x, dtype=np.float64), y, self.domain.bounds)
        if np.any(out <= 0.0):
            raise ValueError("porosity must be positive")
        return out

    def rstar(self, x, y) -> np.ndarray:
        """Rotation magnitude scale rstar = 2 cbar Omega / phi."""
        return 2.0 * self.cbar * self.Omega / self.phi(x, y)

    def Z(self, x, y, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Pseudo-gravity drift Z(x, t) = Ggrav e0(t) - Omega^2 x (J^2 x = -x)."""
        ex, ey = self.rot.e0(t)
        om2 = self.Omega**2
        zx = self.Ggrav * ex - om2 * np.asarray(x, dtype=np.float64)
        zy = self.Ggrav * ey - om2 * np.asarray(y, dtype=np.float64)
        return zx, zy

    def coeff_matrix(self, x, y) -> np.ndarray:
        return self.law.coeff_matrix(x, y, self.domain.bounds)


# ---------------------------------------------------------------------------
# Forward map and inversion
# ---------------------------------------------------------------------------


def eval_F(law: ForchheimerLaw, coeffs: np.ndarray, zrot: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Forward map F(v) = g(|v|) v + zrot J v for stacked 2-vectors (M, 2)."""
    v = np.asarray(v, dtype=np.float64)
    speed = np.hypot(v[:, 0], v[:, 1])
    g = law.g(coeffs, speed)
    out = np.empty_like(v)
    out[:, 0] = g * v[:, 0] - zrot * v[:, 1]
    out[:, 1] = g * v[:, 1] + zrot * v[:, 0]
    return out


def invert_F(
    law: ForchheimerLaw,
    coeffs: np.ndarray,
    zrot: np.ndarray,
    yvec: np.ndarray,
    tol: float = 1e-10,
    check: bool = True,
) -> np.ndarray:
    """Invert F for stacked 2-vectors: solve g(|v|) v + zrot J v = y.

    The speed |v| solves the scalar monotone profile equation
    |v| sqrt(g(|v|)^2 + zrot^2) = |y| (hot kernel); the direction follows
    from the closed-form 2x2 inverse (g I + z J)^{-1} = (g I - z J)/(g^2+z^2).
    """
    yvec = np.asarray(yvec, dtype=np.float64)
    zrot = np.asarray(zrot, dtype=np.float64).ravel()
    ymag = np.hypot(yvec[:, 0], yvec[:, 1])
    s = kernels.profile_root(coeffs, law.degrees, zrot, ymag)
    g = law.g(coeffs, s)
    denom = g * g + zrot * zrot
    v = np.empty_like(yvec)
    v[:, 0] = (g * yvec[:, 0] + zrot * yvec[:, 1]) / denom
    v[:, 1] = (g * yvec[:, 1] - zrot * yvec[:, 0]) / denom
    if check:
        resid = eval_F(law, coeffs, zrot, v) - yvec
        rel = np.hypot(resid[:, 0], resid[:, 1]) / (1.0 + ymag)
        worst = float(rel.max()) if rel.size else 0.0
        if worst > tol:
            raise ConvergenceError(f"inversion residual {worst:.3e} exceeds tol {tol:.1e}")
    return v


def eval_X(
    model: FlowModel,
    x,
    y,
    u: np.ndarray,
    yvec: np.ndarray,
    tol: float = 1e-10,
) -> np.ndarray:
    """Pseudo-pressure flux X(x, u, y) = F^{-1} with zrot = rstar(x) u**lam."""
    u = np.asarray(u, dtype=np.float64).ravel()
    zrot = model.rstar(x, y) * np.power(u, model.lam)
    coeffs = model.coeff_matrix(x, y)
    return invert_F(model.law, coeffs, zrot, yvec, tol=tol)


def invert_F_3d(
    law: ForchheimerLaw,
    coeffs: np.ndarray,
    zrot: np.ndarray,
    yvec: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 60,
) -> np.ndarray:
    """Invert F for stacked 3-vectors (rotation axis = z axis).

    Damped Newton on the full 3x3 system, seeded by the axis/perpendicular
    decomposition: the axial component is not rotated and the in-plane part
    obeys the planar closed form, which reduces the seed speed to a scalar
    monotone equation solved by bisection.
    """
    yvec = np.asarray(yvec, dtype=np.float64)
    zrot = np.asarray(zrot, dtype=np.float64).ravel()
    M = yvec.shape[0]
    y_ax = yvec[:, 2]
    y_pl = np.hypot(yvec[:, 0], yvec[:, 1])
    ymag = np.sqrt(y_pl * y_pl + y_ax * y_ax)

    # --- seed: bisection on s^2 = y_ax^2/g(s)^2 + y_pl^2/(g(s)^2 + z^2)
    lo = np.zeros(M)
    hi = np.where(ymag > 0.0, ymag / coeffs[:, 0], 1.0)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        g = law.g(coeffs, mid)
        rhs = y_ax**2 / g**2 + y_pl**2 / (g * g + zrot * zrot)
        below = mid * mid < rhs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    s = 0.5 * (lo + hi)
    g = law.g(coeffs, s)
    denom = g * g + zrot * zrot
    v = np.empty_like(yvec)
    v[:, 0] = (g * yvec[:, 0] + zrot * yvec[:, 1]) / denom
    v[:, 1] = (g * yvec[:, 1] - zrot * yvec[:, 0]) / denom
    v[:, 2] = np.where(g > 0.0, y_ax / g, 0.0)

    def residual(vv: np.ndarray) -> np.ndarray:
        speed = np.sqrt(np.sum(vv * vv, axis=1))
        gg = law.g(coeffs, speed)
        out = np.empty_like(vv)
        out[:, 0] = gg * vv[:, 0] - zrot * vv[:, 1]
        out[:, 1] = gg * vv[:, 1] + zrot * vv[:, 0]
        out[:, 2] = gg * vv[:, 2]
        return out - yvec

    res = residual(v)
    res_norm = np.sqrt(np.sum(res * res, axis=1))
    degs = law.degrees
    for _ in range(max_iter):
        if np.all(res_norm <= tol * (1.0 + ymag)):
            break
        speed = np.sqrt(np.sum(v * v, axis=1))
        g = law.g(coeffs, speed)
        gp = np.zeros(M)
        for k in range(coeffs.shape[1]):
            d = float(degs[k])
            if d > 0.0:
                with np.errstate(divide="ignore", invalid="ignore"):
                    term = coeffs[:, k] * d * np.power(np.maximum(speed, 1e-300), d - 1.0)
                gp += term
        # Jacobian J_F = g I + (g'/|v|) v v^T + z J; solve per sample
        step = np.empty_like(v)
        for i in range(M):
            si = speed[i]
            outer = np.outer(v[i], v[i]) / si if si > 0.0 else np.zeros((3, 3))
            Jm = g[i] * np.eye(3) + gp[i] * outer
            Jm[0, 1] -= zrot[i]
            Jm[1, 0] += zrot[i]
            try:
                step[i] = np.linalg.solve(Jm, res[i])
            except np.linalg.LinAlgError:
                step[i] = res[i] / max(g[i], 1e-300)
        # damping: halve until the residual does not increase
        lam_damp = np.ones(M)
        for _ in range(30):
            trial = v - lam_damp[:, None] * step
            new_res = residual(trial)
            new_norm = np.sqrt(np.sum(new_res * new_res, axis=1))
            worse = new_norm > res_norm
            if not np.any(worse):
                break
            lam_damp = np.where(worse, 0.5 * lam_damp, lam_damp)
        v = v - lam_damp[:, None] * step
        res = residual(v)
        res_norm = np.sqrt(np.sum(res * res, axis=1))

    worst = float((res_norm / (1.0 + ymag)).max()) if M else 0.0
    if worst > tol:
        raise ConvergenceError(f"3-D inversion residual {worst:.3e} exceeds tol {tol:.1e}")
    return v


# ---------------------------------------------------------------------------
# Weights and bound verification
# ---------------------------------------------------------------------------


def eval_weights(model: FlowModel, x, y) -> WeightSet:
    """Pointwise weight fields W0..W4 at sample points."""
    x = np.asarray(x, dtype=np.float64)
    coeffs = model.coeff_matrix(x, y)
    a = model.law.a_exponent
    dtop = model.law.degree_top
    phi = model.phi(x, y).ravel()

    aN = coeffs[:, -1]
    a0 = coeffs[:, 0]
    chi0 = np.sum(coeffs, axis=1)
    ctilde4 = (np.minimum(1.0, np.minimum(a0, aN)) / 2.0**dtop) ** (1.0 + a)

    W0 = aN ** (a - 1.0)
    W1 = 2.0 ** (-a) * ctilde4 / ((1.0 + 2.0 * model.cbar) ** 2 * (chi0 + 1.0 / phi) ** 2)
    W2 = 2.0 ** (-a) * ctilde4 / chi0**2
    W3 = W0 ** (2.0 - a) * W1 ** (a - 1.0) + W1
    W4 = W2 + W3
    shape = x.shape if x.ndim else (1,)
    return WeightSet(
        W0=W0.reshape(shape),
        W1=W1.reshape(shape),
        W2=W2.reshape(shape),
        W3=W3.reshape(shape),
        W4=W4.reshape(shape),
        chi0=chi0.reshape(shape),
        ctilde4=ctilde4.reshape(shape),
        a_exponent=a,
        chi_star=model.chi_star,
    )


def verify_flux_bounds(
    model: FlowModel,
    n_samples: int = 20000,
    seed: int = 0,
    rel_slack: float = 1e-9,
    u_range: tuple[float, float] = (1e-6, 1e3),
    ymag_range: tuple[float, float] = (1e-8, 1e8),
) -> dict:
    """Fuzz the two-sided flux bounds; returns a violation report.

    Violations are normalized: upper margin (|X| - bound)/bound, lower margin
    (bound - X.y)/(|bound| + |X.y| + W2).  A sample counts as violating when
    its margin exceeds ``rel_slack``.
    """
    rng = np.random.default_rng(seed)
    dom = model.domain
    x = rng.uniform(dom.x0, dom.x1, n_samples)
    y = rng.uniform(dom.y0, dom.y1, n_samples)
    u = 10.0 ** rng.uniform(np.log10(u_range[0]), np.log10(u_range[1]), n_samples)
    ymag = 10.0 ** rng.uniform(np.log10(ymag_range[0]), np.log10(ymag_range[1]), n_samples)
    theta = rng.uniform(0.0, 2.0 * np.pi, n_samples)
    yvec = np.stack([ymag * np.cos(theta), ymag * np.sin(theta)], axis=1)

    ws = eval_weights(model, x, y)
    a = ws.a_exponent
    lam = model.lam
    chi = model.chi_star

    v = eval_X(model, x, y, u, yvec)
    Xmag = np.hypot(v[:, 0], v[:, 1])
    Xdoty = v[:, 0] * yvec[:, 0] + v[:, 1] * yvec[:, 1]

    upper_bound = ws.W0.ravel() * ymag ** (1.0 - a)
    upper_margin = (Xmag - upper_bound) / upper_bound

    lower_bound = ws.W1.ravel() * ymag ** (2.0 - a) / (chi**2 * (1.0 + u) ** (2.0 * lam)) - ws.W2.ravel()
    lower_scale = np.abs(lower_bound) + np.abs(Xdoty) + ws.W2.ravel()
    lower_margin = (lower_bound - Xdoty) / lower_scale

    return {
        "n_samples": int(n_samples),
        "upper_worst_margin": float(upper_margin.max()),
        "lower_worst_margin": float(lower_margin.max()),
        "upper_violations": int(np.sum(upper_margin > rel_slack)),
        "lower_violations": int(np.sum(lower_margin > rel_slack)),
        "rel_slack": float(rel_slack),
    }
