"""Explicit finite-volume time marching for the degenerate pseudo-pressure flow.

The scheme evolves the pseudo-pressure power w = u**lam (the variable whose
time derivative the balance law weights by porosity):

    phi w_t = div X(x, u, grad u + u**(2 lam) Z) + f,

with boundary faces closed by the prescribed flux  X . nu = -(psi1 + psi2 u**lam).
Cell averages live on a uniform rectangle grid; face fluxes use arithmetic
face averages of u, compact normal differences plus averaged tangential
differences for the gradient, and one batched constitutive inversion per step.

Time stepping is forward Euler, either with a fixed step or with an adaptive
step bounded by a finite-difference flux-sensitivity probe.  Stiff problems
that drive the stable step below 1e-14 * t_end abort with a hard error rather
than silently stalling; implicit integrators are out of scope.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constitutive import FlowModel, eval_F, eval_weights, invert_F
from .expressions import FieldExpr
from .functionals import log_integral
from .geometry import SIDES, BoundaryForcing, Grid, materialize

__all__ = [
    "SolverError",
    "SolverConfig",
    "PseudoPressureState",
    "Trajectory",
    "ManufacturedSolution",
    "initial_state",
    "face_fluxes",
    "advance",
    "stable_dt",
    "run",
    "mass_balance_residual",
    "energy_identity_residual",
    "manufactured_source",
    "mms_study",
    "mms_temporal_study",
    "write_outputs",
    "read_snapshot",
    "read_diagnostics",
]


class SolverError(RuntimeError):
    """Raised when time marching cannot continue."""


# ---------------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Time-marching controls.

    dt=None selects the adaptive policy (step = safety * probe bound); a
    positive dt fixes the step.  eps_reg floors the pseudo-pressure after
    every update; None picks 0 for lam == 1 and 1e-10 otherwise.  alphas
    lists the weighted-norm orders tracked in the diagnostics series.  A
    ``source`` expression adds a volumetric term f(x, y, t); an ``exact``
    manufactured solution instead derives both the source and the boundary
    fluxes from the given profile.
    """

    t_end: float
    dt: float | None = None
    safety: float = 0.4
    eps_reg: float | None = None
    snapshot_dt: float | None = None
    probe_interval: int = 20
    alphas: tuple[float, ...] = ()
    source: object = None
    exact: object = None
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not (self.t_end > 0.0):
            raise ValueError("t_end must be positive")
        if self.dt is not None and not (self.dt > 0.0):
            raise ValueError("fixed dt must be positive")
        if not (0.0 < self.safety <= 1.0):
            raise ValueError("safety must lie in (0, 1]")
        if self.eps_reg is not None and self.eps_reg < 0.0:
            raise ValueError("eps_reg must be nonnegative")
        if self.snapshot_dt is not None and not (self.snapshot_dt > 0.0):
            raise ValueError("snapshot_dt must be positive")
        if self.probe_interval < 1:
            raise ValueError("probe_interval must be at least 1")
        if isinstance(self.source, str):
            object.__setattr__(self, "source", FieldExpr.parse(self.source))
        if self.exact is not None and not isinstance(self.exact, ManufacturedSolution):
            object.__setattr__(self, "exact", ManufacturedSolution(self.exact))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))

    def resolved_eps_reg(self, lam: float) -> float:
        if self.eps_reg is not None:
            return float(self.eps_reg)
        return 0.0 if lam == 1.0 else 1e-10

    def resolved_snapshot_dt(self) -> float:
        return self.snapshot_dt if self.snapshot_dt is not None else self.t_end / 20.0


@dataclass
class PseudoPressureState:
    """Marching state: time, pseudo-pressure u, evolved power w = u**lam."""

    t: float
    u: np.ndarray
    w: np.ndarray
    last_dt: float = 0.0
    last_max_speed: float = 0.0


def initial_state(model: FlowModel, grid: Grid, u0, eps_reg: float = 0.0) -> PseudoPressureState:
    if isinstance(u0, np.ndarray):
        if u0.shape != (grid.nx, grid.ny):
            raise ValueError(f"initial field shape {u0.shape} does not match grid ({grid.nx}, {grid.ny})")
        u = u0.astype(np.float64, copy=True)
    else:
        u = materialize(u0, grid, t=0.0)
    if np.any(u < 0.0):
        raise ValueError("initial pseudo-pressure must be nonnegative")
    u = np.maximum(u, eps_reg)
    w = _upow(u, model.lam)
    return PseudoPressureState(t=0.0, u=u, w=w)


def _upow(u: np.ndarray, p: float) -> np.ndarray:
    if p == 1.0:
        return u.copy()
    return np.power(u, p)


# ---------------------------------------------------------------------------
# Manufactured solutions
# ---------------------------------------------------------------------------


class ManufacturedSolution:
    """A strictly positive exact profile u*(x, y, t) with symbolic derivatives."""

    def __init__(self, expr):
        if isinstance(expr, str):
            expr = FieldExpr.parse(expr)
        if not isinstance(expr, FieldExpr):
            raise TypeError("manufactured solution needs an expression")
        self.expr = expr
        self.ddx = expr.diff("x")
        self.ddy = expr.diff("y")
        self.ddt = expr.diff("t")
        self.ddxx = self.ddx.diff("x")
        self.ddxy = self.ddx.diff("y")
        self.ddyy = self.ddy.diff("y")

    def value(self, x, y, t, domain=None) -> np.ndarray:
        out = np.asarray(self.expr(x, y, t=t, domain=domain), dtype=np.float64)
        out = np.broadcast_to(out, np.broadcast(np.asarray(x), np.asarray(y)).shape).copy()
        if np.any(out <= 0.0):
            raise ValueError("manufactured solution must be strictly positive on the domain")
        return out

    def grad(self, x, y, t, domain=None):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        gx = np.broadcast_to(np.asarray(self.ddx(x, y, t=t, domain=domain), dtype=np.float64), shape)
        gy = np.broadcast_to(np.asarray(self.ddy(x, y, t=t, domain=domain), dtype=np.float64), shape)
        return gx.copy(), gy.copy()

    def dt(self, x, y, t, domain=None) -> np.ndarray:
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        out = np.asarray(self.ddt(x, y, t=t, domain=domain), dtype=np.float64)
        return np.broadcast_to(out, shape).copy()

    def second(self, x, y, t, domain=None):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        vals = []
        for e in (self.ddxx, self.ddxy, self.ddyy):
            out = np.asarray(e(x, y, t=t, domain=domain), dtype=np.float64)
            vals.append(np.broadcast_to(out, shape).copy())
        return tuple(vals)


# ---------------------------------------------------------------------------
# Face geometry cache
# ---------------------------------------------------------------------------


class _FaceCache:
    """Time-independent fields sampled at faces and cells for one (model, grid)."""

    def __init__(self, model: FlowModel, grid: Grid):
        self.model = model
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        x0, x1, y0, y1 = grid.domain.bounds
        xc, yc = grid.xc, grid.yc

        # Interior x-faces (nx-1, ny) then y-faces (nx, ny-1), flattened C-order.
        fx_x = np.broadcast_to((x0 + grid.hx * np.arange(1, nx))[:, None], (nx - 1, ny)).ravel()
        fx_y = np.broadcast_to(yc[None, :], (nx - 1, ny)).ravel()
        fy_x = np.broadcast_to(xc[:, None], (nx, ny - 1)).ravel()
        fy_y = np.broadcast_to((y0 + grid.hy * np.arange(1, ny))[None, :], (nx, ny - 1)).ravel()
        self.mx = fx_x.size
        self.my = fy_x.size
        self.xf = np.concatenate([fx_x, fy_x])
        self.yf = np.concatenate([fx_y, fy_y])
        self.coeffs = model.coeff_matrix(self.xf, self.yf)
        self.rstar = np.asarray(model.rstar(self.xf, self.yf), dtype=np.float64).ravel()

        # Boundary face midpoints (used only when a manufactured solution
        # prescribes the boundary flux directly).
        self.bxy = {side: grid.boundary_midpoints(side) for side in SIDES}
        bx = np.concatenate([self.bxy[s][0] for s in SIDES])
        by = np.concatenate([self.bxy[s][1] for s in SIDES])
        self.bcoeffs = model.coeff_matrix(bx, by)
        self.brstar = np.asarray(model.rstar(bx, by), dtype=np.float64).ravel()
        self.bx = bx
        self.by = by

        Xc, Yc = grid.cell_centers
        self.phi_cells = model.phi(Xc, Yc)
        weights = eval_weights(model, Xc, Yc)
        with np.errstate(divide="ignore"):
            self.log_w1_cells = np.log(weights.W1)
            self.log_phi_cells = np.log(self.phi_cells)

    def face_label(self, k: int) -> str:
        nx, ny = self.grid.nx, self.grid.ny
        if k < self.mx:
            i, j = divmod(k, ny)
            return f"x-face between cells ({i}, {j}) and ({i + 1}, {j})"
        k -= self.mx
        i, j = divmod(k, ny - 1)
        return f"y-face between cells ({i}, {j}) and ({i}, {j + 1})"


# ---------------------------------------------------------------------------
# Face flux assembly
# ---------------------------------------------------------------------------


def _invert_with_context(cache: _FaceCache, coeffs, zrot, yvec, tol, labeler):
    law = cache.model.law
    v = invert_F(law, coeffs, zrot, yvec, check=False)
    resid = eval_F(law, coeffs, zrot, v) - yvec
    rel = np.hypot(resid[:, 0], resid[:, 1]) / (1.0 + np.hypot(yvec[:, 0], yvec[:, 1]))
    if rel.size and float(rel.max()) > tol:
        k = int(np.argmax(rel))
        raise SolverError(
            f"flux inversion failed at {labeler(k)}: residual {float(rel[k]):.3e} "
            f"exceeds tol {tol:.1e}"
        )
    return v


def _interior_face_batch(cache: _FaceCache, u: np.ndarray, t: float, lam: float):
    """Face values and gradient+drift 2-vectors for all interior faces."""
    grid = cache.grid
    dudx, dudy = grid.gradient(u)

    ufx = 0.5 * (u[:-1, :] + u[1:, :])
    nfx = (u[1:, :] - u[:-1, :]) / grid.hx
    tfx = 0.5 * (dudy[:-1, :] + dudy[1:, :])

    ufy = 0.5 * (u[:, :-1] + u[:, 1:])
    nfy = (u[:, 1:] - u[:, :-1]) / grid.hy
    tfy = 0.5 * (dudx[:, :-1] + dudx[:, 1:])

    uf = np.concatenate([ufx.ravel(), ufy.ravel()])
    yvec = np.empty((uf.size, 2))
    yvec[: cache.mx, 0] = nfx.ravel()
    yvec[: cache.mx, 1] = tfx.ravel()
    yvec[cache.mx :, 0] = tfy.ravel()
    yvec[cache.mx :, 1] = nfy.ravel()

    zx, zy = cache.model.Z(cache.xf, cache.yf, t)
    drift = _upow(uf, 2.0 * lam)
    yvec[:, 0] += drift * zx
    yvec[:, 1] += drift * zy
    zrot = cache.rstar * _upow(uf, lam)
    return uf, yvec, zrot


def face_fluxes(
    model: FlowModel,
    grid: Grid,
    forcing: BoundaryForcing,
    u: np.ndarray,
    t: float,
    cache: _FaceCache | None = None,
    exact: ManufacturedSolution | None = None,
    tol: float = 1e-10,
):
    """Assemble the +x / +y face flux components on every face.

    Returns (Fx, Fy, max_speed).  Fx has shape (nx+1, ny); Fx[i, j] is the
    x-component of the flux at the face between cells (i-1, j) and (i, j),
    rows 0 and nx being the left/right boundary faces.  Fy is (nx, ny+1)
    with the analogous layout in y.  max_speed is the largest |flux
    component| over all faces.  Interior faces invert the constitutive law
    in one batch; boundary faces apply the prescribed flux
    -(psi1 + psi2 u**lam) against the outward normal, or the manufactured
    flux when ``exact`` is given.
    """
    if cache is None:
        cache = _FaceCache(model, grid)
    lam = model.lam
    nx, ny = grid.nx, grid.ny

    uf, yvec, zrot = _interior_face_batch(cache, u, t, lam)
    v = _invert_with_context(cache, cache.coeffs, zrot, yvec, tol, cache.face_label)

    Fx = np.empty((nx + 1, ny))
    Fy = np.empty((nx, ny + 1))
    Fx[1:nx, :] = v[: cache.mx, 0].reshape(nx - 1, ny)
    Fy[:, 1:ny] = v[cache.mx :, 1].reshape(nx, ny - 1)

    if exact is not None:
        bu = exact.value(cache.bx, cache.by, t, domain=grid.domain.bounds)
        bgx, bgy = exact.grad(cache.bx, cache.by, t, domain=grid.domain.bounds)
        bzx, bzy = model.Z(cache.bx, cache.by, t)
        bdrift = _upow(bu, 2.0 * lam)
        byvec = np.stack([bgx + bdrift * bzx, bgy + bdrift * bzy], axis=1)
        bzrot = cache.brstar * _upow(bu, lam)
        bv = _invert_with_context(
            cache, cache.bcoeffs, bzrot, byvec, tol, lambda k: f"boundary face #{k}"
        )
        o = 0
        for side in SIDES:
            m = cache.bxy[side][0].size
            seg = bv[o : o + m]
            o += m
            if side == "left":
                Fx[0, :] = seg[:, 0]
            elif side == "right":
                Fx[nx, :] = seg[:, 0]
            elif side == "bottom":
                Fy[:, 0] = seg[:, 1]
            else:
                Fy[:, ny] = seg[:, 1]
    else:
        for side in SIDES:
            psi1 = forcing.psi1_on(grid, side, t)
            psi2 = forcing.psi2_on(grid, side, t)
            if side == "left":
                val = psi1 + psi2 * _upow(u[0, :], lam)
                Fx[0, :] = val
            elif side == "right":
                val = psi1 + psi2 * _upow(u[nx - 1, :], lam)
                Fx[nx, :] = -val
            elif side == "bottom":
                val = psi1 + psi2 * _upow(u[:, 0], lam)
                Fy[:, 0] = val
            else:
                val = psi1 + psi2 * _upow(u[:, ny - 1], lam)
                Fy[:, ny] = -val

    max_speed = max(float(np.abs(Fx).max()), float(np.abs(Fy).max()))
    return Fx, Fy, max_speed


def _boundary_outflux(grid: Grid, Fx: np.ndarray, Fy: np.ndarray) -> float:
    """Boundary outflux:  the mass balance reads  d(mass)/dt = -outflux + source.

    The balance law gives mass' = contour integral of X . nu, and the boundary
    condition X . nu = -(psi1 + psi2 u**lam) identifies the outflux with
    int_G (psi1 + psi2 u**lam) ds = -(sum over faces of flux . outward nu)."""
    return -float(
        (Fx[-1, :].sum() - Fx[0, :].sum()) * grid.hy
        + (Fy[:, -1].sum() - Fy[:, 0].sum()) * grid.hx
    )


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def advance(
    model: FlowModel,
    grid: Grid,
    forcing: BoundaryForcing,
    state: PseudoPressureState,
    dt: float,
    *,
    eps_reg: float = 0.0,
    cache: _FaceCache | None = None,
    source_cells: np.ndarray | None = None,
    exact: ManufacturedSolution | None = None,
    tol: float = 1e-10,
):
    """One forward-Euler step.  Returns (new_state, outflux, floor_injection).

    outflux is the instantaneous boundary outflux used by this step (so the
    pre-floor mass update satisfies mass' = -outflux + source exactly up to
    round-off); floor_injection is the porosity-weighted mass added by
    clipping w at eps_reg**lam.
    """
    if cache is None:
        cache = _FaceCache(model, grid)
    lam = model.lam
    Fx, Fy, speed = face_fluxes(model, grid, forcing, state.u, state.t, cache, exact, tol)
    div = (Fx[1:, :] - Fx[:-1, :]) / grid.hx + (Fy[:, 1:] - Fy[:, :-1]) / grid.hy
    rhs = div if source_cells is None else div + source_cells
    w_new = state.w + dt * rhs / cache.phi_cells
    floor_w = eps_reg**lam if eps_reg > 0.0 else 0.0
    floored = np.maximum(w_new, floor_w)
    injection = float(np.sum((floored - w_new) * cache.phi_cells) * grid.cell_area)
    if lam == 1.0:
        u_new = floored.copy()
    else:
        u_new = np.power(floored, 1.0 / lam)
    new_state = PseudoPressureState(
        t=state.t + dt, u=u_new, w=floored, last_dt=dt, last_max_speed=speed
    )
    return new_state, _boundary_outflux(grid, Fx, Fy), injection


def stable_dt(
    model: FlowModel,
    grid: Grid,
    state: PseudoPressureState,
    cache: _FaceCache | None = None,
    *,
    eps_reg: float = 0.0,
) -> float:
    """Flux-sensitivity bound on the explicit step.

    A finite-difference probe of the normal-slot sensitivity s_f of each
    interior face flux gives the per-cell rate sum_f s_f / h_f**2 (both
    adjacent cells see the same face), converted from w to u through
    du/dw = u**(1-lam)/lam; the bound is min_c phi_c / rate_c, i.e. the
    spec's safety-free quotient of phi * area by the summed flux
    sensitivities.  Returns +inf when every sensitivity vanishes.
    """
    if cache is None:
        cache = _FaceCache(model, grid)
    lam = model.lam
    uf, yvec, zrot = _interior_face_batch(cache, state.u, state.t, lam)
    v0 = invert_F(model.law, cache.coeffs, zrot, yvec, check=False)
    mx = cache.mx
    base_n = np.concatenate([v0[:mx, 0], v0[mx:, 1]])
    delta = 1e-6 * (1.0 + np.abs(np.concatenate([yvec[:mx, 0], yvec[mx:, 1]])))
    y2 = yvec.copy()
    y2[:mx, 0] += delta[:mx]
    y2[mx:, 1] += delta[mx:]
    v1 = invert_F(model.law, cache.coeffs, zrot, y2, check=False)
    pert_n = np.concatenate([v1[:mx, 0], v1[mx:, 1]])
    sens = np.abs(pert_n - base_n) / delta

    nx, ny = grid.nx, grid.ny
    rate = np.zeros((nx, ny))
    sx = sens[:mx].reshape(nx - 1, ny) / grid.hx**2
    sy = sens[mx:].reshape(nx, ny - 1) / grid.hy**2
    rate[:-1, :] += sx
    rate[1:, :] += sx
    rate[:, :-1] += sy
    rate[:, 1:] += sy
    if lam != 1.0:
        ufloor = np.maximum(state.u, max(eps_reg, 1e-300))
        rate = rate * np.power(ufloor, 1.0 - lam) / lam
    rate_max = float((rate / cache.phi_cells).max())
    if rate_max <= 0.0:
        return np.inf
    return 1.0 / rate_max


# ---------------------------------------------------------------------------
# Trajectory and the main loop
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Snapshots plus per-sample diagnostic series from one run."""

    model: FlowModel
    grid: Grid
    forcing: BoundaryForcing
    config: SolverConfig
    times: np.ndarray
    snapshots: list
    diag: dict
    n_steps: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def alpha_key(self, alpha: float, kind: str) -> str:
        return f"{kind}[{alpha:.6g}]"


def _diag_sample(cache: _FaceCache, model: FlowModel, u: np.ndarray, alphas) -> dict:
    grid = cache.grid
    lam = model.lam
    a = model.law.a_exponent
    out = {"mass": float(np.sum(cache.phi_cells * _upow(u, lam)) * grid.cell_area)}
    if not alphas:
        return out
    with np.errstate(divide="ignore"):
        log_u = np.log(u)
    dudx, dudy = grid.gradient(u)
    with np.errstate(divide="ignore"):
        log_g = np.log(np.hypot(dudx, dudy))
    log1pu = np.log1p(u)
    for alpha in alphas:
        log_j = log_integral(grid, alpha * log_u + cache.log_phi_cells)
        log_e = log_integral(
            grid,
            (alpha - lam - 1.0) * log_u
            - 2.0 * lam * log1pu
            + (2.0 - a) * log_g
            + cache.log_w1_cells,
        )
        out[f"lp_norm[{alpha:.6g}]"] = float(np.exp(log_j / alpha)) if np.isfinite(log_j) else 0.0
        out[f"log_weighted_power[{alpha:.6g}]"] = float(log_j)
        out[f"log_grad_energy[{alpha:.6g}]"] = float(log_e)
    return out


def run(
    model: FlowModel,
    grid: Grid,
    u0,
    forcing: BoundaryForcing | None = None,
    config: SolverConfig | None = None,
) -> Trajectory:
    """March from u0 to t_end, recording snapshots and diagnostics.

    Diagnostic series are sampled at every accepted step (index-aligned with
    diag["t"]): porosity-weighted mass, instantaneous boundary outflux,
    applied source mass rate, per-step floor injection (attributed to the
    arrival sample), largest face speed, and per-alpha weighted norms with
    their log-domain powers and gradient-energy integrals.
    """
    if forcing is None:
        forcing = BoundaryForcing()
    if config is None:
        raise ValueError("a SolverConfig is required")
    cache = _FaceCache(model, grid)
    lam = model.lam
    eps_reg = config.resolved_eps_reg(lam)
    state = initial_state(model, grid, u0, eps_reg)
    exact = config.exact
    t_end = config.t_end
    snap_dt = config.resolved_snapshot_dt()
    tiny = 1e-12 * t_end

    def source_at(t: float) -> np.ndarray | None:
        if exact is not None:
            return manufactured_source(model, grid, exact, t)
        if config.source is not None:
            return materialize(config.source, grid, t=t)
        return None

    times = [0.0]
    snapshots = [state.u.copy()]
    diag_rows = []

    def record(t, sample, dt, outflux, source_mass, injection, speed):
        row = {"t": t, "dt": dt, "outflux": outflux, "source_mass": source_mass,
               "floor_injection": injection, "max_face_speed": speed}
        row.update(sample)
        diag_rows.append(row)

    src0 = source_at(0.0)
    Fx0, Fy0, speed0 = face_fluxes(model, grid, forcing, state.u, 0.0, cache, exact)
    record(
        0.0,
        _diag_sample(cache, model, state.u, config.alphas),
        0.0,
        _boundary_outflux(grid, Fx0, Fy0),
        0.0 if src0 is None else float(np.sum(src0) * grid.cell_area),
        0.0,
        speed0,
    )

    next_snap = snap_dt
    dt_probe = None
    steps_since_probe = 0
    n_steps = 0
    while state.t < t_end - tiny:
        if config.dt is not None:
            dt = config.dt
        else:
            if dt_probe is None or steps_since_probe >= config.probe_interval:
                bound = stable_dt(model, grid, state, cache, eps_reg=eps_reg)
                dt_probe = config.safety * bound
                steps_since_probe = 0
                if dt_probe < 1e-14 * t_end:
                    raise SolverError(
                        f"stable step {dt_probe:.3e} fell below 1e-14 * t_end at "
                        f"t = {state.t:.6g}; the problem is too stiff for the "
                        "explicit scheme (implicit integrators are out of scope)"
                    )
            dt = dt_probe
            steps_since_probe += 1
        boundary = min(next_snap, t_end)
        dt = min(dt, boundary - state.t)
        src = source_at(state.t)
        state, outflux, injection = advance(
            model, grid, forcing, state, dt,
            eps_reg=eps_reg, cache=cache, source_cells=src, exact=exact,
        )
        n_steps += 1
        record(
            state.t,
            _diag_sample(cache, model, state.u, config.alphas),
            dt,
            outflux,
            0.0 if src is None else float(np.sum(src) * grid.cell_area),
            injection,
            state.last_max_speed,
        )
        if state.t >= next_snap - tiny:
            times.append(state.t)
            snapshots.append(state.u.copy())
            while next_snap <= state.t + tiny:
                next_snap += snap_dt
        if n_steps >= config.max_steps:
            raise SolverError(f"step budget {config.max_steps} exhausted at t = {state.t:.6g}")

    if abs(times[-1] - state.t) > tiny:
        times.append(state.t)
        snapshots.append(state.u.copy())

    keys = list(diag_rows[0].keys())
    diag = {k: np.array([row.get(k, np.nan) for row in diag_rows]) for k in keys}
    return Trajectory(
        model=model, grid=grid, forcing=forcing, config=config,
        times=np.array(times), snapshots=snapshots, diag=diag, n_steps=n_steps,
    )


# ---------------------------------------------------------------------------
# Conservation and energy diagnostics
# ---------------------------------------------------------------------------


def mass_balance_residual(traj: Trajectory) -> dict:
    """Per-step mass balance check.

    raw_series[k]   = (mass[k+1] - mass[k]) / dt_k + outflux[k] - source[k]
    series[k]       = raw_series[k] - injection[k+1] / dt_k

    so the corrected series vanishes to round-off always, while the raw
    series exposes the recorded floor injections (and equals zero on closed
    runs without flooring).  The normalized maxima convert the rate
    residuals back to per-step mass defects (|r_k| dt_k) and scale by the
    largest mass, so they measure relative conservation independent of the
    step size.
    """
    t = traj.diag["t"]
    mass = traj.diag["mass"]
    out = traj.diag["outflux"]
    src = traj.diag["source_mass"]
    inj = traj.diag["floor_injection"]
    dt = np.diff(t)
    if np.any(dt <= 0.0):
        raise ValueError("diagnostic times must be strictly increasing")
    raw = (mass[1:] - mass[:-1]) / dt + out[:-1] - src[:-1]
    corrected = raw - inj[1:] / dt
    scale = max(float(np.abs(mass).max()), 1e-300)
    defects = np.abs(corrected) * dt
    raw_defects = np.abs(raw) * dt
    return {
        "raw_series": raw,
        "series": corrected,
        "max_normalized": float(defects.max()) / scale if raw.size else 0.0,
        "max_raw_normalized": float(raw_defects.max()) / scale if raw.size else 0.0,
        "scale": scale,
    }


def energy_identity_residual(
    traj: Trajectory, alpha: float, tol: float = 1e-10, discrete: bool = False
) -> dict:
    """Residual of the weighted power balance along the trajectory.

    For smooth runs without a volumetric source the balance

        dJ/dt + (alpha/lam) (alpha - lam) int u**(alpha-lam-1) X . grad u
              + (alpha/lam) int_G (psi1 u**(alpha-lam) + psi2 u**alpha) ds
        = 0,      J(t) = int phi u**alpha,

    should hold up to discretization error.  With discrete=False the
    interior and boundary terms are independent cell-centered quadratures,
    so the residual carries both the O(dt) stepping defect and an O(h**2)
    quadrature floor.  With discrete=True the terms are the scheme's own
    face sums (summation by parts of the update), which cancels the
    spatial part exactly and leaves the pure O(dt) convexity defect of
    forward Euler; this form needs snapshots at every step (forward
    differences in time).  Returns the residual series and its max
    normalized by the largest term magnitude.
    """
    if traj.config.source is not None or traj.config.exact is not None:
        raise ValueError("energy identity applies to source-free runs")
    if discrete:
        return _energy_residual_discrete(traj, alpha)
    model, grid, forcing = traj.model, traj.grid, traj.forcing
    lam = model.lam
    Xc, Yc = grid.cell_centers
    phi = model.phi(Xc, Yc)
    coeffs = model.coeff_matrix(Xc.ravel(), Yc.ravel())
    rstar = np.asarray(model.rstar(Xc.ravel(), Yc.ravel()), dtype=np.float64).ravel()

    times = traj.times
    J = np.array([float(np.sum(phi * np.power(u, alpha)) * grid.cell_area) for u in traj.snapshots])

    residuals = []
    scales = []
    for k in range(1, len(times) - 1):
        u = traj.snapshots[k]
        t = float(times[k])
        dJ = (J[k + 1] - J[k - 1]) / (times[k + 1] - times[k - 1])
        gx, gy = grid.gradient(u)
        zx, zy = model.Z(Xc, Yc, t)
        drift = _upow(u, 2.0 * lam)
        yvec = np.stack([(gx + drift * zx).ravel(), (gy + drift * zy).ravel()], axis=1)
        zrot = rstar * _upow(u.ravel(), lam)
        v = invert_F(model.law, coeffs, zrot, yvec, tol=tol)
        xdotg = v[:, 0].reshape(u.shape) * gx + v[:, 1].reshape(u.shape) * gy
        interior = (alpha / lam) * (alpha - lam) * float(
            np.sum(np.power(u, alpha - lam - 1.0) * xdotg) * grid.cell_area
        )
        boundary = 0.0
        for side in SIDES:
            psi1 = forcing.psi1_on(grid, side, t)
            psi2 = forcing.psi2_on(grid, side, t)
            if side == "left":
                ub = u[0, :]
            elif side == "right":
                ub = u[-1, :]
            elif side == "bottom":
                ub = u[:, 0]
            else:
                ub = u[:, -1]
            boundary += float(
                np.sum(psi1 * np.power(ub, alpha - lam) + psi2 * np.power(ub, alpha))
                * grid.boundary_measure(side)
            )
        boundary *= alpha / lam
        residuals.append(dJ + interior + boundary)
        scales.append(max(abs(dJ), abs(interior), abs(boundary), 1.0))
    residuals = np.array(residuals)
    scales = np.array(scales)
    return {
        "times": times[1:-1],
        "series": residuals,
        "max_normalized": float(np.abs(residuals / scales).max()) if residuals.size else 0.0,
    }


def _energy_residual_discrete(traj: Trajectory, alpha: float) -> dict:
    model, grid, forcing = traj.model, traj.grid, traj.forcing
    lam = model.lam
    cache = _FaceCache(model, grid)
    phi = cache.phi_cells
    times = traj.times
    p = alpha - lam

    J = np.array([float(np.sum(phi * np.power(u, alpha)) * grid.cell_area) for u in traj.snapshots])
    residuals = []
    scales = []
    for k in range(len(times) - 1):
        u = traj.snapshots[k]
        t = float(times[k])
        dt = float(times[k + 1] - times[k])
        Fx, Fy, _ = face_fluxes(model, grid, forcing, u, t, cache)
        up = np.power(u, p)
        dJ = (lam / alpha) * (J[k + 1] - J[k]) / dt
        interior = float(
            np.sum(Fx[1:-1, :] * (up[1:, :] - up[:-1, :])) * grid.hy
            + np.sum(Fy[:, 1:-1] * (up[:, 1:] - up[:, :-1])) * grid.hx
        )
        boundary = 0.0
        for side in SIDES:
            psi1 = forcing.psi1_on(grid, side, t)
            psi2 = forcing.psi2_on(grid, side, t)
            if side == "left":
                ub = u[0, :]
            elif side == "right":
                ub = u[-1, :]
            elif side == "bottom":
                ub = u[:, 0]
            else:
                ub = u[:, -1]
            boundary += float(
                np.sum(psi1 * np.power(ub, p) + psi2 * np.power(ub, alpha))
                * grid.boundary_measure(side)
            )
        residuals.append(dJ + interior + boundary)
        scales.append(max(abs(dJ), abs(interior), abs(boundary), 1e-300))
    residuals = np.array(residuals)
    scales = np.array(scales)
    return {
        "times": times[:-1],
        "series": residuals,
        "max_normalized": float(np.abs(residuals / scales).max()) if residuals.size else 0.0,
    }


# ---------------------------------------------------------------------------
# Manufactured-solution studies
# ---------------------------------------------------------------------------


def _spec_dx_dy(spec):
    """Symbolic x/y derivatives of a field spec, or None for callables."""
    if isinstance(spec, (int, float)):
        zero = FieldExpr.constant(0.0)
        return zero, zero
    if isinstance(spec, str):
        spec = FieldExpr.parse(spec)
    if isinstance(spec, FieldExpr):
        return spec.diff("x"), spec.diff("y")
    return None


def _div_flux_exact(model: FlowModel, exact: ManufacturedSolution, x, y, t: float, dom):
    """div X along the manufactured solution by implicit differentiation.

    Differentiating F(v) = g(c(x), |v|) v + z(x) J v = q(x) in x gives
    M v_x = q_x - (sum_k dc_k/dx |v|^{d_k}) v - dz/dx J v with
    M = g I + (g_s |v|) e e^T + z J (e the flux direction), and likewise
    in y; only (v_x)_1 + (v_y)_2 is assembled.  Requires expression (or
    constant) coefficient and porosity fields.
    """
    lam = model.lam
    law = model.law
    coeff_derivs = [_spec_dx_dy(c) for c in law.coefficients]
    phi_derivs = _spec_dx_dy(model.phi_tilde)
    if phi_derivs is None or any(d is None for d in coeff_derivs):
        raise ValueError("exact divergence route needs expression fields; use method='fd'")

    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    u = exact.value(x, y, t, domain=dom)
    ux, uy = exact.grad(x, y, t, domain=dom)
    uxx, uxy, uyy = exact.second(x, y, t, domain=dom)
    z1, z2 = model.Z(x, y, t)
    om2 = model.Omega**2

    drift = _upow(u, 2.0 * lam)
    ddrift = 2.0 * lam * _upow(u, 2.0 * lam - 1.0)
    q = np.stack([ux + drift * z1, uy + drift * z2], axis=1)
    qx1 = uxx + ddrift * ux * z1 - drift * om2
    qx2 = uxy + ddrift * ux * z2
    qy1 = uxy + ddrift * uy * z1
    qy2 = uyy + ddrift * uy * z2 - drift * om2

    coeffs = model.coeff_matrix(x, y)
    phi = model.phi(x, y)
    dphi_x = model.cbar * np.broadcast_to(
        np.asarray(phi_derivs[0](x, y, t=t, domain=dom), dtype=np.float64), x.shape
    )
    dphi_y = model.cbar * np.broadcast_to(
        np.asarray(phi_derivs[1](x, y, t=t, domain=dom), dtype=np.float64), x.shape
    )
    rstar = 2.0 * model.cbar * model.Omega / phi
    ulam = _upow(u, lam)
    zrot = rstar * ulam
    drstar_x = -rstar * dphi_x / phi
    drstar_y = -rstar * dphi_y / phi
    dulam = lam * _upow(u, lam - 1.0)
    dz_x = drstar_x * ulam + rstar * dulam * ux
    dz_y = drstar_y * ulam + rstar * dulam * uy

    v = invert_F(law, coeffs, zrot, q)
    v1, v2 = v[:, 0], v[:, 1]
    s = np.hypot(v1, v2)
    g = law.g(coeffs, s)
    spow = np.stack([np.where(s > 0.0, s, 0.0) ** d if d > 0.0 else np.ones_like(s)
                     for d in law.degrees], axis=1)
    gs_s = np.sum(coeffs * law.degrees[None, :] * spow, axis=1)  # g_s * s, finite at s = 0
    safe = np.where(s > 0.0, s, 1.0)
    e1 = np.where(s > 0.0, v1 / safe, 0.0)
    e2 = np.where(s > 0.0, v2 / safe, 0.0)

    det = g * g + g * gs_s + zrot * zrot
    A = g + gs_s * e2 * e2
    B = gs_s * e1 * e2 - zrot
    C = gs_s * e1 * e2 + zrot
    D = g + gs_s * e1 * e1

    dcoef_x = np.zeros_like(s)
    dcoef_y = np.zeros_like(s)
    for k, (dcx, dcy) in enumerate(coeff_derivs):
        cx = np.asarray(dcx(x, y, t=t, domain=dom), dtype=np.float64)
        cy = np.asarray(dcy(x, y, t=t, domain=dom), dtype=np.float64)
        dcoef_x = dcoef_x + cx * spow[:, k]
        dcoef_y = dcoef_y + cy * spow[:, k]

    rx1 = qx1 - dcoef_x * v1 + dz_x * v2
    rx2 = qx2 - dcoef_x * v2 - dz_x * v1
    ry1 = qy1 - dcoef_y * v1 + dz_y * v2
    ry2 = qy2 - dcoef_y * v2 - dz_y * v1

    dv1_dx = (A * rx1 - B * rx2) / det
    dv2_dy = (-C * ry1 + D * ry2) / det
    return dv1_dx + dv2_dy


def _div_flux_fd(model: FlowModel, exact: ManufacturedSolution, x, y, t: float, dom, h: float):
    """div X along the manufactured solution by fourth-order central stencils."""
    lam = model.lam
    xflat = np.asarray(x, dtype=np.float64).ravel()
    yflat = np.asarray(y, dtype=np.float64).ravel()
    m = xflat.size
    offsets = (-2.0 * h, -1.0 * h, 1.0 * h, 2.0 * h)
    xs = np.concatenate([xflat + d for d in offsets] + [xflat] * 4)
    ys = np.concatenate([yflat] * 4 + [yflat + d for d in offsets])

    uvals = exact.value(xs, ys, t, domain=dom)
    gx, gy = exact.grad(xs, ys, t, domain=dom)
    zx, zy = model.Z(xs, ys, t)
    drift = _upow(uvals, 2.0 * lam)
    yvec = np.stack([gx + drift * zx, gy + drift * zy], axis=1)
    coeffs = model.coeff_matrix(xs, ys)
    zrot = np.asarray(model.rstar(xs, ys), dtype=np.float64).ravel() * _upow(uvals, lam)
    v = invert_F(model.law, coeffs, zrot, yvec)

    X1 = v[: 4 * m, 0].reshape(4, m)
    X2 = v[4 * m :, 1].reshape(4, m)
    d1 = (X1[0] - 8.0 * X1[1] + 8.0 * X1[2] - X1[3]) / (12.0 * h)
    d2 = (X2[0] - 8.0 * X2[1] + 8.0 * X2[2] - X2[3]) / (12.0 * h)
    return d1 + d2


def manufactured_source(
    model: FlowModel,
    grid: Grid,
    exact: ManufacturedSolution,
    t: float,
    method: str = "auto",
    fd_step: float = 1e-4,
) -> np.ndarray:
    """Volumetric source f = phi (u*^lam)_t - div X(x, u*, grad u* + u*^{2 lam} Z).

    The time derivative is symbolic.  The flux divergence comes from
    implicit differentiation of the constitutive inversion (method
    "exact"; one inversion per point) or from fourth-order central
    differences of the exact flux (method "fd"; eight stencil inversions
    per point).  "auto" prefers the exact route and falls back to the
    stencil when a field is a raw callable without symbolic derivatives.
    """
    lam = model.lam
    dom = grid.domain.bounds
    Xc, Yc = grid.cell_centers
    if method not in ("auto", "exact", "fd"):
        raise ValueError(f"unknown divergence method {method!r}")
    if method == "fd":
        div = _div_flux_fd(model, exact, Xc, Yc, t, dom, fd_step)
    else:
        try:
            div = _div_flux_exact(model, exact, Xc, Yc, t, dom)
        except ValueError:
            if method == "exact":
                raise
            div = _div_flux_fd(model, exact, Xc, Yc, t, dom, fd_step)

    phi = model.phi(Xc, Yc)
    uc = exact.value(Xc, Yc, t, domain=dom)
    wt = lam * _upow(uc, lam - 1.0) * exact.dt(Xc, Yc, t, domain=dom)
    return phi * wt - div.reshape(grid.nx, grid.ny)


def _l2_phi_error(model: FlowModel, grid: Grid, u: np.ndarray, uref: np.ndarray) -> float:
    Xc, Yc = grid.cell_centers
    phi = model.phi(Xc, Yc)
    return float(np.sqrt(np.sum(phi * (u - uref) ** 2) * grid.cell_area))


def mms_study(
    model: FlowModel,
    exact,
    grid_sizes: Sequence[int] = (16, 32, 64, 128),
    t_end: float = 0.05,
    domain=None,
    safety: float = 0.4,
) -> dict:
    """Spatial convergence of the scheme against a manufactured solution.

    Runs the same manufactured problem on each grid (adaptive steps, so the
    O(dt) error scales like the O(h^2) spatial error) and reports the final
    weighted L2 errors and observed orders between consecutive grids.
    """
    ms = exact if isinstance(exact, ManufacturedSolution) else ManufacturedSolution(exact)
    if domain is None:
        from .geometry import PorousDomain

        domain = PorousDomain()
    probe = Grid(domain, max(grid_sizes), max(grid_sizes))
    for t in (0.0, 0.5 * t_end, t_end):
        ms.value(*probe.cell_centers, t, domain=domain.bounds)

    errors = []
    for n in grid_sizes:
        grid = Grid(domain, int(n), int(n))
        config = SolverConfig(t_end=t_end, safety=safety, snapshot_dt=t_end, exact=ms)
        u0 = ms.value(*grid.cell_centers, 0.0, domain=domain.bounds)
        traj = run(model, grid, u0, BoundaryForcing(), config)
        uref = ms.value(*grid.cell_centers, float(traj.times[-1]), domain=domain.bounds)
        errors.append(_l2_phi_error(model, grid, traj.final, uref))
    orders = [
        float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)
    ]
    return {"sizes": list(grid_sizes), "errors": errors, "orders": orders}


def mms_temporal_study(
    model: FlowModel,
    exact,
    grid_n: int = 32,
    t_end: float = 0.02,
    dt0: float | None = None,
    levels: int = 3,
    domain=None,
) -> dict:
    """Temporal self-convergence under step halving at a fixed grid.

    Fixed-grid runs at dt0, dt0/2, dt0/4, ... are compared pairwise in the
    weighted L2 norm; first-order stepping gives successive differences that
    halve, i.e. observed orders near 1.  dt0 defaults to half the initial
    stability bound.
    """
    ms = exact if isinstance(exact, ManufacturedSolution) else ManufacturedSolution(exact)
    if domain is None:
        from .geometry import PorousDomain

        domain = PorousDomain()
    grid = Grid(domain, grid_n, grid_n)
    u0 = ms.value(*grid.cell_centers, 0.0, domain=domain.bounds)
    if dt0 is None:
        cache = _FaceCache(model, grid)
        state = initial_state(model, grid, u0, 0.0)
        dt0 = 0.5 * stable_dt(model, grid, state, cache)
    n0 = max(1, int(np.ceil(t_end / dt0)))
    finals = []
    dts = []
    for k in range(levels + 1):
        nsteps = n0 * 2**k
        dt = t_end / nsteps
        config = SolverConfig(t_end=t_end, dt=dt, snapshot_dt=t_end, exact=ms)
        traj = run(model, grid, u0, BoundaryForcing(), config)
        finals.append(traj.final)
        dts.append(dt)
    diffs = [
        _l2_phi_error(model, grid, finals[i], finals[i + 1]) for i in range(levels)
    ]
    orders = [float(np.log2(diffs[i] / diffs[i + 1])) for i in range(levels - 1)]
    return {"dts": dts, "diffs": diffs, "orders": orders}


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------


def write_outputs(traj: Trajectory, outdir: str) -> list:
    """Write snap_<index>.csv (one per snapshot) and diag.csv under outdir.

    Snapshot files carry the time and grid shape in a two-row header and the
    cell values flattened row-major (index = i * ny + j).  All floats are
    shortest round-trip reprs, so identical runs produce identical bytes.
    """
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for idx, (t, u) in enumerate(zip(traj.times, traj.snapshots)):
        path = os.path.join(outdir, f"snap_{idx}.csv")
        with open(path, "w", newline="") as fh:
            wtr = csv.writer(fh)
            wtr.writerow(["t", "nx", "ny"])
            wtr.writerow([repr(float(t)), traj.grid.nx, traj.grid.ny])
            wtr.writerow(["u"])
            for v in u.ravel(order="C"):
                wtr.writerow([repr(float(v))])
        paths.append(path)

    diag_path = os.path.join(outdir, "diag.csv")
    keys = list(traj.diag.keys())
    n = len(traj.diag["t"])
    with open(diag_path, "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(keys)
        for i in range(n):
            wtr.writerow([repr(float(traj.diag[k][i])) for k in keys])
    paths.append(diag_path)
    return paths


def read_snapshot(path: str):
    """Read one snap_<index>.csv back as (t, u) with u shaped (nx, ny)."""
    with open(path, newline="") as fh:
        rdr = csv.reader(fh)
        header = next(rdr)
        if header[:3] != ["t", "nx", "ny"]:
            raise ValueError(f"{path} is not a snapshot file")
        t_s, nx_s, ny_s = next(rdr)[:3]
        t, nx, ny = float(t_s), int(nx_s), int(ny_s)
        next(rdr)  # value column header
        vals = np.array([float(row[0]) for row in rdr])
    if vals.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {vals.size}")
    return t, vals.reshape(nx, ny)


def read_diagnostics(path: str) -> dict:
    """Read diag.csv back as a dict of float arrays keyed by column name."""
    with open(path, newline="") as fh:
        rdr = csv.reader(fh)
        keys = next(rdr)
        cols = {k: [] for k in keys}
        for row in rdr:
            for k, v in zip(keys, row):
                cols[k].append(float(v))
    return {k: np.array(v) for k, v in cols.items()}
