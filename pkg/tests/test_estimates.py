"""Certification-layer tests: fitted growth constants, envelopes, ladders."""

import json
import math

import numpy as np
import pytest

import forchflow
from forchflow.constitutive import (
    FlowModel,
    ForchheimerLaw,
    FluidEOS,
    PorousDomain,
    RotationGravity,
)
from forchflow.estimates import (
    CertificationReport,
    DivergentCapacityError,
    bundle_summary,
    certify_sup_bound,
    derive_iteration_constants,
    fit_energy_growth,
    fit_stability,
    growth_exponent_margin,
    iteration_schedule,
    norm_envelope,
    sequence_bound,
)
from forchflow.exponents import ParameterError, compute_exponents
from forchflow.functionals import KFunctionals, materialize_fields
from forchflow.geometry import BoundaryForcing, Grid
from forchflow.harness import FunctionCorpus, estimate_constants
from forchflow import solver
from forchflow.solver import SolverConfig


def make_model(omega=1.0, grav=0.5):
    law = ForchheimerLaw(degrees=(0.0, 1.0), coefficients=("1.0", "1.0"))
    return FlowModel(
        law=law,
        eos=FluidEOS.slightly_compressible(0.0025),
        rot=RotationGravity(omega_tilde=omega, gravity_tilde=grav),
        phi_tilde="0.5",
        domain=PorousDomain(),
    )


INFLOW = BoundaryForcing(
    psi1="-0.5", psi2="0.4", gamma1_sides=("left",), gamma2_sides=("right",)
)


def run_case(omega=1.0, n=24, t_end=2e-5, max_u0=1.25, forced=True, zero=False):
    """March a cosine-bump initial state, optionally with boundary inflow."""
    model = make_model(omega)
    grid = Grid(model.domain, n, n)
    X, Y = grid.cell_centers
    if zero:
        u0 = np.zeros((n, n))
    else:
        u0 = (max_u0 / 1.25) * (1.0 + 0.25 * np.cos(math.pi * X) * np.cos(math.pi * Y))
    forcing = INFLOW if forced else BoundaryForcing()
    config = SolverConfig(t_end=t_end, snapshot_dt=t_end / 10.0)
    return solver.run(model, grid, u0, forcing, config)


@pytest.fixture(scope="module")
def bundle():
    return compute_exponents()


@pytest.fixture(scope="module")
def forced_24():
    return run_case(omega=1.0, n=24)


@pytest.fixture(scope="module")
def forced_32():
    return run_case(omega=1.0, n=32)


@pytest.fixture(scope="module")
def forced_24_omega0():
    return run_case(omega=0.0, n=24)


@pytest.fixture(scope="module")
def forced_24_omega2():
    return run_case(omega=2.0, n=24)


@pytest.fixture(scope="module")
def closed_super():
    # decaying closed run whose norm starts above 1: nontrivial envelope
    return run_case(omega=1.0, n=24, max_u0=1.2, forced=False)


@pytest.fixture(scope="module")
def closed_sub():
    return run_case(omega=2.0, n=24, max_u0=0.9, forced=False)


@pytest.fixture(scope="module")
def zero_run():
    return run_case(n=16, zero=True, forced=False)


@pytest.fixture(scope="module")
def cal_cbar(bundle, forced_24, forced_32):
    """Growth constant calibrated on the forced pair, with a 1.1 safety."""
    fits = [
        fit_energy_growth(forced_24, bundle, skip_initial=2),
        fit_energy_growth(forced_32, bundle, skip_initial=2),
    ]
    return 1.1 * max(f.cbar for f in fits)


@pytest.fixture(scope="module")
def constants():
    return estimate_constants(FunctionCorpus.generate(404, 60))


@pytest.fixture(scope="module")
def sched(bundle):
    return iteration_schedule(bundle, sigma=0.5, horizon=2e-5)


@pytest.fixture(scope="module")
def sweep(bundle, closed_super, closed_sub, cal_cbar):
    cases = [
        ("super-eps2", closed_super, 2e-6),
        ("super-eps4", closed_super, 4e-6),
        ("sub-eps2", closed_sub, 2e-6),
        ("sub-eps4", closed_sub, 4e-6),
    ]
    return certify_sup_bound(cases, bundle, cal_cbar)


# ---------------------------------------------------------------------------
# Derived ladder constants
# ---------------------------------------------------------------------------


class TestDerivedConstants:
    def formula(self, c5, c6, c7, a, lam, p3, c_z):
        c0 = 2.0 ** (a - 1.0)
        c1 = max(1.0, (2.0 + 2.0 ** (2.0 * (lam + 1.0) * (1.0 - a) + 1.0) / c0) * c_z ** (2.0 - a))
        c2 = max(
            c1,
            c5 ** (1.0 / p3),
            (4.0 ** (3.0 + lam) * (c6 * p3) ** (2.0 - a)) ** (1.0 / (p3 * (2.0 - a) - 1.0)),
            4.0 * lam,
        )
        c8 = 36.0 * c2 / lam
        c9 = 144.0 * c2
        c10 = 3.0 * 2.0 ** (11.0 + 2.0 * lam) * max(1.0, c7 ** (2.0 - a)) * max(c8, c9) ** 2.5
        return c8, c9, c10

    def test_matches_direct_formula(self, constants, bundle):
        model = make_model()
        c_z = model.Ggrav + model.domain.max_radius
        out = derive_iteration_constants(constants, bundle, c_z)
        c8, c9, c10 = self.formula(
            constants.c5, constants.c6, constants.c7, bundle.a, bundle.lam, bundle.p3, c_z
        )
        assert out.c8 == pytest.approx(c8, rel=1e-14)
        assert out.c9 == pytest.approx(c9, rel=1e-14)
        assert out.c10 == pytest.approx(c10, rel=1e-14)

    def test_all_exceed_one(self, constants, bundle):
        out = derive_iteration_constants(constants, bundle, 0.01)
        assert out.c8 > 1.0 and out.c9 > 1.0 and out.c10 > 1.0

    def test_preserves_estimated_constants(self, constants, bundle):
        out = derive_iteration_constants(constants, bundle, 1.5)
        assert out.c3 == constants.c3
        assert out.c5 == constants.c5
        assert out.c7 == constants.c7
        assert out.corpus_hash == constants.corpus_hash

    def test_metadata_records_inputs(self, constants, bundle):
        out = derive_iteration_constants(constants, bundle, 1.5)
        meta = out.metadata["iteration_constants"]
        assert meta["c_z"] == 1.5
        assert meta["p3"] == bundle.p3
        assert meta["ctilde2"] >= meta["ctilde1"] >= 1.0

    def test_monotone_in_drift_bound(self, constants, bundle):
        lo = derive_iteration_constants(constants, bundle, 1.0)
        hi = derive_iteration_constants(constants, bundle, 10.0)
        assert hi.c10 >= lo.c10

    def test_rejects_nonpositive_drift_bound(self, constants, bundle):
        with pytest.raises(ParameterError, match="c_z"):
            derive_iteration_constants(constants, bundle, 0.0)


# ---------------------------------------------------------------------------
# Energy growth fit
# ---------------------------------------------------------------------------


class TestEnergyFit:
    def test_requires_alpha_above_threshold(self, forced_24, bundle):
        with pytest.raises(ParameterError, match="alpha_star"):
            fit_energy_growth(forced_24, bundle, alpha=50.0)

    def test_zero_solution_fits_zero(self, zero_run, bundle):
        fit = fit_energy_growth(zero_run, bundle)
        assert fit.cbar == 0.0
        assert all(r == 0.0 for r in fit.ratios)

    def test_forced_run_fits_positive(self, forced_24, bundle):
        fit = fit_energy_growth(forced_24, bundle, skip_initial=2)
        assert fit.cbar > 0.0
        assert fit.skip_initial == 2
        assert fit.argmax_time in fit.times
        assert fit.metadata["grid"] == [24, 24]

    def test_initial_layer_excluded_from_fit(self, forced_24, bundle):
        fit = fit_energy_growth(forced_24, bundle, skip_initial=2)
        # the one-sided start-up quotient dwarfs the fitted maximum
        assert fit.ratios[0] > 2.0 * fit.cbar
        assert fit.cbar == max(fit.ratios[2:])

    def test_ratio_matches_direct_assembly(self, closed_super, bundle):
        # plain-float recomputation of one interior ratio on the closed run
        fit = fit_energy_growth(closed_super, bundle)
        traj = closed_super
        model, grid = traj.model, traj.grid
        fields = materialize_fields(model, grid)
        alpha = bundle.beta1
        lam, a = model.lam, model.law.a_exponent
        chi = model.chi_star
        area = grid.cell_area
        w1 = np.exp(fields.log_w1)
        i = 3

        def j_at(k):
            return float(np.sum(fields.phi * traj.snapshots[k] ** alpha) * area)

        u = traj.snapshots[i]
        gx, gy = grid.gradient(u)
        grad = np.hypot(gx, gy)
        integ = u ** (alpha - lam - 1.0) * (1.0 + u) ** (-2.0 * lam) * grad ** (2.0 - a) * w1
        i0 = float(np.sum(integ) * area)
        coef = alpha * (alpha - lam) / (2.0 ** (3.0 - a) * lam * chi**2)
        dj = (j_at(i + 1) - j_at(i - 1)) / (traj.times[i + 1] - traj.times[i - 1])
        rhs = chi**bundle.gamma_star * ((1.0 + j_at(i)) ** (1.0 + bundle.mu_star / alpha) + 1.0)
        assert fit.ratios[i] == pytest.approx((dj + coef * i0) / rhs, rel=1e-9)

    def test_skip_validation(self, forced_24, bundle):
        with pytest.raises(ValueError, match="nonnegative"):
            fit_energy_growth(forced_24, bundle, skip_initial=-1)
        with pytest.raises(ValueError, match="snapshots"):
            fit_energy_growth(forced_24, bundle, skip_initial=len(forced_24.times) - 1)

    def test_divergent_capacity_aborts_naming_index(self, forced_24, bundle):
        bad = KFunctionals(
            log_values=(0.0, math.inf, 0.0, math.inf, 0.0, 0.0, 0.0),
            alpha=bundle.beta1,
        )
        with pytest.raises(DivergentCapacityError, match="K1, K3"):
            fit_energy_growth(forced_24, bundle, kfuncs=bad)

    def test_refinement_stability(self, forced_24, forced_32, bundle):
        f24 = fit_energy_growth(forced_24, bundle, skip_initial=2)
        f32 = fit_energy_growth(forced_32, bundle, skip_initial=2)
        stats = fit_stability([f24, f32])
        assert stats["ratio"] < 1.25
        assert stats["min"] > 0.0

    def test_rotation_stability(self, forced_24, forced_24_omega0, forced_24_omega2, bundle):
        fits = [
            fit_energy_growth(t, bundle, skip_initial=2)
            for t in (forced_24_omega0, forced_24, forced_24_omega2)
        ]
        assert fit_stability(fits)["ratio"] < 1.25

    def test_stability_of_all_zero_fits(self, zero_run, bundle):
        f = fit_energy_growth(zero_run, bundle)
        assert fit_stability([f, f]) == {
            "min": 0.0, "max": 0.0, "ratio": 1.0, "variation": 0.0,
        }

    def test_stability_mixed_zero_is_infinite(self, zero_run, forced_24, bundle):
        fz = fit_energy_growth(zero_run, bundle)
        ff = fit_energy_growth(forced_24, bundle, skip_initial=2)
        assert fit_stability([fz, ff])["ratio"] == math.inf

    def test_to_dict_round_trip(self, forced_24, bundle):
        fit = fit_energy_growth(forced_24, bundle, skip_initial=2)
        blob = json.dumps(fit.to_dict())
        back = json.loads(blob)
        assert back["cbar"] == fit.cbar
        assert back["skip_initial"] == 2


# ---------------------------------------------------------------------------
# Norm envelope
# ---------------------------------------------------------------------------


class TestEnvelope:
    def test_delta_starts_at_one_and_decreases(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar)
        assert env.delta[0] == 1.0
        diffs = np.diff(env.delta)
        assert np.all(diffs <= 0.0)
        assert env.delta[-1] > 0.0

    def test_margins_nonnegative_on_disjoint_run(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar)
        assert env.admissible
        assert min(env.margins) >= 0.0

    def test_norm_above_one_is_still_enveloped(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar)
        # the initial norm genuinely exceeds 1, so the bound is not the
        # trivial "norm below the unit weight" case
        assert env.log_norm[0] > 0.0
        assert env.log_bound[0] >= env.log_norm[0]

    def test_closed_run_has_affine_delta(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar)
        # no boundary forcing: the defect mass is identically 1, so delta is
        # affine in t
        second = np.diff(env.delta, n=2)
        slope = (env.delta[-1] - env.delta[0]) / (env.times[-1] - env.times[0])
        assert slope < 0.0
        assert np.max(np.abs(second)) <= 1e-9 * abs(env.delta[-1] - env.delta[0])

    def test_delta_formula(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar)
        drain = (
            2.0 * bundle.mu_star * env.chi_star**bundle.gamma_star * cal_cbar
            / env.alpha
        ) * math.exp((bundle.mu_star / env.alpha) * env.log_v0)
        t_last = env.times[-1]
        assert env.delta[-1] == pytest.approx(1.0 - drain * t_last, rel=1e-12)

    def test_zero_growth_constant_freezes_envelope(self, closed_sub, bundle):
        env = norm_envelope(closed_sub, bundle, 0.0)
        assert env.smallness_budget == math.inf
        assert all(d == 1.0 for d in env.delta)
        assert env.log_bound[0] == env.log_bound[-1]

    def test_rejects_negative_growth_constant(self, closed_sub, bundle):
        with pytest.raises(ValueError, match="nonnegative"):
            norm_envelope(closed_sub, bundle, -1.0)

    def test_zero_solution_margins_infinite(self, zero_run, bundle, cal_cbar):
        env = norm_envelope(zero_run, bundle, cal_cbar)
        assert all(v == -math.inf for v in env.log_norm)
        assert all(m == math.inf for m in env.margins)

    def test_unweighted_comparison_path(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar, eta=100.0)
        assert env.eta == 100.0
        assert env.eta_factor > 0.0
        np.testing.assert_allclose(
            np.asarray(env.log_bound_eta),
            math.log(env.eta_factor) + np.asarray(env.log_bound),
            rtol=1e-12,
        )

    def test_unweighted_needs_eta_below_alpha(self, closed_super, bundle, cal_cbar):
        with pytest.raises(ParameterError):
            norm_envelope(closed_super, bundle, cal_cbar, eta=bundle.beta1)

    def test_budget_exhaustion_reports_largest_time(self, forced_24, bundle, cal_cbar):
        # amplitude above 1 with inflow: the initial value term is enormous,
        # so the smallness window ends inside the horizon
        env = norm_envelope(forced_24, bundle, cal_cbar)
        assert not env.admissible
        assert env.mass_integral > env.smallness_budget
        t_cross = env.largest_admissible_t
        assert 0.0 < t_cross < env.times[-1]
        assert any(d < 0.0 for d in env.delta)
        assert any(b == math.inf for b in env.log_bound)

    def test_anchoring_skips_adjustment_layer(self, forced_24, bundle, cal_cbar):
        env = norm_envelope(forced_24, bundle, cal_cbar, start_index=2)
        assert env.start_index == 2
        assert env.anchor_time == forced_24.times[2]
        assert env.times == tuple(forced_24.times[2:])
        assert env.delta[0] == 1.0

    def test_anchor_validation(self, forced_24, bundle, cal_cbar):
        with pytest.raises(ValueError, match="start_index"):
            norm_envelope(forced_24, bundle, cal_cbar, start_index=len(forced_24.times))

    def test_csv_rows(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar, eta=50.0)
        header, rows = env.to_rows()
        assert header[0] == "t"
        assert len(rows) == len(env.times)
        assert all(len(row) == len(header) for row in rows)
        bound_col = header.index("bound")
        assert rows[0][bound_col] == pytest.approx(math.exp(env.log_bound[0]))

    def test_to_dict_json_safe(self, closed_super, bundle, cal_cbar):
        env = norm_envelope(closed_super, bundle, cal_cbar)
        blob = json.loads(json.dumps(env.to_dict()))
        assert blob["admissible"] is True
        assert blob["delta"][0] == 1.0


# ---------------------------------------------------------------------------
# Ladder schedule
# ---------------------------------------------------------------------------


class TestIterationSchedule:
    def test_products_match_bundle_limits(self, sched, bundle):
        lim = bundle.moser_limits()
        assert sched.mu_tilde == pytest.approx(lim.mu_tilde, rel=1e-9)
        assert sched.nu_tilde == pytest.approx(lim.nu_tilde, rel=1e-9)
        assert sched.g_product == pytest.approx(lim.G, rel=1e-9)
        assert sched.omega == pytest.approx(lim.omega, rel=1e-9)
        for name in ("omega0", "omega1", "omega2", "omega3"):
            assert getattr(sched, name) == pytest.approx(getattr(lim, name), rel=1e-9)

    def test_products_ordered(self, sched):
        assert sched.mu_tilde < 1.0 < sched.nu_tilde
        assert sched.g_product > 1.0

    def test_l0_closed_form(self, sched, bundle):
        kt = bundle.kappa_tilde
        assert sched.l0 == pytest.approx(1.0 / (bundle.alpha0 * (1.0 - 1.0 / kt) ** 2), rel=1e-14)

    def test_ladder_powers_and_nodes(self, sched, bundle):
        kt = bundle.kappa_tilde
        assert sched.beta[0] == pytest.approx(bundle.alpha0)
        assert sched.beta[5] == pytest.approx(bundle.alpha0 * kt**5, rel=1e-12)
        assert sched.t_nodes[0] == 0.0
        assert sched.t_nodes[3] == pytest.approx(0.5 * 2e-5 * (1.0 - 0.125))
        assert all(np.diff(sched.t_nodes) > 0.0)

    def test_chain_margins_all_positive(self, sched, bundle):
        assert len(sched.chain_margins) == 51
        assert min(sched.chain_margins) > 0.0
        for j in (0, 7, 50):
            assert sched.chain_margins[j] == pytest.approx(
                float(bundle.ladder_kappa_margin(j)), rel=1e-12
            )

    def test_products_stabilize(self, sched):
        assert sched.stabilized
        assert sched.truncation_gap < 1e-10
        assert sched.tail_bound < 1e-8
        tight = iteration_schedule(
            compute_exponents(), sigma=0.5, horizon=2e-5, product_tol=1e-12
        )
        assert tight.mu_tilde == pytest.approx(sched.mu_tilde, abs=1e-10)
        assert tight.truncation_j > sched.truncation_j

    def test_cap_flags_unstabilized_products(self, bundle):
        capped = iteration_schedule(
            bundle, sigma=0.5, horizon=2e-5, product_cap=10
        )
        assert not capped.stabilized
        assert capped.truncation_j == 10

    def test_binding_threshold_named(self, bundle):
        with pytest.raises(ParameterError, match="ladder gap"):
            iteration_schedule(bundle, sigma=0.5, horizon=2e-5, alpha0=100.0)

    def test_window_validation(self, bundle):
        with pytest.raises(ParameterError, match="sigma"):
            iteration_schedule(bundle, sigma=1.0, horizon=2e-5)
        with pytest.raises(ParameterError, match="horizon"):
            iteration_schedule(bundle, sigma=0.5, horizon=0.0)

    def test_upper_prefactor_formula(self, bundle, constants):
        model = make_model()
        c_z = model.Ggrav + model.domain.max_radius
        cons = derive_iteration_constants(constants, bundle, c_z)
        sched = iteration_schedule(bundle, sigma=0.5, horizon=2e-5, c10=cons.c10)
        expect = (
            2.0 ** (1.0 + bundle.mu_bar)
            * cons.c10
            * (bundle.kappa_tilde * bundle.alpha0) ** (6.0 + 5.0 / (2.0 * (1.0 - bundle.a)))
        ) ** sched.omega
        assert sched.upper_prefactor == pytest.approx(expect, rel=1e-9)
        assert sched.upper_prefactor > 1.0

    def test_json_round_trip(self, sched):
        blob = json.loads(json.dumps(sched.to_dict()))
        assert blob["stabilized"] is True
        assert blob["min_chain_margin"] > 0.0


# ---------------------------------------------------------------------------
# Generic recursion bound
# ---------------------------------------------------------------------------


def geometric_family(seed):
    rng = np.random.default_rng(seed)
    base = rng.uniform(200.0, 400.0)
    growth = rng.uniform(1.05, 1.3)
    c_r = rng.uniform(1.0, 3.0)
    c_s = rng.uniform(1.0, 6.0)
    drift = rng.uniform(0.0, 2.0)
    a_factor = 10.0 ** rng.uniform(0.0, 3.0)
    y0 = 10.0 ** rng.uniform(-3.0, 2.0)
    kappa = lambda j: base * growth**j
    return {
        "kappa": kappa,
        "r_low": lambda j: kappa(j) - c_r,
        "s_high": lambda j: kappa(j) + c_s,
        "omega": lambda j: 1.0 + drift * (j + 1),
        "a_factor": a_factor,
        "y0": y0,
    }


def simulate_recursion(fam, n_steps=120):
    """Log-domain iteration of the recursion at equality (worst growth)."""
    log_y = math.log(fam["y0"]) if fam["y0"] > 0.0 else -math.inf
    log_a = math.log(fam["a_factor"])
    out = [log_y]
    for j in range(n_steps):
        kj = fam["kappa"](j)
        log_y = (fam["omega"](j) / kj) * log_a + (1.0 / kj) * np.logaddexp(
            fam["r_low"](j) * log_y, fam["s_high"](j) * log_y
        )
        out.append(float(log_y))
    return out


class TestSequenceBound:
    def test_zero_start_bounds_to_zero(self):
        fam = geometric_family(0)
        res = sequence_bound(
            0.0, fam["kappa"], fam["r_low"], fam["s_high"], fam["omega"], fam["a_factor"]
        )
        assert res.bound == 0.0
        assert res.log_bound == -math.inf

    def test_unit_gamma_has_unit_window_factor(self):
        # s_j = kappa_j exactly: every gamma factor is 1, so G = 1 and the
        # bound reduces to (2A)^alpha_bar max(y0^beta_bar, y0)
        kappa = lambda j: 2.0 ** (j + 1)
        res = sequence_bound(
            3.0,
            kappa,
            lambda j: kappa(j) * (1.0 - 2.0 ** (-(j + 1))),
            kappa,
            lambda j: 1.0,
            2.5,
        )
        assert res.g_factor == 1.0
        assert res.gamma_bar == pytest.approx(1.0, rel=1e-12)
        assert res.alpha_bar == pytest.approx(1.0, rel=1e-9)
        beta_bar = math.exp(sum(math.log1p(-(2.0 ** (-(j + 1)))) for j in range(80)))
        assert res.beta_bar == pytest.approx(beta_bar, rel=1e-9)
        expect = (2.0 * 2.5) ** res.alpha_bar * max(3.0**res.beta_bar, 3.0)
        assert res.bound == pytest.approx(expect, rel=1e-9)

    def test_window_factor_from_transient_gammas(self):
        # gammas run 2, 2, then drop below 1: the best window multiplies the
        # two early factors but must start at j >= 1, catching only one
        kappa = lambda j: 4.0 * 2.0**j

        def s_high(j):
            if j in (0, 1):
                return 2.0 * kappa(j)
            return kappa(j) * (1.0 + 2.0 ** (-j))

        res = sequence_bound(
            1.0, kappa, lambda j: kappa(j) * 0.999**(j + 1) if j < 2 else kappa(j) - 1.0,
            s_high, lambda j: 1.0, 1.0, tol=1e-12,
        )
        assert res.g_factor == pytest.approx(
            2.0 * math.exp(sum(math.log1p(2.0 ** (-j)) for j in range(2, 200))),
            rel=1e-6,
        )

    def test_parameter_validation(self):
        fam = geometric_family(1)
        with pytest.raises(ParameterError, match="A must be"):
            sequence_bound(1.0, fam["kappa"], fam["r_low"], fam["s_high"], fam["omega"], 0.5)
        with pytest.raises(ParameterError, match="y0"):
            sequence_bound(-1.0, fam["kappa"], fam["r_low"], fam["s_high"], fam["omega"], 2.0)
        with pytest.raises(ParameterError, match="kappa_0"):
            sequence_bound(1.0, lambda j: 0.0, fam["r_low"], fam["s_high"], fam["omega"], 2.0)
        with pytest.raises(ParameterError, match="r_0 <= s_0"):
            sequence_bound(1.0, fam["kappa"], lambda j: 5.0, lambda j: 4.0, fam["omega"], 2.0)
        with pytest.raises(ParameterError, match="omega_0"):
            sequence_bound(1.0, fam["kappa"], fam["r_low"], fam["s_high"], lambda j: 0.5, 2.0)

    def test_divergent_series_raises(self):
        with pytest.raises(ParameterError, match="did not stabilize"):
            sequence_bound(
                1.0, lambda j: 1.0, lambda j: 1.0, lambda j: 1.0, lambda j: 1.0, 2.0,
                cap=500,
            )

    def test_fuzzed_recursions_dominated(self):
        worst = math.inf
        for seed in range(200):
            fam = geometric_family(seed)
            res = sequence_bound(
                fam["y0"], fam["kappa"], fam["r_low"], fam["s_high"],
                fam["omega"], fam["a_factor"],
            )
            trail = simulate_recursion(fam)[-20:]
            limsup = max(trail)
            margin = res.log_bound - limsup
            worst = min(worst, margin)
            assert limsup <= res.log_bound + 1e-9, f"seed {seed}: {limsup} > {res.log_bound}"
        assert worst < math.inf

    def test_json_round_trip(self):
        fam = geometric_family(7)
        res = sequence_bound(
            fam["y0"], fam["kappa"], fam["r_low"], fam["s_high"], fam["omega"], fam["a_factor"]
        )
        blob = json.loads(json.dumps(res.to_dict()))
        assert blob["bound"] == res.bound


# ---------------------------------------------------------------------------
# Sup-norm sweep certification
# ---------------------------------------------------------------------------


class TestSupCertification:
    def test_all_runs_admissible_with_positive_ratios(self, sweep):
        assert all(r.admissible for r in sweep.runs)
        assert all(r.ratio > 0.0 for r in sweep.runs)
        assert sweep.chat > 0.0

    def test_prefactor_spread_is_stable(self, sweep):
        assert sweep.spread < 2.0

    def test_smaller_eps_grows_shape(self, sweep):
        by_label = {r.label: r for r in sweep.runs}
        assert by_label["super-eps2"].log_shape > by_label["super-eps4"].log_shape

    def test_shape_formula(self, sweep, bundle, closed_super, cal_cbar):
        lim = bundle.moser_limits()
        run = next(r for r in sweep.runs if r.label == "super-eps4")
        env = norm_envelope(closed_super, bundle, cal_cbar)
        expect = (
            lim.omega0 * math.log(run.chi_star)
            + lim.omega1 * math.log1p(run.horizon)
            - lim.omega2 * math.log(run.eps)
            + lim.nu_tilde * float(np.logaddexp(0.0, run.log_u0_norm))
            - (lim.nu_tilde / bundle.mu_star) * math.log(env.delta[-1])
            + lim.omega2 * run.log_psi
        )
        assert run.log_shape == pytest.approx(expect, rel=1e-12)
        assert run.delta_horizon == pytest.approx(env.delta[-1], rel=1e-12)

    def test_window_validation(self, bundle, closed_sub, cal_cbar):
        with pytest.raises(ParameterError, match="eps"):
            certify_sup_bound([("bad", closed_sub, 0.0)], bundle, cal_cbar)
        with pytest.raises(ParameterError, match="eps"):
            certify_sup_bound([("bad", closed_sub, 1.0)], bundle, cal_cbar)

    def test_inadmissible_run_excluded(self, bundle, forced_24, closed_sub, cal_cbar):
        cert = certify_sup_bound(
            [("hot", forced_24, 2e-6), ("ok", closed_sub, 2e-6)], bundle, cal_cbar
        )
        hot = next(r for r in cert.runs if r.label == "hot")
        assert not hot.admissible
        assert hot.ratio is None
        assert hot.largest_admissible_t is not None
        ok = next(r for r in cert.runs if r.label == "ok")
        assert cert.chat == ok.ratio

    def test_zero_run_has_zero_ratio(self, bundle, zero_run, cal_cbar):
        cert = certify_sup_bound([("zero", zero_run, 2e-6)], bundle, cal_cbar)
        assert cert.runs[0].sup_u == 0.0
        assert cert.runs[0].ratio == 0.0
        assert cert.chat == 0.0

    def test_deterministic(self, bundle, closed_sub, cal_cbar):
        a = certify_sup_bound([("x", closed_sub, 2e-6)], bundle, cal_cbar)
        b = certify_sup_bound([("x", closed_sub, 2e-6)], bundle, cal_cbar)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_growth_margin_formula(self):
        m = growth_exponent_margin(1.0, 1.01, 1.5, 0.5)
        assert m == pytest.approx(0.5 * math.log(1.5) - math.log(1.01), rel=1e-12)
        with pytest.raises(ValueError, match="factor_ratio"):
            growth_exponent_margin(1.0, 1.0, 0.9, 0.5)
        with pytest.raises(ValueError, match="positive"):
            growth_exponent_margin(0.0, 1.0, 1.5, 0.5)

    def test_rotation_growth_within_shape_factor(self, bundle, cal_cbar, closed_sub):
        # doubling chi - 1 must not grow the measured sup beyond chi^omega0
        lim = bundle.moser_limits()
        base = closed_sub
        varied = run_case(omega=4.0, n=24, max_u0=0.9, forced=False)
        sup = lambda t: max(float(np.max(u)) for u in t.snapshots)
        factor = varied.model.chi_star / base.model.chi_star
        margin = growth_exponent_margin(sup(base), sup(varied), factor, lim.omega0)
        assert margin >= 0.0


# ---------------------------------------------------------------------------
# Structural invariants and the report container
# ---------------------------------------------------------------------------


class TestInvariants:
    def test_alpha_star_nondecreasing_in_r_and_lam(self):
        lattice = [2.1, 2.5, 3.0, 3.5]
        stars = [compute_exponents(r=r).alpha_star for r in lattice]
        assert all(b >= a for a, b in zip(stars, stars[1:]))
        lam_lattice = [0.85, 0.95, 1.0]
        stars_lam = [compute_exponents(lam=v).alpha_star for v in lam_lattice]
        assert all(b >= a for a, b in zip(stars_lam, stars_lam[1:]))

    def test_product_limits_ordered(self, bundle):
        lim = bundle.moser_limits()
        assert lim.mu_tilde < lim.nu_tilde


class TestReport:
    def make_report(self, bundle):
        rep = CertificationReport(
            config={"grid": 24, "seed": 1}, exponents=bundle_summary(bundle)
        )
        rep.add_criterion("fit-stability", True, 0.22, "refinement ratio 1.03")
        rep.add_criterion("envelope", True, 0.089)
        return rep

    def test_passed_aggregates(self, bundle):
        rep = self.make_report(bundle)
        assert rep.passed
        rep.add_criterion("sup-spread", False, -0.5, "spread exceeded 2")
        assert not rep.passed

    def test_serialization_and_version(self, bundle):
        rep = self.make_report(bundle)
        blob = rep.to_dict()
        assert blob["schema"] == "forchflow.certification/1"
        assert blob["tool_version"] == forchflow.__version__
        assert blob["config"]["seed"] == 1
        text = json.dumps(blob)
        assert "timestamp" not in text and "date" not in text

    def test_byte_identical_reports(self, bundle):
        a = json.dumps(self.make_report(bundle).to_dict(), sort_keys=True)
        b = json.dumps(self.make_report(bundle).to_dict(), sort_keys=True)
        assert a == b

    def test_margin_must_be_numeric(self, bundle):
        rep = self.make_report(bundle)
        with pytest.raises(TypeError):
            rep.add_criterion("bad", True, None)

    def test_bundle_summary_fields(self, bundle):
        summary = bundle_summary(bundle)
        assert summary["beta1"] == bundle.beta1
        assert summary["alpha_star"] == bundle.alpha_star
        assert summary["p"] == [1.05, 1.01, 1.01, 1.05, 1.01, bundle.p6]
