"""Admissible exponent families for the weighted energy and sup-norm estimates.

Everything downstream of the flux bounds is governed by a small family of
exponents derived from

    n   : space dimension,
    a   : flux degeneracy exponent a = d_K/(1+d_K) in (0, 1),
    lam : pseudo-pressure exponent in (0, 1],

together with tunable parameters

    r1          : interpolation exponent in (n/(n+2-a), 1) with r1*(2-a) > 1,
    r           : boundary-weight exponent, large enough (see below),
    kappa_tilde : sup-norm iteration ratio in (1, sqrt(1 + rstar/2)),
    p1..p5      : Young/Hoelder splitting exponents (> 1, constrained),
    alpha0      : base power of the iteration ladder.

``compute_exponents`` validates every admissibility constraint and returns an
:class:`ExponentBundle`; violations raise :class:`ParameterError` naming each
failed constraint.  The bundle exposes the derived exponents both as plain
numbers and as functions of the running power ``alpha`` where applicable, plus
the infinite-product limits of the sup-norm iteration ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "ParameterError",
    "ExponentBundle",
    "MoserLimits",
    "compute_exponents",
    "check_identities",
    "ladder_L0",
    "random_admissible",
]


def ladder_L0(alpha0: float, kappa_tilde: float) -> float:
    """Closed form of sum_{j>=0} (j+1)/(kappa_tilde**j alpha0)."""
    return 1.0 / (alpha0 * (1.0 - 1.0 / kappa_tilde) ** 2)


class ParameterError(ValueError):
    """Raised when a requested exponent family violates admissibility."""


def _conjugate(p: float) -> float:
    return p / (p - 1.0)


@dataclass(frozen=True)
class MoserLimits:
    """Limits of the sup-norm iteration ladder (infinite products/sums).

    ``mu_tilde``/``nu_tilde`` are the products of nu1(beta_j)/beta_j and
    nu2(beta_j)/beta_j; ``G`` is the tail product from k=1; ``L0`` is
    sum (j+1)/beta_j; ``omega* `` are the final exponent weights.  ``n_terms``
    records how many ladder rungs were needed for the partial products to
    stabilize to ``tol``.
    """

    L0: float
    mu_tilde: float
    nu_tilde: float
    G: float
    omega: float
    omega0: float
    omega1: float
    omega2: float
    omega3: float
    n_terms: int
    tol: float


@dataclass(frozen=True)
class ExponentBundle:
    """Validated exponent family; construct via :func:`compute_exponents`."""

    n: int
    a: float
    lam: float
    r1: float
    r: float
    kappa_tilde: float
    p1: float
    p2: float
    p3: float
    p4: float
    p5: float
    alpha0: float

    # ------------------------------------------------------------------
    # primitive combinations
    # ------------------------------------------------------------------

    @property
    def p_deg(self) -> float:
        """Degenerate diffusion power p = 2 - a."""
        return 2.0 - self.a

    @property
    def s_low(self) -> float:
        """Low-order power s = lam + 1."""
        return self.lam + 1.0

    @property
    def beta_weight(self) -> float:
        """Weight growth exponent beta = 2 lam."""
        return 2.0 * self.lam

    @property
    def rstar(self) -> float:
        return 1.0 + (2.0 - self.a) / self.n - 1.0 / self.r1

    @property
    def rtilde(self) -> float:
        return ((2.0 - self.a) * self.r - 1.0 + self.lam + self.a) / (1.0 - self.a)

    @property
    def p6(self) -> float:
        return self.p5 * (self.p3 * (2.0 - self.a) - 1.0) / (1.0 - self.a)

    @property
    def q1(self) -> float:
        return _conjugate(self.p1)

    @property
    def q2(self) -> float:
        return _conjugate(self.p2)

    @property
    def q3(self) -> float:
        return _conjugate(self.p3)

    @property
    def q4(self) -> float:
        return _conjugate(self.p4)

    @property
    def q5(self) -> float:
        return _conjugate(self.p5)

    @property
    def beta1(self) -> float:
        """First ladder power beta_1 = kappa_tilde * alpha0."""
        return self.kappa_tilde * self.alpha0

    # ------------------------------------------------------------------
    # space-time iteration exponents
    # ------------------------------------------------------------------

    @property
    def gamma_iter(self) -> float:
        """chi_* exponent of the single-rung estimates."""
        return 2.0 * max(3.0 - 2.0 * self.a, 1.0 / (self.p3 * (2.0 - self.a) - 1.0))

    @property
    def h1(self) -> float:
        return self.lam + 1.0

    @property
    def h2(self) -> float:
        return max(
            0.0,
            self.lam * (5.0 - 4.0 * self.a) - 1.0,
            (self.a + 3.0 * self.lam - 1.0) / (self.p3 * (2.0 - self.a) - 1.0),
        )

    @property
    def h3(self) -> float:
        return max(self.h2, 1.0 - self.a - self.lam)

    @property
    def mu_bar(self) -> float:
        return 1.0 + self.rstar / 2.0 + min(1.0 - self.r1, 2.0 * self.lam / (self.lam + 1.0))

    # ------------------------------------------------------------------
    # envelope exponents (L^alpha differential inequality)
    # ------------------------------------------------------------------

    @property
    def theta_ss(self) -> float:
        """Uniform bound theta_** for the interpolation fractions."""
        return 1.0 / (1.0 + self.rstar / 2.0)

    @property
    def mu_star(self) -> float:
        th = self.theta_ss
        first = (self.r + th * (self.a + 3.0 * self.lam)) / (1.0 - th)
        second = (self.rtilde + th * (self.a + 3.0 * self.lam)) / (1.0 - th) + (
            2.0 * self.lam / ((1.0 - th) * (1.0 - self.a))
        )
        return max(first, second)

    @property
    def gamma_star(self) -> float:
        th = self.theta_ss
        frac = th / (1.0 - th)
        return max(
            2.0 * (3.0 - 2.0 * self.a) + 4.0 * (2.0 - self.a) * frac,
            2.0 / (1.0 - self.a) + 2.0 * (2.0 - self.a) / (1.0 - self.a) * frac,
        )

    @property
    def alpha_star(self) -> float:
        """Minimum power for the envelope differential inequality."""
        two_over = 1.0 + 2.0 / self.rstar
        return max(
            self.lam + 1.0,
            2.0 * self.lam * self.r1 / (1.0 - self.r1),
            2.0 * (2.0 - self.a) * (self.r + self.a + self.lam - 1.0) / (self.rstar * (1.0 - self.a)),
            2.0 * self.lam * (2.0 + self.rstar) / ((1.0 - self.a) * self.rstar) + 2.0 / self.rstar,
            2.0 * self.r * two_over + 4.0 * self.lam / self.rstar,
            2.0 * self.rtilde * two_over + 4.0 * self.lam / self.rstar,
        )

    # ------------------------------------------------------------------
    # alpha-dependent quantities
    # ------------------------------------------------------------------

    def interp_theta(self, alpha: float, rr: float) -> float:
        """Interpolation fraction Theta(alpha, rr)."""
        return (alpha + 2.0 * rr) / (alpha * (1.0 + self.rstar) + 2.0 * (1.0 - self.a - self.lam))

    def theta(self, alpha: float) -> float:
        return self.interp_theta(alpha, self.r)

    def theta_tilde(self, alpha: float) -> float:
        return self.interp_theta(alpha, self.rtilde)

    def mu1(self, alpha: float) -> float:
        th = self.theta(alpha)
        return (self.r + th * (self.a + self.lam - 1.0)) / (1.0 - th)

    def mu1_tilde(self, alpha: float) -> float:
        th = self.theta_tilde(alpha)
        return (self.rtilde + th * (self.a + self.lam - 1.0)) / (1.0 - th)

    def beta_star(self, alpha: float) -> float:
        th = self.theta_tilde(alpha)
        return 2.0 * self.lam / ((1.0 - self.a) * (1.0 - th) * (1.0 + self.mu1_tilde(alpha) / alpha))

    def kappa(self, alpha: float) -> float:
        """Power gain per ladder rung: kappa(alpha) = 1 + rstar/2 + (1-lam-a)/alpha."""
        return 1.0 + self.rstar / 2.0 + (1.0 - self.lam - self.a) / alpha

    def theta0(self, alpha: float) -> float:
        return 1.0 / (1.0 + self.rstar * alpha / (2.0 * (alpha - self.s_low + self.p_deg)))

    def theta0_hat(self, alpha: float) -> float:
        return self.theta0(alpha) - 2.0 * self.lam / (self.kappa(alpha) * alpha)

    def nu1(self, alpha: float) -> float:
        return (alpha - self.h1) / (1.0 + 1.0 / (alpha * (1.0 + self.rstar / 2.0)))

    def nu2(self, alpha: float) -> float:
        return (alpha + self.h3) * (1.0 + 3.0 * self.lam / alpha)

    # ------------------------------------------------------------------
    # iteration ladder
    # ------------------------------------------------------------------

    def ladder_power(self, j: int | np.ndarray) -> float | np.ndarray:
        """beta_j = kappa_tilde**j * alpha0."""
        return self.kappa_tilde ** np.asarray(j, dtype=np.float64) * self.alpha0

    def ladder_kappa_margin(self, j: int | np.ndarray) -> float | np.ndarray:
        """kappa(beta_j) beta_j - beta_{j+2}; must be positive for the ladder."""
        bj = self.ladder_power(j)
        return bj * (1.0 + self.rstar / 2.0 - self.kappa_tilde**2) + (1.0 - self.lam - self.a)

    def ladder_partial_products(self, n_terms: int) -> dict:
        """Partial sums/products of the ladder limits, one entry per rung count."""
        j = np.arange(n_terms, dtype=np.float64)
        bj = self.alpha0 * self.kappa_tilde**j
        log_r = np.log1p(-self.h1 / bj) - np.log1p(1.0 / (bj * (1.0 + self.rstar / 2.0)))
        log_s = np.log1p(self.h3 / bj) + np.log1p(3.0 * self.lam / bj)
        L0_partial = np.cumsum((j + 1.0) / bj)
        mu_partial = np.exp(np.cumsum(log_r))
        nu_partial = np.exp(np.cumsum(log_s))
        # G excludes the j=0 factor
        G_partial = np.exp(np.cumsum(log_s) - log_s[0])
        return {
            "j": j.astype(int),
            "beta_j": bj,
            "L0": L0_partial,
            "mu_tilde": mu_partial,
            "nu_tilde": nu_partial,
            "G": G_partial,
        }

    def moser_limits(self, tol: float = 1e-14, max_terms: int = 4000) -> MoserLimits:
        """Converged ladder limits with the final exponent weights."""
        n_terms = 16
        prev = None
        while n_terms <= max_terms:
            parts = self.ladder_partial_products(n_terms)
            cur = (parts["L0"][-1], parts["mu_tilde"][-1], parts["nu_tilde"][-1], parts["G"][-1])
            if prev is not None and all(
                abs(c - p) <= tol * (1.0 + abs(c)) for c, p in zip(cur, prev)
            ):
                break
            prev = cur
            n_terms *= 2
        L0, mu_t, nu_t, G = cur
        omega = G * L0
        return MoserLimits(
            L0=L0,
            mu_tilde=mu_t,
            nu_tilde=nu_t,
            G=G,
            omega=omega,
            omega0=(2.0 + self.gamma_iter * self.mu_bar) * omega,
            omega1=(1.0 + self.mu_bar) * omega,
            omega2=self.mu_bar * omega,
            omega3=(2.0 + self.mu_bar) * omega,
            n_terms=len(parts["j"]),
            tol=tol,
        )

    # ------------------------------------------------------------------
    # constraint bookkeeping
    # ------------------------------------------------------------------

    @property
    def alpha0_min(self) -> float:
        """Minimum admissible base power for the full sup-norm chain."""
        kt = self.kappa_tilde
        terms = [
            (1.0 - self.lam - self.a) / (kt - 1.0),
            self.p2 * (self.lam * (5.0 - 4.0 * self.a) - 1.0) / (kt - self.p2),
            self.p5 * (self.a + 3.0 * self.lam - 1.0) / ((1.0 - self.a) * (kt - self.p6)),
            2.0 * self.lam / (1.0 - self.r1),
            (self.lam + self.a - 1.0) / (1.0 + self.rstar / 2.0 - kt**2),
            2.0 * (2.0 - self.a) * (self.r + self.a + self.lam - 1.0) / (kt * self.rstar * (1.0 - self.a)),
            (2.0 * self.lam * (2.0 + self.rstar) / ((1.0 - self.a) * self.rstar) + 2.0 / self.rstar) / kt,
            (2.0 * max(self.r, self.rtilde) * (1.0 + 2.0 / self.rstar) + 4.0 * self.lam / self.rstar) / kt,
        ]
        return max(terms)

    def violations(self) -> list[str]:
        """All violated admissibility constraints (empty when admissible)."""
        out: list[str] = []
        n, a, lam = self.n, self.a, self.lam
        if n < 2:
            out.append(f"n >= 2 (got n={n})")
        if not 0.0 < a < 1.0:
            out.append(f"a in (0, 1) (got a={a})")
        if not 0.0 < lam <= 1.0:
            out.append(f"lam in (0, 1] (got lam={lam})")
        if out:
            return out

        r1_lo = n / (n + 2.0 - a)
        if not r1_lo < self.r1 < 1.0:
            out.append(f"r1 in (n/(n+2-a), 1) = ({r1_lo:.6g}, 1) (got r1={self.r1})")
        if not self.r1 * (2.0 - a) > 1.0:
            out.append(f"r1*(2-a) > 1 (got {self.r1 * (2.0 - a):.6g})")
        if out:
            return out

        r_lo = max(0.0, lam * (5.0 - 4.0 * a) - 1.0, (1.0 - a - lam) / (2.0 - a))
        if not self.r > r_lo:
            out.append(f"r > max{{0, lam(5-4a)-1, (1-a-lam)/(2-a)}} = {r_lo:.6g} (got r={self.r})")

        kt_hi = math.sqrt(1.0 + self.rstar / 2.0)
        if not 1.0 < self.kappa_tilde < kt_hi:
            out.append(
                f"kappa_tilde in (1, sqrt(1+rstar/2)) = (1, {kt_hi:.6g}) (got {self.kappa_tilde})"
            )
        for name, p in (("p1", self.p1), ("p2", self.p2), ("p3", self.p3), ("p4", self.p4), ("p5", self.p5)):
            if not p > 1.0:
                out.append(f"{name} > 1 (got {p})")
        if out:
            return out

        kt = self.kappa_tilde
        if not self.p1 < kt:
            out.append(f"p1 < kappa_tilde (got p1={self.p1}, kappa_tilde={kt})")
        if not self.p2 < kt:
            out.append(f"p2 < kappa_tilde (got p2={self.p2}, kappa_tilde={kt})")
        if not self.p3 * self.p4 < kt:
            out.append(f"p3*p4 < kappa_tilde (got {self.p3 * self.p4:.6g}, kappa_tilde={kt})")
        if not self.p6 < kt:
            out.append(f"p6 = p5(p3(2-a)-1)/(1-a) < kappa_tilde (got p6={self.p6:.6g}, kappa_tilde={kt})")
        if out:
            return out

        a0_min = self.alpha0_min
        if not self.alpha0 > a0_min:
            out.append(f"alpha0 > {a0_min:.6g} (got alpha0={self.alpha0})")
        elif not self.beta1 > self.alpha_star:
            # implied by the alpha0 bound; kept as a defensive check
            out.append(
                f"beta1 = kappa_tilde*alpha0 > alpha_star = {self.alpha_star:.6g} (got beta1={self.beta1:.6g})"
            )
        return out


def compute_exponents(
    n: int = 2,
    a: float = 0.5,
    lam: float = 1.0,
    r1: float = 0.95,
    r: float = 2.5,
    kappa_tilde: float = 1.1605,
    p1: float = 1.05,
    p2: float = 1.01,
    p3: float = 1.01,
    p4: float = 1.05,
    p5: float = 1.01,
    alpha0: float | None = None,
    alpha0_safety: float = 1.05,
) -> ExponentBundle:
    """Build and validate an exponent bundle.

    ``alpha0=None`` selects ``alpha0_safety`` times the minimum admissible base
    power (also keeping ``beta1`` above ``alpha_star`` by the same factor).
    Raises :class:`ParameterError` listing every violated constraint.

    The default point is tuned so that the ladder products stabilize to 1e-8
    within 120 rungs: the iteration ratio ``kappa_tilde`` sits close to its
    ceiling ``sqrt(1 + rstar/2)``, with ``r1`` large to push that ceiling up.
    """
    probe = ExponentBundle(
        n=int(n), a=float(a), lam=float(lam), r1=float(r1), r=float(r),
        kappa_tilde=float(kappa_tilde), p1=float(p1), p2=float(p2), p3=float(p3),
        p4=float(p4), p5=float(p5), alpha0=float("inf"),
    )
    pre = probe.violations()
    if pre:
        raise ParameterError("inadmissible exponent family: " + "; ".join(pre))
    if alpha0 is None:
        alpha0 = alpha0_safety * max(probe.alpha0_min, probe.alpha_star / probe.kappa_tilde)
    bundle = ExponentBundle(
        n=int(n), a=float(a), lam=float(lam), r1=float(r1), r=float(r),
        kappa_tilde=float(kappa_tilde), p1=float(p1), p2=float(p2), p3=float(p3),
        p4=float(p4), p5=float(p5), alpha0=float(alpha0),
    )
    bad = bundle.violations()
    if bad:
        raise ParameterError("inadmissible exponent family: " + "; ".join(bad))
    return bundle


def check_identities(bundle: ExponentBundle, alpha: float) -> dict:
    """Residuals of the two structural exponent identities at a given power.

    * (1 - theta0(alpha)) * kappa(alpha) == rstar/2
    * beta_star(alpha) * (1 - theta_tilde(alpha)) * (1 + mu1_tilde(alpha)/alpha)
      == 2 lam / (1 - a)
    """
    lhs1 = (1.0 - bundle.theta0(alpha)) * bundle.kappa(alpha)
    res1 = abs(lhs1 - bundle.rstar / 2.0)
    lhs2 = bundle.beta_star(alpha) * (1.0 - bundle.theta_tilde(alpha)) * (
        1.0 + bundle.mu1_tilde(alpha) / alpha
    )
    res2 = abs(lhs2 - 2.0 * bundle.lam / (1.0 - bundle.a))
    return {"kappa_theta0_residual": res1, "beta_star_residual": res2}


def random_admissible(rng: np.random.Generator) -> ExponentBundle:
    """Draw a random admissible exponent family (for identity fuzzing)."""
    for _ in range(1000):
        n = int(rng.integers(2, 5))
        a = float(rng.uniform(0.05, 0.95))
        lam = float(rng.uniform(0.05, 1.0))
        r1_lo = max(n / (n + 2.0 - a), 1.0 / (2.0 - a))
        r1 = float(rng.uniform(r1_lo + 0.02 * (1.0 - r1_lo), 1.0 - 0.02 * (1.0 - r1_lo)))
        rstar = 1.0 + (2.0 - a) / n - 1.0 / r1
        if rstar <= 1e-3:
            continue
        r_lo = max(0.0, lam * (5.0 - 4.0 * a) - 1.0, (1.0 - a - lam) / (2.0 - a))
        r = r_lo + float(rng.uniform(0.05, 3.0))
        kt_hi = math.sqrt(1.0 + rstar / 2.0)
        kt = float(rng.uniform(1.0 + 0.1 * (kt_hi - 1.0), 1.0 + 0.9 * (kt_hi - 1.0)))
        p3_hi = min(kt, (kt * (1.0 - a) + 1.0) / (2.0 - a))
        if p3_hi <= 1.0:
            continue
        p3 = float(rng.uniform(1.0 + 0.05 * (p3_hi - 1.0), 1.0 + 0.9 * (p3_hi - 1.0)))
        p5_hi = kt * (1.0 - a) / (p3 * (2.0 - a) - 1.0)
        if p5_hi <= 1.0:
            continue
        p5 = float(rng.uniform(1.0 + 0.05 * (p5_hi - 1.0), 1.0 + 0.9 * (p5_hi - 1.0)))
        p1 = float(rng.uniform(1.0 + 0.05 * (kt - 1.0), 1.0 + 0.9 * (kt - 1.0)))
        p2 = float(rng.uniform(1.0 + 0.05 * (kt - 1.0), 1.0 + 0.9 * (kt - 1.0)))
        p4_hi = kt / p3
        if p4_hi <= 1.0:
            continue
        p4 = float(rng.uniform(1.0 + 0.05 * (p4_hi - 1.0), 1.0 + 0.9 * (p4_hi - 1.0)))
        try:
            return compute_exponents(
                n=n, a=a, lam=lam, r1=r1, r=r, kappa_tilde=kt,
                p1=p1, p2=p2, p3=p3, p4=p4, p5=p5,
                alpha0=None, alpha0_safety=float(rng.uniform(1.01, 2.0)),
            )
        except ParameterError:
            continue
    raise RuntimeError("failed to draw an admissible exponent family")
