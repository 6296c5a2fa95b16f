"""Novelty detection for curves: B-spline smoothing, robust functional
priors, and a Gibbs sampler whose atoms are (mean curve, pointwise noise)
pairs.

Known classes carry an informative prior built from the training set
(mean curve from robust spline coefficients, noise curve from the untrimmed
residuals); the novelty base measure is hierarchical over spline
coefficients with independent inverse-gamma noise at every grid point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import (
    DimensionMismatch,
    GridMismatch,
    InvalidKnots,
    RankDeficientBasis,
    SingularSubset,
)
from .model import (
    GammaPrior,
    alpha_beta_to_zeta,
    stick_breaking,
    truncation_level,
    xi_values,
    zeta_to_alpha_beta,
)
from .robust import McdConfig, fast_mcd, mrcd
from .sampler import (
    ChainOutput,
    _label_swap_sweep,
    _sample_allocations,
    _stick_posterior_counts,
    update_gamma,
)

_NOISE_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class CurveSet:
    """Curves evaluated on a common strictly increasing grid."""

    grid: np.ndarray
    values: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float).ravel()
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.values.shape[1] != self.grid.size:
            raise DimensionMismatch("values must have one column per grid point")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("curves contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int).ravel()
            if self.labels.size != self.values.shape[0]:
                raise DimensionMismatch("one label per curve required")

    @property
    def n_curves(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.grid.size


@dataclass(frozen=True)
class BasisSpec:
    """Uniform clamped B-spline basis: ``n_basis`` functions of ``order``
    (order = degree + 1) with equally spaced interior knots over the grid."""

    n_basis: int = 100
    order: int = 5

    def __post_init__(self):
        if self.order < 1:
            raise InvalidKnots("spline order must be >= 1")
        if self.n_basis < self.order:
            raise InvalidKnots("need at least `order` basis functions")

    def knot_vector(self, lo: float, hi: float) -> np.ndarray:
        if not hi > lo:
            raise InvalidKnots("grid range is degenerate")
        n_interior = self.n_basis - self.order
        interior = lo + (hi - lo) * np.arange(1, n_interior + 1) / (n_interior + 1)
        return np.concatenate([np.full(self.order, lo), interior, np.full(self.order, hi)])


@dataclass
class FunctionalKnownPrior:
    """Training-derived prior for one observed class.

    ``phi`` is the pointwise prior variance around the mean curve and ``v``
    the prior variance of the noise level; zero means the corresponding
    quantity stays frozen at its training estimate (inductive mode).  For
    v > 0 the noise prior at each t is
    IG(2 + sbar^4/v, sbar^2 (1 + sbar^4/v)), which has mean sbar^2(t) and
    variance v exactly.
    """

    grid: np.ndarray
    mean_curve: np.ndarray
    noise_curve: np.ndarray
    phi: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float).ravel()
        self.mean_curve = np.asarray(self.mean_curve, dtype=float).ravel()
        self.noise_curve = np.asarray(self.noise_curve, dtype=float).ravel()
        if not (self.grid.size == self.mean_curve.size == self.noise_curve.size):
            raise DimensionMismatch("curves must share the grid length")
        if np.any(self.noise_curve <= 0):
            raise ValueError("noise curve must be positive everywhere")
        if self.phi < 0 or self.v < 0:
            raise ValueError("phi and v must be non-negative")

    def noise_ig_params(self):
        if self.v <= 0:
            raise ValueError("IG parameterization requires v > 0")
        ratio = self.noise_curve ** 2 / self.v
        return 2.0 + ratio, self.noise_curve * (1.0 + ratio)


@dataclass
class FunctionalNovelAtom:
    """One novelty component: spline coefficients with their hierarchy and a
    pointwise noise curve."""

    rho: np.ndarray
    psi: float
    tau2: float
    sigma2: np.ndarray

    def to_dict(self) -> dict:
        return {"rho": self.rho.tolist(), "psi": float(self.psi),
                "tau2": float(self.tau2), "sigma2": self.sigma2.tolist()}


@dataclass
class FunctionalHyper:
    """Hyperparameters of the functional model plus MCMC controls."""

    a: np.ndarray
    a_tau: float = 3.0
    b_tau: float = 1.0
    s2: float = 1.0
    a_H: float = 5.0
    b_H: float = 1.0
    gamma: Union[float, GammaPrior] = field(default_factory=GammaPrior)
    kappa: float = 0.5
    n_iter: int = 2000
    n_burnin: int = 1000
    seed: int = 0
    basis: BasisSpec = field(default_factory=BasisSpec)
    atom_thin: int = 10

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).ravel()
        if np.any(self.a <= 0):
            raise ValueError("all Dirichlet weights must be positive")
        for name in ("a_tau", "b_tau", "s2", "a_H", "b_H"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.n_iter <= self.n_burnin:
            raise ValueError("n_iter must exceed n_burnin")

    @property
    def n_known(self) -> int:
        return self.a.size - 1

    @property
    def gamma_is_random(self) -> bool:
        return isinstance(self.gamma, GammaPrior)


# ---------------------------------------------------------------------------
# basis and smoothing
# ---------------------------------------------------------------------------

def bspline_basis(spec: BasisSpec, grid: np.ndarray) -> np.ndarray:
    """Evaluate the basis at the grid via the Cox-de Boor recursion.

    Returns a (T, B) matrix with non-negative entries whose rows sum to one
    everywhere on the closed grid range (clamped end knots).
    """
    t = np.asarray(grid, dtype=float).ravel()
    knots = spec.knot_vector(t.min(), t.max())
    n_int = knots.size - 1

    N = np.zeros((t.size, n_int))
    for i in range(n_int):
        if knots[i] < knots[i + 1]:
            N[:, i] = (t >= knots[i]) & (t < knots[i + 1])
    # close the right end: the last non-empty interval absorbs t == t_max
    last = np.flatnonzero(np.diff(knots) > 0)[-1]
    N[t == knots[-1], last] = 1.0

    for order in range(2, spec.order + 1):
        cols = n_int - order + 1
        new = np.zeros((t.size, cols))
        for i in range(cols):
            left_den = knots[i + order - 1] - knots[i]
            right_den = knots[i + order] - knots[i + 1]
            acc = np.zeros(t.size)
            if left_den > 0:
                acc += (t - knots[i]) / left_den * N[:, i]
            if right_den > 0:
                acc += (knots[i + order] - t) / right_den * N[:, i + 1]
            new[:, i] = acc
        N = new
    return N


def smooth_curves(curves: CurveSet, spec: BasisSpec) -> np.ndarray:
    """Least-squares spline coefficients, one row per curve.

    When the number of bases approaches the number of grid points the
    collocation matrix can carry a small structural null space at the
    boundaries; the minimum-norm solution is used, which leaves fitted
    values on the grid unaffected.  A basis function with no support on the
    grid at all means the specification cannot represent anything there.
    """
    if curves.n_points < spec.n_basis:
        raise RankDeficientBasis("fewer grid points than basis functions")
    Phi = bspline_basis(spec, curves.grid)
    if np.any(np.max(np.abs(Phi), axis=0) == 0.0):
        raise RankDeficientBasis("a basis function has no support on the grid")
    coef, _, _, _ = np.linalg.lstsq(Phi, curves.values.T, rcond=None)
    return coef.T


def extract_functional_priors(train: CurveSet, spec: BasisSpec, cfg: McdConfig,
                              phi: float = 0.0, v: float = 0.0) -> list[FunctionalKnownPrior]:
    """Robust per-class mean and noise curves from labeled training curves.

    Spline coefficients are treated as multivariate observations; the robust
    location of each class (regularized variant whenever the subset size
    cannot exceed the basis dimension) gives the mean curve, and the noise
    curve is the untrimmed residual curve averaged with denominator n_j - 1.
    """
    if train.labels is None:
        raise ValueError("training curves must carry class labels")
    coefs = smooth_curves(train, spec)
    Phi = bspline_basis(spec, train.grid)
    J = int(train.labels.max())
    priors = []
    for j in range(1, J + 1):
        rows = np.flatnonzero(train.labels == j)
        C = coefs[rows]
        eta_j = cfg.eta_for(j)
        cfg_j = McdConfig(eta=eta_j, n_starts=cfg.n_starts, max_csteps=cfg.max_csteps,
                          seed=cfg.seed, max_condition=cfg.max_condition,
                          rho_grid_step=cfg.rho_grid_step)
        rng = np.random.default_rng([cfg.seed, j])
        h = int(np.floor(eta_j * rows.size))
        if h >= spec.n_basis + 1:
            try:
                summ = fast_mcd(C, cfg_j, rng=rng)
            except SingularSubset:
                summ = mrcd(C, cfg_j, rng=np.random.default_rng([cfg.seed, j]))
        else:
            summ = mrcd(C, cfg_j, rng=rng)
        mean_curve = Phi @ summ.mean
        kept = train.values[rows[summ.untrimmed]]
        resid = kept - mean_curve
        noise = np.sum(resid ** 2, axis=0) / (rows.size - 1)
        noise = np.maximum(noise, _NOISE_FLOOR)
        priors.append(FunctionalKnownPrior(
            grid=train.grid, mean_curve=mean_curve, noise_curve=noise,
            phi=phi, v=v))
    return priors


# ---------------------------------------------------------------------------
# full conditionals (exposed for oracle testing)
# ---------------------------------------------------------------------------

def coef_conditional(y_sum: np.ndarray, n: int, Phi: np.ndarray,
                     sigma2: np.ndarray, psi: float, tau2: float):
    """Gaussian full conditional of a novelty coefficient vector.

    Returns (mean, chol_precision); a draw is mean + solve(L^T, z).
    """
    B = Phi.shape[1]
    D = 1.0 / sigma2
    prec = np.eye(B) / tau2 + n * (Phi.T * D) @ Phi
    lin = np.full(B, psi / tau2) + Phi.T @ (D * y_sum)
    L = np.linalg.cholesky(prec)
    mean = cho_solve((L, True), lin)
    return mean, L


def psi_conditional(rho: np.ndarray, tau2: float, s2: float):
    """Normal full conditional of the coefficient-level mean."""
    B = rho.size
    var = 1.0 / (1.0 / s2 + B / tau2)
    return var * rho.sum() / tau2, var


def tau2_conditional(rho: np.ndarray, psi: float, a_tau: float, b_tau: float):
    """IG(shape, scale) full conditional of the coefficient variance."""
    return a_tau + rho.size / 2.0, b_tau + 0.5 * np.sum((rho - psi) ** 2)


def sigma2_conditional(sq_resid: np.ndarray, n: int, a: float, b) -> tuple:
    """Pointwise IG(shape, scale) full conditional of a noise curve."""
    return a + n / 2.0, b + 0.5 * sq_resid


def known_mean_conditional(prior_mean: np.ndarray, phi: float,
                           y_sum: np.ndarray, n: int, sigma2: np.ndarray):
    """Pointwise normal full conditional of a known-class mean curve."""
    var = 1.0 / (1.0 / phi + n / sigma2)
    return var * (prior_mean / phi + y_sum / sigma2), var


def _sample_ig(rng, shape, scale):
    return scale / rng.gamma(shape, 1.0, size=np.shape(scale) or None)


# ---------------------------------------------------------------------------
# the functional chain
# ---------------------------------------------------------------------------

def _curve_loglik(Y: np.ndarray, f: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Sum over grid points of log N(y_m(t); f(t), sigma2(t)) for every curve."""
    const = -0.5 * np.sum(np.log(2.0 * math.pi * sigma2))
    resid = Y - f
    return const - 0.5 * (resid ** 2) @ (1.0 / sigma2)


def _prior_novel_atom(rng, hyper: FunctionalHyper, B: int, T: int) -> FunctionalNovelAtom:
    tau2 = float(_sample_ig(rng, hyper.a_tau, hyper.b_tau))
    psi = float(rng.normal(0.0, math.sqrt(hyper.s2)))
    rho = rng.normal(psi, math.sqrt(tau2), size=B)
    sigma2 = _sample_ig(rng, hyper.a_H, np.full(T, hyper.b_H))
    return FunctionalNovelAtom(rho=rho, psi=psi, tau2=tau2, sigma2=sigma2)


def run_functional_chain(test: CurveSet, priors: list, hyper: FunctionalHyper,
                         record_atoms: bool = False) -> ChainOutput:
    """Gibbs sampler for curves; same loop shape as the multivariate chain.

    Known atoms follow their training priors (frozen when phi = 0 resp.
    v = 0); novelty atoms update coefficients, their hierarchy, and the
    pointwise noise by conjugacy.  Deterministic given ``hyper.seed``.
    """
    J = hyper.n_known
    if len(priors) != J:
        raise DimensionMismatch("number of priors must equal n_known")
    for pr in priors:
        if pr.grid.size != test.grid.size or not np.allclose(pr.grid, test.grid):
            raise GridMismatch("test grid differs from the training grid")

    Y = test.values
    M, T = Y.shape
    B = hyper.basis.n_basis
    Phi = bspline_basis(hyper.basis, test.grid)
    kappa = hyper.kappa
    rng = np.random.default_rng(hyper.seed)

    known_f = [pr.mean_curve.copy() for pr in priors]
    known_s2 = [pr.noise_curve.copy() for pr in priors]
    novel: list[FunctionalNovelAtom] = []

    # start each curve at its closest known class; curves implausibly far
    # from all of them (pointwise-standardized residual beyond the 99.9%
    # chi-square quantile) begin as singleton novelty clusters, since the
    # sampler merges clusters far more readily than it splits them
    alpha = np.zeros(M, dtype=int)
    beta = np.zeros(M, dtype=int)
    if M:
        from scipy.stats import chi2

        d2 = np.column_stack(
            [((Y - pr.mean_curve) ** 2 / pr.noise_curve).sum(axis=1) for pr in priors])
        best = np.argmin(d2, axis=1)
        far = d2[np.arange(M), best] > chi2.ppf(0.999, df=T)
        alpha = np.where(far, 0, best + 1)
        beta[far] = 1 + np.arange(int(np.sum(far)))
    gamma = hyper.gamma.mean if hyper.gamma_is_random else float(hyper.gamma)

    n_keep = hyper.n_iter - hyper.n_burnin
    alpha_trace = np.empty((n_keep, M), dtype=np.int32)
    beta_trace = np.empty((n_keep, M), dtype=np.int32)
    pi_trace = np.empty((n_keep, J + 1))
    gamma_trace = np.empty(n_keep)
    n_active_trace = np.empty(n_keep, dtype=np.int32)
    snapshots = [] if record_atoms else None

    v = np.zeros(0)
    for it in range(hyper.n_iter):
        beta, novel, v = _label_swap_sweep(beta, novel, v, rng)
        zeta = alpha_beta_to_zeta(alpha, beta, J) if M else np.zeros(0, dtype=int)
        xi_cur = xi_values(kappa, J, max(int(zeta.max()), J + 1) if M else J + 1)
        if M:
            r = np.maximum(rng.random(M), 1e-300)
            u = r * xi_cur[zeta - 1]
            L = max(truncation_level(u, kappa, J), int(zeta.max()))
        else:
            u = np.zeros(0)
            L = J + 1

        counts = np.bincount(alpha, minlength=J + 1)[:J + 1] if M else np.zeros(J + 1, dtype=int)
        pi = rng.dirichlet(hyper.a + counts)

        K = L - J
        n_k, g_k = _stick_posterior_counts(beta, K) if M else (np.zeros(K, dtype=int),) * 2
        v = rng.beta(1.0 + n_k, gamma + g_k)
        omega = stick_breaking(v)
        pitilde = np.concatenate([pi[1:], pi[0] * omega])

        # known atoms
        for j, pr in enumerate(priors):
            members = np.flatnonzero(alpha == j + 1)
            n_j = members.size
            if pr.phi > 0:
                y_sum = Y[members].sum(axis=0) if n_j else np.zeros(T)
                mean, var = known_mean_conditional(pr.mean_curve, pr.phi,
                                                   y_sum, n_j, known_s2[j])
                known_f[j] = mean + np.sqrt(var) * rng.standard_normal(T)
            else:
                known_f[j] = pr.mean_curve
            if pr.v > 0:
                a_t, b_t = pr.noise_ig_params()
                sq = np.sum((Y[members] - known_f[j]) ** 2, axis=0) if n_j else np.zeros(T)
                known_s2[j] = _sample_ig(rng, a_t + n_j / 2.0, b_t + 0.5 * sq)
            else:
                known_s2[j] = pr.noise_curve

        # novelty atoms
        new_novel = []
        for h in range(1, K + 1):
            members = np.flatnonzero(beta == h)
            n_h = members.size
            if n_h == 0:
                new_novel.append(_prior_novel_atom(rng, hyper, B, T))
                continue
            prev = novel[h - 1] if h - 1 < len(novel) else _prior_novel_atom(rng, hyper, B, T)
            y_sum = Y[members].sum(axis=0)
            mean, Lp = coef_conditional(y_sum, n_h, Phi, prev.sigma2, prev.psi, prev.tau2)
            rho = mean + solve_triangular(Lp.T, rng.standard_normal(B), lower=False)
            m_psi, v_psi = psi_conditional(rho, prev.tau2, hyper.s2)
            psi = float(rng.normal(m_psi, math.sqrt(v_psi)))
            sh_t, sc_t = tau2_conditional(rho, psi, hyper.a_tau, hyper.b_tau)
            tau2 = float(_sample_ig(rng, sh_t, sc_t))
            f_h = Phi @ rho
            sq = np.sum((Y[members] - f_h) ** 2, axis=0)
            sh_s, sc_s = sigma2_conditional(sq, n_h, hyper.a_H, hyper.b_H)
            sigma2 = _sample_ig(rng, sh_s, sc_s)
            new_novel.append(FunctionalNovelAtom(rho=rho, psi=psi, tau2=tau2, sigma2=sigma2))
        novel = new_novel

        # allocation
        if M:
            cols = [_curve_loglik(Y, f, s2) for f, s2 in zip(known_f, known_s2)]
            cols += [_curve_loglik(Y, Phi @ at.rho, at.sigma2) for at in novel]
            log_lik = np.column_stack(cols)
            xi = xi_values(kappa, J, L)
            zeta_new = _sample_allocations(rng, log_lik, pitilde, u, xi)
            alpha, beta = zeta_to_alpha_beta(zeta_new, J)

        if hyper.gamma_is_random:
            n_novel = int(np.sum(alpha == 0))
            k_novel = int(np.unique(beta[beta > 0]).size)
            gamma = update_gamma(gamma, n_novel, k_novel,
                                 hyper.gamma.shape, hyper.gamma.rate, rng)

        i = it - hyper.n_burnin
        if i < 0:
            continue
        alpha_trace[i] = alpha
        beta_trace[i] = beta
        pi_trace[i] = pi
        gamma_trace[i] = gamma
        n_active_trace[i] = L
        if record_atoms and i % hyper.atom_thin == 0:
            snapshots.append({
                "iteration": i,
                "known": [{"mean_curve": f.tolist()} for f in known_f],
                "novel": [at.to_dict() for at in novel],
            })

    return ChainOutput(
        alpha_trace=alpha_trace, beta_trace=beta_trace, pi_trace=pi_trace,
        gamma_trace=gamma_trace, n_active_trace=n_active_trace,
        n_known=J, seed=hyper.seed, atom_snapshots=snapshots,
        meta={"n_iter": hyper.n_iter, "n_burnin": hyper.n_burnin,
              "kappa": hyper.kappa, "model": "functional"})
