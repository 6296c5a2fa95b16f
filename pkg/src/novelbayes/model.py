"""Core probability model: hyperparameters, stick breaking, the deterministic
slice sequence with its truncation rule, the membership-index mapping, Gaussian
primitives, and closed-form prior moments of the mixing measure.

Everything in this module is a pure function of its inputs; the sampler owns
all mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular

from .errors import EmptySlice, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# hyperparameter containers
# ---------------------------------------------------------------------------

@dataclass
class NIWParams:
    """Normal-inverse-Wishart parameters (mean m, precision scale lambda,
    degrees of freedom nu, scale matrix S).

    The covariance marginal is inverse-Wishart(nu, S) with mean
    S / (nu - p - 1); the mean given the covariance is N(m, cov / lambda).
    """

    mean: np.ndarray
    precision_scale: float
    dof: float
    scale_matrix: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.scale_matrix = np.asarray(self.scale_matrix, dtype=float)
        p = self.mean.size
        if self.scale_matrix.shape != (p, p):
            raise ValueError("scale_matrix shape must match mean dimension")
        if self.precision_scale <= 0:
            raise ValueError("precision_scale must be positive")
        if self.dof <= p - 1:
            raise ValueError("dof must exceed p - 1")

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "precision_scale": float(self.precision_scale),
            "dof": float(self.dof),
            "scale_matrix": self.scale_matrix.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NIWParams":
        mean = np.asarray(d["mean"], dtype=float)
        p = mean.size
        scale = np.asarray(d["scale_matrix"], dtype=float).reshape(p, p)
        return cls(mean, float(d["precision_scale"]), float(d["dof"]), scale)


@dataclass
class GaussianAtom:
    """A mixture component: mean vector and SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov = np.asarray(self.cov, dtype=float)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianAtom":
        mean = np.asarray(d["mean"], dtype=float)
        p = mean.size
        return cls(mean, np.asarray(d["cov"], dtype=float).reshape(p, p))


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) hyperprior for the DP concentration parameter."""

    shape: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("Gamma prior requires positive shape and rate")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass
class Hyperparameters:
    """All constants of the test-set mixture model plus MCMC controls.

    ``a`` holds the Dirichlet weights (a_0, a_1, ..., a_J); a_0 is the prior
    weight of the novelty component.  ``lambda_tr`` / ``nu_tr`` control how
    tightly the known-class atoms are tied to the robust training estimates;
    values above ``freeze_threshold`` freeze them entirely (inductive mode).
    ``gamma`` is either a fixed DP concentration or a GammaPrior to be
    resampled along the chain.  ``kappa`` sets the decay of the deterministic
    slice sequence.
    """

    a: np.ndarray
    lambda_tr: float
    nu_tr: float
    base_measure: NIWParams
    gamma: Union[float, GammaPrior] = field(default_factory=GammaPrior)
    kappa: float = 0.5
    n_iter: int = 2000
    n_burnin: int = 1000
    seed: int = 0
    freeze_threshold: float = 1e5
    atom_thin: int = 10

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).ravel()
        if np.any(self.a <= 0):
            raise ValueError("all Dirichlet weights a_j must be positive")
        if self.lambda_tr <= 0:
            raise ValueError("lambda_tr must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if isinstance(self.gamma, (int, float)) and self.gamma <= 0:
            raise ValueError("fixed gamma must be positive")
        if self.n_iter <= self.n_burnin:
            raise ValueError("n_iter must exceed n_burnin")

    @property
    def n_known(self) -> int:
        return self.a.size - 1

    @property
    def gamma_is_random(self) -> bool:
        return isinstance(self.gamma, GammaPrior)

    @property
    def frozen_known_atoms(self) -> bool:
        return min(self.lambda_tr, self.nu_tr) >= self.freeze_threshold

    @classmethod
    def with_class_weights(cls, class_sizes, a0: float = 0.1, **kwargs) -> "Hyperparameters":
        """Build weights a_j = n_j / N for observed classes, novelty weight a0."""
        sizes = np.asarray(class_sizes, dtype=float)
        a = np.concatenate([[a0], sizes / sizes.sum()])
        return cls(a=a, **kwargs)


# ---------------------------------------------------------------------------
# deterministic slice sequence and truncation
# ---------------------------------------------------------------------------

def xi_sequence(kappa: float, n_known: int, l: int) -> float:
    """Mass of the l-th element (1-based) of the deterministic slice sequence.

    The first n_known + 1 elements share (1 - kappa) equally, so the known
    components and the first novelty slot are never under-represented; the
    remainder decays geometrically with ratio
    (J + 1) kappa / (J kappa + 1) and the whole sequence sums to one.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie in (0, 1)")
    if l < 1:
        raise ValueError("sequence index l must be >= 1")
    J = int(n_known)
    base = (1.0 - kappa) / (J + 1)
    if l <= J + 1:
        return base
    ratio = (J + 1) * kappa / (J * kappa + 1.0)
    return base * ratio ** (l - J - 1)


def xi_values(kappa: float, n_known: int, length: int) -> np.ndarray:
    """First ``length`` elements of the slice sequence as an array."""
    J = int(n_known)
    base = (1.0 - kappa) / (J + 1)
    ratio = (J + 1) * kappa / (J * kappa + 1.0)
    out = np.full(length, base)
    if length > J + 1:
        tail = np.arange(1, length - J)
        out[J + 1:] = base * ratio ** tail
    return out


def truncation_level(u: np.ndarray, kappa: float, n_known: int) -> int:
    """Stochastic truncation threshold for the current slice variables.

    Largest integer strictly below
    J + 1 + [log(min u) - log((1-kappa)/(J+1))] / log((J+1)kappa/(J kappa+1)),
    clamped below at J + 1 so at least one novelty slot is always considered.
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0:
        raise EmptySlice("truncation level requires at least one slice variable")
    J = int(n_known)
    base = (1.0 - kappa) / (J + 1)
    ratio = (J + 1) * kappa / (J * kappa + 1.0)
    bound = J + 1 + (math.log(u.min()) - math.log(base)) / math.log(ratio)
    level = math.ceil(bound) - 1  # largest integer strictly below the bound
    return max(level, J + 1)


def stick_breaking(v: np.ndarray) -> np.ndarray:
    """Stick-breaking weights w_k = v_k * prod_{l<k} (1 - v_l)."""
    v = np.asarray(v, dtype=float).ravel()
    with np.errstate(divide="ignore"):  # a stick at exactly 1.0 zeroes the rest
        log_remain = np.concatenate([[0.0], np.cumsum(np.log1p(-v))[:-1]])
    return v * np.exp(log_remain)


def zeta_to_alpha_beta(zeta, n_known: int):
    """Map the flat membership index to the (known, novel) label pair.

    zeta <= J identifies known class alpha = zeta (beta = 0); zeta > J
    identifies novelty cluster beta = zeta - J (alpha = 0).
    """
    zeta = np.asarray(zeta)
    if np.any(zeta < 1):
        raise ValueError("zeta indices are 1-based")
    known = zeta <= n_known
    alpha = np.where(known, zeta, 0)
    beta = np.where(known, 0, zeta - n_known)
    if zeta.ndim == 0:
        return int(alpha), int(beta)
    return alpha.astype(int), beta.astype(int)


def alpha_beta_to_zeta(alpha, beta, n_known: int):
    """Inverse of :func:`zeta_to_alpha_beta`."""
    alpha = np.asarray(alpha)
    beta = np.asarray(beta)
    if np.any((alpha > 0) == (beta > 0)):
        raise ValueError("exactly one of alpha, beta must be positive")
    zeta = np.where(alpha > 0, alpha, beta + n_known)
    if alpha.ndim == 0:
        return int(zeta)
    return zeta.astype(int)


# ---------------------------------------------------------------------------
# Gaussian primitives
# ---------------------------------------------------------------------------

def _chol(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc


def log_gaussian_density(x: np.ndarray, atom: GaussianAtom) -> float:
    """log N(x; mean, cov) evaluated via a Cholesky solve."""
    x = np.asarray(x, dtype=float).ravel()
    p = x.size
    L = _chol(atom.cov)
    z = solve_triangular(L, x - atom.mean, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (p * LOG_2PI + logdet + z @ z))


def log_gaussian_density_many(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(x_m; mean, cov) for a whole data matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = X.shape[1]
    L = _chol(cov)
    Z = solve_triangular(L, (X - mean).T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    quad = np.sum(Z * Z, axis=0)
    return -0.5 * (p * LOG_2PI + logdet + quad)


# ---------------------------------------------------------------------------
# closed-form prior moments of the mixing measure
# ---------------------------------------------------------------------------

@dataclass
class PriorMoments:
    """Univariate moments of the component priors, index 0 = novelty.

    ``mu[j]`` and ``mu2[j]`` are the mean and second moment of the j-th
    component prior; ``a`` carries the Dirichlet weights in the same order.
    """

    mu: np.ndarray
    mu2: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.mu2 = np.asarray(self.mu2, dtype=float).ravel()
        self.a = np.asarray(self.a, dtype=float).ravel()
        if not (self.mu.size == self.mu2.size == self.a.size):
            raise ValueError("mu, mu2 and a must have equal length J + 1")
        if np.any(self.sigma2 < -1e-12):
            raise ValueError("second moments imply negative variances")

    @property
    def sigma2(self) -> np.ndarray:
        return self.mu2 - self.mu ** 2

    @property
    def a_total(self) -> float:
        return float(self.a.sum())

    def varrho(self, gamma: float) -> np.ndarray:
        """Weight vector (1/(1+gamma), 1, ..., 1) entering the tie probability."""
        out = np.ones_like(self.a)
        out[0] = 1.0 / (1.0 + gamma)
        return out


def prior_mean(moments: PriorMoments) -> float:
    """E[Theta_m] = sum_j (a_j / a) mu_j."""
    a = moments.a
    return float(np.sum(a / moments.a_total * moments.mu))


def prior_variance(moments: PriorMoments) -> float:
    """Marginal variance of a draw from the random mixing measure."""
    a = moments.a
    atot = moments.a_total
    w = a / atot
    diag = np.sum(w * (moments.mu2 - w * moments.mu ** 2))
    wm = w * moments.mu
    # 2 * sum_{l > j} (a_j a_l / a^2) mu_j mu_l
    cross = np.sum(wm) ** 2 - np.sum(wm ** 2)
    return float(diag - cross)


def prior_covariance(moments: PriorMoments, gamma: float) -> float:
    """Cov(Theta_m, Theta_m') for two draws sharing the same random measure.

    Equals the finite-mixture covariance minus
    [a_0(a_0+1)/(a(a+1))] * [gamma/(1+gamma)] * sigma_0^2, so growing the
    novelty block (larger gamma, a_0, or base-measure spread) decorrelates
    the draws.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    a = moments.a
    atot = moments.a_total
    pair = a * (a + 1.0) / (atot * (atot + 1.0))
    diag = np.sum(pair * moments.mu2 - (a / atot) ** 2 * moments.mu ** 2)
    wm = a / atot * moments.mu
    cross = (np.sum(wm) ** 2 - np.sum(wm ** 2)) / (atot + 1.0)
    cov0 = float(diag - cross)
    decrement = pair[0] * gamma / (1.0 + gamma) * moments.sigma2[0]
    return cov0 - float(decrement)


def tie_probability(a: np.ndarray, gamma: float) -> float:
    """Probability that two draws from the random measure share an atom.

    Known components contribute a_k(a_k+1)/(a(a+1)); the novelty block
    contributes the same weight damped by 1/(1+gamma).
    """
    a = np.asarray(a, dtype=float).ravel()
    if np.any(a <= 0):
        raise ValueError("all Dirichlet weights must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    atot = a.sum()
    pair = a * (a + 1.0) / (atot * (atot + 1.0))
    return float(pair[1:].sum() + pair[0] / (1.0 + gamma))
