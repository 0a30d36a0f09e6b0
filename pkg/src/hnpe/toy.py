"""Multiplicative toy model and its closed-form posterior machinery.

The generative model is ``x = alpha * beta + eps`` with ``alpha, beta ~
U[0,1]`` and Gaussian noise of scale ``sigma``. In the ``sigma -> 0``
limit every posterior of interest has a closed form, which makes this
model the exact oracle used throughout the test suite:

* one observation ``x0`` constrains ``(alpha, beta)`` to the hyperbola
  ``alpha * beta = x0``, and both marginals are ``1 / (u log(1/x0))`` on
  ``[x0, 1]``;
* N additional observations ``x_i = alpha_i * beta`` sharing the same
  ``beta`` tighten the global marginal to
  ``N / ((mu^-N - 1) beta^(N+1))`` on ``[mu, 1]`` with
  ``mu = max({x0} u X)``, while ``alpha = x0 / beta`` stays on the ridge.

Everything here is a pure function of its inputs; densities are safe in
log space for large N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PriorSpec

__all__ = [
    "ToyObservation",
    "ToyPosteriorOracle",
    "ToySimulator",
    "toy_prior",
    "simulate_toy",
    "joint_density_single",
    "marginal_beta_single",
    "marginal_alpha_single",
    "marginal_beta_multi",
    "marginal_alpha_multi",
    "sample_posterior_multi",
    "sample_posterior_single",
    "mu_concentration_probability",
]


def toy_prior() -> PriorSpec:
    """U[0,1] x U[0,1] box: one local (alpha), one global (beta)."""
    return PriorSpec([(0.0, 1.0)], [(0.0, 1.0)], ["alpha"], ["beta"])


@dataclass(frozen=True)
class ToyObservation:
    """One observation of the toy model with its noise scale."""

    x: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.sigma == 0 and not 0.0 <= self.x <= 1.0:
            raise ValueError(f"noiseless observation {self.x} outside [0, 1]")


@dataclass(frozen=True)
class ToyPosteriorOracle:
    """Closed-form posterior state for one bundle in the sigma -> 0 limit.

    Attributes
    ----------
    x0 : float
        Focal observation, in (0, 1].
    extras : tuple of float
        The N auxiliary observations, sorted ascending, each in (0, 1].
    mu : float
        max of the focal and auxiliary observations; the lower support
        edge of the global marginal.
    degenerate : bool
        True when ``mu == 1``: the posterior collapses to the point mass
        at ``(alpha, beta) = (x0, 1)`` and densities are no longer finite.
    """

    x0: float
    extras: tuple[float, ...] = field(default=())

    def __post_init__(self):
        members = (self.x0,) + tuple(self.extras)
        for x in members:
            if not 0.0 < x <= 1.0:
                raise ValueError(f"observation {x} outside (0, 1]")
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "extras", tuple(sorted(float(x) for x in self.extras)))

    @property
    def n_extra(self) -> int:
        return len(self.extras)

    @property
    def mu(self) -> float:
        return max((self.x0,) + self.extras)

    @property
    def degenerate(self) -> bool:
        return self.mu >= 1.0


def simulate_toy(alpha: float, beta: float, sigma: float, rng: np.random.Generator | None = None) -> float:
    """Simulate one observation ``alpha * beta + N(0, sigma^2)``."""
    if not 0.0 <= alpha <= 1.0 or not 0.0 <= beta <= 1.0:
        raise ValueError(f"parameters ({alpha}, {beta}) outside the unit box")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x = float(alpha) * float(beta)
    if sigma == 0:
        return x
    if rng is None:
        raise ValueError("a generator is required when sigma > 0")
    return x + sigma * rng.standard_normal()


class ToySimulator:
    """Simulator-protocol wrapper around :func:`simulate_toy`.

    Observations are length-1 vectors so the toy and time-series models
    share one training pipeline.
    """

    def __init__(self, sigma: float = 0.0):
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self.sigma = float(sigma)

    def simulate(self, alpha: np.ndarray, beta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.array([simulate_toy(float(alpha[0]), float(beta[0]), self.sigma, rng)])

    def simulate_batch(
        self, alphas: np.ndarray, betas: np.ndarray, seed: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized batch, one observation per row; all rows succeed."""
        a = np.asarray(alphas, dtype=float).reshape(-1)
        b = np.asarray(betas, dtype=float).reshape(-1)
        if np.any((a < 0) | (a > 1) | (b < 0) | (b > 1)):
            raise ValueError("parameters outside the unit box")
        x = a * b
        if self.sigma > 0:
            x = x + self.sigma * np.random.default_rng(seed).standard_normal(x.shape)
        return x[:, None], np.ones(x.shape[0], dtype=bool)


def _check_x0(x0: float) -> float:
    if not 0.0 < x0 < 1.0:
        raise ValueError(f"x0 = {x0} outside (0, 1)")
    return float(x0)


def joint_density_single(alpha, beta, x0: float, sigma: float):
    """Joint posterior density of (alpha, beta) given one noisy observation.

    For small sigma the normalizer of the exact posterior tends to
    ``log(1/x0)``, giving

        p(alpha, beta | x0) = exp(-(x0 - alpha*beta)^2 / (2 sigma^2))
                              / (sqrt(2 pi sigma^2) log(1/x0))

    restricted to the unit box. Only meaningful for sigma small; the
    sigma -> 0 posterior itself is handled by the marginal and sampling
    operations.
    """
    x0 = _check_x0(x0)
    if sigma <= 0:
        raise ValueError("joint_density_single requires sigma > 0")
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    inside = (alpha >= 0) & (alpha <= 1) & (beta >= 0) & (beta <= 1)
    z = (x0 - alpha * beta) ** 2 / (2.0 * sigma * sigma)
    dens = np.exp(-z) / (np.sqrt(2.0 * np.pi) * sigma * np.log(1.0 / x0))
    out = np.where(inside, dens, 0.0)
    return float(out) if out.ndim == 0 else out


def marginal_beta_single(beta, x0: float):
    """Global marginal ``1/(beta log(1/x0))`` on ``[x0, 1]``."""
    x0 = _check_x0(x0)
    beta = np.asarray(beta, dtype=float)
    inside = (beta >= x0) & (beta <= 1.0)
    with np.errstate(divide="ignore"):
        dens = 1.0 / (np.log(1.0 / x0) * np.where(inside, beta, 1.0))
    out = np.where(inside, dens, 0.0)
    return float(out) if out.ndim == 0 else out


def marginal_alpha_single(alpha, x0: float):
    """Local marginal; identical in form to the global one by symmetry."""
    return marginal_beta_single(alpha, x0)


def _log_norm_multi(oracle: ToyPosteriorOracle) -> float:
    # log(mu^-N - 1), computed as -N log mu + log(1 - mu^N) to survive
    # large N and mu close to 0 or 1
    n = oracle.n_extra
    mu = oracle.mu
    return -n * np.log(mu) + np.log1p(-np.exp(n * np.log(mu)))


def _require_multi(oracle: ToyPosteriorOracle) -> None:
    if oracle.n_extra < 1:
        raise ValueError("multi-observation operations require N >= 1; use the single-observation forms")


def marginal_beta_multi(beta, oracle: ToyPosteriorOracle):
    """Global marginal ``N / ((mu^-N - 1) beta^(N+1))`` on ``[mu, 1]``.

    For a degenerate oracle (mu == 1) the posterior is a point mass at
    beta = 1; the generalized density is inf at the atom and 0 elsewhere.
    """
    _require_multi(oracle)
    beta = np.asarray(beta, dtype=float)
    if oracle.degenerate:
        out = np.where(beta == 1.0, np.inf, 0.0)
        return float(out) if out.ndim == 0 else out
    n = oracle.n_extra
    inside = (beta >= oracle.mu) & (beta <= 1.0)
    safe = np.where(inside, beta, 1.0)
    logp = np.log(n) - _log_norm_multi(oracle) - (n + 1) * np.log(safe)
    out = np.where(inside, np.exp(logp), 0.0)
    return float(out) if out.ndim == 0 else out


def alpha_support_multi(oracle: ToyPosteriorOracle) -> tuple[float, float]:
    """Support ``[x0, min(1, x0/mu)]`` of the local marginal."""
    _require_multi(oracle)
    return oracle.x0, min(1.0, oracle.x0 / oracle.mu)


def marginal_alpha_multi(alpha, oracle: ToyPosteriorOracle):
    """Local marginal ``N alpha^(N-1) / ((mu^-N - 1) x0^N)`` on its support.

    Degenerate oracles collapse to the atom at alpha = x0.
    """
    _require_multi(oracle)
    alpha = np.asarray(alpha, dtype=float)
    if oracle.degenerate:
        out = np.where(alpha == oracle.x0, np.inf, 0.0)
        return float(out) if out.ndim == 0 else out
    n = oracle.n_extra
    lo, hi = alpha_support_multi(oracle)
    inside = (alpha >= lo) & (alpha <= hi)
    safe = np.where(inside, alpha, 1.0)
    logp = np.log(n) + (n - 1) * np.log(safe) - _log_norm_multi(oracle) - n * np.log(oracle.x0)
    out = np.where(inside, np.exp(logp), 0.0)
    return float(out) if out.ndim == 0 else out


def sample_posterior_multi(oracle: ToyPosteriorOracle, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact posterior draws for N >= 1, returned as an (n, 2) array.

    beta comes from inverting the closed-form CDF
    ``F(beta) = (mu^-N - beta^-N) / (mu^-N - 1)``:

        beta = mu * (1 - u (1 - mu^N))^(-1/N),  u ~ U[0,1]

    evaluated in log space, and alpha = x0 / beta sits on the ridge.
    """
    _require_multi(oracle)
    if oracle.degenerate:
        pairs = np.empty((n, 2))
        pairs[:, 0] = oracle.x0
        pairs[:, 1] = 1.0
        return pairs
    k = oracle.n_extra
    mu = oracle.mu
    u = rng.uniform(size=n)
    # 1 - mu^N as -expm1(N log mu) keeps precision for mu near 1
    one_minus_mu_n = -np.expm1(k * np.log(mu))
    beta = mu * np.exp(-np.log1p(-u * one_minus_mu_n) / k)
    alpha = oracle.x0 / beta
    return np.column_stack([alpha, beta])


def sample_posterior_single(x0: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact ridge posterior draws for the single-observation case (N = 0).

    The global marginal is ``1/(beta log(1/x0))`` on ``[x0, 1]``; its CDF
    inverts to ``beta = x0^(1-u)``, and alpha = x0/beta = x0^u.
    """
    if x0 == 1.0:
        pairs = np.ones((n, 2))
        return pairs
    x0 = _check_x0(x0)
    u = rng.uniform(size=n)
    lx = np.log(x0)
    beta = np.exp((1.0 - u) * lx)
    alpha = np.exp(u * lx)
    return np.column_stack([alpha, beta])


def mu_concentration_probability(epsilon: float, N: int) -> float:
    """P(mu < beta0 (1 - eps)) = (1 - eps)^N for N auxiliary observations.

    Each auxiliary observation satisfies x_i/beta0 = alpha_i ~ U[0,1], so
    the bound max falls below (1 - eps) with probability (1 - eps)^N,
    independently of beta0.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0, 1)")
    if N < 0:
        raise ValueError("N must be nonnegative")
    return float((1.0 - epsilon) ** N)
