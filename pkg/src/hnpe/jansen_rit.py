"""Stochastic Jansen-Rit neural mass model.

Six-dimensional SDE in companion form: positions (X0, X1, X2) are
post-synaptic potentials, velocities (X3, X4, X5) their derivatives.
Each channel is a critically damped linear oscillator driven by a
sigmoidal firing-rate coupling and, on the velocity coordinate, by white
noise:

    X0'' = A*a*Sigm(X1 - X2)                 - 2a X0' - a^2 X0 + s3 dW
    X1'' = A*a*(mu + C2*Sigm(C1*X0))         - 2a X1' - a^2 X1 + s  dW
    X2'' = B*b*(C4*Sigm(C3*X0))              - 2b X2' - b^2 X2 + s5 dW

The observed channel is X1 - X2 scaled by a decibel gain g:
x(t) = 10^(g/10) * (X1(t) - X2(t)).

Two integrators are provided. The default is a Strang splitting that
alternates an exact half-kick of the nonlinear rate input with an exact
transition of the linear SDE (matrix exponential plus the exact
Ornstein-Uhlenbeck increment covariance, both in closed form for the
critically damped pair). An Euler-Maruyama scheme is kept as an
independent cross-check oracle. Only velocity coordinates receive noise,
with scales (sigma3, sigma, sigma5) per channel.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import PriorSpec

__all__ = [
    "NMMConstants",
    "NMMParams",
    "NMMState",
    "TimeSeriesSpec",
    "IntegrationError",
    "JansenRitSimulator",
    "nmm_prior",
    "connectivity",
    "sigmoid",
    "drift",
    "step",
    "em_step_with_increments",
    "simulate",
    "simulate_batch",
    "worker_count",
]

# state magnitudes beyond this are treated as a failed integration
_FINITE_LIMIT = 1e10


class IntegrationError(RuntimeError):
    """Raised when a trajectory leaves the finite range."""


def worker_count() -> int:
    """Worker count for batch simulation, from HNPE_WORKERS (default 1)."""
    try:
        return max(1, int(os.environ.get("HNPE_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class NMMConstants:
    """Fixed physiological constants (classical values, config-visible).

    A, B in mV; a, b in 1/s; e0 in 1/s; v0 in mV; r in 1/mV. mu3/mu5 and
    sigma3/sigma5 are the rate means and noise scales of the two
    auxiliary channels.
    """

    A: float = 3.25
    a: float = 100.0
    B: float = 22.0
    b: float = 50.0
    e0: float = 2.5
    v0: float = 6.0
    r: float = 0.56
    mu3: float = 0.0
    mu5: float = 0.0
    sigma3: float = 0.01
    sigma5: float = 1.0

    def __post_init__(self):
        for name in ("A", "a", "B", "b", "e0", "v0", "r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"constant {name} must be positive")
        if self.sigma3 < 0 or self.sigma5 < 0:
            raise ValueError("auxiliary noise scales must be nonnegative")


@dataclass(frozen=True)
class NMMParams:
    """Free parameters (C, mu, sigma, g) plus the fixed constants."""

    C: float
    mu: float
    sigma: float
    g: float
    fixed: NMMConstants = field(default_factory=NMMConstants)

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class NMMState:
    """Six-vector (X0..X2 positions, X3..X5 velocities)."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.shape != (6,):
            raise ValueError(f"state must have 6 entries, got {x.shape}")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class TimeSeriesSpec:
    """Recording geometry: duration and rate of the kept trace, burn-in
    discarded before recording, substeps per output sample (internal
    dt = 1/(substeps*fs))."""

    duration: float = 8.0
    fs: float = 128.0
    burn_in: float = 2.0
    substeps: int = 8

    def __post_init__(self):
        if self.duration <= 0 or self.fs <= 0 or self.burn_in < 0 or self.substeps < 1:
            raise ValueError("invalid time-series spec")
        for n in (self.duration * self.fs, self.burn_in * self.fs):
            if abs(n - round(n)) > 1e-9:
                raise ValueError("duration*fs and burn_in*fs must be integers")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.fs))

    @property
    def dt(self) -> float:
        return 1.0 / (self.substeps * self.fs)


def nmm_prior() -> PriorSpec:
    """Box prior: local (C, mu, sigma), global gain g."""
    return PriorSpec(
        local_bounds=[(10.0, 250.0), (50.0, 500.0), (0.0, 5000.0)],
        global_bounds=[(-30.0, 30.0)],
        local_names=["C", "mu", "sigma"],
        global_names=["g"],
    )


def connectivity(C: float) -> tuple[float, float, float, float]:
    """The four proportional coupling constants (C, 0.8C, 0.25C, 0.25C)."""
    if C <= 0:
        raise ValueError("C must be positive")
    return (C, 0.8 * C, 0.25 * C, 0.25 * C)


def sigmoid(v, constants: NMMConstants = NMMConstants()):
    """Voltage-to-rate sigmoid 2*e0 / (1 + exp(r*(v0 - v))), in (0, 2*e0)."""
    v = np.asarray(v, dtype=float)
    with np.errstate(over="ignore"):  # exp overflow saturates to rate 0
        out = 2.0 * constants.e0 / (1.0 + np.exp(constants.r * (constants.v0 - v)))
    return float(out) if out.ndim == 0 else out


def _rate_input(x0, x1, x2, params: NMMParams):
    """Nonlinear rate forcing on the three velocity coordinates."""
    k = params.fixed
    c1, c2, c3, c4 = connectivity(params.C)
    g1 = k.A * k.a * (k.mu3 + sigmoid(x1 - x2, k))
    g2 = k.A * k.a * (params.mu + c2 * sigmoid(c1 * x0, k))
    g3 = k.B * k.b * (k.mu5 + c4 * sigmoid(c3 * x0, k))
    return g1, g2, g3


def drift(state: NMMState, params: NMMParams) -> np.ndarray:
    """Deterministic right-hand side of the six equations."""
    k = params.fixed
    x = state.x
    g1, g2, g3 = _rate_input(x[0], x[1], x[2], params)
    return np.array(
        [
            x[3],
            x[4],
            x[5],
            g1 - 2.0 * k.a * x[3] - k.a**2 * x[0],
            g2 - 2.0 * k.a * x[4] - k.a**2 * x[1],
            g3 - 2.0 * k.b * x[5] - k.b**2 * x[2],
        ]
    )


# -- closed forms of the linear channel -------------------------------------
#
# One channel is y'' = -2k y' - k^2 y + s dW, i.e. dz = M z dt + (0, s) dW
# with M = [[0, 1], [-k^2, -2k]] (double eigenvalue -k). Then
#   exp(M t) = e^{-kt} [[1 + kt, t], [-k^2 t, 1 - kt]]
# and the increment covariance over one step of length t is
#   Var[pos]  = s^2 e^{-2kt} (e^{2kt} - 1 - 2kt(1 + kt)) / (4 k^3)
#   Var[vel]  = s^2 e^{-2kt} (e^{2kt} - 1 - 2kt(kt - 1)) / (4 k)
#   Cov       = s^2 e^{-2kt} t^2 / 2
# (integrate exp(M(t-u)) (0,s)(0,s)^T exp(M(t-u))^T over u in [0,t]).


def _exp_pair(k: float, t: float) -> tuple[float, float, float, float]:
    """Entries (m_pp, m_pv, m_vp, m_vv) of exp(M t) for rate k."""
    e = np.exp(-k * t)
    return (e * (1.0 + k * t), e * t, -e * k * k * t, e * (1.0 - k * t))


def _pair_cholesky(k: float, t: float, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower Cholesky factors (l11, l21, l22) of the increment covariance.

    Vectorized over the noise scale s; zero scale yields zero factors.
    """
    s = np.asarray(s, dtype=float)
    s2 = s * s
    e2 = np.exp(-2.0 * k * t)
    grow = np.exp(2.0 * k * t)
    vp = e2 * (grow - 1.0 - 2.0 * k * t * (1.0 + k * t)) * s2 / (4.0 * k**3)
    vv = e2 * (grow - 1.0 - 2.0 * k * t * (k * t - 1.0)) * s2 / (4.0 * k)
    cv = e2 * t * t * s2 / 2.0
    l11 = np.sqrt(np.maximum(vp, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0.0, cv / np.where(l11 > 0.0, l11, 1.0), 0.0)
    l22 = np.sqrt(np.maximum(vv - l21 * l21, 0.0))
    return l11, l21, l22


def pair_covariance(k: float, t: float, s: float) -> np.ndarray:
    """Exact 2x2 increment covariance of one channel (tests cross-check
    this against quadrature of the integrand)."""
    l11, l21, l22 = _pair_cholesky(k, t, np.asarray(s))
    low = np.array([[float(l11), 0.0], [float(l21), float(l22)]])
    return low @ low.T


class _LinearStep:
    """Precomputed exact linear transition for a fixed (constants, dt)."""

    def __init__(self, constants: NMMConstants, dt: float, sigma):
        self.mats = [_exp_pair(constants.a, dt), _exp_pair(constants.a, dt), _exp_pair(constants.b, dt)]
        sig = np.asarray(sigma, dtype=float)  # (..., 3) scales per channel
        self.chol = [
            _pair_cholesky(constants.a, dt, sig[..., 0]),
            _pair_cholesky(constants.a, dt, sig[..., 1]),
            _pair_cholesky(constants.b, dt, sig[..., 2]),
        ]

    def apply(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """x: (..., 6) states; z: (..., 6) standard normals."""
        out = np.empty_like(x)
        for c in range(3):
            m_pp, m_pv, m_vp, m_vv = self.mats[c]
            l11, l21, l22 = self.chol[c]
            pos, vel = x[..., c], x[..., c + 3]
            out[..., c] = m_pp * pos + m_pv * vel + l11 * z[..., c]
            out[..., c + 3] = m_vp * pos + m_vv * vel + l21 * z[..., c] + l22 * z[..., c + 3]
        return out


def _half_kick(x: np.ndarray, dt: float, params_arrays) -> None:
    """In-place exact solution of the nonlinear subsystem over dt/2.

    Positions are frozen in that subsystem, so velocities gain
    (dt/2) * rate_input(positions).
    """
    k, mu, c1, c2, c4, c3 = params_arrays
    g1 = k.A * k.a * (k.mu3 + sigmoid(x[..., 1] - x[..., 2], k))
    g2 = k.A * k.a * (mu + c2 * sigmoid(c1 * x[..., 0], k))
    g3 = k.B * k.b * (k.mu5 + c4 * sigmoid(c3 * x[..., 0], k))
    x[..., 3] += 0.5 * dt * g1
    x[..., 4] += 0.5 * dt * g2
    x[..., 5] += 0.5 * dt * g3


def em_step_with_increments(x: np.ndarray, dt: float, params: NMMParams, dw: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama transition given Brownian increments dw (3,).

    Noise enters the velocity coordinates only, with scales
    (sigma3, sigma, sigma5). Exposed so convergence studies can couple
    increments across step sizes.
    """
    k = params.fixed
    x = np.asarray(x, dtype=float)
    d = drift(NMMState(x), params)
    out = x + dt * d
    out[3] += k.sigma3 * dw[0]
    out[4] += params.sigma * dw[1]
    out[5] += k.sigma5 * dw[2]
    return out


def step(
    state: NMMState,
    dt: float,
    params: NMMParams,
    rng: np.random.Generator,
    scheme: str = "splitting",
) -> NMMState:
    """One SDE transition of length dt under the chosen scheme."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = params.fixed
    if scheme == "splitting":
        lin = _LinearStep(k, dt, np.array([k.sigma3, params.sigma, k.sigma5]))
        c1, c2, c3, c4 = connectivity(params.C)
        arrays = (k, params.mu, c1, c2, c4, c3)  # _half_kick layout
        x = state.x.copy()
        _half_kick(x, dt, arrays)
        x = lin.apply(x, rng.standard_normal(6))
        _half_kick(x, dt, arrays)
    elif scheme == "euler":
        x = em_step_with_increments(state.x, dt, params, np.sqrt(dt) * rng.standard_normal(3))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _FINITE_LIMIT:
        raise IntegrationError("state left the finite range")
    return NMMState(x)


def _integrate_chunk(
    C: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    z: np.ndarray,
    spec: TimeSeriesSpec,
    constants: NMMConstants,
    scheme: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized trajectory integration for one chunk of records.

    z has shape (n_steps, n, 6); the per-record noise stream layout is
    fixed so results do not depend on how records are chunked. Output is
    the unscaled (X1 - X2) trace at the recording instants, plus a
    per-record success mask.
    """
    dt = spec.dt
    n = C.shape[0]
    nstep = z.shape[0]
    nburn = int(round(spec.burn_in * spec.fs)) * spec.substeps
    c1, c2, c3, c4 = connectivity(1.0)
    c1, c2, c3, c4 = C * c1, C * c2, C * c3, C * c4
    arrays = (constants, mu, c1, c2, c4, c3)
    out = np.empty((n, spec.n_samples))
    ok = np.ones(n, dtype=bool)
    x = np.zeros((n, 6))
    if scheme == "splitting":
        sig = np.stack(
            [np.full(n, constants.sigma3), sigma, np.full(n, constants.sigma5)], axis=-1
        )
        lin = _LinearStep(constants, dt, sig)
        j = 0
        for i in range(nstep):
            _half_kick(x, dt, arrays)
            x = lin.apply(x, z[i])
            _half_kick(x, dt, arrays)
            if i + 1 > nburn and (i + 1 - nburn) % spec.substeps == 0:
                out[:, j] = x[:, 1] - x[:, 2]
                j += 1
            if i % 256 == 0:
                with np.errstate(invalid="ignore"):
                    ok &= np.all(np.isfinite(x), axis=-1) & (np.max(np.abs(x), axis=-1) < _FINITE_LIMIT)
                x[~ok] = 0.0  # keep failed rows numerically inert
    elif scheme == "euler":
        a, b = constants.a, constants.b
        sdt = np.sqrt(dt)
        j = 0
        for i in range(nstep):
            g1 = constants.A * a * (constants.mu3 + sigmoid(x[:, 1] - x[:, 2], constants))
            g2 = constants.A * a * (mu + c2 * sigmoid(c1 * x[:, 0], constants))
            g3 = constants.B * b * (constants.mu5 + c4 * sigmoid(c3 * x[:, 0], constants))
            nx = x.copy()
            nx[:, :3] += dt * x[:, 3:]
            nx[:, 3] += dt * (g1 - 2 * a * x[:, 3] - a * a * x[:, 0]) + constants.sigma3 * sdt * z[i, :, 0]
            nx[:, 4] += dt * (g2 - 2 * a * x[:, 4] - a * a * x[:, 1]) + sigma * sdt * z[i, :, 1]
            nx[:, 5] += dt * (g3 - 2 * b * x[:, 5] - b * b * x[:, 2]) + constants.sigma5 * sdt * z[i, :, 2]
            x = nx
            if i + 1 > nburn and (i + 1 - nburn) % spec.substeps == 0:
                out[:, j] = x[:, 1] - x[:, 2]
                j += 1
            if i % 256 == 0:
                with np.errstate(invalid="ignore"):
                    ok &= np.all(np.isfinite(x), axis=-1) & (np.max(np.abs(x), axis=-1) < _FINITE_LIMIT)
                x[~ok] = 0.0
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    with np.errstate(invalid="ignore"):
        ok &= np.all(np.isfinite(x), axis=-1) & (np.max(np.abs(x), axis=-1) < _FINITE_LIMIT)
        ok &= np.all(np.isfinite(out), axis=-1) & (np.max(np.abs(out), axis=-1) < _FINITE_LIMIT)
    return out, ok


def simulate(
    params: NMMParams,
    spec: TimeSeriesSpec = TimeSeriesSpec(),
    rng: np.random.Generator | None = None,
    scheme: str = "splitting",
) -> np.ndarray:
    """Simulate one gain-scaled observation of length duration*fs.

    The trajectory starts at zero, runs through the burn-in, and records
    (X1 - X2) every ``substeps`` internal steps; the decibel gain is
    applied to the finished trace, so gain enters exactly as a scale.
    """
    if rng is None:
        rng = np.random.default_rng()
    nstep = int(round((spec.duration + spec.burn_in) * spec.fs)) * spec.substeps
    z = rng.standard_normal((nstep, 1, 6))
    out, ok = _integrate_chunk(
        np.array([params.C]),
        np.array([params.mu]),
        np.array([params.sigma]),
        z,
        spec,
        params.fixed,
        scheme,
    )
    if not ok[0]:
        raise IntegrationError("trajectory left the finite range")
    return 10.0 ** (params.g / 10.0) * out[0]


def simulate_batch(
    C: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    g: np.ndarray,
    seed: int,
    spec: TimeSeriesSpec = TimeSeriesSpec(),
    constants: NMMConstants = NMMConstants(),
    scheme: str = "splitting",
    chunk: int = 256,
    workers: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate n records with independent substreams of one master seed.

    Record j always consumes the stream spawned for index j, so results
    are reproducible per record regardless of chunking or worker count.
    Returns (traces (n, duration*fs), ok mask (n,)).
    """
    C = np.asarray(C, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = C.shape[0]
    if not (mu.shape[0] == sigma.shape[0] == g.shape[0] == n):
        raise ValueError("parameter arrays must share one length")
    nstep = int(round((spec.duration + spec.burn_in) * spec.fs)) * spec.substeps
    children = np.random.SeedSequence(seed).spawn(n)
    if workers is None:
        workers = worker_count()

    spans = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]

    def run(span):
        lo, hi = span
        z = np.stack(
            [np.random.default_rng(children[j]).standard_normal((nstep, 6)) for j in range(lo, hi)],
            axis=1,
        )
        return _integrate_chunk(C[lo:hi], mu[lo:hi], sigma[lo:hi], z, spec, constants, scheme)

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    out = np.concatenate([p[0] for p in parts], axis=0)
    ok = np.concatenate([p[1] for p in parts], axis=0)
    out *= 10.0 ** (g[:, None] / 10.0)
    return out, ok


class JansenRitSimulator:
    """Simulator-protocol adapter: alpha = (C, mu, sigma), beta = (g,)."""

    def __init__(
        self,
        spec: TimeSeriesSpec = TimeSeriesSpec(),
        constants: NMMConstants = NMMConstants(),
        scheme: str = "splitting",
    ):
        self.spec = spec
        self.constants = constants
        self.scheme = scheme

    def params(self, alpha: np.ndarray, beta: np.ndarray) -> NMMParams:
        return NMMParams(
            C=float(alpha[0]), mu=float(alpha[1]), sigma=float(alpha[2]), g=float(beta[0]),
            fixed=self.constants,
        )

    def simulate(self, alpha: np.ndarray, beta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return simulate(self.params(alpha, beta), self.spec, rng, self.scheme)

    def simulate_batch(self, alphas: np.ndarray, betas: np.ndarray, seed: int):
        a = np.atleast_2d(np.asarray(alphas, dtype=float))
        b = np.atleast_2d(np.asarray(betas, dtype=float))
        return simulate_batch(
            a[:, 0], a[:, 1], a[:, 2], b[:, 0],
            seed=seed, spec=self.spec, constants=self.constants, scheme=self.scheme,
        )
