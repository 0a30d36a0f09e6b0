"""Shared probability and domain types.

Parameter vectors are split into a local part ``alpha`` (one per
observation) and a global part ``beta`` (shared by all observations of a
bundle). Priors are independent uniform boxes over both parts; all
randomness flows from explicitly seeded :class:`numpy.random.Generator`
instances so that every experiment is reproducible from a single master
seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

__all__ = [
    "PriorSpec",
    "Theta",
    "ObservationBundle",
    "SimulatedDataset",
    "Simulator",
    "concatenate_datasets",
    "sample_prior",
    "prior_log_density",
    "spawn_rngs",
]


def _as_bounds(pairs: Sequence[Sequence[float]]) -> tuple[tuple[float, float], ...]:
    out = []
    for lo, hi in pairs:
        lo, hi = float(lo), float(hi)
        if not lo < hi:
            raise ValueError(f"invalid bounds ({lo}, {hi}): lower must be < upper")
        out.append((lo, hi))
    return tuple(out)


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform box prior over local and global parameters.

    Parameters
    ----------
    local_bounds : sequence of (lower, upper)
        One pair per local dimension.
    global_bounds : sequence of (lower, upper)
        One pair per global dimension.
    local_names, global_names : sequence of str, optional
        Used by the text-config serialization; default to ``alpha_i`` /
        ``beta_i``.
    """

    local_bounds: tuple[tuple[float, float], ...]
    global_bounds: tuple[tuple[float, float], ...]
    local_names: tuple[str, ...] = field(default=())
    global_names: tuple[str, ...] = field(default=())

    def __init__(
        self,
        local_bounds: Sequence[Sequence[float]],
        global_bounds: Sequence[Sequence[float]],
        local_names: Sequence[str] | None = None,
        global_names: Sequence[str] | None = None,
    ) -> None:
        lb = _as_bounds(local_bounds)
        gb = _as_bounds(global_bounds)
        ln = tuple(local_names) if local_names else tuple(f"alpha_{i}" for i in range(len(lb)))
        gn = tuple(global_names) if global_names else tuple(f"beta_{i}" for i in range(len(gb)))
        if len(ln) != len(lb) or len(gn) != len(gb):
            raise ValueError("name count does not match bound count")
        object.__setattr__(self, "local_bounds", lb)
        object.__setattr__(self, "global_bounds", gb)
        object.__setattr__(self, "local_names", ln)
        object.__setattr__(self, "global_names", gn)

    @property
    def dim_local(self) -> int:
        return len(self.local_bounds)

    @property
    def dim_global(self) -> int:
        return len(self.global_bounds)

    @property
    def bounds(self) -> np.ndarray:
        """(dim_local + dim_global, 2) array, local dimensions first."""
        return np.asarray(self.local_bounds + self.global_bounds, dtype=float)

    @property
    def log_volume(self) -> float:
        widths = self.bounds[:, 1] - self.bounds[:, 0]
        return float(np.sum(np.log(widths)))

    def standardization(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact mean and standard deviation of the box, per dimension.

        A U(lo, hi) coordinate has mean (lo+hi)/2 and std (hi-lo)/sqrt(12).
        """
        b = self.bounds
        return (b[:, 0] + b[:, 1]) / 2.0, (b[:, 1] - b[:, 0]) / np.sqrt(12.0)

    def contains(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Vectorized box membership for stacked (..., dim) arrays."""
        alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
        beta = np.atleast_2d(np.asarray(beta, dtype=float))
        lb = np.asarray(self.local_bounds)
        gb = np.asarray(self.global_bounds)
        ok_a = np.all((alpha >= lb[:, 0]) & (alpha <= lb[:, 1]), axis=-1)
        ok_b = np.all((beta >= gb[:, 0]) & (beta <= gb[:, 1]), axis=-1)
        return ok_a & ok_b

    # -- text config -------------------------------------------------------

    def to_config(self) -> dict:
        params = []
        for name, (lo, hi) in zip(self.local_names, self.local_bounds):
            params.append({"name": name, "lower": lo, "upper": hi, "role": "local"})
        for name, (lo, hi) in zip(self.global_names, self.global_bounds):
            params.append({"name": name, "lower": lo, "upper": hi, "role": "global"})
        return {"parameters": params}

    @classmethod
    def from_config(cls, config: dict) -> "PriorSpec":
        lb, gb, ln, gn = [], [], [], []
        for p in config["parameters"]:
            role = p["role"]
            if role == "local":
                lb.append((p["lower"], p["upper"]))
                ln.append(p["name"])
            elif role == "global":
                gb.append((p["lower"], p["upper"]))
                gn.append(p["name"])
            else:
                raise ValueError(f"unknown parameter role: {role!r}")
        return cls(lb, gb, ln, gn)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_config(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PriorSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_config(json.load(fh))


@dataclass(frozen=True)
class Theta:
    """One parameter draw: local vector ``alpha``, global vector ``beta``."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, dtype=float)))
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))


@dataclass(frozen=True)
class ObservationBundle:
    """A focal observation plus N auxiliary observations sharing its beta.

    ``extra`` is semantically an unordered set; it is stored as an
    (N, ...) array whose rows all have the shape of ``x0``.
    """

    x0: np.ndarray
    extra: np.ndarray

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        extra = np.asarray(self.extra, dtype=float)
        if extra.size == 0:
            extra = extra.reshape((0,) + x0.shape)
        if extra.shape[1:] != x0.shape:
            raise ValueError(
                f"extra observations of shape {extra.shape[1:]} do not match x0 {x0.shape}"
            )
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "extra", extra)

    @property
    def n_extra(self) -> int:
        return self.extra.shape[0]


@dataclass(frozen=True)
class SimulatedDataset:
    """n training records of (alpha0, beta, x0, N extra observations).

    Within one record all observations share ``beta[j]``; the auxiliary
    locals ``extra_alphas[j]`` are always drawn from the prior, whatever
    proposal generated ``(alpha0[j], beta[j])``.
    """

    alpha0: np.ndarray  # (n, dim_local)
    beta: np.ndarray  # (n, dim_global)
    x0: np.ndarray  # (n, ...) observations
    extra: np.ndarray  # (n, N, ...) observations
    extra_alphas: np.ndarray  # (n, N, dim_local)

    def __post_init__(self):
        n = self.alpha0.shape[0]
        for name in ("beta", "x0", "extra", "extra_alphas"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"field {name} has {getattr(self, name).shape[0]} records, expected {n}")
        if self.extra.shape[1] != self.extra_alphas.shape[1]:
            raise ValueError("extra and extra_alphas disagree on N")

    @property
    def n_records(self) -> int:
        return self.alpha0.shape[0]

    @property
    def n_extra(self) -> int:
        return self.extra.shape[1]

    def bundle(self, j: int) -> ObservationBundle:
        return ObservationBundle(x0=self.x0[j], extra=self.extra[j])


def concatenate_datasets(datasets: Sequence[SimulatedDataset]) -> SimulatedDataset:
    """Stack datasets record-wise; all must share the auxiliary-set size."""
    if not datasets:
        raise ValueError("no datasets to concatenate")
    if len(datasets) == 1:
        return datasets[0]
    sizes = {d.n_extra for d in datasets}
    if len(sizes) > 1:
        raise ValueError(f"datasets disagree on N: {sorted(sizes)}")
    return SimulatedDataset(
        alpha0=np.concatenate([d.alpha0 for d in datasets]),
        beta=np.concatenate([d.beta for d in datasets]),
        x0=np.concatenate([d.x0 for d in datasets]),
        extra=np.concatenate([d.extra for d in datasets]),
        extra_alphas=np.concatenate([d.extra_alphas for d in datasets]),
    )


class Simulator(Protocol):
    """Anything that maps (alpha, beta) to one observation."""

    def simulate(self, alpha: np.ndarray, beta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...


def sample_prior(prior: PriorSpec, rng: np.random.Generator, size: int | None = None):
    """Draw from the box prior.

    Returns a :class:`Theta` when ``size`` is None, else a pair of arrays
    of shapes (size, dim_local) and (size, dim_global).
    """
    b = prior.bounds
    n = 1 if size is None else int(size)
    draws = rng.uniform(b[:, 0], b[:, 1], size=(n, b.shape[0]))
    alpha, beta = draws[:, : prior.dim_local], draws[:, prior.dim_local :]
    if size is None:
        return Theta(alpha=alpha[0], beta=beta[0])
    return alpha, beta


def prior_log_density(prior: PriorSpec, theta: Theta) -> float:
    """Log density of the box prior: -log(volume) inside, -inf outside."""
    if theta.alpha.shape[-1] != prior.dim_local or theta.beta.shape[-1] != prior.dim_global:
        raise ValueError(
            f"theta dimensions ({theta.alpha.shape[-1]}, {theta.beta.shape[-1]}) do not match "
            f"prior ({prior.dim_local}, {prior.dim_global})"
        )
    if prior.contains(theta.alpha, theta.beta).all():
        return -prior.log_volume
    return -np.inf


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent generator substreams derived from one master seed."""
    seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in seq.spawn(count)]
