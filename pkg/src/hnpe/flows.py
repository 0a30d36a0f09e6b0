"""Conditional normalizing flows and the permutation-invariant set encoder.

Two flow families, both conditioned on a context vector:

* masked autoregressive flow: stacked MADE blocks with affine
  transforms, reverse ordering between blocks;
* linear spline flow: stacked monotone piecewise-linear maps on a fixed
  interval, identity tails outside.

One-dimensional targets have no autoregressive structure, so their
conditioners are plain dense networks reading the context alone. All
modules are float64: the invertibility and log-det contracts are tested
at tolerances float32 cannot hold.

Convention: ``forward`` maps target to base noise (the density
evaluation direction, one pass), ``inverse`` maps noise to target (the
sampling direction, one pass per target dimension for autoregressive
blocks). Both return (output, log|det J|).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "ConditionalFlow",
    "MAFConfig",
    "SplineFlowConfig",
    "DeepSetAggregator",
    "build_maf",
    "build_spline_flow",
    "flow_log_prob",
    "flow_sample",
    "deepset_embed",
]

_LOG_SCALE_CAP = 5.0  # tanh cap on affine log-scales, keeps exp() sane
_MIN_BIN_MASS = 1e-6  # floor on spline bin probabilities


class MaskedLinear(nn.Module):
    """Linear layer with a fixed binary mask; context enters unmasked."""

    def __init__(self, in_features: int, out_features: int, mask: torch.Tensor,
                 context_features: int | None = None):
        super().__init__()
        self.linear = nn.Linear(in_features, out_features, dtype=torch.float64)
        self.register_buffer("mask", mask.to(torch.float64))
        self.context_linear = None
        if context_features:
            self.context_linear = nn.Linear(context_features, out_features,
                                            bias=False, dtype=torch.float64)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        out = F.linear(x, self.linear.weight * self.mask, self.linear.bias)
        if self.context_linear is not None and context is not None:
            out = out + self.context_linear(context)
        return out


def _made_masks(order: np.ndarray, hidden_units: int, hidden_layers: int,
                n_params: int) -> tuple[list[torch.Tensor], torch.Tensor]:
    """Degree-based masks for one MADE with the given input ordering.

    order holds input degrees (a permutation of 1..d). Hidden degrees
    cycle over 1..d-1; the output for dimension i carries degree
    order[i] and connects strictly below it.
    """
    d = order.size
    if d < 2:
        raise ValueError("MADE needs at least 2 target dimensions")
    degrees = [order]
    for _ in range(hidden_layers):
        degrees.append(np.arange(hidden_units) % (d - 1) + 1)
    masks = []
    for prev, cur in zip(degrees[:-1], degrees[1:]):
        masks.append(torch.from_numpy((cur[:, None] >= prev[None, :]).astype(np.float64)))
    out_deg = np.repeat(order, n_params)
    masks.append(torch.from_numpy((out_deg[:, None] > degrees[-1][None, :]).astype(np.float64)))
    return masks, torch.from_numpy(out_deg)


class MADEConditioner(nn.Module):
    """Autoregressive conditioner: (B, d) target, (B, c) context ->
    (B, d, n_params), with params for dim i a function of target dims of
    strictly lower degree plus the full context."""

    def __init__(self, target_dim: int, context_dim: int, hidden_units: int,
                 hidden_layers: int, n_params: int, order: np.ndarray):
        super().__init__()
        masks, _ = _made_masks(order, hidden_units, hidden_layers, n_params)
        self.target_dim = target_dim
        self.n_params = n_params
        self.order = order
        self.input_layer = MaskedLinear(target_dim, hidden_units, masks[0], context_dim)
        self.hidden = nn.ModuleList(
            MaskedLinear(hidden_units, hidden_units, m) for m in masks[1:-1]
        )
        self.output_layer = MaskedLinear(hidden_units, target_dim * n_params, masks[-1])
        # identity initialization: zero params regardless of inputs
        nn.init.zeros_(self.output_layer.linear.weight)
        nn.init.zeros_(self.output_layer.linear.bias)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None) -> torch.Tensor:
        h = torch.relu(self.input_layer(x, context))
        for layer in self.hidden:
            h = torch.relu(layer(h))
        out = self.output_layer(h)
        return out.view(*x.shape[:-1], self.target_dim, self.n_params)


class ContextConditioner(nn.Module):
    """Dense conditioner reading the context only (1-d targets)."""

    def __init__(self, target_dim: int, context_dim: int, hidden_units: int,
                 hidden_layers: int, n_params: int):
        super().__init__()
        self.target_dim = target_dim
        self.n_params = n_params
        if context_dim == 0:
            # unconditional: one learned parameter vector
            self.bias = nn.Parameter(torch.zeros(target_dim * n_params, dtype=torch.float64))
            self.net = None
            return
        layers: list[nn.Module] = []
        width = context_dim
        for _ in range(hidden_layers):
            layers += [nn.Linear(width, hidden_units, dtype=torch.float64), nn.ReLU()]
            width = hidden_units
        last = nn.Linear(width, target_dim * n_params, dtype=torch.float64)
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)
        layers.append(last)
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None) -> torch.Tensor:
        if self.net is None:
            out = self.bias.expand(*x.shape[:-1], self.bias.numel())
        else:
            if context is None:
                raise ValueError("conditioner requires a context vector")
            out = self.net(context)
        return out.view(*x.shape[:-1], self.target_dim, self.n_params)


def _make_conditioner(target_dim: int, context_dim: int, hidden_units: int,
                      hidden_layers: int, n_params: int, reverse: bool) -> nn.Module:
    if target_dim == 1:
        return ContextConditioner(target_dim, context_dim, hidden_units, hidden_layers, n_params)
    order = np.arange(1, target_dim + 1)
    if reverse:
        order = order[::-1].copy()
    return MADEConditioner(target_dim, context_dim, hidden_units, hidden_layers, n_params, order)


class AffineBlock(nn.Module):
    """Autoregressive affine transform u = (x - shift) * exp(-scale)."""

    def __init__(self, conditioner: nn.Module):
        super().__init__()
        self.conditioner = conditioner

    def _params(self, x, context):
        p = self.conditioner(x, context)
        shift = p[..., 0]
        scale = _LOG_SCALE_CAP * torch.tanh(p[..., 1] / _LOG_SCALE_CAP)
        return shift, scale

    def forward(self, x, context):
        shift, scale = self._params(x, context)
        u = (x - shift) * torch.exp(-scale)
        return u, -scale.sum(dim=-1)

    def inverse(self, u, context):
        x = torch.zeros_like(u)
        # one pass per dimension resolves the autoregression exactly
        for _ in range(u.shape[-1]):
            shift, scale = self._params(x, context)
            x = u * torch.exp(scale) + shift
        return x, scale.sum(dim=-1)


class LinearSplineBlock(nn.Module):
    """Monotone piecewise-linear map on [-bound, bound], identity tails.

    The conditioner emits one logit per bin; bin masses are a floored
    softmax, so zero logits give the identity map.
    """

    def __init__(self, conditioner: nn.Module, n_bins: int, bound: float):
        super().__init__()
        if n_bins < 2:
            raise ValueError("need at least 2 bins")
        self.conditioner = conditioner
        self.n_bins = n_bins
        self.bound = float(bound)

    def _bin_masses(self, x, context):
        logits = self.conditioner(x, context)
        p = torch.softmax(logits, dim=-1)
        return (p + _MIN_BIN_MASS) / (1.0 + self.n_bins * _MIN_BIN_MASS)

    def _push(self, x, p):
        """Elementwise forward map and log-slope for bin masses p."""
        b, k = self.bound, self.n_bins
        width = 2.0 * b / k
        cum = torch.cumsum(p, dim=-1)
        cum = torch.cat([torch.zeros_like(cum[..., :1]), cum], dim=-1)
        inside = x.abs() <= b
        t = torch.clamp((x + b) / width, 0.0, k - 1e-12)
        idx = t.long().clamp(0, k - 1)
        frac = t - idx.to(x.dtype)
        pk = torch.gather(p, -1, idx.unsqueeze(-1)).squeeze(-1)
        ck = torch.gather(cum, -1, idx.unsqueeze(-1)).squeeze(-1)
        y_in = -b + 2.0 * b * (ck + pk * frac)
        y = torch.where(inside, y_in, x)
        ld = torch.where(inside, torch.log(pk * k), torch.zeros_like(x))
        return y, ld

    def forward(self, x, context):
        p = self._bin_masses(x, context)
        u, ld = self._push(x, p)
        return u, ld.sum(dim=-1)

    def inverse(self, u, context):
        b, k = self.bound, self.n_bins
        width = 2.0 * b / k
        x = torch.zeros_like(u)
        passes = u.shape[-1] if isinstance(self.conditioner, MADEConditioner) else 1
        for _ in range(passes):
            p = self._bin_masses(x, context)
            cum = torch.cumsum(p, dim=-1)
            cum = torch.cat([torch.zeros_like(cum[..., :1]), cum], dim=-1)
            inside = u.abs() <= b
            v = torch.clamp((u + b) / (2.0 * b), 0.0, 1.0)
            idx = (torch.searchsorted(cum, v.unsqueeze(-1), right=True).squeeze(-1) - 1).clamp(0, k - 1)
            pk = torch.gather(p, -1, idx.unsqueeze(-1)).squeeze(-1)
            ck = torch.gather(cum, -1, idx.unsqueeze(-1)).squeeze(-1)
            frac = (v - ck) / pk
            x_in = -b + width * (idx.to(u.dtype) + frac)
            x = torch.where(inside, x_in, u)
            ld = torch.where(inside, -torch.log(pk * k), torch.zeros_like(u))
        return x, ld.sum(dim=-1)


class Standardize(nn.Module):
    """Fixed affine (x - mean) / std applied before the learned stack."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        super().__init__()
        std = np.asarray(std, dtype=float)
        if np.any(std <= 0):
            raise ValueError("standardization scales must be positive")
        self.register_buffer("mean", torch.as_tensor(np.asarray(mean, dtype=float)))
        self.register_buffer("std", torch.as_tensor(std))

    def forward(self, x, context):
        u = (x - self.mean) / self.std
        ld = -torch.log(self.std).sum()
        return u, ld.expand(x.shape[:-1])

    def inverse(self, u, context):
        x = u * self.std + self.mean
        ld = torch.log(self.std).sum()
        return x, ld.expand(u.shape[:-1])


class ConditionalFlow(nn.Module):
    """Transform stack over a standard-normal base of fixed dimension."""

    def __init__(self, transforms: list[nn.Module], target_dim: int, context_dim: int):
        super().__init__()
        self.transforms = nn.ModuleList(transforms)
        self.target_dim = target_dim
        self.context_dim = context_dim

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None):
        """Target -> base noise, with accumulated log|det J|."""
        ld = torch.zeros(x.shape[:-1], dtype=x.dtype)
        for t in self.transforms:
            x, step_ld = t(x, context)
            ld = ld + step_ld
        return x, ld

    def inverse(self, u: torch.Tensor, context: torch.Tensor | None = None):
        """Base noise -> target, with accumulated log|det J|."""
        ld = torch.zeros(u.shape[:-1], dtype=u.dtype)
        for t in reversed(self.transforms):
            u, step_ld = t.inverse(u, context)
            ld = ld + step_ld
        return u, ld

    def log_prob(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        u, ld = self.forward(x, context)
        base = -0.5 * (u * u).sum(dim=-1) - 0.5 * self.target_dim * np.log(2.0 * np.pi)
        return base + ld

    def sample(self, n: int, context: torch.Tensor | None = None,
               generator: torch.Generator | None = None) -> torch.Tensor:
        u = torch.randn(n, self.target_dim, dtype=torch.float64, generator=generator)
        if context is not None:
            context = torch.as_tensor(context, dtype=torch.float64)
            if context.dim() == 1:
                context = context.expand(n, -1)
        with torch.no_grad():
            x, _ = self.inverse(u, context)
        return x


@dataclass(frozen=True)
class MAFConfig:
    """Masked autoregressive flow: stacked affine MADE blocks."""

    target_dim: int
    context_dim: int
    n_blocks: int = 5
    hidden_layers: int = 2
    hidden_units: int = 50

    def __post_init__(self):
        if min(self.target_dim, self.n_blocks, self.hidden_layers, self.hidden_units) < 1:
            raise ValueError("MAF dimensions must be positive")
        if self.context_dim < 0:
            raise ValueError("context_dim must be nonnegative")


@dataclass(frozen=True)
class SplineFlowConfig:
    """Linear-order spline flow on a fixed standardized interval."""

    target_dim: int
    context_dim: int
    n_bins: int = 10
    hidden_layers: int = 2
    hidden_units: int = 20
    bound: float = 3.0
    n_blocks: int = 3

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be at least 2")
        if min(self.target_dim, self.n_blocks, self.hidden_layers, self.hidden_units) < 1:
            raise ValueError("spline dimensions must be positive")
        if self.bound <= 0:
            raise ValueError("bound must be positive")


def _standardize_head(standardization) -> list[nn.Module]:
    if standardization is None:
        return []
    mean, std = standardization
    return [Standardize(mean, std)]


def build_maf(config: MAFConfig, standardization=None) -> ConditionalFlow:
    """Affine MAF; identity-initialized, standardization (mean, std) first."""
    transforms = _standardize_head(standardization)
    for i in range(config.n_blocks):
        # input ordering alternates natural / reversed between blocks
        cond = _make_conditioner(config.target_dim, config.context_dim,
                                 config.hidden_units, config.hidden_layers,
                                 n_params=2, reverse=bool(i % 2))
        transforms.append(AffineBlock(cond))
    return ConditionalFlow(transforms, config.target_dim, config.context_dim)


def build_spline_flow(config: SplineFlowConfig, standardization=None) -> ConditionalFlow:
    """Linear spline flow; identity-initialized, standardization first."""
    transforms = _standardize_head(standardization)
    for i in range(config.n_blocks):
        cond = _make_conditioner(config.target_dim, config.context_dim,
                                 config.hidden_units, config.hidden_layers,
                                 n_params=config.n_bins, reverse=bool(i % 2))
        transforms.append(LinearSplineBlock(cond, config.n_bins, config.bound))
    return ConditionalFlow(transforms, config.target_dim, config.context_dim)


class DeepSetAggregator(nn.Module):
    """Set encoder g(mean_i h(x_i)); identity h and g by default.

    The single-set path sums members in a canonical order (lexicographic
    sort of the member vectors), so the embedding is exactly invariant
    to the input ordering. The batched path sums in index order; it
    matches the single-set path to float64 round-off and exists for the
    flattened n_b x N training pass.
    """

    def __init__(self, member_dim: int, identity: bool = True,
                 hidden_units: int = 20, embed_dim: int | None = None):
        super().__init__()
        self.member_dim = member_dim
        self.identity = identity
        if identity:
            self.embed_dim = member_dim
            self.inner = None
            self.outer = None
        else:
            self.embed_dim = embed_dim or member_dim
            self.inner = nn.Sequential(
                nn.Linear(member_dim, hidden_units, dtype=torch.float64), nn.ReLU(),
                nn.Linear(hidden_units, self.embed_dim, dtype=torch.float64),
            )
            self.outer = nn.Sequential(
                nn.Linear(self.embed_dim, hidden_units, dtype=torch.float64), nn.ReLU(),
                nn.Linear(hidden_units, self.embed_dim, dtype=torch.float64),
            )

    def _h(self, x):
        return x if self.inner is None else self.inner(x)

    def _g(self, x):
        return x if self.outer is None else self.outer(x)

    def embed(self, members: torch.Tensor) -> torch.Tensor:
        """(N, d) -> (embed_dim,), canonical summation order."""
        if members.dim() != 2 or members.shape[0] == 0:
            raise ValueError("embed expects a nonempty (N, d) set")
        keys = members.detach().cpu().numpy()
        order = np.lexsort(keys.T[::-1])  # primary key: first feature
        h = self._h(members[order])
        total = torch.zeros(h.shape[-1], dtype=members.dtype)
        for i in range(h.shape[0]):  # fixed-order summation, exact invariance
            total = total + h[i]
        return self._g(total / h.shape[0])

    def embed_or_flag(self, members: torch.Tensor | None) -> tuple[torch.Tensor, bool]:
        """Empty sets yield a zero sentinel and a False flag."""
        if members is None or members.shape[0] == 0:
            return torch.zeros(self.embed_dim, dtype=torch.float64), False
        return self.embed(members), True

    def embed_batch(self, members: torch.Tensor) -> torch.Tensor:
        """(B, N, d) -> (B, embed_dim) in one flattened pass."""
        if members.dim() != 3 or members.shape[1] == 0:
            raise ValueError("embed_batch expects nonempty (B, N, d) sets")
        b, n, d = members.shape
        h = self._h(members.reshape(b * n, d)).reshape(b, n, -1)
        return self._g(h.mean(dim=1))

    def forward(self, members: torch.Tensor) -> torch.Tensor:
        return self.embed_batch(members) if members.dim() == 3 else self.embed(members)


def flow_log_prob(flow: ConditionalFlow, target, context=None) -> torch.Tensor:
    """Log-density of target under the flow for the given context."""
    target = torch.as_tensor(target, dtype=torch.float64)
    squeeze = target.dim() == 1
    if squeeze:
        target = target.unsqueeze(0)
        if context is not None:
            context = torch.as_tensor(context, dtype=torch.float64).unsqueeze(0)
    elif context is not None:
        context = torch.as_tensor(context, dtype=torch.float64)
    out = flow.log_prob(target, context)
    return out.squeeze(0) if squeeze else out


def flow_sample(flow: ConditionalFlow, n: int, context=None,
                generator: torch.Generator | None = None) -> torch.Tensor:
    """n pushforward samples for one shared context vector."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return flow.sample(n, context, generator)


def deepset_embed(agg: DeepSetAggregator, members) -> torch.Tensor:
    """Order-independent embedding of one set of feature vectors."""
    return agg.embed(torch.as_tensor(np.asarray(members), dtype=torch.float64))
