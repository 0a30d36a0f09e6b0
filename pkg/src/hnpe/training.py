"""Hierarchical posterior estimation with factorized conditional flows.

The estimator learns two flows sharing one summary pipeline:

* ``q_beta(beta | x0, f(X))`` over the shared global parameters, with
  the auxiliary observations entering through a permutation-invariant
  set embedding;
* ``q_alpha(alpha | beta, x0)`` over the local parameters of the focal
  observation.

The joint posterior density is their product. Training proceeds in
rounds: round 0 draws parameters from the prior, later rounds draw from
the current posterior conditioned on the observed bundle and apply an
atomic proposal correction so that the optimization target stays the
true posterior rather than the proposal-tilted one.

All feature vectors are standardized with statistics frozen from the
round-0 dataset; parameters are standardized inside the flows using the
exact prior-box moments. Every source of randomness is derived from one
integer seed, so reruns are bit-reproducible on a fixed platform.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import ObservationBundle, PriorSpec, SimulatedDataset, concatenate_datasets
from .flows import (
    ConditionalFlow,
    DeepSetAggregator,
    MAFConfig,
    SplineFlowConfig,
    build_maf,
    build_spline_flow,
)

__all__ = [
    "TrainConfig",
    "TrainingBatch",
    "TrainingHistory",
    "HNPEModel",
    "Proposal",
    "HierarchicalPosterior",
    "identity_features",
    "generate_round_dataset",
    "loss_alpha",
    "loss_beta",
    "atomic_joint_loss",
    "train_round",
    "fit_posterior",
    "posterior_sample",
]

_MAX_PROPOSAL_TRIES = 1000  # redraw cap per requested sample
_MAX_FAILURE_FRACTION = 0.2  # simulator failure budget per round
_CHECKPOINT_VERSION = 1


def identity_features(x: np.ndarray) -> np.ndarray:
    """Raw observation as its own feature vector."""
    return np.asarray(x, dtype=float).ravel()


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by every round."""

    rounds: int = 1
    sims_per_round: int = 1000
    learning_rate: float = 5e-4
    batch_size: int = 100
    n_atoms: int = 10
    validation_fraction: float = 0.1
    patience: int = 20
    max_epochs: int = 500
    flow_family: str = "maf"
    seed: int = 0

    def __post_init__(self):
        if min(self.rounds, self.sims_per_round, self.batch_size, self.n_atoms,
               self.patience, self.max_epochs) < 1:
            raise ValueError("all counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.flow_family not in ("maf", "spline"):
            raise ValueError(f"unknown flow family {self.flow_family!r}")


@dataclass
class TrainingBatch:
    """Featurized records ready for the losses.

    Features are raw (unstandardized); the model standardizes them with
    its frozen round-0 statistics. ``extra_feat`` is None when N = 0.
    """

    alpha: torch.Tensor  # (B, dim_local)
    beta: torch.Tensor  # (B, dim_global)
    x0_feat: torch.Tensor  # (B, F)
    extra_feat: torch.Tensor | None  # (B, N, F)
    from_prior: torch.Tensor | None = None  # (B,) bool, prior-drawn records

    def __len__(self) -> int:
        return self.alpha.shape[0]

    def select(self, idx: torch.Tensor) -> "TrainingBatch":
        return TrainingBatch(
            alpha=self.alpha[idx],
            beta=self.beta[idx],
            x0_feat=self.x0_feat[idx],
            extra_feat=None if self.extra_feat is None else self.extra_feat[idx],
            from_prior=None if self.from_prior is None else self.from_prior[idx],
        )


def featurize_dataset(dataset: SimulatedDataset, featurizer=identity_features) -> TrainingBatch:
    """Apply the summary pipeline to every observation of a dataset."""
    x0_feat = np.stack([featurizer(dataset.x0[j]) for j in range(dataset.n_records)])
    extra_feat = None
    if dataset.n_extra > 0:
        extra_feat = np.stack([
            np.stack([featurizer(dataset.extra[j, i]) for i in range(dataset.n_extra)])
            for j in range(dataset.n_records)
        ])
    return TrainingBatch(
        alpha=torch.as_tensor(dataset.alpha0, dtype=torch.float64),
        beta=torch.as_tensor(dataset.beta, dtype=torch.float64),
        x0_feat=torch.as_tensor(x0_feat, dtype=torch.float64),
        extra_feat=None if extra_feat is None else torch.as_tensor(extra_feat, dtype=torch.float64),
    )


@dataclass
class TrainingHistory:
    """Per-epoch loss curves and the early-stopping outcome."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    diverged: bool = False


class HNPEModel(torch.nn.Module):
    """The two conditional flows plus the shared set aggregator.

    The model is bound to one prior box, one auxiliary-set size N, and
    one feature dimension; those are fixed at construction and recorded
    in checkpoints.
    """

    def __init__(self, prior: PriorSpec, n_extra: int, feature_dim: int,
                 feature_mean: np.ndarray, feature_std: np.ndarray,
                 flow_family: str = "maf", seed: int = 0):
        super().__init__()
        if n_extra < 0:
            raise ValueError("n_extra must be nonnegative")
        if feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        feature_mean = np.asarray(feature_mean, dtype=float).reshape(feature_dim)
        feature_std = np.asarray(feature_std, dtype=float).reshape(feature_dim)
        if np.any(feature_std <= 0):
            raise ValueError("feature stds must be positive")
        self.prior = prior
        self.n_extra = int(n_extra)
        self.feature_dim = int(feature_dim)
        self.flow_family = flow_family
        self.seed = int(seed)

        mean, std = prior.standardization()
        da, db = prior.dim_local, prior.dim_global
        self.register_buffer("feat_mean", torch.as_tensor(feature_mean))
        self.register_buffer("feat_std", torch.as_tensor(feature_std))
        self.register_buffer("beta_loc", torch.as_tensor(mean[da:]))
        self.register_buffer("beta_scale", torch.as_tensor(std[da:]))

        self.aggregator = DeepSetAggregator(member_dim=feature_dim)
        beta_ctx = feature_dim + (self.aggregator.embed_dim if n_extra > 0 else 0)
        alpha_ctx = db + feature_dim
        # parameter init must not depend on ambient global RNG state
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.q_beta = self._build_flow(db, beta_ctx, (mean[da:], std[da:]), flow_family)
            self.q_alpha = self._build_flow(da, alpha_ctx, (mean[:da], std[:da]), flow_family)

    @staticmethod
    def _build_flow(target_dim: int, context_dim: int, standardization,
                    family: str) -> ConditionalFlow:
        if family == "maf":
            return build_maf(MAFConfig(target_dim=target_dim, context_dim=context_dim),
                             standardization=standardization)
        if family == "spline":
            return build_spline_flow(SplineFlowConfig(target_dim=target_dim, context_dim=context_dim),
                                     standardization=standardization)
        raise ValueError(f"unknown flow family {family!r}")

    def standardize_features(self, feats: torch.Tensor) -> torch.Tensor:
        return (feats - self.feat_mean) / self.feat_std

    def beta_context(self, x0_feat: torch.Tensor, extra_feat: torch.Tensor | None) -> torch.Tensor:
        """Context of q_beta: standardized x0 features, then the set embedding."""
        ctx = self.standardize_features(x0_feat)
        if self.n_extra == 0:
            if extra_feat is not None and extra_feat.shape[1] != 0:
                raise ValueError("model trained with N = 0 cannot take extra observations")
            return ctx
        if extra_feat is None or extra_feat.shape[1] != self.n_extra:
            got = 0 if extra_feat is None else extra_feat.shape[1]
            raise ValueError(f"model trained for N = {self.n_extra}, got N = {got}")
        emb = self.aggregator.embed_batch(self.standardize_features(extra_feat))
        return torch.cat([ctx, emb], dim=-1)

    def alpha_context(self, beta: torch.Tensor, x0_feat: torch.Tensor) -> torch.Tensor:
        """Context of q_alpha: standardized beta, then standardized x0 features."""
        bs = (beta - self.beta_loc) / self.beta_scale
        return torch.cat([bs, self.standardize_features(x0_feat)], dim=-1)

    def log_prob_beta(self, beta, x0_feat, extra_feat=None, *, context=None) -> torch.Tensor:
        ctx = self.beta_context(x0_feat, extra_feat) if context is None else context
        return self.q_beta.log_prob(beta, ctx)

    def log_prob_alpha(self, alpha, beta, x0_feat) -> torch.Tensor:
        return self.q_alpha.log_prob(alpha, self.alpha_context(beta, x0_feat))

    def joint_log_prob(self, alpha, beta, x0_feat, extra_feat=None, *, beta_context=None) -> torch.Tensor:
        lb = self.log_prob_beta(beta, x0_feat, extra_feat, context=beta_context)
        la = self.log_prob_alpha(alpha, beta, x0_feat)
        return lb + la

    def sample_joint(self, n: int, x0_feat: torch.Tensor, extra_feat: torch.Tensor | None,
                     generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """n draws of (alpha, beta) for one bundle's features.

        beta comes first (its flow sees the full bundle), then alpha
        conditionally on each beta.
        """
        if x0_feat.dim() == 1:
            x0_feat = x0_feat.unsqueeze(0)
        if extra_feat is not None and extra_feat.dim() == 2:
            extra_feat = extra_feat.unsqueeze(0)
        with torch.no_grad():
            ctx_b = self.beta_context(x0_feat, extra_feat)
            beta = self.q_beta.sample(n, ctx_b.squeeze(0), generator)
            ctx_a = self.alpha_context(beta, x0_feat.expand(n, -1))
            alpha = self.q_alpha.sample(n, ctx_a, generator)
        return alpha, beta

    def save(self, path) -> None:
        torch.save({
            "format_version": _CHECKPOINT_VERSION,
            "prior": self.prior.to_config(),
            "n_extra": self.n_extra,
            "feature_dim": self.feature_dim,
            "feature_mean": self.feat_mean.numpy(),
            "feature_std": self.feat_std.numpy(),
            "flow_family": self.flow_family,
            "seed": self.seed,
            "state_dict": self.state_dict(),
        }, path)

    @classmethod
    def load(cls, path) -> "HNPEModel":
        payload = torch.load(path, weights_only=False)
        version = payload.get("format_version")
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version!r}")
        model = cls(
            prior=PriorSpec.from_config(payload["prior"]),
            n_extra=payload["n_extra"],
            feature_dim=payload["feature_dim"],
            feature_mean=payload["feature_mean"],
            feature_std=payload["feature_std"],
            flow_family=payload["flow_family"],
            seed=payload["seed"],
        )
        model.load_state_dict(payload["state_dict"])
        return model


def feature_statistics(batch: TrainingBatch) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std over every observation of a round-0 batch."""
    feats = batch.x0_feat
    if batch.extra_feat is not None:
        feats = torch.cat([feats, batch.extra_feat.reshape(-1, feats.shape[-1])], dim=0)
    mean = feats.mean(dim=0).numpy()
    std = feats.std(dim=0, unbiased=False).numpy()
    return mean, np.maximum(std, 1e-12)


def loss_alpha(model: HNPEModel, batch: TrainingBatch) -> torch.Tensor:
    """Mean negative log-density of the local parameters under q_alpha."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return -model.log_prob_alpha(batch.alpha, batch.beta, batch.x0_feat).mean()


def loss_beta(model: HNPEModel, batch: TrainingBatch) -> torch.Tensor:
    """Mean negative log-density of the global parameters under q_beta."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return -model.log_prob_beta(batch.beta, batch.x0_feat, batch.extra_feat).mean()


def atomic_joint_loss(model: HNPEModel, batch: TrainingBatch, n_atoms: int,
                      generator: torch.Generator | None = None) -> torch.Tensor:
    """Classification-style loss over contrastive parameter atoms.

    Each record competes against parameter pairs borrowed from other
    records of the same batch. With a uniform prior over the box the
    prior terms of the correction cancel inside the softmax, leaving the
    joint flow density as the logit. Falls back to plain maximum
    likelihood when the batch cannot provide a second atom.

    Once the proposal concentrates, contrast atoms become trivially
    separable and the softmax gradients vanish; prior-drawn records
    (``batch.from_prior``) therefore keep their maximum-likelihood term
    on top of the atomic one, anchoring the density where the
    classification signal has gone flat.
    """
    b = len(batch)
    if b < 2 or n_atoms < 2:
        return loss_alpha(model, batch) + loss_beta(model, batch)
    m = min(n_atoms, b)
    own = torch.arange(b).unsqueeze(1)
    offsets = torch.randint(1, b, (b, m - 1), generator=generator)
    idx = torch.cat([own, (own + offsets) % b], dim=1).reshape(-1)  # self first, never repeated
    alpha, beta = batch.alpha[idx], batch.beta[idx]
    x0 = batch.x0_feat.repeat_interleave(m, dim=0)
    ctx_b = model.beta_context(batch.x0_feat, batch.extra_feat).repeat_interleave(m, dim=0)
    logq = model.joint_log_prob(alpha, beta, x0, beta_context=ctx_b).reshape(b, m)
    classification = -(logq[:, 0] - torch.logsumexp(logq, dim=1))
    if batch.from_prior is not None:
        classification = classification - batch.from_prior.to(logq.dtype) * logq[:, 0]
    return classification.mean()


class Proposal:
    """Parameter source for one round: the prior, or a trained posterior.

    Posterior proposals are clipped to the prior box by rejection, so
    downstream densities never see out-of-support parameters.
    """

    def __init__(self, prior: PriorSpec, posterior: "HierarchicalPosterior | None" = None,
                 round_index: int = 0):
        if round_index > 0 and posterior is None:
            raise ValueError("rounds past the first need a posterior to propose from")
        self.prior = prior
        self.posterior = posterior
        self.round_index = int(round_index)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.posterior is None:
            from .core import sample_prior
            return sample_prior(self.prior, rng, size=n)
        alphas = np.empty((n, self.prior.dim_local))
        betas = np.empty((n, self.prior.dim_global))
        have = 0
        for _ in range(_MAX_PROPOSAL_TRIES):
            need = n - have
            if need == 0:
                break
            draw = self.posterior.sample_arrays(need, rng)
            a, b = draw[:, : self.prior.dim_local], draw[:, self.prior.dim_local:]
            keep = self.prior.contains(a, b)
            k = int(keep.sum())
            alphas[have:have + k] = a[keep]
            betas[have:have + k] = b[keep]
            have += k
        if have < n:
            raise RuntimeError(
                f"proposal rejection cap hit: {have}/{n} samples inside the prior box "
                f"after {_MAX_PROPOSAL_TRIES} rounds"
            )
        return alphas, betas

    def log_density(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Per-sample log proposal density (box-truncation ignored)."""
        alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
        beta = np.atleast_2d(np.asarray(beta, dtype=float))
        inside = self.prior.contains(alpha, beta)
        if self.posterior is None:
            return np.where(inside, -self.prior.log_volume, -np.inf)
        vals = self.posterior.log_prob(np.concatenate([alpha, beta], axis=-1))
        return np.where(inside, vals, -np.inf)


def generate_round_dataset(simulator, prior: PriorSpec, proposal: Proposal,
                           n_extra: int, n: int, rng: np.random.Generator) -> SimulatedDataset:
    """Simulate n records: focal pairs from the proposal, auxiliary
    locals always from the original prior, all sharing the record's beta.

    Failed simulations are dropped and redrawn; the round aborts once
    more than 20% of all attempts have failed.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if n_extra < 0:
        raise ValueError("n_extra must be nonnegative")
    lb = np.asarray(prior.local_bounds, dtype=float)
    parts: list[tuple[np.ndarray, ...]] = []
    have = 0
    attempted = 0
    failed = 0
    while have < n:
        need = n - have
        alpha0, beta = proposal.sample(need, rng)
        x0, ok = simulator.simulate_batch(alpha0, beta, seed=int(rng.integers(2**63)))
        if n_extra > 0:
            extra_alphas = rng.uniform(lb[:, 0], lb[:, 1], size=(need, n_extra, lb.shape[0]))
            flat_alphas = extra_alphas.reshape(need * n_extra, -1)
            flat_betas = np.repeat(beta, n_extra, axis=0)
            xe, ok_e = simulator.simulate_batch(flat_alphas, flat_betas, seed=int(rng.integers(2**63)))
            extra = xe.reshape(need, n_extra, *xe.shape[1:])
            ok = ok & ok_e.reshape(need, n_extra).all(axis=1)
        else:
            extra_alphas = np.empty((need, 0, lb.shape[0]))
            extra = np.empty((need, 0) + x0.shape[1:])
        attempted += need
        failed += int((~ok).sum())
        if failed > _MAX_FAILURE_FRACTION * attempted:
            raise RuntimeError(
                f"simulator failure rate too high: {failed}/{attempted} records failed"
            )
        parts.append((alpha0[ok], beta[ok], x0[ok], extra[ok], extra_alphas[ok]))
        have += int(ok.sum())
    cat = [np.concatenate([p[i] for p in parts], axis=0)[:n] for i in range(5)]
    return SimulatedDataset(alpha0=cat[0], beta=cat[1], x0=cat[2], extra=cat[3], extra_alphas=cat[4])


def _objective(model: HNPEModel, batch: TrainingBatch, config: TrainConfig,
               correction: bool, generator: torch.Generator | None) -> torch.Tensor:
    if correction:
        return atomic_joint_loss(model, batch, config.n_atoms, generator)
    return loss_alpha(model, batch) + loss_beta(model, batch)


def train_round(model: HNPEModel, dataset: SimulatedDataset, config: TrainConfig,
                featurizer=identity_features, correction: bool = False,
                seed: int | None = None, n_prior: int | None = None) -> TrainingHistory:
    """One round of Adam with early stopping on a held-out split.

    The model is left holding the best-validation parameters. A
    nonfinite loss aborts the round and restores the last finite best.
    When correcting, ``n_prior`` marks the leading records as
    prior-drawn so they keep their maximum-likelihood anchor.
    """
    seed = config.seed if seed is None else int(seed)
    data = featurize_dataset(dataset, featurizer)
    if correction and n_prior is not None:
        data.from_prior = torch.arange(len(data)) < int(n_prior)
    n = len(data)
    if n < 2:
        raise ValueError("dataset too small to split")
    gen = torch.Generator().manual_seed(seed)
    perm = torch.randperm(n, generator=gen)
    n_val = max(1, int(round(config.validation_fraction * n)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.numel() == 0:
        raise ValueError("validation split leaves no training data")
    val_batch = data.select(val_idx)

    def validation_loss(epoch: int) -> float:
        model.eval()
        with torch.no_grad():
            if correction and val_batch.from_prior is not None:
                # The atomic loss keeps improving as the flow sharpens
                # past the data's resolution; held-out likelihood on
                # prior-drawn records collapses instead, so it is the
                # selection signal.
                anchored = val_batch.from_prior
                subset = val_batch.select(anchored) if bool(anchored.any()) else val_batch
                return float(loss_alpha(model, subset) + loss_beta(model, subset))
            # fixed per-epoch generator keeps the validation loss comparable
            val_gen = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
            return float(_objective(model, val_batch, config, correction, val_gen))

    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = TrainingHistory()
    best_state = copy.deepcopy(model.state_dict())
    baseline = validation_loss(-1)
    if np.isfinite(baseline):
        # the incoming weights compete: a round that never beats them
        # hands them back unchanged
        history.best_val = baseline
    for epoch in range(config.max_epochs):
        model.train()
        order = train_idx[torch.randperm(train_idx.numel(), generator=gen)]
        epoch_loss = 0.0
        diverged = False
        for lo in range(0, order.numel(), config.batch_size):
            sel = order[lo:lo + config.batch_size]
            loss = _objective(model, data.select(sel), config, correction, gen)
            if not torch.isfinite(loss):
                diverged = True
                break
            opt.zero_grad()
            loss.backward()
            # density gradients blow up near degenerate ridges
            torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
            opt.step()
            epoch_loss += float(loss.detach()) * sel.numel()
        if diverged:
            history.diverged = True
            break
        val = validation_loss(epoch)
        history.train_loss.append(epoch_loss / order.numel())
        history.val_loss.append(val)
        if not np.isfinite(val):
            history.diverged = True
            break
        if val < history.best_val:
            history.best_val = val
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        elif epoch - history.best_epoch >= config.patience:
            break
    if history.diverged:
        warnings.warn("training diverged; restoring the best finite checkpoint")
    model.load_state_dict(best_state)
    model.eval()
    return history


class HierarchicalPosterior:
    """A trained model bound to a summary pipeline and a default bundle.

    ``sample`` and ``log_prob`` condition on any bundle with the
    model's auxiliary-set size; the bundle seen during training is only
    a default.
    """

    def __init__(self, model: HNPEModel, featurizer=identity_features,
                 default_bundle: ObservationBundle | None = None):
        self.model = model
        self.featurizer = featurizer
        self._default = None
        if default_bundle is not None:
            self._default = self._featurize(default_bundle)

    def _featurize(self, bundle: ObservationBundle) -> tuple[torch.Tensor, torch.Tensor | None]:
        if bundle.n_extra != self.model.n_extra:
            raise ValueError(
                f"model trained for N = {self.model.n_extra}, bundle has N = {bundle.n_extra}"
            )
        x0 = torch.as_tensor(self.featurizer(bundle.x0), dtype=torch.float64)
        extra = None
        if bundle.n_extra > 0:
            extra = torch.as_tensor(
                np.stack([self.featurizer(e) for e in bundle.extra]), dtype=torch.float64
            ).unsqueeze(0)
        return x0.unsqueeze(0), extra

    def _context(self, bundle: ObservationBundle | None):
        if bundle is None:
            if self._default is None:
                raise ValueError("no bundle given and no default stored")
            return self._default
        return self._featurize(bundle)

    def sample(self, n: int, rng: np.random.Generator,
               bundle: ObservationBundle | None = None) -> np.ndarray:
        """n posterior draws, columns ordered (alpha, beta)."""
        x0_feat, extra_feat = self._context(bundle)
        generator = torch.Generator().manual_seed(int(rng.integers(2**63)))
        alpha, beta = self.model.sample_joint(n, x0_feat, extra_feat, generator)
        return np.concatenate([alpha.numpy(), beta.numpy()], axis=-1)

    def sample_arrays(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample(n, rng)

    def log_prob(self, theta: np.ndarray, bundle: ObservationBundle | None = None) -> np.ndarray:
        """Joint log-density of (alpha, beta) rows for one bundle."""
        x0_feat, extra_feat = self._context(bundle)
        theta = torch.as_tensor(np.atleast_2d(theta), dtype=torch.float64)
        da = self.model.prior.dim_local
        n = theta.shape[0]
        with torch.no_grad():
            vals = self.model.joint_log_prob(
                theta[:, :da], theta[:, da:],
                x0_feat.expand(n, -1),
                None if extra_feat is None else extra_feat.expand(n, -1, -1),
            )
        return vals.numpy()


def fit_posterior(simulator, prior: PriorSpec, observed: ObservationBundle | None,
                   config: TrainConfig, featurizer=identity_features,
                   round_hook=None, n_extra: int | None = None) -> HierarchicalPosterior:
    """Sequential rounds of simulate / fit, focused on one observed bundle.

    Round 0 trains an amortized estimator from prior simulations; each
    later round proposes parameters from the current posterior at the
    observed bundle. Rounds past the first retrain on the union of all
    datasets drawn so far under the atomic correction, which keeps the
    target the true posterior whatever mixture of proposals produced
    the records. The optional ``round_hook(r, dataset, model, history)``
    runs after each round with that round's fresh dataset.

    A single-round fit is fully amortized and may omit the observed
    bundle, in which case ``n_extra`` sets the auxiliary-set size.
    """
    rng = np.random.default_rng(config.seed)
    if observed is None:
        if config.rounds > 1:
            raise ValueError("rounds past the first need an observed bundle to propose at")
        if n_extra is None:
            raise ValueError("give either an observed bundle or n_extra")
    else:
        if n_extra is not None and n_extra != observed.n_extra:
            raise ValueError(f"n_extra = {n_extra} contradicts the bundle's N = {observed.n_extra}")
        n_extra = observed.n_extra
    model: HNPEModel | None = None
    datasets: list[SimulatedDataset] = []
    for r in range(config.rounds):
        if r == 0:
            proposal = Proposal(prior)
        else:
            posterior = HierarchicalPosterior(model, featurizer, observed)
            proposal = Proposal(prior, posterior=posterior, round_index=r)
        dataset = generate_round_dataset(simulator, prior, proposal, n_extra,
                                         config.sims_per_round, rng)
        datasets.append(dataset)
        if model is None:
            probe = featurize_dataset(dataset, featurizer)
            mean, std = feature_statistics(probe)
            model = HNPEModel(prior, n_extra, probe.x0_feat.shape[-1], mean, std,
                              flow_family=config.flow_family, seed=config.seed)
        history = train_round(model, concatenate_datasets(datasets), config, featurizer,
                              correction=(r > 0), seed=config.seed + r,
                              n_prior=datasets[0].n_records)
        if round_hook is not None:
            round_hook(r, dataset, model, history)
    return HierarchicalPosterior(model, featurizer, observed)


def posterior_sample(posterior: HierarchicalPosterior, bundle: ObservationBundle | None,
                     n: int, rng: np.random.Generator) -> np.ndarray:
    """n (alpha, beta) pairs from a trained posterior at a bundle."""
    if n < 1:
        raise ValueError("n must be positive")
    return posterior.sample(n, rng, bundle)
