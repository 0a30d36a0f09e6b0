"""Flow stack checks: invertibility, log-det consistency, masking
structure, sampling, and the set encoder's exact order invariance."""

import numpy as np
import pytest
import torch
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from hnpe.flows import (
    ConditionalFlow,
    DeepSetAggregator,
    MADEConditioner,
    MAFConfig,
    SplineFlowConfig,
    Standardize,
    build_maf,
    build_spline_flow,
    deepset_embed,
    flow_log_prob,
    flow_sample,
)

torch.set_num_threads(1)

LOG_2PI = float(np.log(2.0 * np.pi))


def perturb(flow: torch.nn.Module, seed: int, scale: float = 0.2) -> torch.nn.Module:
    """Seeded random parameter perturbation; breaks the identity init."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in flow.parameters():
            p += scale * torch.randn(p.shape, dtype=p.dtype, generator=g)
    return flow


def nn_entropy(x: np.ndarray, k: int = 1) -> float:
    """Kozachenko-Leonenko differential entropy estimate."""
    n, d = x.shape
    r, _ = cKDTree(x).query(x, k=k + 1)
    log_cd = (d / 2) * np.log(np.pi) - gammaln(d / 2 + 1)
    return float(digamma(n) - digamma(k) + log_cd + d * np.mean(np.log(r[:, k])))


def flow_cases():
    """Builders x dimensions exercised by the round-trip properties."""
    std2 = (np.array([0.5, -1.0]), np.array([2.0, 0.5]))
    return [
        ("maf-3d", 101, build_maf(MAFConfig(target_dim=3, context_dim=2))),
        ("maf-1d", 102, build_maf(MAFConfig(target_dim=1, context_dim=2))),
        ("maf-2d-std", 103, build_maf(MAFConfig(target_dim=2, context_dim=2),
                                      standardization=std2)),
        ("maf-uncond", 104, build_maf(MAFConfig(target_dim=2, context_dim=0))),
        ("spline-3d", 105, build_spline_flow(SplineFlowConfig(target_dim=3, context_dim=2))),
        ("spline-1d", 106, build_spline_flow(SplineFlowConfig(target_dim=1, context_dim=2))),
        ("spline-2d-std", 107, build_spline_flow(SplineFlowConfig(target_dim=2, context_dim=2),
                                                 standardization=std2)),
    ]


class TestIdentityInit:
    def test_maf_log_prob_at_origin(self):
        flow = build_maf(MAFConfig(target_dim=2, context_dim=3))
        with torch.no_grad():
            lp = flow_log_prob(flow, torch.zeros(2), torch.ones(3))
        assert abs(float(lp) + LOG_2PI) < 1e-12

    def test_spline_log_prob_at_origin(self):
        flow = build_spline_flow(SplineFlowConfig(target_dim=2, context_dim=3))
        with torch.no_grad():
            lp = flow_log_prob(flow, torch.zeros(2), torch.ones(3))
        assert abs(float(lp) + LOG_2PI) < 1e-12

    def test_context_irrelevant_at_init(self):
        # zero-initialized output layers ignore the context entirely
        flow = build_maf(MAFConfig(target_dim=2, context_dim=3))
        x = torch.tensor([0.3, -0.8], dtype=torch.float64)
        with torch.no_grad():
            a = flow_log_prob(flow, x, torch.zeros(3))
            b = flow_log_prob(flow, x, 100.0 * torch.ones(3))
        assert torch.equal(a, b)


class TestAffineChangeOfVariables:
    def test_scale_shifts_log_prob_by_log_det(self):
        # pure affine map u = x / s: log q(s z) = log N(z) - sum log s
        s = np.array([2.0, 5.0, 0.3])
        flow = ConditionalFlow([Standardize(np.zeros(3), s)], target_dim=3, context_dim=0)
        z = torch.tensor([0.4, -1.2, 0.9], dtype=torch.float64)
        with torch.no_grad():
            lp = flow_log_prob(flow, z * torch.from_numpy(s))
        base = -0.5 * float((z * z).sum()) - 1.5 * LOG_2PI
        assert abs(float(lp) - (base - np.log(s).sum())) < 1e-12


class TestRoundTrip:
    @pytest.mark.parametrize("name,seed,flow", flow_cases())
    def test_forward_inverse_recovers_input(self, name, seed, flow):
        perturb(flow, seed=seed)
        g = torch.Generator().manual_seed(0)
        x = 4.0 * torch.randn(1000, flow.target_dim, dtype=torch.float64, generator=g)
        ctx = (torch.randn(1000, flow.context_dim, dtype=torch.float64, generator=g)
               if flow.context_dim else None)
        with torch.no_grad():
            u, ld_f = flow.forward(x, ctx)
            x2, ld_i = flow.inverse(u, ctx)
        assert torch.isfinite(u).all()
        assert float((x - x2).abs().max()) < 1e-5
        assert float((ld_f + ld_i).abs().max()) < 1e-5

    @pytest.mark.parametrize("name,seed,flow", flow_cases())
    def test_inverse_forward_recovers_noise(self, name, seed, flow):
        perturb(flow, seed=seed)
        g = torch.Generator().manual_seed(1)
        u = torch.randn(1000, flow.target_dim, dtype=torch.float64, generator=g)
        ctx = (torch.randn(1000, flow.context_dim, dtype=torch.float64, generator=g)
               if flow.context_dim else None)
        with torch.no_grad():
            x, _ = flow.inverse(u, ctx)
            u2, _ = flow.forward(x, ctx)
        assert float((u - u2).abs().max()) < 1e-5


class TestLogDetFiniteDifference:
    @pytest.mark.parametrize("builder", [
        lambda: build_maf(MAFConfig(target_dim=3, context_dim=2)),
        lambda: build_spline_flow(SplineFlowConfig(target_dim=3, context_dim=2)),
    ])
    def test_matches_jacobian_determinant(self, builder):
        flow = perturb(builder(), seed=7)
        g = torch.Generator().manual_seed(2)
        eps = 1e-6
        for trial in range(3):
            x0 = 0.8 * torch.randn(3, dtype=torch.float64, generator=g)
            c0 = torch.randn(2, dtype=torch.float64, generator=g)
            jac = np.zeros((3, 3))
            with torch.no_grad():
                for j in range(3):
                    xp, xm = x0.clone(), x0.clone()
                    xp[j] += eps
                    xm[j] -= eps
                    up, _ = flow.forward(xp.unsqueeze(0), c0.unsqueeze(0))
                    um, _ = flow.forward(xm.unsqueeze(0), c0.unsqueeze(0))
                    jac[:, j] = ((up - um) / (2 * eps)).squeeze(0).numpy()
                _, ld = flow.forward(x0.unsqueeze(0), c0.unsqueeze(0))
            fd = np.log(abs(np.linalg.det(jac)))
            assert abs(float(ld) - fd) < 1e-4 * max(abs(fd), 1.0)


class TestMaskingStructure:
    def test_natural_order_strict_triangularity(self):
        # conditioner output for coordinate j never reads coordinates >= j
        cond = MADEConditioner(target_dim=4, context_dim=2, hidden_units=16,
                               hidden_layers=2, n_params=2, order=np.arange(1, 5))
        perturb(cond, seed=3)
        g = torch.Generator().manual_seed(4)
        x = torch.randn(8, 4, dtype=torch.float64, generator=g)
        c = torch.randn(8, 2, dtype=torch.float64, generator=g)
        with torch.no_grad():
            ref = cond(x, c)
            for k in range(4):
                bumped = x.clone()
                bumped[:, k] += 1.0
                out = cond(bumped, c)
                assert torch.equal(out[:, :k + 1], ref[:, :k + 1])
                if k < 3:
                    assert not torch.equal(out[:, k + 1:], ref[:, k + 1:])

    def test_reversed_order_mirrors_the_pattern(self):
        cond = MADEConditioner(target_dim=3, context_dim=0, hidden_units=16,
                               hidden_layers=2, n_params=2,
                               order=np.arange(1, 4)[::-1].copy())
        perturb(cond, seed=5)
        x = torch.randn(8, 3, dtype=torch.float64)
        with torch.no_grad():
            ref = cond(x, None)
            bumped = x.clone()
            bumped[:, 0] += 1.0  # degree 3: feeds nothing
            assert torch.equal(cond(bumped, None), ref)
            bumped = x.clone()
            bumped[:, 2] += 1.0  # degree 1: feeds both lower-degree outputs
            out = cond(bumped, None)
            assert torch.equal(out[:, 2], ref[:, 2])
            assert not torch.equal(out[:, :2], ref[:, :2])


class TestSampling:
    def test_identity_flow_samples_standard_normal(self):
        flow = build_maf(MAFConfig(target_dim=2, context_dim=0))
        n = 4000
        s = flow_sample(flow, n, generator=torch.Generator().manual_seed(6))
        assert float(s.mean(dim=0).abs().max()) < 4.0 / np.sqrt(n)
        assert abs(float(s.std(dim=0).max()) - 1.0) < 0.1

    def test_seeded_samples_reproduce(self):
        flow = perturb(build_maf(MAFConfig(target_dim=2, context_dim=2)), seed=8)
        ctx = torch.tensor([0.1, -0.4], dtype=torch.float64)
        a = flow_sample(flow, 64, ctx, torch.Generator().manual_seed(9))
        b = flow_sample(flow, 64, ctx, torch.Generator().manual_seed(9))
        assert torch.equal(a, b)

    def test_single_context_broadcasts(self):
        flow = perturb(build_spline_flow(SplineFlowConfig(target_dim=2, context_dim=3)), seed=10)
        s = flow_sample(flow, 32, torch.zeros(3), torch.Generator().manual_seed(11))
        assert s.shape == (32, 2)

    def test_rejects_nonpositive_n(self):
        flow = build_maf(MAFConfig(target_dim=1, context_dim=0))
        with pytest.raises(ValueError):
            flow_sample(flow, 0)


class TestEntropyCrossCheck:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_mean_log_prob_matches_nn_estimate(self, seed):
        torch.manual_seed(seed)
        flow = build_maf(MAFConfig(target_dim=2, context_dim=2, n_blocks=3, hidden_units=20))
        perturb(flow, seed=seed)
        ctx = torch.tensor([0.3, -0.7], dtype=torch.float64)
        s = flow_sample(flow, 10_000, ctx, torch.Generator().manual_seed(seed))
        with torch.no_grad():
            lp = flow_log_prob(flow, s, ctx.expand(10_000, -1))
        assert abs(-float(lp.mean()) - nn_entropy(s.numpy())) < 0.1


class TestDeepSet:
    def test_identity_scalar_mean(self):
        agg = DeepSetAggregator(member_dim=1)
        out = deepset_embed(agg, np.array([[0.2], [0.4], [0.6]]))
        assert abs(float(out[0]) - 0.4) < 1e-15

    @pytest.mark.parametrize("identity", [True, False])
    def test_permutation_exactly_invariant(self, identity):
        agg = DeepSetAggregator(member_dim=3, identity=identity, hidden_units=8)
        rng = np.random.default_rng(12)
        members = rng.normal(size=(10, 3))
        base = deepset_embed(agg, members)
        for _ in range(5):
            shuffled = members[rng.permutation(10)]
            assert torch.equal(deepset_embed(agg, shuffled), base)

    def test_duplication_leaves_embedding_unchanged(self):
        agg = DeepSetAggregator(member_dim=2)
        members = np.random.default_rng(13).normal(size=(7, 2))
        a = deepset_embed(agg, members)
        b = deepset_embed(agg, np.vstack([members, members]))
        assert float((a - b).abs().max()) < 1e-12

    def test_empty_set_sentinel(self):
        agg = DeepSetAggregator(member_dim=4)
        out, ok = agg.embed_or_flag(torch.zeros(0, 4, dtype=torch.float64))
        assert not ok
        assert torch.equal(out, torch.zeros(4, dtype=torch.float64))
        out, ok = agg.embed_or_flag(None)
        assert not ok

    @pytest.mark.parametrize("identity", [True, False])
    def test_batched_matches_sequential(self, identity):
        agg = DeepSetAggregator(member_dim=4, identity=identity, hidden_units=8)
        g = torch.Generator().manual_seed(14)
        batch = torch.randn(7, 5, 4, dtype=torch.float64, generator=g)
        with torch.no_grad():
            fused = agg.embed_batch(batch)
            seq = torch.stack([agg.embed(batch[i]) for i in range(batch.shape[0])])
        assert float((fused - seq).abs().max()) < 1e-12

    def test_forward_dispatches_on_rank(self):
        agg = DeepSetAggregator(member_dim=2)
        single = agg(torch.ones(3, 2, dtype=torch.float64))
        batched = agg(torch.ones(4, 3, 2, dtype=torch.float64))
        assert single.shape == (2,)
        assert batched.shape == (4, 2)

    def test_rejects_empty_and_wrong_rank(self):
        agg = DeepSetAggregator(member_dim=2)
        with pytest.raises(ValueError):
            agg.embed(torch.zeros(0, 2, dtype=torch.float64))
        with pytest.raises(ValueError):
            agg.embed_batch(torch.zeros(3, 0, 2, dtype=torch.float64))


class TestConfigValidation:
    def test_maf_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            MAFConfig(target_dim=0, context_dim=2)
        with pytest.raises(ValueError):
            MAFConfig(target_dim=2, context_dim=-1)
        with pytest.raises(ValueError):
            MAFConfig(target_dim=2, context_dim=2, n_blocks=0)

    def test_spline_rejects_bad_bins_and_bound(self):
        with pytest.raises(ValueError):
            SplineFlowConfig(target_dim=2, context_dim=1, n_bins=1)
        with pytest.raises(ValueError):
            SplineFlowConfig(target_dim=2, context_dim=1, bound=0.0)

    def test_standardize_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            Standardize(np.zeros(2), np.array([1.0, 0.0]))
