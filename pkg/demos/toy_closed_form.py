"""
A tour of the toy model's closed-form posterior
===============================================

The toy simulator multiplies a local parameter alpha by a shared global
parameter beta, so a single noiseless observation x0 only pins down the
product: every (alpha, beta) with alpha * beta = x0 is equally credible
under the uniform box prior. Auxiliary observations that share beta cut
that ridge down, and everything here has a closed form to look at.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from hnpe.toy import (
    ToyPosteriorOracle,
    marginal_beta_multi,
    marginal_beta_single,
    mu_concentration_probability,
    sample_posterior_multi,
    sample_posterior_single,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

rng = np.random.default_rng(0)
x0 = 0.21
beta_true = 0.7

# The single-observation posterior lives on the ridge alpha = x0 / beta.
ridge = sample_posterior_single(x0, 4000, rng)
print(f"x0 = {x0}: every sample satisfies alpha * beta = x0 "
      f"(max deviation {np.abs(ridge[:, 0] * ridge[:, 1] - x0).max():.2e})")

# Auxiliary observations x_i = alpha_i * beta raise the lower support
# edge of the beta marginal to mu = max(x0, x_1, ..., x_N).
bundles = {}
for n_extra in (3, 10, 100):
    extras = rng.uniform(0.0, 1.0, size=n_extra) * beta_true
    bundles[n_extra] = ToyPosteriorOracle(x0=x0, extras=tuple(extras))
    print(f"N = {n_extra:3d}: support edge mu = {bundles[n_extra].mu:.4f} "
          f"(true beta = {beta_true})")

# How fast does mu close in on beta? The gap shrinks like (1 - eps)^N.
for n_extra in (3, 10, 100):
    p = mu_concentration_probability(0.1, n_extra)
    print(f"P(mu misses beta by > 10%) at N = {n_extra:3d}: {p:.4f}")

fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))

# Left: the ridge, with multi-observation samples shrinking toward
# (x0 / beta, beta).
axes[0].scatter(ridge[:, 0], ridge[:, 1], s=2, alpha=0.15, label="N = 0")
for n_extra, color in zip((10, 100), ("tab:orange", "tab:red")):
    cloud = sample_posterior_multi(bundles[n_extra], 1500, rng)
    axes[0].scatter(cloud[:, 0], cloud[:, 1], s=3, alpha=0.3,
                    color=color, label=f"N = {n_extra}")
axes[0].axhline(beta_true, lw=0.8, ls=":", color="k")
axes[0].set_xlabel("alpha")
axes[0].set_ylabel("beta")
axes[0].set_title("posterior samples on the ridge alpha beta = x0")
axes[0].legend()

# Right: the closed-form beta marginals stacking up at the support edge.
grid = np.linspace(0.01, 1.0, 800)
axes[1].plot(grid, marginal_beta_single(grid, x0), label="N = 0")
for n_extra in (3, 10, 100):
    axes[1].plot(grid, marginal_beta_multi(grid, bundles[n_extra]),
                 label=f"N = {n_extra}")
axes[1].axvline(beta_true, lw=0.8, ls=":", color="k")
axes[1].set_xlabel("beta")
axes[1].set_ylabel("density")
axes[1].set_title("global marginal, exact")
axes[1].set_ylim(0, 40)
axes[1].legend()

fig.tight_layout()
fig.savefig(OUT / "toy_closed_form.png", dpi=130)
print(f"wrote {OUT / 'toy_closed_form.png'}")
