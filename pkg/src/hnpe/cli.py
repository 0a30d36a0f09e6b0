"""Command-line front end: simulate, train, evaluate, figures.

Each command validates its full configuration before touching the
filesystem, then writes into a fresh experiment directory together with
a manifest of content hashes. Reruns of the same config and seed are
byte-comparable through those manifests.

Exit codes: 0 success, 1 configuration or input error, 2 runtime
failure (simulator breakdown, solver or I/O trouble).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import re
import shutil
import sys
from pathlib import Path

import numpy as np
import torch

from .core import ObservationBundle, PriorSpec
from .features import log_psd
from .figures import marginal_grid_figure, posterior_rows_figure, sweep_figure
from .io import (
    RunManifest,
    config_digest,
    read_arrays,
    write_arrays,
    write_dataset,
    write_history_csv,
)
from .jansen_rit import JansenRitSimulator, TimeSeriesSpec, nmm_prior, worker_count
from .metrics import (
    ExperimentProtocol,
    SinkhornConfig,
    dirac_concentration,
    read_sweep_csv,
    run_sweep,
    sinkhorn_divergence,
)
from .toy import (
    ToyPosteriorOracle,
    ToySimulator,
    sample_posterior_multi,
    sample_posterior_single,
    toy_prior,
)
from .training import (
    HierarchicalPosterior,
    HNPEModel,
    Proposal,
    TrainConfig,
    featurize_dataset,
    fit_posterior,
    generate_round_dataset,
    identity_features,
)

__all__ = [
    "ExperimentConfig",
    "ModelBinding",
    "model_binding",
    "ingest_timeseries",
    "cmd_simulate",
    "cmd_train",
    "cmd_evaluate",
    "cmd_figures",
    "main",
]

_MODELS = ("toy", "nmm")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run depends on, hashable for the manifest.

    ``prior`` optionally overrides the model's canonical box (payload as
    produced by ``PriorSpec.to_config``); ``fs`` is the sampling rate
    used both by the time-series simulator and by ingestion.
    """

    model: str = "toy"
    n_extra: int = 0
    rounds: int = 1
    sims_per_round: int = 1000
    seed: int = 0
    out: str = ""
    prior: dict | None = None
    learning_rate: float = 5e-4
    batch_size: int = 100
    n_atoms: int = 10
    validation_fraction: float = 0.1
    patience: int = 20
    max_epochs: int = 500
    flow_family: str = "maf"
    epsilon: float = 0.05
    cloud_size: int = 10000
    fs: float = 128.0

    def validate(self) -> None:
        if self.model not in _MODELS:
            raise ValueError(f"unknown model {self.model!r}, expected one of {_MODELS}")
        if not self.out:
            raise ValueError("an output directory is required (--out)")
        if self.n_extra < 0:
            raise ValueError("n_extra must be nonnegative")
        if self.cloud_size < 1:
            raise ValueError("cloud_size must be positive")
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")
        self.train_config()
        self.metric_config()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            rounds=self.rounds,
            sims_per_round=self.sims_per_round,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            n_atoms=self.n_atoms,
            validation_fraction=self.validation_fraction,
            patience=self.patience,
            max_epochs=self.max_epochs,
            flow_family=self.flow_family,
            seed=self.seed,
        )

    def metric_config(self, standardization=None) -> SinkhornConfig:
        return SinkhornConfig(epsilon=self.epsilon, standardization=standardization)


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config_file(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ValueError(f"config file {Path(path).name} must hold a JSON object")
    unknown = sorted(set(payload) - _CONFIG_FIELDS)
    if unknown:
        raise ValueError(f"unknown config fields {unknown} in {Path(path).name}")
    return payload


def build_config(args) -> ExperimentConfig:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    payload: dict = {}
    if getattr(args, "config", None):
        payload.update(load_config_file(args.config))
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            payload[name] = value
    config = ExperimentConfig(**payload)
    config.validate()
    return config


@dataclasses.dataclass(frozen=True)
class ModelBinding:
    """A config's concrete prior, simulator, and summary pipeline."""

    prior: PriorSpec
    simulator: object
    featurizer: object


def model_binding(config: ExperimentConfig) -> ModelBinding:
    prior = None if config.prior is None else PriorSpec.from_config(config.prior)
    if config.model == "toy":
        return ModelBinding(prior or toy_prior(), ToySimulator(), identity_features)
    fs = config.fs

    def features(x: np.ndarray) -> np.ndarray:
        return log_psd(x, fs).values

    simulator = JansenRitSimulator(spec=TimeSeriesSpec(fs=fs))
    return ModelBinding(prior or nmm_prior(), simulator, features)


def fresh_run_dir(out) -> Path:
    """Create the experiment directory; an existing run is never reused."""
    path = Path(out)
    if path.exists() and any(path.iterdir()):
        raise ValueError(f"output directory {path} already holds files; runs are never overwritten")
    path.mkdir(parents=True, exist_ok=True)
    return path


def save_config(out: Path, config: ExperimentConfig) -> None:
    with open(out / "config.json", "w") as fh:
        json.dump(dataclasses.asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out: Path, config: ExperimentConfig) -> RunManifest:
    manifest = RunManifest(config_hash=config_digest(config), seed=config.seed)
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            manifest.add_file(out, path)
    manifest.save(out / "manifest.json")
    manifest.validate(out)
    return manifest


def _round_metric(value: float) -> float:
    # Torch reductions jitter by one ulp across processes; a 1e-9 grid
    # (three orders inside the solver tolerance) keeps CSV bytes stable.
    return round(float(value), 9) + 0.0


def _write_metrics_csv(path, rows: list[tuple[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(_round_metric(value))])


def ingest_timeseries(path, fs: float) -> ObservationBundle:
    """Observation bundle from a CSV of equal-length series, one per column.

    The first column is the focal series, remaining columns the
    auxiliary set. A first row with any non-numeric cell is treated as a
    header and names columns in error messages.
    """
    if fs <= 0:
        raise ValueError("sampling rate must be positive")
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{Path(path).name} holds no data")
    header: list[str] | None = None
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        if not rows:
            raise ValueError(f"{Path(path).name} holds a header but no data") from None
    n_cols = len(header) if header is not None else len(rows[0])

    def col_name(j: int) -> str:
        if header is not None and j < len(header):
            return f"column {header[j]!r}"
        return f"column {j}"

    columns: list[list[float]] = [[] for _ in range(n_cols)]
    for r, row in enumerate(rows, start=1):
        if len(row) != n_cols:
            j = min(len(row), n_cols)
            raise ValueError(
                f"ragged series: row {r} has {len(row)} cells, expected {n_cols} "
                f"(first mismatch at {col_name(j)})"
            )
        for j, cell in enumerate(row):
            text = cell.strip()
            if not text:
                raise ValueError(f"ragged series: empty cell in {col_name(j)} at row {r}")
            try:
                columns[j].append(float(text))
            except ValueError:
                raise ValueError(
                    f"non-numeric value {text!r} in {col_name(j)} at row {r}"
                ) from None
    return ObservationBundle(
        x0=np.array(columns[0]), extra=np.array(columns[1:], dtype=float)
    )


def cmd_simulate(args) -> int:
    config = build_config(args)
    binding = model_binding(config)
    out = fresh_run_dir(config.out)
    rng = np.random.default_rng(config.seed)
    dataset = generate_round_dataset(
        binding.simulator, binding.prior, Proposal(binding.prior),
        config.n_extra, config.sims_per_round, rng,
    )
    save_config(out, config)
    write_dataset(out / "dataset.bin", dataset)
    if config.model == "nmm":
        batch = featurize_dataset(dataset, binding.featurizer)
        arrays = {"x0_feat": batch.x0_feat.numpy()}
        if batch.extra_feat is not None:
            arrays["extra_feat"] = batch.extra_feat.numpy()
        write_arrays(out / "features.bin", arrays)
    write_manifest(out, config)
    print(f"wrote {dataset.n_records} records (N = {dataset.n_extra}) to {out}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    observed = None
    if args.observed is not None:
        observed = ingest_timeseries(args.observed, config.fs)
        if args.n_extra is not None and args.n_extra != observed.n_extra:
            raise ValueError(
                f"--n-extra {args.n_extra} contradicts the observed bundle's N = {observed.n_extra}"
            )
        config = dataclasses.replace(config, n_extra=observed.n_extra)
    elif config.rounds > 1:
        raise ValueError("rounds past the first need an observed bundle (--observed)")
    binding = model_binding(config)
    out = fresh_run_dir(config.out)
    save_config(out, config)
    if args.observed is not None:
        shutil.copy(args.observed, out / "observed.csv")

    def hook(r, dataset, model, history):
        rdir = out / f"round_{r:03d}"
        rdir.mkdir()
        write_dataset(rdir / "dataset.bin", dataset)
        write_history_csv(rdir / "history.csv", history)

    posterior = fit_posterior(
        binding.simulator, binding.prior, observed, config.train_config(),
        featurizer=binding.featurizer, round_hook=hook,
        n_extra=None if observed is not None else config.n_extra,
    )
    posterior.model.save(out / "model.pt")
    write_manifest(out, config)
    print(f"trained {config.rounds} round(s); checkpoint at {out / 'model.pt'}")
    return 0


def _toy_analytic_cloud(bundle: ObservationBundle, n: int,
                        rng: np.random.Generator) -> np.ndarray:
    if bundle.x0.size != 1:
        raise ValueError("closed-form evaluation needs scalar toy observations")
    x0 = float(bundle.x0[0])
    if bundle.n_extra == 0:
        return sample_posterior_single(x0, n, rng)
    oracle = ToyPosteriorOracle(
        x0=x0, extras=tuple(float(e[0]) for e in bundle.extra)
    )
    return sample_posterior_multi(oracle, n, rng)


def _toy_bundle_at(truth: np.ndarray, n_extra: int,
                   rng: np.random.Generator) -> ObservationBundle:
    alpha0, beta = float(truth[0]), float(truth[1])
    extras = rng.uniform(0.0, 1.0, size=n_extra) * beta
    return ObservationBundle(x0=np.array([alpha0 * beta]), extra=extras[:, None])


def _check_truth(args, dim: int) -> np.ndarray:
    truth = np.asarray(args.truth, dtype=float)
    if truth.shape != (dim,):
        raise ValueError(f"--truth needs {dim} values, got {truth.size}")
    return truth


def _evaluate_checkpoint(args, config: ExperimentConfig) -> int:
    if args.observed is None:
        raise ValueError("checkpoint evaluation needs an observed bundle (--observed)")
    model = HNPEModel.load(args.checkpoint)
    binding = model_binding(config)
    bundle = ingest_timeseries(args.observed, config.fs)
    posterior = HierarchicalPosterior(model, binding.featurizer, bundle)
    truth = None if args.truth is None else _check_truth(args, model.prior.dim_local + model.prior.dim_global)
    metric = config.metric_config(standardization=model.prior.standardization())

    out = fresh_run_dir(config.out)
    save_config(out, config)
    rng = np.random.default_rng(config.seed)
    cloud = posterior.sample(config.cloud_size, rng)
    write_arrays(out / f"posterior_N{bundle.n_extra}.bin", {"samples": cloud})
    rows: list[tuple[str, float]] = [("cloud_size", float(config.cloud_size))]
    names = [f"alpha_{i}" for i in range(model.prior.dim_local)]
    names += [f"beta_{i}" for i in range(model.prior.dim_global)]
    for i, name in enumerate(names):
        rows.append((f"marginal_std_{name}", float(cloud[:, i].std())))
    if config.model == "toy":
        ref = _toy_analytic_cloud(bundle, config.cloud_size,
                                  np.random.default_rng(config.seed + 1))
        write_arrays(out / f"analytic_N{bundle.n_extra}.bin", {"samples": ref})
        res = sinkhorn_divergence(cloud, ref, metric)
        rows.append(("divergence_to_closed_form", res.value))
        rows.append(("divergence_converged", float(res.converged)))
        rows.append(("divergence_iterations", float(res.iterations)))
    if truth is not None:
        res = dirac_concentration(cloud, truth, metric)
        rows.append(("concentration_at_truth", res.value))
    _write_metrics_csv(out / "metrics.csv", rows)
    write_manifest(out, config)
    for name, value in rows:
        print(f"{name} = {value}")
    return 0


def _evaluate_analytic(args, config: ExperimentConfig) -> int:
    if config.model != "toy":
        raise ValueError("a closed-form reference exists only for the toy model")
    prior = toy_prior()
    metric = config.metric_config(standardization=prior.standardization())
    if args.sweep:
        if args.truth is None:
            raise ValueError("the concentration sweep needs a --truth point")
        truth = _check_truth(args, 2)
        protocol = ExperimentProtocol("N", tuple(int(n) for n in args.sweep),
                                      n_repetitions=args.reps)

        def experiment(n_extra, rep):
            rng = np.random.default_rng([config.seed, int(n_extra), rep])
            bundle = _toy_bundle_at(truth, int(n_extra), rng)
            cloud = _toy_analytic_cloud(bundle, config.cloud_size, rng)
            return float(dirac_concentration(cloud, truth, metric))

        out = fresh_run_dir(config.out)
        save_config(out, config)
        table = run_sweep(protocol, experiment)
        table.rows = [(s, rep, _round_metric(v)) for s, rep, v in table.rows]
        table.to_csv(out / "sweep.csv")
        write_manifest(out, config)
        for sweep, med, q1, q3 in table.summary():
            print(f"N = {int(sweep)}: median {med:.6g} (quartiles {q1:.6g} .. {q3:.6g})")
        return 0
    if args.observed is None:
        raise ValueError("give an observed bundle (--observed) or a sweep (--sweep)")
    bundle = ingest_timeseries(args.observed, config.fs)
    out = fresh_run_dir(config.out)
    save_config(out, config)
    cloud = _toy_analytic_cloud(bundle, config.cloud_size,
                                np.random.default_rng(config.seed))
    write_arrays(out / f"analytic_N{bundle.n_extra}.bin", {"samples": cloud})
    res = sinkhorn_divergence(cloud, cloud, metric)
    rows = [("self_divergence", res.value), ("cloud_size", float(config.cloud_size))]
    _write_metrics_csv(out / "metrics.csv", rows)
    write_manifest(out, config)
    print(f"self_divergence = {res.value}")
    return 0


def cmd_evaluate(args) -> int:
    if (args.checkpoint is None) == (not args.analytic):
        raise ValueError("give exactly one of --checkpoint or --analytic")
    if args.checkpoint is not None and args.config is None:
        neighbor = Path(args.checkpoint).parent / "config.json"
        if neighbor.is_file():
            args.config = str(neighbor)
    config = build_config(args)
    if args.analytic:
        return _evaluate_analytic(args, config)
    return _evaluate_checkpoint(args, config)


def _collect_clouds(root: Path, pattern: str) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for path in sorted(root.rglob(pattern)):
        match = re.search(r"_N(\d+)$", path.stem)
        if match is None:
            continue
        n = int(match.group(1))
        if n in out:
            raise ValueError(f"duplicate sample clouds for N = {n} under {root}")
        out[n] = read_arrays(path)["samples"]
    return out


def cmd_figures(args) -> int:
    results = Path(args.results)
    if not results.is_dir():
        raise ValueError(f"results directory {results} does not exist")
    learned = _collect_clouds(results, "posterior_N*.bin")
    reference = _collect_clouds(results, "analytic_N*.bin")
    sweeps = sorted(results.rglob("sweep*.csv"))
    if not learned and not reference and not sweeps:
        raise ValueError(
            f"nothing to plot in {results}: missing posterior_N*.bin, "
            "analytic_N*.bin, and sweep*.csv"
        )
    out = fresh_run_dir(args.out)
    wrote: list[Path] = []
    clouds = learned or reference
    ref = reference if learned else {}
    dims = {c.shape[1] for c in clouds.values()}
    if clouds and dims == {2}:
        path = out / "posterior_rows.png"
        posterior_rows_figure(clouds, ref or None, path)
        wrote.append(path)
    elif clouds and len(dims) == 1:
        path = out / "posterior_marginals.png"
        marginal_grid_figure(clouds, path)
        wrote.append(path)
    elif clouds:
        raise ValueError(f"sample clouds disagree on dimension: {sorted(dims)}")
    else:
        print("no posterior_N*.bin or analytic_N*.bin clouds; skipping the "
              "posterior figure", file=sys.stderr)
    for path in sweeps:
        with open(path, newline="") as fh:
            first = next(csv.reader(fh))[0]
        table = read_sweep_csv(path, sweep_variable=first)
        target = out / f"{path.stem}.png"
        sweep_figure(table, target, label="median divergence")
        wrote.append(target)
    if not sweeps:
        print("no sweep*.csv tables; skipping sweep figures", file=sys.stderr)
    for path in wrote:
        print(f"wrote {path}")
    return 0


class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors exit with the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_config_flags(parser) -> None:
    parser.add_argument("--config", type=str, default=None,
                        help="JSON experiment config; flags override its fields")
    parser.add_argument("--model", choices=_MODELS, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=str, default=None,
                        help="fresh experiment directory for this run")
    parser.add_argument("--rounds", type=int, default=None)
    parser.add_argument("--sims", dest="sims_per_round", type=int, default=None,
                        help="simulations per round")
    parser.add_argument("--n-extra", dest="n_extra", type=int, default=None,
                        help="auxiliary observations per record")
    parser.add_argument("--flow", dest="flow_family", choices=("maf", "spline"),
                        default=None)
    parser.add_argument("--epsilon", type=float, default=None,
                        help="entropic regularization of the divergence")
    parser.add_argument("--cloud", dest="cloud_size", type=int, default=None,
                        help="samples per evaluation cloud")
    parser.add_argument("--fs", type=float, default=None,
                        help="sampling rate in Hz")
    parser.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--patience", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hnpe",
                     description="Hierarchical neural posterior estimation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a prior-predictive dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the posterior, one or more rounds")
    _add_config_flags(p)
    p.add_argument("--observed", type=str, default=None,
                   help="CSV bundle to focus sequential rounds on")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="sample a posterior and score it")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=str, default=None,
                   help="trained model checkpoint (model.pt)")
    p.add_argument("--observed", type=str, default=None,
                   help="CSV bundle to condition on")
    p.add_argument("--analytic", action="store_true",
                   help="use the closed-form toy posterior instead of a checkpoint")
    p.add_argument("--sweep", type=int, nargs="+", default=None,
                   help="auxiliary-set sizes for a concentration sweep")
    p.add_argument("--reps", type=int, default=3,
                   help="repetitions per sweep value")
    p.add_argument("--truth", type=float, nargs="+", default=None,
                   help="true parameter point for concentration metrics")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("figures", help="render static figures from results")
    p.add_argument("--results", type=str, required=True,
                   help="directory scanned recursively for result files")
    p.add_argument("--out", type=str, required=True,
                   help="fresh directory for the figure files")
    p.set_defaults(func=cmd_figures)

    return parser


def main(argv=None) -> int:
    torch.set_num_threads(worker_count())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
