"""Batch front-end: one subcommand per workflow.

    synthetic   generate the drifting two-component count data
    filter      run a single filter and checkpoint its state
    hyper       grid posterior over (theta, sigma), or a holdout sigma scan
    predict     replicate predictive sampling with credible bands
    partition   replicate partition sampling with a block-count histogram

All randomness flows from --seed through a fixed spawn tree, so identical
(config, data, seed) reruns produce identical outputs; run manifests
record the config, seeds, input hash, and per-grid-point log marginal
likelihoods (plus wall time, the one field that varies between reruns).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, filtering, partition as partition_mod, predictive
from .dataset import Dataset, DatasetError, ingest, synthetic, write_dataset
from .filtering import GridPointResult, hyper_posterior, init_state
from .measures import (
    BaseMeasure,
    BinomialP0,
    DiscreteDistribution,
    FiniteUniformP0,
    NegativeBinomialP0,
    PoissonP0,
    TablePmf,
    distribution_from_config,
)

DEFAULT_BUDGET = 100_000


class CliError(Exception):
    """User-facing failure; rendered as a JSON error object on stderr."""


@dataclass
class RunConfig:
    """Everything a prediction or partition run needs."""

    theta_grid: tuple[float, ...]
    sigma_grid: tuple[float, ...]
    p0: DiscreteDistribution
    lag: float = 1.0
    draws: int = 0
    replicates: int = 1
    particles: int = 10_000
    prune_eps: float = 1e-10
    seed: int = 0
    mode: str = "auto"  # auto | exact | mc
    budget: int = DEFAULT_BUDGET
    theta_priors: tuple[float, ...] = ()
    sigma_priors: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.theta_grid or not self.sigma_grid:
            raise CliError("theta and sigma grids must be nonempty")
        if any(t <= 0 for t in self.theta_grid) or any(s <= 0 for s in self.sigma_grid):
            raise CliError("grid values must be positive")
        if self.lag <= 0:
            raise CliError("lag must be positive")
        if self.draws < 0:
            raise CliError("draws must be nonnegative")
        if self.replicates < 1 or self.particles < 1:
            raise CliError("replicates and particles must be at least 1")
        if not self.theta_priors:
            self.theta_priors = tuple([1.0 / len(self.theta_grid)] * len(self.theta_grid))
        if not self.sigma_priors:
            self.sigma_priors = tuple([1.0 / len(self.sigma_grid)] * len(self.sigma_grid))

    def grid(self) -> list[tuple[float, float, float]]:
        """(theta, sigma, prior) triples; priors multiply across the axes."""
        return [
            (t, s, pt * ps)
            for t, pt in zip(self.theta_grid, self.theta_priors)
            for s, ps in zip(self.sigma_grid, self.sigma_priors)
        ]

    def to_json_dict(self) -> dict:
        return {
            "theta_grid": list(self.theta_grid),
            "sigma_grid": list(self.sigma_grid),
            "base": self.p0.to_config(),
            "lag": self.lag,
            "draws": self.draws,
            "replicates": self.replicates,
            "particles": self.particles,
            "prune_eps": self.prune_eps,
            "seed": self.seed,
            "mode": self.mode,
            "budget": self.budget,
        }


def parse_grid(text: str) -> tuple[float, ...]:
    """Comma list ('0.5,1,1.5') or inclusive range ('0.5:15:0.5')."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError(f"range grid must be lo:hi:step, got {text!r}")
        lo, hi, step = map(float, parts)
        if step <= 0 or hi < lo:
            raise CliError(f"bad range grid {text!r}")
        n = int(round((hi - lo) / step))
        values = tuple(round(lo + i * step, 12) for i in range(n + 1) if lo + i * step <= hi + 1e-12)
        return values
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise CliError(f"cannot parse grid {text!r}") from None


def parse_base(text: str) -> DiscreteDistribution:
    """family:params, e.g. poisson:5, negbinom:2,0.5, binomial:99,0.3,
    uniform:0..99 or uniform:a,b,c, table:path.json."""
    family, _, params = text.partition(":")
    family = family.strip().lower()
    try:
        if family == "poisson":
            return PoissonP0(float(params))
        if family in ("negbinom", "negative_binomial", "nbinom"):
            r, p = params.split(",")
            return NegativeBinomialP0(float(r), float(p))
        if family == "binomial":
            n, p = params.split(",")
            return BinomialP0(int(n), float(p))
        if family == "uniform":
            if ".." in params:
                lo, hi = params.split("..")
                return FiniteUniformP0(range(int(lo), int(hi) + 1))
            values = [v.strip() for v in params.split(",") if v.strip()]
            coerced = []
            for v in values:
                try:
                    coerced.append(int(v))
                except ValueError:
                    coerced.append(v)
            return FiniteUniformP0(coerced)
        if family == "table":
            doc = json.loads(Path(params).read_text())
            return TablePmf({_num_key(k): float(v) for k, v in doc.items()})
    except (ValueError, OSError) as exc:
        raise CliError(f"cannot parse base measure {text!r}: {exc}") from None
    raise CliError(f"unknown base measure family {family!r}")


def _num_key(k):
    try:
        return int(k)
    except (TypeError, ValueError):
        try:
            return float(k)
        except (TypeError, ValueError):
            return k


def _sort_key(value):
    if isinstance(value, bool):
        return (2, 0, str(value))
    if isinstance(value, (int, float)):
        return (0, value, "")
    return (1, 0, str(value))


def _sha256(path: str | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _grid_rows(results: list[GridPointResult]) -> list[dict]:
    return [
        {
            "theta": r.theta,
            "sigma": r.sigma,
            "prior": r.prior,
            "log_ml": r.log_ml,
            "posterior": r.posterior,
        }
        for r in results
    ]


def run_grid(
    config: RunConfig, dataset: Dataset | None, rng: np.random.Generator
) -> list[GridPointResult]:
    """Filter every grid point (fresh states when there are no data)."""
    if dataset is None:
        results = []
        for theta, sigma, prior in config.grid():
            state = init_state(BaseMeasure(theta, config.p0), sigma)
            results.append(GridPointResult(theta, sigma, prior, 0.0, prior, state))
        return results
    return hyper_posterior(
        config.grid(),
        dataset.batches,
        config.p0,
        mode=config.mode,
        budget=config.budget,
        particles=config.particles,
        prune_eps=config.prune_eps,
        rng=rng,
    )


def _predictive_state(config, result, rng):
    return predictive.from_filter(
        result.state,
        config.lag,
        mode=config.mode,
        budget=config.budget,
        particles=config.particles,
        prune_eps=config.prune_eps,
        rng=rng,
    )


def run_predict(config: RunConfig, dataset: Dataset | None) -> tuple[list[dict], dict]:
    """Predictive report: per-value mean probability with 2.5%/97.5% bands.

    With draws == 0 the pmf is evaluated exactly (degenerate bands);
    otherwise each replicate samples a grid point from its posterior
    weight, draws `draws` observations at the requested lag, and
    contributes its empirical pmf.
    """
    t0 = _time.perf_counter()
    root = np.random.SeedSequence(config.seed)
    grid_rng, eval_rng, *rep_seeds = root.spawn(2 + config.replicates)
    results = run_grid(config, dataset, np.random.default_rng(grid_rng))
    posterior = np.array([r.posterior for r in results])

    if config.draws == 0:
        support = set(config.p0.support(1e-9))
        for r in results:
            support.update(r.state.distinct)
        support = sorted(support, key=_sort_key)
        rng = np.random.default_rng(eval_rng)
        mean = np.zeros(len(support))
        for r in results:
            if r.posterior == 0.0:
                continue
            pstate = _predictive_state(config, r, rng)
            mean += r.posterior * predictive.pmf_table(pstate, support)
        rows = [
            {"value": v, "mean": float(m), "lo": float(m), "hi": float(m)}
            for v, m in zip(support, mean)
        ]
    else:
        freqs: list[dict] = []
        for seed in rep_seeds:
            rng = np.random.default_rng(seed)
            g = int(rng.choice(len(results), p=posterior))
            pstate = _predictive_state(config, results[g], rng)
            values = predictive.sample_sequence(pstate, config.draws, rng)
            f: dict = {}
            for y in values:
                f[y] = f.get(y, 0) + 1
            freqs.append({y: c / config.draws for y, c in f.items()})
        support = sorted({y for f in freqs for y in f}, key=_sort_key)
        matrix = np.array([[f.get(y, 0.0) for y in support] for f in freqs])
        mean = matrix.mean(axis=0)
        lo = np.quantile(matrix, 0.025, axis=0)
        hi = np.quantile(matrix, 0.975, axis=0)
        rows = [
            {"value": v, "mean": float(m), "lo": float(a), "hi": float(b)}
            for v, m, a, b in zip(support, mean, lo, hi)
        ]

    manifest = {
        "command": "predict",
        "config": config.to_json_dict(),
        "seed": config.seed,
        "grid": _grid_rows(results),
        "runtime_seconds": _time.perf_counter() - t0,
        "version": __version__,
    }
    return rows, manifest


def run_partition(config: RunConfig, dataset: Dataset | None) -> tuple[list, dict, dict]:
    """Partition report: one sampled partition per replicate plus the
    histogram of block counts (rows sum to the number of replicates)."""
    if config.draws < 1:
        raise CliError("partition sampling needs --draws >= 1")
    t0 = _time.perf_counter()
    root = np.random.SeedSequence(config.seed)
    grid_rng, *rep_seeds = root.spawn(1 + config.replicates)
    results = run_grid(config, dataset, np.random.default_rng(grid_rng))
    posterior = np.array([r.posterior for r in results])

    samples = []
    histogram: dict[int, int] = {}
    for seed in rep_seeds:
        rng = np.random.default_rng(seed)
        g = int(rng.choice(len(results), p=posterior))
        pstate = _predictive_state(config, results[g], rng)
        sample = partition_mod.sample_partition(pstate, config.draws, rng)
        samples.append(sample)
        nblocks = len(sample.blocks)
        histogram[nblocks] = histogram.get(nblocks, 0) + 1

    manifest = {
        "command": "partition",
        "config": config.to_json_dict(),
        "seed": config.seed,
        "grid": _grid_rows(results),
        "runtime_seconds": _time.perf_counter() - t0,
        "version": __version__,
    }
    return samples, histogram, manifest


def run_hyper(config: RunConfig, dataset: Dataset, mode: str) -> tuple[list[dict], dict]:
    """Grid posterior over (theta, sigma), or a holdout sigma scan that
    trains on all but the last batch and scores the sum of absolute errors
    between the posterior-mean predictive pmf and the held-out empirical
    pmf."""
    t0 = _time.perf_counter()
    root = np.random.SeedSequence(config.seed)
    if mode == "posterior":
        results = run_grid(config, dataset, np.random.default_rng(root.spawn(1)[0]))
        rows = _grid_rows(results)
        manifest = {
            "command": "hyper",
            "mode": "posterior",
            "config": config.to_json_dict(),
            "seed": config.seed,
            "grid": rows,
            "runtime_seconds": _time.perf_counter() - t0,
            "version": __version__,
        }
        return rows, manifest

    if mode != "holdout":
        raise CliError(f"unknown hyper mode {mode!r}")
    if len(dataset.batches) < 2:
        raise CliError("holdout scan needs at least two batches")
    train = Dataset(dataset.batches[:-1])
    test_time, test_values = dataset.batches[-1]
    if not test_values:
        raise CliError("held-out batch is empty")
    lag = test_time - train.batches[-1][0]
    emp: dict = {}
    for y in test_values:
        emp[y] = emp.get(y, 0) + 1
    emp = {y: c / len(test_values) for y, c in emp.items()}

    rows = []
    for j, sigma in enumerate(config.sigma_grid):
        sub = RunConfig(
            theta_grid=config.theta_grid,
            sigma_grid=(sigma,),
            p0=config.p0,
            lag=lag,
            draws=0,
            replicates=1,
            particles=config.particles,
            prune_eps=config.prune_eps,
            seed=config.seed,
            mode=config.mode,
            budget=config.budget,
            theta_priors=config.theta_priors,
        )
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, j]))
        results = run_grid(sub, train, rng)
        support = set(emp) | set(config.p0.support(1e-6))
        for r in results:
            support.update(r.state.distinct)
        support = sorted(support, key=_sort_key)
        mix = np.zeros(len(support))
        for r in results:
            if r.posterior == 0.0:
                continue
            pstate = _predictive_state(sub, r, rng)
            mix += r.posterior * predictive.pmf_table(pstate, support)
        sae = float(sum(abs(m - emp.get(v, 0.0)) for v, m in zip(support, mix)))
        rows.append({"sigma": sigma, "sae": sae})

    best = min(rows, key=lambda r: r["sae"])
    manifest = {
        "command": "hyper",
        "mode": "holdout",
        "config": config.to_json_dict(),
        "seed": config.seed,
        "holdout_time": test_time,
        "chosen_sigma": best["sigma"],
        "scan": rows,
        "runtime_seconds": _time.perf_counter() - t0,
        "version": __version__,
    }
    return rows, manifest


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(parser: argparse.ArgumentParser, *, data_required: bool) -> None:
    parser.add_argument("--data", required=data_required, help="CSV or JSON dataset")
    parser.add_argument("--format", default="auto", choices=("auto", "csv", "json"))
    parser.add_argument("--base", required=True, help="base measure, family:params")
    parser.add_argument("--theta-grid", default="1", help="comma list or lo:hi:step")
    parser.add_argument("--sigma-grid", default="1", help="comma list or lo:hi:step")
    parser.add_argument("--particles", type=int, default=10_000)
    parser.add_argument("--prune-eps", type=float, default=1e-10)
    parser.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output path prefix")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--exact", action="store_true", help="force exact propagation")
    group.add_argument("--approx", action="store_true", help="force Monte Carlo propagation")


def _mode(args) -> str:
    if args.exact:
        return "exact"
    if args.approx:
        return "mc"
    return "auto"


def _config(args, *, lag=None, draws=None, replicates=None) -> RunConfig:
    return RunConfig(
        theta_grid=parse_grid(args.theta_grid),
        sigma_grid=parse_grid(args.sigma_grid),
        p0=parse_base(args.base),
        lag=lag if lag is not None else getattr(args, "lag", 1.0),
        draws=draws if draws is not None else getattr(args, "draws", 0),
        replicates=replicates
        if replicates is not None
        else getattr(args, "replicates", 1),
        particles=args.particles,
        prune_eps=args.prune_eps,
        seed=args.seed,
        mode=_mode(args),
        budget=args.budget,
    )


def _load_data(args) -> Dataset | None:
    if getattr(args, "data", None) is None:
        return None
    return ingest(args.data, args.format)


def _write_manifest(path: Path, manifest: dict, input_path) -> None:
    manifest = dict(manifest)
    manifest["input_sha256"] = _sha256(input_path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvddp",
        description="Filtering, prediction, and partition sampling for "
        "Fleming-Viot dependent Dirichlet processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthetic", help="generate drifting two-component count data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=16)
    p.add_argument("--per-time", type=int, default=15)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="auto", choices=("auto", "csv", "json"))

    p = sub.add_parser("filter", help="run one filter and checkpoint its state")
    _add_common(p, data_required=True)

    p = sub.add_parser("hyper", help="hyperparameter posterior or holdout scan")
    _add_common(p, data_required=True)
    p.add_argument("--mode", default="posterior", choices=("posterior", "holdout"))

    p = sub.add_parser("predict", help="replicate predictive sampling with bands")
    _add_common(p, data_required=False)
    p.add_argument("--lag", type=float, required=True)
    p.add_argument("--draws", type=int, default=0)
    p.add_argument("--replicates", type=int, default=1)

    p = sub.add_parser("partition", help="replicate partition sampling")
    _add_common(p, data_required=False)
    p.add_argument("--lag", type=float, required=True)
    p.add_argument("--draws", type=int, required=True, help="observations per partition")
    p.add_argument("--replicates", type=int, default=1)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (CliError, DatasetError, ValueError, OSError) as exc:
        json.dump(
            {"error": type(exc).__name__, "message": str(exc)},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 2


def _dispatch(args) -> int:
    if args.command == "synthetic":
        data = synthetic(args.seed, args.horizon, args.per_time)
        write_dataset(data, args.out, args.format)
        return 0

    if args.command == "filter":
        config = _config(args)
        if len(config.theta_grid) != 1 or len(config.sigma_grid) != 1:
            raise CliError("filter takes single-valued grids; use hyper for grids")
        data = _load_data(args)
        t0 = _time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        state = filtering.run_filter(
            BaseMeasure(config.theta_grid[0], config.p0),
            config.sigma_grid[0],
            data.batches,
            mode=config.mode,
            budget=config.budget,
            particles=config.particles,
            prune_eps=config.prune_eps,
            rng=rng,
        )
        out = Path(args.out)
        out.with_suffix(".state.json").write_text(filtering.state_to_json(state) + "\n")
        manifest = {
            "command": "filter",
            "config": config.to_json_dict(),
            "seed": config.seed,
            "grid": [
                {
                    "theta": config.theta_grid[0],
                    "sigma": config.sigma_grid[0],
                    "prior": 1.0,
                    "log_ml": state.log_ml,
                    "posterior": 1.0,
                }
            ],
            "runtime_seconds": _time.perf_counter() - t0,
            "version": __version__,
        }
        _write_manifest(out.with_suffix(".manifest.json"), manifest, args.data)
        return 0

    if args.command == "hyper":
        config = _config(args)
        data = _load_data(args)
        rows, manifest = run_hyper(config, data, args.mode)
        out = Path(args.out)
        with open(out.with_suffix(".csv"), "w") as fh:
            if args.mode == "posterior":
                fh.write("theta,sigma,prior,log_ml,posterior\n")
                for r in rows:
                    fh.write(
                        f"{r['theta']!r},{r['sigma']!r},{r['prior']!r},"
                        f"{r['log_ml']!r},{r['posterior']!r}\n"
                    )
            else:
                fh.write("sigma,sae\n")
                for r in rows:
                    fh.write(f"{r['sigma']!r},{r['sae']!r}\n")
        _write_manifest(out.with_suffix(".manifest.json"), manifest, args.data)
        return 0

    if args.command == "predict":
        config = _config(args, lag=args.lag, draws=args.draws, replicates=args.replicates)
        data = _load_data(args)
        rows, manifest = run_predict(config, data)
        out = Path(args.out)
        with open(out.with_suffix(".csv"), "w") as fh:
            fh.write("value,mean,lo,hi\n")
            for r in rows:
                fh.write(
                    f"{_format_value(r['value'])},{r['mean']!r},"
                    f"{r['lo']!r},{r['hi']!r}\n"
                )
        _write_manifest(out.with_suffix(".manifest.json"), manifest, getattr(args, "data", None))
        return 0

    if args.command == "partition":
        config = _config(args, lag=args.lag, draws=args.draws, replicates=args.replicates)
        data = _load_data(args)
        samples, histogram, manifest = run_partition(config, data)
        out = Path(args.out)
        with open(out.with_suffix(".jsonl"), "w") as fh:
            for sample in samples:
                fh.write(json.dumps(sample.to_json_dict(), default=str) + "\n")
        with open(out.with_suffix(".hist.csv"), "w") as fh:
            fh.write("blocks,count\n")
            for nblocks in sorted(histogram):
                fh.write(f"{nblocks},{histogram[nblocks]}\n")
        _write_manifest(out.with_suffix(".manifest.json"), manifest, getattr(args, "data", None))
        return 0

    raise CliError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
