"""Command-line pipeline: pretrain, probe-gradients, finetune, merge,
sample, eval, landscape, tv-stats.

Every command is deterministic given (config, seed): all randomness flows
from the master seed through named sub-streams.  Tabular outputs are CSV
with a header row and a leading ``# config_hash=...`` comment; checkpoints
use the container in :mod:`diffmerge.checkpoint`.  Exit code 0 on success,
otherwise a one-line ``error: <category>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import (
    eval_loss,
    gradient_magnitude_proxy,
    landscape_grid,
    make_eval_batch,
    orthonormal_plane_basis,
    sliced_wasserstein,
    tv_statistics,
)
from .checkpoint import Checkpoint, load_checkpoint, param_hash, save_checkpoint
from .config import ExperimentConfig, load_config, subseed
from .datasets import make_dataset
from .decoupled import finetune_range, partition_ranges
from .denoiser import (
    augment_with_projections,
    denoiser_forward,
    init_params,
    with_projections,
)
from .errors import AlignmentError, ConfigurationError, DiffmergeError
from .merging import ensemble_sample_loop, grid_search, merge, task_vector
from .schedule import make_linear_schedule, sample_loop
from .training import gradient_similarity_matrix, to_eps_prediction, train


# ----------------------------------------------------------------------
# shared helpers
# ----------------------------------------------------------------------
def _write_csv(path: Path, header: list[str], rows, config_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _read_samples_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        for row in reader:
            rows.append([float(x) for x in row])
    if not rows:
        raise ConfigurationError(f"{path}: no sample rows")
    return np.asarray(rows)


def _schedule_from(ckpt: Checkpoint):
    sp = ckpt.schedule_params
    return make_linear_schedule(int(sp["T"]), float(sp["beta_start"]), float(sp["beta_end"]))


def _schedule_params(sched) -> dict:
    return {"T": sched.T, "beta_start": float(sched.beta[0]), "beta_end": float(sched.beta[-1])}


def _eps_model(params, config, sched, target: str = "eps_prediction"):
    """Wrap a model into a noise-prediction callback for the samplers."""

    def f(x, t):
        pred = denoiser_forward(params, x, t, config)
        return to_eps_prediction(target, pred, x, t, sched)

    return f


def _dataset(cfg: ExperimentConfig) -> np.ndarray:
    return make_dataset(cfg.dataset_kind, cfg.dataset_size, subseed(cfg.seed, "dataset"))


def _metric(cfg: ExperimentConfig, generated: np.ndarray, reference: np.ndarray) -> float:
    return sliced_wasserstein(
        generated, reference, cfg.metric_projections, subseed(cfg.seed, "metric")
    )


def _provenance(cfg: ExperimentConfig, command: str, parent: str | None = None, **extra) -> dict:
    return {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "parent": parent,
        **extra,
    }


def _load_finetuned(paths: list[str]) -> list[Checkpoint]:
    """Load specialist checkpoints and order them by their range index."""
    ckpts = [load_checkpoint(p) for p in paths]
    if any(c.provenance.get("range_index") is None for c in ckpts):
        return ckpts  # fall back to the order given
    return sorted(ckpts, key=lambda c: int(c.provenance["range_index"]))


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    dataset = _dataset(cfg)
    sched = cfg.schedule()
    dconf = cfg.denoiser_config(use_projection=False)
    params = init_params(dconf, subseed(cfg.seed, "init"))
    params, trace = train(
        params,
        dconf,
        dataset,
        cfg.train_config(subseed(cfg.seed, "pretrain")),
        sched,
        cfg.reweight_strategy(),
        cfg.target,
    )
    _write_csv(
        out / "pretrain_loss.csv",
        ["iteration", "loss"],
        [(i, f"{v:.10g}") for i, v in enumerate(trace)],
        cfg.config_hash(),
    )
    samples = sample_loop(
        _eps_model(params, dconf, sched, cfg.target),
        sched,
        cfg.sampler(),
        cfg.metric_samples,
        cfg.data_dim,
        subseed(cfg.seed, "sample"),
    )
    metric = _metric(cfg, samples, dataset)
    ckpt = Checkpoint(
        config=dconf,
        schedule_params=_schedule_params(sched),
        params=params,
        provenance=_provenance(cfg, "pretrain", target=cfg.target),
    )
    save_checkpoint(out / "pretrained.ckpt", ckpt)
    final = trace[-1] if trace else float("nan")
    print(f"pretrain: iterations={len(trace)} final_loss={final:.6g}")
    print(f"pretrain: sliced_wasserstein={metric:.6g}")
    print(f"pretrain: checkpoint={out / 'pretrained.ckpt'}")
    return 0


def cmd_probe_gradients(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    ckpt = load_checkpoint(args.checkpoint)
    sched = _schedule_from(ckpt)
    dataset = _dataset(cfg)
    matrix = gradient_similarity_matrix(
        ckpt.params,
        ckpt.config,
        dataset,
        sched,
        cfg.probe_buckets,
        cfg.probe_samples,
        subseed(cfg.seed, "probe"),
    )
    rows = [
        (i, j, f"{matrix[i, j]:.10g}")
        for i in range(matrix.shape[0])
        for j in range(matrix.shape[1])
    ]
    _write_csv(out / "gradient_similarity.csv", ["bucket_i", "bucket_j", "cosine"], rows, cfg.config_hash())
    b = matrix.shape[0]
    adjacent = np.mean([matrix[i, i + 1] for i in range(b - 1)])
    distant_pairs = [(i, j) for i in range(b) for j in range(b) if j - i >= b // 2]
    distant = np.mean([matrix[i, j] for i, j in distant_pairs])
    print(f"probe-gradients: buckets={b} adjacent_mean={adjacent:.4f} distant_mean={distant:.4f}")
    return 0


def cmd_finetune(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    base = load_checkpoint(args.checkpoint)
    sched = _schedule_from(base)
    dataset = _dataset(cfg)
    if cfg.use_projection:
        fconf = with_projections(base.config)
        params = augment_with_projections(base.params, fconf)
    else:
        fconf = base.config
        params = base.params
    parent = param_hash(base.params)
    n = cfg.num_ranges

    def run_one(i: int):
        dcfg = cfg.decouple_config(subseed(cfg.seed, f"finetune{i}"))
        tuned, trace = finetune_range(params, i, fconf, dataset, dcfg, sched)
        _write_csv(
            out / f"finetune_r{i}_loss.csv",
            ["iteration", "loss"],
            [(k, f"{v:.10g}") for k, v in enumerate(trace)],
            cfg.config_hash(),
        )
        ckpt = Checkpoint(
            config=fconf,
            schedule_params=_schedule_params(sched),
            params=tuned,
            provenance=_provenance(
                cfg, "finetune", parent=parent, range_index=i, num_ranges=n, p=cfg.p
            ),
        )
        save_checkpoint(out / f"finetune_r{i}.ckpt", ckpt)
        return i

    failures = []
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            futures = {pool.submit(run_one, i): i for i in range(n)}
            for fut, i in futures.items():
                try:
                    fut.result()
                except DiffmergeError as exc:
                    failures.append((i, exc))
    else:
        for i in range(n):
            try:
                run_one(i)
            except DiffmergeError as exc:
                failures.append((i, exc))
    for i, exc in failures:
        print(f"error: {exc.category}: range {i}: {exc}", file=sys.stderr)
    done = n - len(failures)
    print(f"finetune: wrote {done}/{n} specialist checkpoints to {out}")
    return 1 if failures else 0


def cmd_merge(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    base = load_checkpoint(args.base)
    tuned = _load_finetuned(args.finetuned)
    sched = _schedule_from(base)
    dataset = _dataset(cfg)
    base_params = base.params
    fconf = tuned[0].config
    if base.params.names() != tuned[0].params.names():
        base_params = augment_with_projections(base.params, fconf)
    for k, c in enumerate(tuned):
        if c.params.names() != base_params.names():
            raise AlignmentError(f"finetuned checkpoint {k} does not match the base architecture")
    tvs = [
        task_vector(base_params, c.params, int(c.provenance.get("range_index", k)))
        for k, c in enumerate(tuned)
    ]
    sampler = cfg.sampler()
    grid = cfg.grid_spec()
    search_seed = subseed(cfg.seed, "search")

    def objective(merged_params):
        samples = sample_loop(
            _eps_model(merged_params, fconf, sched),
            sched,
            sampler,
            grid.samples_per_eval,
            fconf.data_dim,
            search_seed,
        )
        return _metric(cfg, samples, dataset)

    weights, score, log = grid_search(base_params, tvs, grid, objective, threads=args.threads)
    n = len(tvs)
    _write_csv(
        out / "search_log.csv",
        [f"w_{i + 1}" for i in range(n)] + ["score"],
        [tuple(f"{w:.10g}" for w in ws) + (f"{s:.10g}",) for ws, s in log],
        cfg.config_hash(),
    )
    merged = merge(base_params, tvs, weights)
    grid_desc = {
        "values": None if grid.values is None else [list(v) for v in grid.values],
        "coarse_min": grid.coarse_min,
        "coarse_max": grid.coarse_max,
        "coarse_step": grid.coarse_step,
        "refine_radius": grid.refine_radius,
        "fine_step": grid.fine_step,
        "samples_per_eval": grid.samples_per_eval,
        "points_evaluated": len(log),
    }
    ckpt = Checkpoint(
        config=fconf,
        schedule_params=_schedule_params(sched),
        params=merged,
        provenance=_provenance(
            cfg,
            "merge",
            parent=param_hash(base.params),
            merge_weights=list(weights),
            grid=grid_desc,
        ),
    )
    save_checkpoint(out / "merged.ckpt", ckpt)
    print(f"merge: best_weights={tuple(round(w, 6) for w in weights)} score={score:.6g}")
    print(f"merge: evaluated {len(log)} grid points; checkpoint={out / 'merged.ckpt'}")
    return 0


def cmd_sample(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    ckpts = [load_checkpoint(p) for p in args.checkpoint]
    sched = _schedule_from(ckpts[0])
    sampler = cfg.sampler()
    seed = subseed(cfg.seed, "sample")
    if len(ckpts) == 1:
        ck = ckpts[0]
        samples = sample_loop(
            _eps_model(ck.params, ck.config, sched, ck.provenance.get("target", "eps_prediction")),
            sched,
            sampler,
            args.num,
            ck.config.data_dim,
            seed,
        )
    else:
        ckpts = _load_finetuned(args.checkpoint)
        partition = partition_ranges(sched.T, len(ckpts))
        samples = ensemble_sample_loop(
            [c.params for c in ckpts],
            ckpts[0].config,
            partition,
            sched,
            sampler,
            args.num,
            seed,
        )
    d = samples.shape[1]
    _write_csv(
        out / "samples.csv",
        [f"x{j}" for j in range(d)],
        [tuple(f"{v:.10g}" for v in row) for row in samples],
        cfg.config_hash(),
    )
    print(f"sample: wrote {samples.shape[0]} samples to {out / 'samples.csv'}")
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    dataset = _dataset(cfg)
    rows: list[tuple] = []
    if args.samples is not None:
        generated = _read_samples_csv(Path(args.samples))
        metric = _metric(cfg, generated, dataset)
        rows.append(("sliced_wasserstein", f"{metric:.10g}"))
        print(f"eval: sliced_wasserstein={metric:.6g}")
    else:
        ckpt = load_checkpoint(args.checkpoint)
        sched = _schedule_from(ckpt)
        samples = sample_loop(
            _eps_model(ckpt.params, ckpt.config, sched, ckpt.provenance.get("target", "eps_prediction")),
            sched,
            cfg.sampler(),
            cfg.metric_samples,
            ckpt.config.data_dim,
            subseed(cfg.seed, "sample"),
        )
        metric = _metric(cfg, samples, dataset)
        rows.append(("sliced_wasserstein", f"{metric:.10g}"))
        print(f"eval: sliced_wasserstein={metric:.6g}")
        partition = partition_ranges(sched.T, cfg.num_ranges)
        for i, (lo, hi) in enumerate(partition.ranges):
            batch = make_eval_batch(
                dataset, sched, cfg.landscape_samples, (lo, hi), subseed(cfg.seed, f"evalrange{i}")
            )
            loss = eval_loss(ckpt.params, ckpt.config, batch, sched)
            rows.append((f"range{i}_loss", f"{loss:.10g}"))
            print(f"eval: range{i} t=[{lo},{hi}) denoise_loss={loss:.6g}")
    _write_csv(out / "eval_metrics.csv", ["metric", "value"], rows, cfg.config_hash())
    return 0


def cmd_landscape(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    dataset = _dataset(cfg)
    if args.mode == "pretrained_plane":
        ckpt = load_checkpoint(args.checkpoint)
        rng = np.random.default_rng(subseed(cfg.seed, "plane"))
        dim = ckpt.params.total_dim
        basis = orthonormal_plane_basis(
            ckpt.params, rng.standard_normal(dim), rng.standard_normal(dim)
        )
        extent = cfg.landscape_extent if cfg.landscape_extent > 0 else 1.0
        config = ckpt.config
        sched = _schedule_from(ckpt)
    else:
        base = load_checkpoint(args.base)
        tuned = _load_finetuned(args.finetuned)
        if len(tuned) != 2:
            raise ConfigurationError("task_vector_plane needs exactly two finetuned checkpoints")
        config = tuned[0].config
        base_params = base.params
        if base_params.names() != tuned[0].params.names():
            base_params = augment_with_projections(base_params, config)
        tau1 = task_vector(base_params, tuned[0].params, 0)
        tau2 = task_vector(base_params, tuned[1].params, 1)
        basis = orthonormal_plane_basis(base_params, tau1, tau2)
        norms = [np.linalg.norm(tv.entries.flatten()) for tv in (tau1, tau2)]
        extent = cfg.landscape_extent if cfg.landscape_extent > 0 else 1.5 * max(norms)
        sched = _schedule_from(base)
    grid = landscape_grid(
        basis,
        config,
        dataset,
        sched,
        t_range=cfg.landscape_t_range(),
        resolution=cfg.landscape_resolution,
        extent=extent,
        eval_samples=cfg.landscape_samples,
        seed=subseed(cfg.seed, "landscape"),
    )
    rows = [
        (f"{grid.a_values[i]:.10g}", f"{grid.b_values[j]:.10g}", f"{grid.values[i, j]:.10g}")
        for i in range(len(grid.a_values))
        for j in range(len(grid.b_values))
    ]
    _write_csv(out / "landscape.csv", ["a", "b", "loss"], rows, cfg.config_hash())
    mid = len(grid.a_values) // 2
    print(f"landscape: mode={args.mode} extent={extent:.4g} origin_loss={grid.values[mid, mid]:.6g}")
    print(f"landscape: gradient_proxy={gradient_magnitude_proxy(grid):.6g}")
    return 0


def cmd_tv_stats(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out)
    base = load_checkpoint(args.base)
    tuned = _load_finetuned(args.finetuned)
    base_params = base.params
    if tuned and base_params.names() != tuned[0].params.names():
        base_params = augment_with_projections(base_params, tuned[0].config)
    tvs = [
        task_vector(base_params, c.params, int(c.provenance.get("range_index", k)))
        for k, c in enumerate(tuned)
    ]
    stats, cosine = tv_statistics(tvs)
    norm_rows = [
        (k, name, f"{s['min']:.10g}", f"{s['median']:.10g}", f"{s['max']:.10g}", f"{s['mean']:.10g}")
        for k, per_name in enumerate(stats)
        for name, s in per_name.items()
    ]
    _write_csv(
        out / "tv_norms.csv",
        ["vector", "parameter", "min", "median", "max", "mean"],
        norm_rows,
        cfg.config_hash(),
    )
    cos_rows = [
        (i, j, f"{cosine[i, j]:.10g}")
        for i in range(cosine.shape[0])
        for j in range(cosine.shape[1])
    ]
    _write_csv(out / "tv_cosine.csv", ["i", "j", "cosine"], cos_rows, cfg.config_hash())
    offdiag = [abs(cosine[i, j]) for i in range(len(tvs)) for j in range(i + 1, len(tvs))]
    if offdiag:
        print(f"tv-stats: vectors={len(tvs)} max_offdiag_abs_cosine={max(offdiag):.4f}")
    else:
        print(f"tv-stats: vectors={len(tvs)}")
    return 0


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------
def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key=value config file")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads for fan-out")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config entry (repeatable)",
    )

    parser = argparse.ArgumentParser(prog="diffmerge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("pretrain", parents=[common], help="train the base model")

    p = sub.add_parser("probe-gradients", parents=[common], help="per-bucket gradient cosines")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("finetune", parents=[common], help="decoupled per-range finetuning")
    p.add_argument("--checkpoint", required=True, help="base (pretrained) checkpoint")

    p = sub.add_parser("merge", parents=[common], help="grid-search merge weights and write the merged model")
    p.add_argument("--base", required=True)
    p.add_argument("--finetuned", nargs="+", required=True)

    p = sub.add_parser("sample", parents=[common], help="draw samples from one model or an ensemble")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--num", type=int, default=1000)

    p = sub.add_parser("eval", parents=[common], help="sample-quality metric (and per-range losses)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--samples", default=None, help="CSV of generated samples")
    group.add_argument("--checkpoint", default=None)

    p = sub.add_parser("landscape", parents=[common], help="loss over a parameter-plane slice")
    p.add_argument("--mode", choices=["pretrained_plane", "task_vector_plane"], required=True)
    p.add_argument("--checkpoint", default=None, help="model for pretrained_plane mode")
    p.add_argument("--base", default=None, help="base model for task_vector_plane mode")
    p.add_argument("--finetuned", nargs="*", default=[], help="two finetuned checkpoints")

    p = sub.add_parser("tv-stats", parents=[common], help="task-vector norms and cosines")
    p.add_argument("--base", required=True)
    p.add_argument("--finetuned", nargs="+", required=True)

    return parser


COMMANDS = {
    "pretrain": cmd_pretrain,
    "probe-gradients": cmd_probe_gradients,
    "finetune": cmd_finetune,
    "merge": cmd_merge,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "landscape": cmd_landscape,
    "tv-stats": cmd_tv_stats,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = load_config(args.config, overrides)
        if args.command == "landscape":
            if args.mode == "pretrained_plane" and not args.checkpoint:
                raise ConfigurationError("pretrained_plane mode needs --checkpoint")
            if args.mode == "task_vector_plane" and not args.base:
                raise ConfigurationError("task_vector_plane mode needs --base and --finetuned")
        return COMMANDS[args.command](cfg, args)
    except DiffmergeError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
