"""Command-line interface: data generation, training, sampling, sweeps.

Commands ("pdseg <command> --help" for flags):

* gen-data      write a synthetic corpus + manifest, report the best
                global-threshold baseline Dice
* train         train the denoiser or the pre-segmentation net, write a
                PDSEG1 checkpoint and a loss-curve CSV
* sample        run vanilla or pre-segmentation-accelerated sampling over a
                split, write per-case metrics CSV and exported maps
* sweep         truncation-step / ensemble-size / pre-segmentation-quality
                sweeps, write a summary CSV and SVG charts
* oracle-check  training-free sampler verification against the analytic
                Gaussian oracle (nonzero exit on failure)
* rerun         re-execute any command from its run manifest

Every command writes a flat key=value run manifest with the fully resolved
options, input hashes and artifact list; `rerun --manifest X --out Y`
reproduces the outputs byte for byte (timestamps aside). Exit codes:
0 success, 2 usage error, 3 I/O error, 4 failed check.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import experiment, report
from .checkpoint import (
    CheckpointError,
    load_denoiser,
    load_preseg,
    save_denoiser,
    save_preseg,
)
from .denoiser import ConvDenoiserConfig
from .ensemble import write_result_maps
from .experiment import (
    ENSEMBLE_SIZES,
    PRESEG_QUALITY_TARGETS,
    EvalSettings,
    default_tprime_grid,
)
from .pgm import PgmError
from .preseg import DegradationError, PresegConfig
from .schedule import build_cosine_schedule, build_linear_schedule
from .synth import (
    SPLITS,
    CorpusConfig,
    CorpusError,
    generate_corpus,
    load_corpus,
    save_corpus,
    threshold_baseline,
)
from .train import TrainConfig, train_denoiser, train_preseg

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CHECK = 0, 2, 3, 4

FAST_TIMESTEPS = 200
FAST_BASE_CHANNELS = 16
DEFAULT_EPOCHS = {"diffusion": 240, "preseg": 60}

SWEEP_GRID_COLUMN = {"tprime": "t_prime", "ensemble": "ensemble_size",
                     "preseg-quality": "target_dice"}
SWEEP_SUMMARY_COLUMNS = ["mean_dice", "std_dice", "mean_jaccard", "mean_hd95",
                         "mean_f1", "mean_uncertainty", "nfe_per_case"]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _options(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("handler", "command")}


def _load_split(args) -> list:
    cases = [c for c in load_corpus(args.data) if c.split == args.split]
    if not cases:
        raise ValueError(f"no cases in split {args.split!r} of {args.data}")
    if args.limit is not None:
        if args.limit < 1:
            raise ValueError("--limit must be positive")
        cases = cases[: args.limit]
    return cases


def _preseg_source(args):
    """Resolve the pd pre-segmentation source from CLI flags."""
    have_net = getattr(args, "preseg", None) is not None
    have_oracle = getattr(args, "preseg_oracle_dice", None) is not None
    if have_net == have_oracle:
        raise ValueError("pd needs exactly one of --preseg / --preseg-oracle-dice")
    if have_net:
        return experiment.preseg_from_model(load_preseg(args.preseg)), {"preseg": report.sha256_file(args.preseg)}
    target = args.preseg_oracle_dice
    if not 0.0 <= target <= 1.0:
        raise ValueError("--preseg-oracle-dice must lie in [0, 1]")
    return experiment.preseg_from_degradation(target, 0.02, args.seed), {}


def cmd_gen_data(args) -> int:
    started = _now()
    config = CorpusConfig(
        num_cases=args.cases,
        height=args.size,
        width=args.size,
        lesion_count=(args.lesions[0], args.lesions[1]),
        lesion_radius=(args.radius[0], args.radius[1]),
        background_mean=args.bg_mean,
        foreground_mean=args.fg_mean,
        noise_level=args.noise_level,
        seed=args.seed,
    )
    out = Path(args.out)
    cases = generate_corpus(config)
    save_corpus(cases, out)
    threshold, baseline = threshold_baseline(cases)
    report.write_csv(
        out / "threshold_baseline.csv",
        ["threshold", "mean_dice"],
        [{"threshold": threshold, "mean_dice": baseline}],
    )
    print(f"wrote {len(cases)} cases to {out}")
    print(f"threshold baseline: Dice {baseline:.4f} at intensity {threshold:.2f}")
    report.write_manifest(
        out / "run_manifest.txt",
        "gen-data",
        _options(args),
        seed=args.seed,
        hashes={"corpus": report.sha256_tree(out / "images"),
                "masks": report.sha256_tree(out / "masks")},
        started=started,
        finished=_now(),
        artifacts=["manifest.csv", "threshold_baseline.csv"],
    )
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    if args.fast:
        if args.timesteps is None:
            args.timesteps = FAST_TIMESTEPS
        if args.base_channels is None:
            args.base_channels = FAST_BASE_CHANNELS
    if args.timesteps is None:
        args.timesteps = 1000
    if args.base_channels is None:
        args.base_channels = 32 if args.kind == "diffusion" else 16
    if args.epochs is None:
        args.epochs = DEFAULT_EPOCHS[args.kind]

    cases = load_corpus(args.data)
    train_cases = [c for c in cases if c.split == "train"]
    val_cases = [c for c in cases if c.split == "val"]
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    out = Path(args.out)
    if args.kind == "diffusion":
        if args.schedule == "cosine":
            schedule = build_cosine_schedule(args.timesteps)
        else:
            schedule = build_linear_schedule(args.timesteps, args.beta_start, args.beta_end)
        model_config = ConvDenoiserConfig(base_channels=args.base_channels, depth=args.depth)
        model, history = train_denoiser(train_cases, val_cases, schedule, model_config, train_config)
        save_denoiser(out, model, schedule)
        header = ["epoch", "train_loss", "val_loss"]
    else:
        model_config = PresegConfig(base_channels=args.base_channels, depth=args.depth)
        model, history = train_preseg(train_cases, val_cases, model_config, train_config)
        save_preseg(out, model)
        header = ["epoch", "train_loss", "val_dice"]
    losses_csv = out.with_suffix(".losses.csv")
    report.write_csv(losses_csv, header, history)
    last = history[-1]
    print(f"trained {args.kind}: {', '.join(f'{k}={v:.5f}' for k, v in last.items() if k != 'epoch')}")
    print(f"checkpoint: {out}")
    report.write_manifest(
        out.with_suffix(".manifest.txt"),
        "train",
        _options(args),
        seed=args.seed,
        hashes={"corpus": report.sha256_tree(args.data), "checkpoint": report.sha256_file(out)},
        started=started,
        finished=_now(),
        artifacts=[out.name, losses_csv.name],
    )
    return EXIT_OK


def cmd_sample(args) -> int:
    started = _now()
    cases = _load_split(args)
    model, schedule = load_denoiser(args.denoiser)
    hashes = {"denoiser": report.sha256_file(args.denoiser),
              "corpus": report.sha256_tree(args.data)}
    preseg_fn = None
    if args.method == "pd":
        if args.t_prime is None:
            raise ValueError("pd sampling needs --t-prime")
        preseg_fn, extra = _preseg_source(args)
        hashes.update(extra)
    settings = EvalSettings(
        method=args.method,
        t_prime=args.t_prime if args.method == "pd" else None,
        ensemble_size=args.ensemble,
        sigma_rule=args.sigma_rule,
        seed=args.seed,
        jobs=args.jobs,
    )
    rows, results = experiment.evaluate_cases(cases, model, schedule, settings, preseg_fn)
    out = Path(args.out)
    artifacts = ["metrics.csv"]
    for case in cases:
        paths = write_result_maps(results[case.case_id], out / "maps", case.case_id)
        artifacts.extend(str(p.relative_to(out)) for p in paths)
    table = rows + [experiment.aggregate_row(rows)]
    report.write_csv(out / "metrics.csv", report.METRICS_CSV_HEADER, table)
    mean = table[-1]
    print(
        f"{args.method} over {len(cases)} cases: Dice {mean['dice']:.4f}, "
        f"HD95 {mean['hd95']:.3f}, NFE/case {mean['nfe']:.0f}"
    )
    report.write_manifest(
        out / "run_manifest.txt",
        "sample",
        _options(args),
        seed=args.seed,
        hashes=hashes,
        started=started,
        finished=_now(),
        artifacts=artifacts,
    )
    return EXIT_OK


def _parse_grid(text: str, as_float: bool) -> list:
    try:
        values = [float(v) if as_float else int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"bad --grid value: {exc}") from exc
    if not values:
        raise ValueError("empty --grid")
    return values


def cmd_sweep(args) -> int:
    started = _now()
    cases = _load_split(args)
    model, schedule = load_denoiser(args.denoiser)
    hashes = {"denoiser": report.sha256_file(args.denoiser),
              "corpus": report.sha256_tree(args.data)}
    total = schedule.total_steps
    if args.t_prime is None:
        args.t_prime = round(0.3 * total)
    settings = EvalSettings(
        method="pd",
        t_prime=args.t_prime,
        ensemble_size=args.ensemble,
        sigma_rule=args.sigma_rule,
        seed=args.seed,
        jobs=args.jobs,
    )

    if args.kind == "preseg-quality":
        targets = _parse_grid(args.grid, True) if args.grid else list(PRESEG_QUALITY_TARGETS)
        args.grid = ",".join(str(v) for v in targets)
        rows = experiment.sweep_preseg_quality(targets, cases, model, schedule, settings)
    else:
        preseg_fn, extra = _preseg_source(args)
        hashes.update(extra)
        if args.kind == "tprime":
            grid = _parse_grid(args.grid, False) if args.grid else default_tprime_grid(total)
            args.grid = ",".join(str(v) for v in grid)
            rows = experiment.sweep_tprime(grid, cases, model, schedule, preseg_fn, settings)
        else:
            sizes = _parse_grid(args.grid, False) if args.grid else list(ENSEMBLE_SIZES)
            args.grid = ",".join(str(v) for v in sizes)
            rows = experiment.sweep_ensemble(sizes, cases, model, schedule, preseg_fn, settings)

    grid_col = SWEEP_GRID_COLUMN[args.kind]
    out = Path(args.out)
    report.write_csv(out / "sweep.csv", [grid_col] + SWEEP_SUMMARY_COLUMNS, rows)
    xs = [row[grid_col] for row in rows]
    report.write_line_chart(
        out / "sweep_dice.svg", xs,
        {"mean dice": [r["mean_dice"] for r in rows]},
        grid_col, "dice", f"{args.kind} sweep",
    )
    report.write_line_chart(
        out / "sweep_uncertainty.svg", xs,
        {"mean uncertainty": [r["mean_uncertainty"] for r in rows]},
        grid_col, "uncertainty", f"{args.kind} sweep",
    )
    for row in rows:
        print(f"{grid_col}={row[grid_col]}: dice {row['mean_dice']:.4f} "
              f"+/- {row['std_dice']:.4f}, NFE/case {row['nfe_per_case']:.0f}")
    report.write_manifest(
        out / "run_manifest.txt",
        "sweep",
        _options(args),
        seed=args.seed,
        hashes=hashes,
        started=started,
        finished=_now(),
        artifacts=["sweep.csv", "sweep_dice.svg", "sweep_uncertainty.svg"],
    )
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    started = _now()
    passed, checks = experiment.oracle_check(
        total_steps=args.timesteps,
        t_prime=args.t_prime,
        trials=args.trials,
        grid_side=args.grid_side,
        seed=args.seed,
        target_mean=args.target_mean,
        target_std=args.target_std,
    )
    for check in checks:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['check']}: measured {check['measured']:.6g} "
              f"(bound {check['bound']:.6g})")
    out = Path(args.out)
    report.write_csv(out / "oracle_checks.csv",
                     ["check", "measured", "bound", "passed"], checks)
    report.write_manifest(
        out / "run_manifest.txt",
        "oracle-check",
        _options(args),
        seed=args.seed,
        started=started,
        finished=_now(),
        artifacts=["oracle_checks.csv"],
    )
    print("oracle check:", "PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_rerun(args) -> int:
    manifest = report.read_manifest(args.manifest)
    command = manifest["command"]
    if command not in HANDLERS or command == "rerun":
        raise ValueError(f"cannot rerun command {command!r}")
    ns = argparse.Namespace(**manifest["options"])
    if args.out is not None:
        ns.out = args.out
    return HANDLERS[command](ns)


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
    "rerun": cmd_rerun,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdseg", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--size", type=int, default=32, help="square grid side")
    p.add_argument("--lesions", type=int, nargs=2, default=[1, 4], metavar=("LO", "HI"))
    p.add_argument("--radius", type=float, nargs=2, default=[2.0, 6.0], metavar=("LO", "HI"))
    p.add_argument("--bg-mean", type=float, default=0.35)
    p.add_argument("--fg-mean", type=float, default=0.65)
    p.add_argument("--noise-level", type=float, default=0.12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the denoiser or pre-segmentation net")
    p.add_argument("--kind", choices=("diffusion", "preseg"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--timesteps", type=int, default=None, help="diffusion T (default 1000)")
    p.add_argument("--schedule", choices=("cosine", "linear"), default="cosine")
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--base-channels", type=int, default=None)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--fast", action="store_true",
                   help="CI profile: T=200, 16 base channels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sample", help="sample segmentations over a split")
    p.add_argument("--method", choices=("vanilla", "pd"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--denoiser", required=True, help="denoiser checkpoint")
    p.add_argument("--preseg", default=None, help="pre-segmentation checkpoint (pd)")
    p.add_argument("--preseg-oracle-dice", type=float, default=None,
                   help="degrade ground truth to this Dice instead of a net (pd)")
    p.add_argument("--t-prime", type=int, default=None)
    p.add_argument("--ensemble", type=int, default=5)
    p.add_argument("--sigma-rule", choices=("beta", "beta_tilde"), default="beta_tilde")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--limit", type=int, default=None, help="evaluate first N cases only")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="grid sweeps of the sampling protocol")
    p.add_argument("--kind", choices=tuple(SWEEP_GRID_COLUMN), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--preseg", default=None)
    p.add_argument("--preseg-oracle-dice", type=float, default=None)
    p.add_argument("--grid", default=None, help="comma-separated grid values")
    p.add_argument("--t-prime", type=int, default=None,
                   help="fixed t' for ensemble / preseg-quality sweeps (default 0.3T)")
    p.add_argument("--ensemble", type=int, default=5)
    p.add_argument("--sigma-rule", choices=("beta", "beta_tilde"), default="beta_tilde")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("oracle-check", help="training-free sampler verification")
    p.add_argument("--timesteps", type=int, default=100)
    p.add_argument("--t-prime", type=int, default=30)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--grid-side", type=int, default=8)
    p.add_argument("--target-mean", type=float, default=0.3)
    p.add_argument("--target-std", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rerun", help="re-execute a command from its run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="redirect outputs to a new directory")

    for name, sp in sub.choices.items():
        sp.set_defaults(handler=HANDLERS[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.handler(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegradationError as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (CorpusError, CheckpointError, PgmError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
