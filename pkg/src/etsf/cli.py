"""Command line surface: inspect archives, verify gradients, train a single
strategy, run the full benchmark, and generate synthetic fixtures.

Exit codes: 0 success, 1 validation problem (bad flags, malformed files,
failed checks), 2 unexpected runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import report as report_mod
from .gradcheck import run_suite
from .model import ModelParams, save_params
from .seeding import derive_seed
from .training import forecast_target, model_config_for_strategy, train, write_train_log
from .tsf import Frequency, TsfFormatError, load_tsf, serialize_tsf

ENV_MANIFEST = "ETSF_MANIFEST"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we reserve 2 for crashes
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="etsf", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("inspect", help="print a dataset summary")
    p.add_argument("file", help="path to a .tsf archive")
    p.add_argument("--delta", type=int, default=None, help="override the input window length")
    p.add_argument("--horizon", type=int, default=None, help="override the forecast horizon")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--coords", type=int, default=128, help="coordinates probed per block (0 = all)")

    p = sub.add_parser("train", help="train one strategy for one target dataset")
    p.add_argument("--strategy", required=True)
    p.add_argument("--target", required=True, help="target dataset id from the manifest")
    p.add_argument("--manifest", default=None, help=f"manifest path (default ${ENV_MANIFEST})")
    p.add_argument("--out", default=".", help="output directory for checkpoint and log")
    p.add_argument("--seed", type=int, default=None, help="override the manifest seed")

    p = sub.add_parser("bench", help="run the leave-one-out benchmark")
    p.add_argument("--manifest", default=None, help=f"manifest path (default ${ENV_MANIFEST})")
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--jobs", type=int, default=1, help="concurrent evaluation cells")
    p.add_argument("--seed", type=int, default=None, help="override the manifest seed")

    p = sub.add_parser("synth", help="write a synthetic .tsf fixture")
    p.add_argument("--family", choices=("sin", "trend", "ar1"), default="sin")
    p.add_argument("--out", required=True)
    p.add_argument("--id", default=None, help="dataset id (default: output stem)")
    p.add_argument("--series", type=int, default=20)
    p.add_argument("--length", type=int, default=72)
    p.add_argument("--delta", type=int, default=12)
    p.add_argument("--horizon", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--period", type=float, default=12.0)
    p.add_argument("--frequency", default="monthly")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _manifest_path(arg: str | None) -> Path:
    path = arg if arg is not None else os.environ.get(ENV_MANIFEST)
    if not path:
        raise UsageError(f"no manifest given: pass --manifest or set ${ENV_MANIFEST}")
    path = Path(path)
    if not path.exists():
        raise UsageError(f"manifest not found: {path}")
    return path


def _load_manifest(arg: str | None, seed_override: int | None) -> bench_mod.BenchmarkManifest:
    manifest = bench_mod.load_manifest(_manifest_path(arg))
    if seed_override is not None:
        raw = dict(manifest.raw)
        raw["seed"] = seed_override
        manifest = bench_mod.BenchmarkManifest(raw=raw, base_dir=manifest.base_dir)
    return manifest


def _cmd_inspect(args) -> int:
    path = Path(args.file)
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    dataset = load_tsf(path, delta=args.delta, horizon=args.horizon)
    meta = dataset.meta
    lengths = [len(s.values) for s in dataset.series]
    missing = sum(1 for s in dataset.series for v in s.values if v is None)
    print(f"name:        {meta.name}")
    print(f"frequency:   {meta.frequency.value}")
    print(f"M:           {meta.series_count}")
    print(f"delta:       {meta.delta}")
    print(f"horizon:     {meta.horizon}")
    print(f"seasonality: {meta.seasonality}")
    print(f"lengths:     min={min(lengths)} max={max(lengths)}")
    print(f"missing:     {missing}")
    print(f"timestamps:  {'yes' if dataset.has_timestamps else 'no'}")
    return 0


def _cmd_gradcheck(args) -> int:
    coords = None if args.coords == 0 else args.coords
    start = time.perf_counter()
    result = run_suite(
        seed=args.seed, instances=args.instances,
        tolerance=args.tolerance, max_coords_per_block=coords,
    )
    elapsed = time.perf_counter() - start
    for idx, rep in enumerate(result.reports):
        status = "ok" if rep.ok else "FAIL"
        print(f"instance {idx:03d}: max_rel_err={rep.max_rel_error:.3e} {status}")
    print(
        f"{len(result.reports)} instances, max_rel_err={result.max_rel_error:.3e}, "
        f"tolerance={args.tolerance:g}, {elapsed:.1f}s: {'PASS' if result.ok else 'FAIL'}"
    )
    return 0 if result.ok else 1


def _cmd_train(args) -> int:
    manifest = _load_manifest(args.manifest, args.seed)
    if args.strategy in bench_mod.BASELINE_METHODS:
        raise UsageError(f"strategy {args.strategy!r} needs no training; use bench")
    datasets = manifest.load_datasets()
    by_id = {ds.meta.id: ds for ds in datasets}
    if args.target not in by_id:
        raise UsageError(f"target {args.target!r} not in manifest datasets {sorted(by_id)}")
    task, target_task = bench_mod.build_target_task(by_id, args.target, manifest)
    aux_tasks = [
        bench_mod.build_aux_task(ds, manifest) for ds_id, ds in by_id.items() if ds_id != args.target
    ]
    aux_tasks = [t for t in aux_tasks if t.samples]
    metas = [t.meta for t in aux_tasks] + [task.meta]
    model_config = model_config_for_strategy(manifest.model_config(), args.strategy, metas)
    train_config = manifest.train_config(
        args.strategy, derive_seed(manifest.seed, args.target, args.strategy)
    )
    state = train(aux_tasks, target_task, model_config, train_config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / f"train_{args.target}_{args.strategy}.csv"
    write_train_log(state, log_path)
    ckpt_path = out_dir / f"checkpoint_{args.target}_{args.strategy}.npz"
    adapted = ModelParams(config=state.model_config, encoder=state.adapted_encoder or [], heads={})
    if state.adapted_head is not None:
        adapted.heads[adapted.head_key(args.target)] = state.adapted_head
    save_params(ckpt_path, adapted, train_config.seed)
    sample = next(iter(task.observed.values()))
    forecast = forecast_target(state, sample[-task.meta.delta:])
    print(f"trained {args.strategy} on target {args.target}: "
          f"{state.outer_iters} outer iterations, best val score {state.best_val:.4f}")
    print(f"log:        {log_path}")
    print(f"checkpoint: {ckpt_path}")
    print(f"sample forecast ({next(iter(task.observed))}): {np.array2string(forecast, precision=4)}")
    return 0


def _cmd_bench(args) -> int:
    manifest = _load_manifest(args.manifest, args.seed)
    datasets = manifest.load_datasets()
    result = bench_mod.leave_one_out(datasets, manifest, jobs=args.jobs)
    written = report_mod.write_report(result, args.out, manifest_json=manifest.to_json())
    print(f"benchmark over {len(result.dataset_ids)} datasets x {len(result.methods)} methods")
    for method in result.methods:
        print(f"  wins[{method}] = {result.wins[method]}")
    if result.leakage_violations:
        print(f"LEAKAGE: {result.leakage_violations} violating batches", file=sys.stderr)
    print(f"report: {written['csv']}")
    print(f"summary: {written['summary']}")
    for fig in written["figures"]:
        print(f"figure: {fig}")
    return 0 if result.leakage_violations == 0 else 2


def _cmd_synth(args) -> int:
    try:
        frequency = Frequency(args.frequency)
    except ValueError:
        raise UsageError(f"unknown frequency {args.frequency!r}") from None
    out = Path(args.out)
    spec = bench_mod.SyntheticSpec(
        id=args.id if args.id is not None else out.stem,
        family=args.family,
        series_count=args.series,
        length=args.length,
        delta=args.delta,
        horizon=args.horizon,
        frequency=frequency,
        noise=args.noise,
        period=args.period,
    )
    dataset = bench_mod.gen_synthetic(spec, args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize_tsf(dataset))
    print(f"wrote {spec.family} dataset {spec.id!r} ({spec.series_count} series) to {out}")
    return 0


_COMMANDS = {
    "inspect": _cmd_inspect,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "bench": _cmd_bench,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.verb](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TsfFormatError, bench_mod.ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a genuine crash
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
