"""Command-line front end for reproducible space/train/search/analyze runs.

All randomness flows from the config's master seed; two invocations with an
identical resolved config produce byte-identical result JSON (timing lives
in a sibling ``*.timing.json``). Exit codes: 0 success, 1 usage error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import analysis, data, evolution, latency, schedule, space, supernet
from .errors import ElasticNasError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# -- run config ----------------------------------------------------------------

CONFIG_DEFAULTS = {
    "space": "toy-compound",
    "base": "toy",
    "schedule": {"kind": schedule.COMPOFA_SINGLE_STAGE, "scale": 1 / 12},
    "dataset": {"kind": "synthetic", "seed": 0, "n_train": 1024, "n_val": 512},
    "latency": {"kind": "synthetic", "slope_ms_per_mflop": 7.0,
                "overhead_ms": 10.6, "sigma_ms": 0.0, "seed": 0},
    "evo": {"iterations": evolution.ITERATIONS_COMPOUND_FIXED, "population": 100,
            "parent_fraction": 0.25, "p_mut": 0.1, "mutation_fraction": 0.5,
            "max_retries": 100},
    "batch_size": 64,
    "out_dir": "runs/out",
}


def load_run_config(path: str | None, overrides: dict) -> dict:
    cfg = json.loads(json.dumps(CONFIG_DEFAULTS))
    if path is not None:
        file_cfg = json.loads(Path(path).read_text())
        for key, value in file_cfg.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    if cfg.get("seed") is None:
        raise _UsageError("a master seed is required (--seed or config 'seed')")
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _resolve_space(spec) -> space.SearchSpaceDef:
    if isinstance(spec, str):
        return space.get_space(spec)
    return space.space_from_dict(spec)


def _resolve_base(spec) -> supernet.BaseArchConfig:
    if spec == "toy":
        return supernet.toy_base()
    if spec == "mobilenet-reference":
        return supernet.mobilenet_reference_base()
    return supernet.BaseArchConfig(**{
        k: tuple(v) if isinstance(v, list) else v for k, v in spec.items()
    })


def _resolve_dataset(spec) -> data.Dataset:
    if spec["kind"] != "synthetic":
        raise _UsageError(f"unknown dataset kind {spec['kind']!r}")
    return data.synthetic_dataset(
        seed=spec["seed"], n_train=spec["n_train"], n_val=spec["n_val"]
    )


def _resolve_latency(spec, base):
    if spec["kind"] == "synthetic":
        coeffs = latency.SyntheticCoeffs(
            slope_ms_per_mflop=spec["slope_ms_per_mflop"],
            overhead_ms=spec["overhead_ms"],
            sigma_ms=spec["sigma_ms"],
        )
        return latency.SyntheticLatencyModel(base, coeffs, seed=spec.get("seed", 0))
    if spec["kind"] == "lut":
        return latency.LutLatencyModel(latency.load_table(spec["path"]))
    raise _UsageError(f"unknown latency backend {spec['kind']!r}")


def _resolve_arch(text, sp):
    if text == "max":
        return space.max_arch(sp)
    if text == "min":
        return space.min_arch(sp)
    return space.ArchSpec.from_json(Path(text).read_text()
                                    if Path(text).exists() else text)


def _measured_fitness(params, dataset):
    memo = {}

    def fitness(arch):
        key = arch.to_json()
        if key not in memo:
            memo[key] = supernet.evaluate_accuracy(
                params, arch, dataset.val_images, dataset.val_labels
            )
        return memo[key]

    return fitness


# -- subcommands ---------------------------------------------------------------

def cmd_cardinality(args):
    print(space.cardinality(_resolve_space(args.space)))
    return 0


def cmd_sample(args):
    sp = _resolve_space(args.space)
    for i in range(args.count):
        print(space.sample_uniform(sp, args.seed + i).to_json())
    return 0


def cmd_flops(args):
    sp = _resolve_space(args.space)
    base = _resolve_base(args.base)
    arch = _resolve_arch(args.arch, sp)
    print(latency.count_flops(base, arch))
    return 0


def cmd_train(args):
    cfg = load_run_config(args.config, {"seed": args.seed, "out_dir": args.out})
    digest = config_hash(cfg)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    sp = _resolve_space(cfg["space"])
    base = _resolve_base(cfg["base"])
    dataset = _resolve_dataset(cfg["dataset"])
    sched = schedule.make_schedule(cfg["schedule"]["kind"], cfg["schedule"]["scale"])
    params = supernet.build_supernet(base, sp, seed=cfg["seed"])
    params, metrics = schedule.run_training(
        params, sp, sched, dataset, seed=cfg["seed"], batch_size=cfg["batch_size"]
    )
    supernet.save_checkpoint(params, out / "checkpoint.bin",
                             extra={"config_hash": digest})
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={digest}\n")
        writer = csv.writer(fh)
        writer.writerow(["phase", "epoch", "step", "loss", "lr"])
        step = 0
        for row in metrics["epochs"]:
            writer.writerow([row["phase"], row["epoch"], step,
                             repr(row["loss"]), repr(row["lr"])])
            step += 1
    (out / "run.json").write_text(json.dumps(
        {"config": cfg, "config_hash": digest,
         "phase_eval": metrics["phase_eval"],
         "schedule": schedule.schedule_to_dict(sched)},
        indent=2))
    print(f"checkpoint written to {out / 'checkpoint.bin'}")
    return 0


def cmd_search(args):
    cfg = load_run_config(args.config, {"seed": args.seed, "out_dir": args.out})
    digest = config_hash(cfg)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = args.checkpoint or str(out / "checkpoint.bin")
    params = supernet.load_checkpoint(ckpt)
    sp = _resolve_space(cfg["space"])
    dataset = _resolve_dataset(cfg["dataset"])
    lat_model = _resolve_latency(cfg["latency"], params.base)
    fitness = _measured_fitness(params, dataset)
    started = time.perf_counter()
    if args.exhaustive:
        best = evolution.exhaustive_best(
            sp, fitness, lat_model, args.target_ms, limit=args.limit
        )
        result = {
            "mode": "exhaustive",
            "arch": best.arch.to_json(),
            "fitness": best.fitness,
            "latency_ms": best.latency_ms,
        }
    else:
        cache = None if args.no_cache else latency.LatencyCache(sp)
        evo = evolution.EvoConfig(target_ms=args.target_ms, seed=cfg["seed"],
                                  **cfg["evo"])
        res = evolution.run_search(sp, fitness, lat_model, cache, evo)
        result = res.to_dict()
        result.pop("wall_time_s")
        result["mode"] = "evolution"
    result["config_hash"] = digest
    (out / "search_result.json").write_text(
        json.dumps(result, sort_keys=True, indent=2)
    )
    (out / "search_result.timing.json").write_text(json.dumps(
        {"wall_time_s": time.perf_counter() - started,
         "timestamp": time.time(), "config_hash": digest}
    ))
    print(json.dumps({"arch": result["arch"], "fitness": result["fitness"],
                      "latency_ms": result["latency_ms"]}))
    return 0


def cmd_analyze(args):
    cfg = load_run_config(args.config, {"seed": args.seed, "out_dir": args.out})
    digest = config_hash(cfg)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    if args.what == "cost":
        report = analysis.cost_report(args.gpu_hours)
        print(json.dumps({**asdict(report), "config_hash": digest}))
        return 0
    if args.what == "boxplot":
        samples = [float(x) for x in args.values.split(",")]
        lo, q1, med, q3, hi = analysis.boxplot_stats(samples)
        print(json.dumps({"min": lo, "q1": q1, "median": med, "q3": q3,
                          "max": hi, "config_hash": digest}))
        return 0
    if args.what == "pareto":
        with open(args.points) as fh:
            reader = csv.DictReader(fh)
            points = [(float(r["latency_ms"]), float(r["accuracy"]))
                      for r in reader]
        front = analysis.pareto_front(points)
        analysis.write_pareto_csv(front, out / "pareto.csv")
        print(f"pareto front ({len(front.points)} points) -> {out / 'pareto.csv'}")
        return 0

    # cdf and heatmap need a trained checkpoint
    ckpt = args.checkpoint or str(out / "checkpoint.bin")
    params = supernet.load_checkpoint(ckpt)
    sp = _resolve_space(cfg["space"])
    dataset = _resolve_dataset(cfg["dataset"])
    lat_model = _resolve_latency(cfg["latency"], params.base)
    fitness = _measured_fitness(params, dataset)
    if args.what == "cdf":
        curves = analysis.bucket_cdf(sp, args.n_per_bucket, lat_model, fitness,
                                     bucket_ms=args.bucket_ms, seed=cfg["seed"])
        analysis.write_cdf_csv(curves, out / "cdf.csv")
        print(f"{len(curves)} buckets -> {out / 'cdf.csv'}")
        return 0
    if args.what == "heatmap":
        acc, lat = analysis.heatmap_grid(sp, fitness, lat_model)
        analysis.write_heatmap_csv(sp, acc, lat, out / "heatmap.csv")
        print(f"heatmap -> {out / 'heatmap.csv'}")
        return 0
    raise _UsageError(f"unknown analyze target {args.what!r}")


def cmd_lut(args):
    if args.action == "validate":
        table = latency.load_table(args.path)
        print(f"ok: device={table.device} entries={len(table.entries)} "
              f"stem={len(table.stem)} head={len(table.head)}")
        return 0
    if args.action == "gen-synthetic":
        sp = _resolve_space(args.space)
        base = _resolve_base(args.base)
        table = latency.gen_synthetic_table(base, sp)
        latency.save_table(table, args.path)
        print(f"wrote {len(table.entries)} block entries to {args.path}")
        return 0
    raise _UsageError(f"unknown lut action {args.action!r}")


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="elasticnas")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cardinality", help="print exact space cardinality")
    p.add_argument("--space", required=True)
    p.set_defaults(fn=cmd_cardinality)

    p = sub.add_parser("sample", help="sample architectures as JSON lines")
    p.add_argument("--space", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-n", "--count", type=int, default=1)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("flops", help="exact MAC count of one architecture")
    p.add_argument("--space", required=True)
    p.add_argument("--base", default="toy")
    p.add_argument("--arch", default="max", help="max | min | JSON or path")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("train", help="run a schedule, write checkpoint+metrics")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("search", help="evolutionary or exhaustive search")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--checkpoint")
    p.add_argument("--target-ms", type=float, required=True)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--limit", type=int, default=10**5)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("analyze", help="population statistics and figure data")
    p.add_argument("what", choices=["cdf", "pareto", "heatmap", "boxplot", "cost"])
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--checkpoint")
    p.add_argument("--n-per-bucket", type=int, default=50)
    p.add_argument("--bucket-ms", type=float, default=5.0)
    p.add_argument("--points", help="CSV of latency_ms,accuracy for pareto")
    p.add_argument("--values", help="comma-separated samples for boxplot")
    p.add_argument("--gpu-hours", type=float, default=0.0)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("lut", help="latency lookup-table utilities")
    p.add_argument("action", choices=["validate", "gen-synthetic"])
    p.add_argument("path")
    p.add_argument("--space", default="toy-compound")
    p.add_argument("--base", default="toy")
    p.set_defaults(fn=cmd_lut)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ElasticNasError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
