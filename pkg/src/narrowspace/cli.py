"""Command-line front end.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.  Every
run writes ``manifest.json`` into its output directory; data files never
contain timestamps.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, calibration, core, inference, lawsearch, laws, pareto, precision
from . import space as spaces
from .seeding import mix

# defaults applied after merging the optional config file
DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out": ".",
    "n": 10,
    "metric": "parameter_count",
    "grid": "default",
    "n_init": 100,
    "n_steps": 900,
    "n_eval": 10,
    "tournament_size": 3,
    "mutation_prob": 0.3,
    "mutation_shift": 0.25,
    "clusters": 10,
    "n_val": 100,
    "cost": "weight_bytes",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--config", default=None, help="JSON file of flag values; flags win")

    p = _Parser(prog="narrowspace", description="narrow-space architecture synthesis")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", parents=[common], help="sample architectures and metrics")
    s.add_argument("--space", required=True)
    s.add_argument("--law")
    s.add_argument("--n", type=int, default=None)

    s = sub.add_parser("learn-laws", parents=[common], help="genetic law search + archive")
    s.add_argument("--space", required=True)
    s.add_argument("--metric", choices=laws.METRICS, default=None)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--window", help="tau1,tau2")
    g.add_argument("--grid", help="'default' or LOW:HIGH decades")
    for flag, typ in (("--n-init", int), ("--n-steps", int), ("--n-eval", int),
                      ("--tournament-size", int), ("--mutation-prob", float),
                      ("--mutation-shift", float), ("--clusters", int), ("--n-val", int)):
        s.add_argument(flag, type=typ, default=None)

    s = sub.add_parser("quantize", parents=[common], help="precision sweep of a model")
    s.add_argument("--arch", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--types", help="comma-separated type names (default: full grid)")

    s = sub.add_parser("calibrate", parents=[common], help="fit the latency model")
    s.add_argument("--measurements", required=True)

    s = sub.add_parser("predict", parents=[common], help="predict latency for an archive")
    s.add_argument("--model", required=True)
    s.add_argument("--archive", required=True)

    for name, text in (("front", "extract a Pareto front"), ("best", "best record under a bound")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--records", required=True)
        s.add_argument("--tables", help="precision tables CSV (candidate_id,type,storage_width,accuracy)")
        s.add_argument("--type", dest="type_name",
                       help="price every record at this type, or 'individual' for per-model best")
        if name == "front":
            s.add_argument("--cost", choices=pareto.COST_AXES, default=None)
        else:
            s.add_argument("--axis", choices=pareto.COST_AXES, required=True)
            s.add_argument("--bound", type=float, required=True)
    return p


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if getattr(args, dest, None) is None:
                setattr(args, dest, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    if args.threads < 1:
        raise UsageError("narrowspace: --threads must be >= 1")
    return args


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, args: argparse.Namespace, inputs: list[str]) -> None:
    doc = {
        "command": args.command,
        "config": args.config,
        "seed": args.seed,
        "threads": args.threads,
        "out": str(out),
        "tool_version": __version__,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.isfile(p)},
        "created": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_space(ref: str) -> spaces.SearchSpace:
    if os.path.isfile(ref):
        return spaces.load_space(ref)
    if ref in spaces.BUILTIN_SPACES:
        return spaces.builtin_space(ref)
    raise FileNotFoundError(f"no space file or built-in space named {ref!r}")


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def cmd_sample(args, out: Path) -> list[str]:
    sp = _load_space(args.space)
    law = laws.load_law(args.law, sp) if args.law else None
    with open(out / "samples.csv", "w", newline="") as fh, \
            open(out / "architectures.jsonl", "w") as jf:
        w = _csv_writer(fh)
        w.writerow(("index", "candidate_id", "space_id", "parameter_count", "flops"))
        for i in range(args.n):
            seed = mix(args.seed, i)
            arch = laws.sample_with_law(sp, law, seed) if law else spaces.sample_uniform(sp, seed)
            m = core.analyze(arch)
            w.writerow((i, arch.id, sp.id, m.parameter_count, m.flops))
            jf.write(core.dumps(arch) + "\n")
    return [args.space, args.law]


def _grid(args) -> list[float]:
    if args.window:
        t1, t2 = (float(x) for x in args.window.split(","))
        if not t1 < t2:
            raise UsageError("--window needs tau1 < tau2")
        return [t1, t2]
    if args.grid == "default":
        return lawsearch.constraint_grid()
    try:
        low, high = (int(float(x)) for x in args.grid.split(":"))
    except ValueError:
        raise UsageError("--grid must be 'default' or LOW:HIGH") from None
    return lawsearch.constraint_grid(low, high)


def genetic_config(args) -> lawsearch.GeneticConfig:
    return lawsearch.GeneticConfig(
        n_init=args.n_init, n_steps=args.n_steps, n_eval=args.n_eval,
        tournament_size=args.tournament_size, mutation_prob=args.mutation_prob,
        mutation_shift=args.mutation_shift, seed=args.seed,
        n_clusters=args.clusters, n_val=args.n_val,
    )


def cmd_learn_laws(args, out: Path) -> list[str]:
    sp = _load_space(args.space)
    result = lawsearch.elaborate_space(sp, genetic_config(args), _grid(args), args.metric,
                                       threads=args.threads)
    (out / "logs").mkdir(exist_ok=True)
    (out / "laws").mkdir(exist_ok=True)
    for i, search in enumerate(result.searches):
        lawsearch.write_search_log(out / "logs" / f"search_{i:02d}.csv", search.log)
    for entry in result.library:
        (out / "laws" / f"{entry.law_id}.json").write_text(entry.law.dumps())
    (out / "library.json").write_text(lawsearch.library_json(result.library))
    lawsearch.write_archive(out / "archive.csv", result.archive)
    return [args.space]


def cmd_quantize(args, out: Path) -> list[str]:
    arch = core.loads(Path(args.arch).read_text())
    weights = inference.WeightBundle.load(args.weights)
    data = inference.Dataset.load(args.dataset)
    types = None
    if args.types:
        types = [precision.ReducedFloatType.parse(t) for t in args.types.split(",")]
    rows = inference.precision_sweep(arch, weights, data, types, threads=args.threads)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(inference.SWEEP_HEADER)
        for r in rows:
            w.writerow((r.type_name, r.storage_width, repr(r.accuracy)))
    return [args.arch, args.weights, args.dataset]


def cmd_calibrate(args, out: Path) -> list[str]:
    records = calibration.read_measurements(args.measurements)
    model = calibration.fit_latency_model(records)
    (out / "latency_model.json").write_text(model.to_json())
    if len(records) >= 3:
        corr = calibration.correlations(records)
        (out / "correlations.json").write_text(json.dumps(corr.__dict__, indent=2, sort_keys=True) + "\n")
    return [args.measurements]


def cmd_predict(args, out: Path) -> list[str]:
    model = calibration.LatencyModel.from_json(Path(args.model).read_text())
    rows = lawsearch.read_archive(args.archive)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow((*lawsearch.ARCHIVE_HEADER, "latency_ms", "latency_source"))
        for r in rows:
            lat = calibration.predict_latency(model, r.flops)
            w.writerow((r.candidate_id, r.space_id, r.law_id, r.parameter_count, r.flops,
                        repr(lat), "predicted"))
    return [args.model, args.archive]


def priced_records(args) -> list[pareto.CandidateRecord]:
    records = pareto.read_records(args.records)
    if args.tables:
        records = pareto.attach_tables(records, pareto.read_tables(args.tables))
    if args.type_name == "individual":
        return pareto.best_type_per_model(records)
    if args.type_name:
        return pareto.fixed_type_records(records, args.type_name)
    return records


def cmd_front(args, out: Path) -> list[str]:
    front = pareto.pareto_front(priced_records(args), args.cost)
    pareto.write_front(out / "front.csv", front, args.cost)
    return [args.records, args.tables]


def cmd_best(args, out: Path) -> list[str]:
    best = pareto.best_under_constraint(priced_records(args), pareto.Constraint(args.axis, args.bound))
    pareto.write_front(out / "best.csv", [] if best is None else [best], args.axis)
    if best is None:
        print("no record satisfies the constraint", file=sys.stderr)
    return [args.records, args.tables]


COMMANDS = {
    "sample": cmd_sample,
    "learn-laws": cmd_learn_laws,
    "quantize": cmd_quantize,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "front": cmd_front,
    "best": cmd_best,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _merge_config(build_parser().parse_args(argv))
    except UsageError as exc:
        print(str(exc).splitlines()[0], file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"narrowspace: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        inputs = COMMANDS[args.command](args, out)
        _write_manifest(out, args, [p for p in inputs if p])
    except UsageError as exc:
        print(f"narrowspace: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"narrowspace: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
