"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from carla import config as cfgmod
from carla.errors import CarlaError, DataError, UsageError

log = logging.getLogger("carla")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _flag(section: Optional[str], name: str) -> str:
    return "--" + (f"{section}-{name}" if section else name).replace("_", "-")


def _field_kind(f: dataclasses.Field, owner: type):
    hints = typing.get_type_hints(owner)
    tp = hints[f.name]
    origin = typing.get_origin(tp)
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    if origin is list:
        return "list", args[0] if args else str
    if origin is typing.Union and args:
        tp = args[0]
    return "scalar", tp


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per RunConfig field, e.g. ``--pretext-epochs``; all default to None."""
    group = parser.add_argument_group("run configuration (override the config file)")
    group.add_argument("--config", type=Path, help="YAML config file")
    group.add_argument("--seed", type=int, dest="cfg__seed")
    group.add_argument("--out", dest="cfg__out")
    group.add_argument("--deterministic", action=argparse.BooleanOptionalAction, dest="cfg__deterministic",
                       help="single-threaded, deterministic numerics")
    group.add_argument("--window-size", type=int, dest="cfg__data.window_size", help="alias of --data-window-size")
    for section, cls in cfgmod.SECTIONS.items():
        for f in cfgmod.section_fields(section):
            kind, tp = _field_kind(f, cls)
            dest = f"cfg__{section}.{f.name}"
            flag = _flag(section, f.name)
            if kind == "list":
                group.add_argument(flag, nargs="+", type=tp, dest=dest, metavar=f.name.upper())
            elif tp is bool:
                group.add_argument(flag, action=argparse.BooleanOptionalAction, dest=dest)
            else:
                group.add_argument(flag, type=tp, dest=dest, metavar=f.name.upper())


def config_from_args(args: argparse.Namespace) -> cfgmod.RunConfig:
    base = cfgmod.load_config(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    overrides = {k[5:]: v for k, v in vars(args).items() if k.startswith("cfg__") and v is not None}
    if getattr(args, "data", None):
        overrides["data.path"] = str(args.data)
    try:
        return cfgmod.with_overrides(base, overrides)
    except DataError as exc:
        raise UsageError(str(exc)) from None


# ----------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    from carla.dataset import save_benchmark, synthesize_benchmark

    entities = synthesize_benchmark(args.seed, args.entities, args.length, args.dims, args.anomaly_ratio)
    save_benchmark(entities, args.out)
    for e in entities:
        print(f"{e.name}: T={e.train.length} Dim={e.train.dims} anomalous={e.test.labels.mean():.4f}")
    return 0


def cmd_inject_preview(args) -> int:
    from carla.dataset import load_benchmark, window_array
    from carla.inject import inject_anomaly

    entities = load_benchmark(args.data)
    entity = entities[0] if args.entity is None else next((e for e in entities if e.name == args.entity), None)
    if entity is None:
        raise DataError(f"no entity named {args.entity!r} in {args.data}")
    windows = window_array(entity.train, args.window_size, 1)
    if not 0 <= args.index < len(windows):
        raise UsageError(f"window index {args.index} out of range [0, {len(windows)})")
    types = args.types or None
    w = windows[args.index]
    rng = np.random.default_rng(args.seed)
    w_prime, spec = inject_anomaly(w, rng, types) if types else inject_anomaly(w, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ",".join(f"d{k}" for k in range(w.shape[1]))
    np.savetxt(out / "window.csv", w, delimiter=",", header=header, comments="", fmt="%.17g")
    np.savetxt(out / "injected.csv", w_prime, delimiter=",", header=header, comments="", fmt="%.17g")
    (out / "spec.json").write_text(json.dumps(
        {"entity": entity.name, "window_index": args.index, "seed": args.seed, **spec.to_dict()}, indent=2))
    print(json.dumps(spec.to_dict()))
    return 0


def cmd_train(args) -> int:
    from carla.pipeline import run_pipeline

    config = config_from_args(args)
    result = run_pipeline(config, stage=args.stage, evaluate=False)
    for r in result.runs:
        print(f"{r.name}: {', '.join(sorted(p.name for p in r.directory.iterdir()))}")
    return 0


def cmd_run(args) -> int:
    from carla.pipeline import run_pipeline

    config = config_from_args(args)
    result = run_pipeline(config, stage="all")
    print((result.out / "report.md").read_text())
    return 0


def cmd_detect(args) -> int:
    from carla.dataset import load_benchmark
    from carla.pipeline import StageError, detect_entity

    config = config_from_args(args)
    for entity in load_benchmark(config.data.path):
        try:
            detect_entity(entity, config, Path(config.out) / entity.name)
        except CarlaError as exc:
            raise StageError("detect", entity.name, exc) from exc
        print(f"{entity.name}: wrote {Path(config.out) / entity.name / 'scores.csv'}")
    return 0


def cmd_eval(args) -> int:
    from carla.dataset import load_benchmark
    from carla.evaluate import benchmark_report, write_report
    from carla.infer import read_scores
    from carla.pipeline import evaluate_runs

    if args.scores is not None:
        labels_path = Path(args.labels) if args.labels else None
        if labels_path is None:
            raise UsageError("--scores requires --labels")
        from carla.dataset import _read_matrix

        _, lab = _read_matrix(labels_path, ["label"])
        labels, scores = lab[:, 0], read_scores(args.scores)
        if not np.isin(labels, (0.0, 1.0)).all():
            raise DataError(f"{labels_path}: label values must be 0 or 1")
        if len(labels) != len(scores):
            raise DataError(f"{len(scores)} scores for {len(labels)} labels")
        try:
            report = benchmark_report([Path(args.scores).stem], [labels.astype(np.int8)], [scores])
        except ValueError as exc:
            raise DataError(str(exc)) from None
        out = Path(args.cfg__out or Path(args.scores).parent)
        write_report(report, out)
        print((out / "report.md").read_text())
        return 0
    config = config_from_args(args)
    entities = load_benchmark(config.data.path)
    report, baseline = evaluate_runs(entities, config, Path(config.out))
    write_report(report, config.out, baseline=baseline)
    print((Path(config.out) / "report.md").read_text())
    return 0


def cmd_report(args) -> int:
    from carla.evaluate import EvalReport, render_markdown

    path = Path(args.run) / "report.json" if Path(args.run).is_dir() else Path(args.run)
    if not path.is_file():
        raise DataError(f"no report.json at {path}")
    payload = json.loads(path.read_text())
    baseline = EvalReport.from_dict(payload["random_baseline"]) if "random_baseline" in payload else None
    text = render_markdown(EvalReport.from_dict(payload["model"]), args.title, baseline)
    (path.parent / "report.md").write_text(text)
    print(text)
    return 0


def cmd_ablate(args) -> int:
    from carla.pipeline import run_ablation

    config = config_from_args(args)
    for sw in args.switch:
        cfgmod.apply_switch(config, sw)  # validate before any training starts
    run_ablation(config, args.switch)
    print((Path(config.out) / "ablation.md").read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carla", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=3)
    p.add_argument("--length", type=int, default=5000)
    p.add_argument("--dims", type=int, default=3)
    p.add_argument("--anomaly-ratio", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject-preview", help="inject one anomaly into a training window and dump it")
    p.add_argument("--data", required=True)
    p.add_argument("--entity")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--window-size", type=int, default=200)
    p.add_argument("--types", nargs="+")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject_preview)

    for name, func, help_ in (
        ("train", cmd_train, "train stage one and/or two"),
        ("run", cmd_run, "train both stages, detect and evaluate"),
        ("detect", cmd_detect, "score test splits with trained checkpoints"),
        ("ablate", cmd_ablate, "compare ablation switches against the reference run"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--data", help="benchmark or entity directory")
        if name == "train":
            p.add_argument("--stage", choices=("pretext", "selfsup", "all"), default="all")
        if name == "ablate":
            p.add_argument("--switch", action="append", required=True,
                           help="one of " + ", ".join(cfgmod.ABLATION_SWITCHES))
        add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate scores against labels")
    p.add_argument("--data", help="benchmark directory (reads <out>/<entity>/scores.csv)")
    p.add_argument("--scores", help="single scores.csv")
    p.add_argument("--labels", help="labels csv (header 'label') for --scores")
    add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="re-render report.md from report.json")
    p.add_argument("run", help="run directory or report.json")
    p.add_argument("--title", default="Evaluation report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except CarlaError as exc:
        print(f"carla {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ArithmeticError as exc:
        print(f"carla {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
