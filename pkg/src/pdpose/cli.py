"""Command line interface.

::

    pdpose validate --config run.yaml
    pdpose extract  --config run.yaml --out features/
    pdpose evaluate --config run.yaml --seed 3 --task Communication,Drinking
    pdpose predict  out/models.json video.json
    pdpose report   --out out/
    pdpose synth    --out cohort/

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 experiment failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import RunConfig, load_config
from .core import Task, subscore_labels, validate_dataset
from .dataio import (
    DataError,
    load_dataset,
    load_model_bundle,
    load_trajectory,
    save_dataset,
    save_model_bundle,
    write_feature_csv,
)
from .evaluation import evaluate, train_subscore_model
from .pipeline import FeatureExtractor
from .report import render, write_report

log = logging.getLogger("pdpose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXPERIMENT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ExperimentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _task_list(text: str) -> tuple[str, ...]:
    out = []
    for name in text.split(","):
        name = name.strip()
        try:
            out.append(Task(name).value)
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"unknown task {name!r} (choose from {', '.join(t.value for t in Task)})")
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON or YAML run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="master random seed")
    common.add_argument("--task", type=_task_list, metavar="LIST",
                        help="comma-separated task names")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--trajectories", nargs="+", metavar="PATH",
                        help="trajectory files or directories (overrides the config)")
    common.add_argument("--ratings", nargs="+", metavar="PATH",
                        help="rating CSV files (overrides the config)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="pdpose", description="Movement features and severity models "
                "from pose trajectories of clinical assessment videos.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="check a dataset for schema problems")
    sub.add_parser("extract", parents=[common], help="write one feature CSV per subscore")
    ev = sub.add_parser("evaluate", parents=[common], help="run LOSO experiments and report")
    ev.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    ev.add_argument("--no-models", action="store_true",
                    help="skip training the final models bundle")
    pr = sub.add_parser("predict", parents=[common], help="score a video with a trained bundle")
    pr.add_argument("model", help="models.json written by 'evaluate'")
    pr.add_argument("trajectory", nargs="+", help="trajectory JSON file(s)")
    rp = sub.add_parser("report", parents=[common], help="re-render tables and figures")
    rp.add_argument("--no-figures", action="store_true")
    sy = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    sy.add_argument("--subjects", type=int, default=8)
    sy.add_argument("--sessions", type=int, default=6)
    return p


def _config(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {exc.filename}")
    except (ValueError, TypeError, KeyError, yaml.YAMLError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}")
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.task:
        kw["tasks"] = args.task
    if args.out:
        kw["out"] = args.out
    if args.trajectories:
        kw["trajectories"] = tuple(args.trajectories)
    if args.ratings:
        kw["ratings"] = tuple(args.ratings)
    return cfg.replace(**kw) if kw else cfg


def _dataset(cfg: RunConfig):
    if not cfg.trajectories:
        raise UsageError("no trajectories given (set 'trajectories' in the config "
                         "or pass --trajectories)")
    d = load_dataset(cfg.trajectories, cfg.ratings)
    selected = set(cfg.task_list)
    return type(d)(tuple(s for s in d.sequences if s.task in selected), d.ratings)


def cmd_validate(args, cfg) -> int:
    d = load_dataset(cfg.trajectories, cfg.ratings) if cfg.trajectories else None
    if d is None:
        raise UsageError("no trajectories given")
    findings = validate_dataset(d)
    w = csv.writer(sys.stdout, lineterminator="\n")
    for f in findings:
        w.writerow([f.video_id or "", f.field, f.message])
    print(f"{len(d.sequences)} videos, {len(d.subjects)} subjects, {len(findings)} finding(s)",
          file=sys.stderr)
    return EXIT_DATA if findings else EXIT_OK


def cmd_extract(args, cfg) -> int:
    d = _dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ex = FeatureExtractor(cfg)
    fp = cfg.fingerprint()
    written, attempted = 0, 0
    for task in cfg.task_list:
        if not d.by_task(task):
            continue
        for sub in subscore_labels(task):
            table = ex.subscore_table(d, task, sub)
            attempted += 1
            if not len(table):
                log.error("%s %s: no video produced features", task.value, sub)
                continue
            path = out / f"{task.value}_{sub}.csv"
            write_feature_csv(path, table, fp)
            written += 1
            print(path)
    if attempted and not written:
        raise DataError("feature extraction failed for every video")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    d = _dataset(cfg)
    ex = FeatureExtractor(cfg)
    report = evaluate(d, cfg, ex)
    if not report.results:
        raise ExperimentError("no experiment produced results: "
                              + "; ".join(f"{k}: {v}" for k, v in report.errors.items()))
    paths = write_report(report, cfg.out, figures=cfg.figures and not args.no_figures)
    if not args.no_models:
        models = []
        for res in report.results:
            if res.experiment not in ("regression", "binary"):
                continue
            model = train_subscore_model(d, Task(res.task), res.subscore, res.experiment, cfg, ex)
            models.append({"task": res.task, "subscore": res.subscore,
                           "mode": res.experiment, "model": model})
        paths["models"] = Path(cfg.out) / "models.json"
        save_model_bundle(paths["models"], models, report.fingerprint, report.config)
    for p in paths.values():
        print(p)
    return EXIT_OK


def predict_rows(bundle: dict, seq) -> list[dict]:
    """Score one sequence with every model of the bundle trained on its task."""
    cfg = RunConfig.from_dict(bundle["config"])
    ex = FeatureExtractor(cfg)
    models = [m for m in bundle["models"] if m["task"] == seq.task.value]
    if not models:
        expected = sorted({n for m in bundle["models"] for n in m["model"].feature_names})
        raise DataError(f"{seq.video_id}: schema mismatch, bundle has no {seq.task.value} "
                        f"model; missing features: {', '.join(expected)}")
    rows = []
    for m in models:
        model = m["model"]
        try:
            vec = ex.subscore_vector(seq, m["subscore"])
        except ValueError as exc:
            raise DataError(f"{seq.video_id}: {exc}")
        have = dict(zip(vec.names, vec.values))
        missing = [n for n in model.feature_names if n not in have]
        if missing:
            raise DataError(f"{seq.video_id}: schema mismatch for {m['task']} {m['subscore']}; "
                            f"missing features: {', '.join(missing)}")
        x = [[have[n] for n in model.feature_names]]
        row = {"video_id": seq.video_id, "task": m["task"], "subscore": m["subscore"],
               "mode": m["mode"], "prediction": model.predict(x)[0], "score": ""}
        if m["mode"] == "binary":
            classes = list(model.classes)
            row["score"] = float(model.predict_proba(x)[0][classes.index(1)])
        row["prediction"] = (float(row["prediction"]) if m["mode"] == "regression"
                             else int(row["prediction"]))
        row["config_fingerprint"] = bundle["config_fingerprint"]
        rows.append(row)
    return rows


def cmd_predict(args, cfg) -> int:
    try:
        bundle = load_model_bundle(args.model)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {args.model}")
    rows = []
    for path in args.trajectory:
        rows += predict_rows(bundle, load_trajectory(path))
    fields = ["video_id", "task", "subscore", "mode", "prediction", "score",
              "config_fingerprint"]
    sinks = [sys.stdout]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        sinks.append(open(Path(args.out) / "predictions.csv", "w", newline="",
                          encoding="utf-8"))
    try:
        for fh in sinks:
            w = csv.DictWriter(fh, fields, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    finally:
        for fh in sinks[1:]:
            fh.close()
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    out = Path(cfg.out)
    if not (out / "metrics.csv").exists():
        raise DataError(f"{out}: no metrics.csv (run 'evaluate' first)")
    for p in render(out, figures=not args.no_figures).values():
        print(p)
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    from .synthetic import make_cohort

    d = make_cohort(args.subjects, args.sessions, seed=cfg.seed, tasks=cfg.task_list)
    for p in save_dataset(d, cfg.out):
        print(p)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "extract": cmd_extract, "evaluate": cmd_evaluate,
            "predict": cmd_predict, "report": cmd_report, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"pdpose: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"pdpose: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ExperimentError as exc:
        print(f"pdpose: experiment failed: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    except Exception as exc:  # anything else is a failure of the run itself
        log.debug("unexpected error", exc_info=True)
        print(f"pdpose: experiment failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT


if __name__ == "__main__":
    sys.exit(main())
