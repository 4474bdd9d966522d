"""Evaluation output: metrics/prediction CSVs, Markdown tables, figures."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from .core import Task, subscore_labels
from .evaluation import MULTICLASS, EvaluationReport, fisher_mean

log = logging.getLogger(__name__)

METRIC_FIELDS = ("experiment", "task", "subscore", "n", "n0", "rms", "r", "f1", "auc",
                 "accuracy", "config_fingerprint")
PREDICTION_FIELDS = ("experiment", "task", "subscore", "video_id", "subject_id", "rating",
                     "truth", "prediction", "score", "config_fingerprint")
CLASS_FIELDS = ("class", "n", "sensitivity", "specificity", "config_fingerprint")
MISSING = "n/a"


def _fmt(v, digits=3):
    if v is None or v == "" or (isinstance(v, float) and not np.isfinite(v)):
        return MISSING
    if isinstance(v, (int, np.integer)):
        return str(v)
    return f"{float(v):.{digits}f}"


def _csv_value(v):
    if isinstance(v, np.generic):
        v = v.item()
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_value(r.get(k)) for k in fields})


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def metric_rows(report: EvaluationReport) -> list[dict]:
    rows = []
    for res in report.results:
        m = res.metrics
        rows.append({"experiment": res.experiment, "task": res.task, "subscore": res.subscore,
                     "n": m.n, "n0": m.n0, "rms": m.rms, "r": m.r, "f1": m.f1, "auc": m.auc,
                     "accuracy": m.accuracy, "config_fingerprint": report.fingerprint})
    return rows


def write_report(report: EvaluationReport, out_dir, figures: bool = True) -> dict[str, Path]:
    """Write metrics.csv, predictions.csv, multiclass.csv, tables.md, config.json
    and (optionally) figures into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["metrics"] = out / "metrics.csv"
    _write_csv(paths["metrics"], METRIC_FIELDS, metric_rows(report))
    preds = []
    for res in report.results:
        for p in res.predictions:
            preds.append({"experiment": res.experiment, "task": res.task,
                          "subscore": res.subscore, **p,
                          "config_fingerprint": report.fingerprint})
    paths["predictions"] = out / "predictions.csv"
    _write_csv(paths["predictions"], PREDICTION_FIELDS, preds)
    multi = [r for r in report.results if r.experiment == "multiclass"]
    if multi:
        paths["multiclass"] = out / "multiclass.csv"
        rows = [{"class": c, **v, "config_fingerprint": report.fingerprint}
                for c, v in multi[0].metrics.per_class.items()]
        rows.append({"class": "overall", "n": multi[0].metrics.n,
                     "sensitivity": multi[0].metrics.accuracy,
                     "config_fingerprint": report.fingerprint})
        _write_csv(paths["multiclass"], CLASS_FIELDS, rows)
    paths["config"] = out / "config.json"
    paths["config"].write_text(
        json.dumps({"config_fingerprint": report.fingerprint, "config": report.config,
                    "errors": report.errors}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    paths.update(render(out, figures=figures))
    return paths


def _num(v):
    return None if v in (None, "") else float(v)


def _mean_row(cells: list[dict]) -> dict:
    def avg(key):
        vals = [_num(c.get(key)) for c in cells]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    rs = [_num(c.get("r")) for c in cells]
    rs = [r for r in rs if r is not None]
    try:
        r_mean = fisher_mean(rs) if rs else None
    except ValueError:
        r_mean = None
    return {"rms": avg("rms"), "r": r_mean, "f1": avg("f1"), "auc": avg("auc")}


def _table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def render_markdown(metrics: list[dict], classes: list[dict] | None = None,
                    fingerprint: str = "") -> str:
    """Result tables: one block per task with subscore columns plus a mean
    column (Fisher-z for r)."""
    by = defaultdict(dict)
    for row in metrics:
        by[(row["experiment"], row["task"])][row["subscore"]] = row
    out = ["# Evaluation results", "", f"config fingerprint: `{fingerprint}`", ""]
    for task in Task:
        reg = by.get(("regression", task.value), {})
        binr = by.get(("binary", task.value), {})
        if not reg and not binr:
            continue
        labels = [s for s in subscore_labels(task) if s in reg or s in binr]
        out += [f"## {task.value}", ""]
        header = ["", *labels, "Mean"]
        rows = []
        if reg:
            cells = [reg.get(s, {}) for s in labels]
            mean = _mean_row([c for c in cells if c])
            rows.append(["**Regression**", *[""] * (len(labels) + 1)])
            rows.append(["n", *[c.get("n") or MISSING for c in cells], ""])
            rows.append(["RMS", *[_fmt(_num(c.get("rms"))) for c in cells], _fmt(mean["rms"])])
            rows.append(["r", *[_fmt(_num(c.get("r"))) for c in cells], _fmt(mean["r"])])
        if binr:
            cells = [binr.get(s, {}) for s in labels]
            mean = _mean_row([c for c in cells if c])
            rows.append(["**Binary classification**", *[""] * (len(labels) + 1)])
            rows.append(["n", *[c.get("n") or MISSING for c in cells], ""])
            rows.append(["n0", *[c.get("n0") or MISSING for c in cells], ""])
            rows.append(["F1", *[_fmt(_num(c.get("f1"))) for c in cells], _fmt(mean["f1"])])
            rows.append(["AUC", *[_fmt(_num(c.get("auc"))) for c in cells], _fmt(mean["auc"])])
        out += [_table(header, rows), ""]
    if classes:
        out += ["## Multiclass (communication)", ""]
        rows = []
        for c in classes:
            if c["class"] == "overall":
                rows.append(["Overall accuracy", c["n"], _pct(c["sensitivity"]), ""])
            else:
                rows.append([c["class"], c["n"], _pct(c["sensitivity"]), _pct(c["specificity"])])
        out += [_table(["", "n", "Sensitivity", "Specificity"], rows), ""]
    totals = by.get(("total", "UDysRS"), {}).get("total"), by.get(("total", "UPDRS3"), {}).get("total")
    if any(totals):
        out += ["## Total scores", ""]
        cols = [("UDysRS Part III", totals[0]), ("UPDRS Part III", totals[1])]
        cols = [(n, c) for n, c in cols if c]
        rows = [["n", *[c["n"] for _, c in cols]],
                ["RMS", *[_fmt(_num(c["rms"])) for _, c in cols]],
                ["r", *[_fmt(_num(c["r"])) for _, c in cols]]]
        out += [_table(["", *[n for n, _ in cols]], rows), ""]
    return "\n".join(out)


def _pct(v):
    v = _num(v)
    return MISSING if v is None else f"{100 * v:.1f}%"


def render(out_dir, figures: bool = True) -> dict[str, Path]:
    """(Re)build tables.md and figures from the CSVs in ``out_dir``."""
    out = Path(out_dir)
    metrics = _read_csv(out / "metrics.csv")
    classes = _read_csv(out / "multiclass.csv") if (out / "multiclass.csv").exists() else None
    fingerprint = metrics[0]["config_fingerprint"] if metrics else ""
    paths = {"tables": out / "tables.md"}
    paths["tables"].write_text(render_markdown(metrics, classes, fingerprint) + "\n",
                               encoding="utf-8")
    if figures and (out / "predictions.csv").exists():
        paths.update(render_figures(out, metrics))
    return paths


def render_figures(out: Path, metrics: list[dict]) -> dict[str, Path]:
    from . import plotting

    preds = _read_csv(out / "predictions.csv")
    fig_dir = out / "figures"
    by = defaultdict(list)
    for p in preds:
        by[(p["experiment"], p["task"], p["subscore"])].append(p)
    r_of = {(m["experiment"], m["task"], m["subscore"]): m for m in metrics}
    paths = {}
    for task in Task:
        groups = {}
        curves = {}
        for sub in subscore_labels(task):
            rows = by.get(("regression", task.value, sub))
            if rows:
                groups[sub] = ([float(p["truth"]) for p in rows],
                               [float(p["prediction"]) for p in rows],
                               _num(r_of[("regression", task.value, sub)]["r"]))
            rows = by.get(("binary", task.value, sub))
            if rows:
                curves[sub] = ([float(p["score"]) for p in rows], [int(p["truth"]) for p in rows],
                               _num(r_of[("binary", task.value, sub)]["auc"]))
        if groups:
            paths[f"scatter_{task.value}"] = plotting.scatter_panel(
                groups, fig_dir / f"regression_{task.value}.png", f"{task.value}: severity")
        if curves:
            paths[f"roc_{task.value}"] = plotting.roc_panel(
                curves, fig_dir / f"roc_{task.value}.png", f"{task.value}: detection")
    rows = by.get(("multiclass", "Communication", "all"))
    if rows:
        paths["confusion"] = plotting.confusion_panel(
            [p["truth"] for p in rows], [p["prediction"] for p in rows], MULTICLASS,
            fig_dir / "multiclass_Communication.png", "Communication: multiclass")
    groups = {}
    for scale, hi in (("UDysRS", 28.0), ("UPDRS3", 112.0)):
        rows = by.get(("total", scale, "total"))
        if rows:
            groups[scale] = ([float(p["truth"]) for p in rows],
                             [float(p["prediction"]) for p in rows],
                             _num(r_of[("total", scale, "total")]["r"]))
    if groups:
        paths["totals"] = plotting.scatter_panel(groups, fig_dir / "totals.png",
                                                 "Total scores", max_value=0.0)
    return paths
