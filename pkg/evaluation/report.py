"""
Report bundle shaped like the published AUC table.

Rows are methods, columns horizons ("t0->t6", "t0:t1->t6", ...), cells the
pooled AUC with its 95% interval. Published clinical values are attached as a
reference footer; they come from an inaccessible clinical cohort and are not
expected to be reproduced.
"""

import json
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from evaluation.evalstat import EvalOutcome, prevalence
from evaluation.protocol import Cohort, PValueTable
from trajcore.flows import category_histogram, flow_links
from trajcore.types import TransitionFlow

REPORT_SCHEMA_VERSION = "1.0"

# (auc, lo, hi) for t0, t0:t1, ..., t0:t5
PUBLISHED_AUC = {
    "cr": {
        "gat-general": [(0.70, 0.66, 0.73), (0.88, 0.86, 0.90), (0.91, 0.89, 0.93),
                        (0.94, 0.92, 0.95), (0.96, 0.95, 0.97), (0.98, 0.98, 0.99)],
        "gat-specific": [(0.76, 0.73, 0.79), (0.88, 0.86, 0.91), (0.92, 0.89, 0.93),
                         (0.94, 0.92, 0.95), (0.97, 0.95, 0.98), (0.98, 0.97, 0.99)],
        "gbdt": [(0.77, 0.74, 0.81), (0.90, 0.88, 0.92), (0.93, 0.91, 0.95),
                 (0.95, 0.93, 0.96), (0.97, 0.96, 0.98), (0.99, 0.98, 0.99)],
    },
    "resp": {
        "gat-general": [(0.58, 0.54, 0.62), (0.78, 0.74, 0.81), (0.81, 0.79, 0.84),
                        (0.84, 0.82, 0.87), (0.87, 0.85, 0.89), (0.90, 0.88, 0.92)],
        "gat-specific": [(0.61, 0.57, 0.66), (0.78, 0.76, 0.81), (0.82, 0.79, 0.84),
                         (0.85, 0.82, 0.87), (0.87, 0.85, 0.89), (0.90, 0.88, 0.92)],
        "gbdt": [(0.61, 0.57, 0.65), (0.82, 0.79, 0.85), (0.87, 0.85, 0.89),
                 (0.90, 0.88, 0.92), (0.93, 0.92, 0.95), (0.97, 0.96, 0.98)],
    },
}
PUBLISHED_PREVALENCE = {"cr": 0.5859, "resp": 0.7277}


def horizon_label(horizon: int) -> str:
    return "t0->t6" if horizon == 0 else f"t0:t{horizon}->t6"


def format_cell(value: float, lo: float, hi: float) -> str:
    return f"{value:.2f} [{lo:.2f}-{hi:.2f}]"


def _reference(task: str) -> Dict[str, Any]:
    rows = PUBLISHED_AUC[task]
    return {
        "reproducible": False,
        "note": "published clinical-cohort values; the cohort is not accessible",
        "positive_prevalence": PUBLISHED_PREVALENCE[task],
        "rows": {
            method: {horizon_label(h): format_cell(*cell) for h, cell in enumerate(cells)}
            for method, cells in sorted(rows.items())
        },
    }


def summarize_cohort(cohort: Cohort) -> Dict[str, Any]:
    """Lesion/patient counts and the t6 category histogram."""
    return {
        "n_lesions": len(cohort.trajectories),
        "n_patients": len(set(cohort.groups)),
        "t6_histogram": category_histogram(cohort.categories),
    }


def build_report(cohort: Dict[str, Any], outcomes: Dict[str, Sequence[EvalOutcome]],
                 pvalues: Optional[PValueTable] = None,
                 extras: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Assemble the JSON report bundle.

    Args:
        cohort: summarize_cohort output for the evaluated cohort
        outcomes: {method: per-horizon outcomes}
        pvalues: compare_methods output
        extras: Further sections (cluster report, flows) copied in verbatim

    Returns:
        JSON-ready dict; contains no wall-clock data
    """
    tasks = sorted({o.task.value for rows in outcomes.values() for o in rows})
    horizons = sorted({o.horizon for rows in outcomes.values() for o in rows})
    first = next((rows[0] for rows in outcomes.values() if rows), None)

    table = []
    for method in sorted(outcomes):
        by_h = {o.horizon: o for o in outcomes[method]}
        table.append({
            "method": method,
            "cells": [
                {"horizon": h, "label": horizon_label(h), "auc": by_h[h].auc,
                 "ci95": list(by_h[h].ci95), "text": format_cell(by_h[h].auc, *by_h[h].ci95)}
                for h in horizons if h in by_h
            ],
        })

    report: Dict[str, Any] = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tasks": tasks,
        "cohort": {
            **cohort,
            "prevalence": prevalence(first.labels) if first is not None else None,
        },
        "evaluation": {
            "columns": [horizon_label(h) for h in horizons],
            "rows": table,
        },
        "pvalues": {
            horizon_label(h): dict(sorted(row.items())) for h, row in sorted((pvalues or {}).items())
        },
        "reference": {task: _reference(task) for task in tasks if task in PUBLISHED_AUC},
    }
    for name, section in sorted((extras or {}).items()):
        report[name] = section
    return report


def report_json(report: Dict[str, Any]) -> bytes:
    return (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8")


def report_table_csv(report: Dict[str, Any]) -> bytes:
    """Flat method x horizon table of 'AUC [lo-hi]' cells."""
    columns = report["evaluation"]["columns"]
    rows: List[Dict[str, str]] = []
    for row in report["evaluation"]["rows"]:
        entry = {"method": row["method"]}
        entry.update({cell["label"]: cell["text"] for cell in row["cells"]})
        rows.append(entry)
    frame = pd.DataFrame(rows, columns=["method", *columns])
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def pvalue_csv(report: Dict[str, Any]) -> bytes:
    rows = [
        {"horizon": label, "pair": pair, "p_value": repr(p)}
        for label, pairs in report["pvalues"].items() for pair, p in pairs.items()
    ]
    frame = pd.DataFrame(rows, columns=["horizon", "pair", "p_value"])
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def cluster_profiles_csv(report: Dict[str, Any]) -> bytes:
    """One row per cluster: size, mean normalized volume t0..t6, t6 category counts."""
    clusters = report["clusters"]
    categories = list(clusters["categories"])
    profiles = clusters["profiles"]
    n_points = max((len(p["mean_trajectory"]) for p in profiles), default=0)
    rows = []
    for profile in profiles:
        row = {"cluster": int(profile["cluster"]), "size": int(profile["size"])}
        row.update({f"t{k}": repr(float(v)) for k, v in enumerate(profile["mean_trajectory"])})
        row.update({f"t6_{c}": int(profile["t6_histogram"][c]) for c in categories})
        rows.append(row)
    columns = ["cluster", "size", *(f"t{k}" for k in range(n_points)), *(f"t6_{c}" for c in categories)]
    frame = pd.DataFrame(rows, columns=columns)
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def flow_links_csv(report: Dict[str, Any]) -> bytes:
    """Sankey link rows rebuilt from the flow matrices in the report."""
    flows = [TransitionFlow.from_dict(f) for f in report["flows"]]
    frame = pd.DataFrame(flow_links(flows), columns=["interval", "source", "target", "count"])
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")
