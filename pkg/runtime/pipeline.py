"""
Stage runner: read inputs -> compute -> write outputs -> log.

Every stage reads and writes interchange files only, echoes the materialized
configuration as run_config.json in its output directory, and records timings
and progress in a RunLogger session under <output>/logs/.
"""

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score

from analysis.cluster import assign, cluster_matrix, cluster_profiles, cluster_report, fit_gmm
from analysis.featspace import (
    MAX_HORIZON,
    ClinicalEncoder,
    assemble,
    standardize_apply,
    standardize_fit,
)
from curation.ingest import (
    apply_cohort_criteria,
    attach_clinical,
    parse_clinical_table,
    parse_trajectory_table,
    serialize_clinical_table,
    serialize_trajectory_table,
    write_flag_report,
)
from curation.resample import resample_all, write_resampled_table
from curation.track import track_manifest
from evaluation.evalstat import EvalOutcome, Task, make_fold_plan, make_targets
from evaluation.protocol import Method, compare_methods, prepare_cohort, run_protocol
from evaluation.report import (
    build_report,
    cluster_profiles_csv,
    flow_links_csv,
    pvalue_csv,
    report_json,
    report_table_csv,
    summarize_cohort,
)
from models import boost, tgat
from runtime.config import RunConfig, write_config
from runtime.logger import RunLogger
from runtime.workers import default_threads
from synthgen.generator import generate, read_labels_table, write_cohort
from trajcore.errors import EvaluationError, ParseError, TrajectoryEngineError
from trajcore.flows import compute_flows, flow_links
from trajcore.response import classify_trajectory, final_category
from trajcore.types import LesionTrajectory

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
EVALUATION_SCHEMA_VERSION = "1.0"


def _json_bytes(data) -> bytes:
    return (json.dumps(data, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _read_json(path: PathLike, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise EvaluationError(f"malformed {what}", f"{path}: {e}")


@contextmanager
def _malformed(path: PathLike, what: str):
    """Turn missing or mistyped fields of a loaded JSON file into an EvaluationError."""
    try:
        yield
    except TrajectoryEngineError:
        raise
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise EvaluationError(f"malformed {what}", f"{path}: {e!r}")


class Pipeline:
    """Holds the run configuration and implements every CLI stage."""

    def __init__(self, config: RunConfig, out_dir: Optional[PathLike] = None):
        """
        Initialize the pipeline.

        Args:
            config: Materialized run configuration
            out_dir: Output directory (default: config.output_dir)
        """
        self.config = config
        self.out_dir = Path(out_dir if out_dir is not None else config.output_dir)
        self.threads = config.threads if config.threads is not None else default_threads()
        self.run_logger = RunLogger(str(self.out_dir / "logs"))
        self._started = 0.0

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def _begin(self, stage: str):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_config(self.config, self.out_dir)
        self.run_logger.start_session(stage)
        self._started = time.perf_counter()
        logger.info("%s: writing to %s", stage, self.out_dir)

    def _finish(self, stage: str, outputs: Dict[str, Path]) -> Dict[str, Path]:
        self.run_logger.log_event("timing", {
            "stage": stage,
            "seconds": time.perf_counter() - self._started,
            "threads": self.threads,
            "outputs": {k: str(v) for k, v in outputs.items()},
        })
        self.run_logger.save_summary()
        return outputs

    def _write(self, name: str, data: bytes) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return path

    def load_trajectories(self, trajectories_path: PathLike,
                          clinical_path: Optional[PathLike] = None) -> List[LesionTrajectory]:
        """Parse a trajectory CSV and optionally attach a clinical CSV."""
        trajectories = parse_trajectory_table(Path(trajectories_path).read_bytes())
        if clinical_path is not None:
            clinical = parse_clinical_table(Path(clinical_path).read_bytes())
            trajectories = attach_clinical(trajectories, clinical)
        return trajectories

    def _resampled(self, trajectories: Sequence[LesionTrajectory]):
        return resample_all(trajectories, self.config.resample.method)

    def _cohort(self, trajectories_path: PathLike, clinical_path: Optional[PathLike]):
        trajectories = self.load_trajectories(trajectories_path, clinical_path)
        return prepare_cohort(self._resampled(trajectories), self.config.features.impute,
                              self.config.response)

    # ------------------------------------------------------------------
    # curation stages
    # ------------------------------------------------------------------

    def ingest(self, trajectories_path: PathLike,
               clinical_path: Optional[PathLike] = None) -> Dict[str, Path]:
        """Validate the input tables and rewrite them in canonical form."""
        self._begin("ingest")
        trajectories = self.load_trajectories(trajectories_path, clinical_path)
        outputs = {"trajectories": self._write("trajectories.csv",
                                               serialize_trajectory_table(trajectories))}
        if clinical_path is not None:
            outputs["clinical"] = self._write("clinical.csv", serialize_clinical_table(trajectories))
        self.run_logger.log_event("ingest", {"lesions": len(trajectories)})
        return self._finish("ingest", outputs)

    def qc(self, trajectories_path: PathLike,
           clinical_path: Optional[PathLike] = None) -> Dict[str, Path]:
        """Apply the cohort inclusion criteria; write kept lesions and the flag report."""
        self._begin("qc")
        trajectories = self.load_trajectories(trajectories_path, clinical_path)
        kept, flags = apply_cohort_criteria(trajectories, self.config.cohort)
        outputs = {
            "trajectories": self._write("trajectories.csv", serialize_trajectory_table(kept)),
            "flags": self._write("flags.csv", write_flag_report(flags)),
        }
        if clinical_path is not None:
            outputs["clinical"] = self._write("clinical.csv", serialize_clinical_table(kept))
        self.run_logger.log_event("qc", {"kept": len(kept), "flagged": len(flags)})
        return self._finish("qc", outputs)

    def track(self, manifest_path: PathLike) -> Dict[str, Path]:
        """Build trajectories from a label-volume series manifest."""
        self._begin("track")
        cfg = self.config.tracking
        result = track_manifest(manifest_path, cfg.max_centroid_mm, cfg.with_shape, self.threads)
        new_rows = [{"patient_id": n.patient_id, "day": n.day, "component_id": n.component_id,
                     "volume_mm3": repr(float(n.volume_mm3)),
                     "centroid_mm": " ".join(repr(float(c)) for c in n.centroid_mm)}
                    for n in result.new_lesions]
        new_frame = pd.DataFrame(new_rows, columns=["patient_id", "day", "component_id",
                                                    "volume_mm3", "centroid_mm"])
        outputs = {
            "trajectories": self._write("trajectories.csv",
                                        serialize_trajectory_table(result.trajectories)),
            "new_lesions": self._write("new_lesions.csv",
                                       new_frame.to_csv(index=False, lineterminator="\n").encode()),
            "events": self._write("tracking_events.json", _json_bytes(result.events)),
        }
        self.run_logger.log_event("track", {"lesions": len(result.trajectories),
                                            "new_lesions": len(result.new_lesions)})
        return self._finish("track", outputs)

    def resample(self, trajectories_path: PathLike) -> Dict[str, Path]:
        self._begin("resample")
        resampled = self._resampled(self.load_trajectories(trajectories_path))
        outputs = {
            "volumes": self._write("resampled_volumes.csv", write_resampled_table(resampled)),
            "normalized": self._write("resampled_normalized.csv",
                                      write_resampled_table(resampled, normalized=True)),
        }
        return self._finish("resample", outputs)

    # ------------------------------------------------------------------
    # analysis stages
    # ------------------------------------------------------------------

    def classify(self, trajectories_path: PathLike) -> Dict[str, Path]:
        """Per-lesion response categories at t1..t6."""
        self._begin("classify")
        resampled = self._resampled(self.load_trajectories(trajectories_path))
        rows = []
        for res in resampled:
            row = {"patient_id": res.patient_id, "lesion_id": res.lesion_id}
            categories = classify_trajectory(res, self.config.response)
            row.update({f"t{k + 1}": c.value for k, (_, c) in enumerate(categories)})
            rows.append(row)
        frame = pd.DataFrame(rows, columns=["patient_id", "lesion_id",
                                            *(f"t{k}" for k in range(1, 7))])
        outputs = {"categories": self._write("categories.csv",
                                             frame.to_csv(index=False, lineterminator="\n").encode())}
        return self._finish("classify", outputs)

    def flows(self, trajectories_path: PathLike) -> Dict[str, Path]:
        """Transition matrices between consecutive grid points, plus Sankey links."""
        self._begin("flows")
        resampled = self._resampled(self.load_trajectories(trajectories_path))
        flows = compute_flows([[c for _, c in classify_trajectory(r, self.config.response)]
                               for r in resampled])
        links = pd.DataFrame(flow_links(flows), columns=["interval", "source", "target", "count"])
        outputs = {
            "flows": self._write("flows.json", _json_bytes([f.as_dict() for f in flows])),
            "links": self._write("flow_links.csv",
                                 links.to_csv(index=False, lineterminator="\n").encode()),
        }
        return self._finish("flows", outputs)

    def cluster(self, trajectories_path: PathLike,
                labels_path: Optional[PathLike] = None) -> Dict[str, Path]:
        """
        Fit the trajectory mixture and profile its clusters.

        When a generating-labels CSV is given, the adjusted Rand index against
        it is added to the report.
        """
        self._begin("cluster")
        resampled = self._resampled(self.load_trajectories(trajectories_path))
        data = cluster_matrix(resampled)
        model = fit_gmm(data, seed=self.config.seed, threads=self.threads, config=self.config.cluster)
        keys = [r.key for r in resampled]
        assignments = assign(model, data, keys)
        categories = [final_category(r, self.config.response) for r in resampled]
        report = cluster_report(model, assignments, cluster_profiles(model, data, assignments,
                                                                     categories))
        if labels_path is not None:
            labels = read_labels_table(Path(labels_path).read_bytes())
            missing = [k for k in keys if k not in labels]
            if missing:
                raise ParseError("labels table lacks lesions", ", ".join(missing[:5]))
            report["adjusted_rand_index"] = float(adjusted_rand_score(
                [labels[k] for k in keys], [a.cluster for a in assignments]))
            logger.info("adjusted Rand index vs. labels: %.4f", report["adjusted_rand_index"])

        frame = pd.DataFrame([{"lesion": a.lesion_id, "cluster": a.cluster} for a in assignments],
                             columns=["lesion", "cluster"])
        outputs = {
            "report": self._write("cluster_report.json", _json_bytes(report)),
            "assignments": self._write("cluster_assignments.csv",
                                       frame.to_csv(index=False, lineterminator="\n").encode()),
        }
        self.run_logger.log_event("cluster", {"log_likelihood": model.log_likelihood,
                                              "n_iter": model.n_iter,
                                              "best_restart": model.best_restart})
        return self._finish("cluster", outputs)

    def features(self, trajectories_path: PathLike, clinical_path: Optional[PathLike] = None,
                 horizons: Optional[Sequence[int]] = None) -> Dict[str, Path]:
        """Unstandardized feature matrices, one CSV per horizon."""
        self._begin("features")
        cohort = self._cohort(trajectories_path, clinical_path)
        encoder = ClinicalEncoder().fit([t.clinical for t in cohort.trajectories])
        outputs = {}
        for h in (horizons if horizons is not None else self.config.evaluation.horizons):
            matrix = assemble(cohort.trajectories, h, self.config.features.include, encoder)
            outputs[f"t{h}"] = self._write(f"features/features_t0-t{h}.csv", matrix.to_csv())
        return self._finish("features", outputs)

    # ------------------------------------------------------------------
    # modelling stages
    # ------------------------------------------------------------------

    def train(self, trajectories_path: PathLike, clinical_path: Optional[PathLike] = None,
              task="resp", method="gbdt", horizon: int = MAX_HORIZON) -> Dict[str, Path]:
        """Fit one model on the whole cohort and write it with its standardization."""
        self._begin("train")
        task, method = Task(task), Method(method)
        cohort = self._cohort(trajectories_path, clinical_path)
        labels = make_targets(cohort.categories, task)
        matrix = assemble(cohort.trajectories,
                          MAX_HORIZON if method is Method.GAT_GENERAL else horizon,
                          self.config.features.include)
        params = standardize_fit(matrix)
        X = standardize_apply(params, matrix)

        bundle = {"task": task.value, "method": method.value, "feature_names": X.names,
                  "standardization": params.to_dict()}
        outputs = {}
        if method is Method.GBDT:
            model = boost.fit(X, labels, replace(self.config.boost, seed=self.config.seed))
            bundle.update(horizon=horizon, model=model.to_dict())
        else:
            mode = tgat.TrainMode.GENERAL if method is Method.GAT_GENERAL else tgat.TrainMode.TIME_SPECIFIC
            cfg = replace(self.config.gat, mode=mode, horizon=horizon, seed=self.config.seed)
            result = tgat.train(tgat.graphs_from_matrix(X, labels), cfg)
            bundle.update(horizon=None if mode is tgat.TrainMode.GENERAL else horizon,
                          best_epoch=result.best_epoch, model=result.params.to_dict())
            outputs["log"] = self._write(f"train_log_{method.value}_{task.value}.csv", result.log_csv())
            self.run_logger.log_event("train", {"epochs": len(result.log),
                                                "best_epoch": result.best_epoch})
        outputs["model"] = self._write(f"model_{method.value}_{task.value}.json", _json_bytes(bundle))
        return self._finish("train", outputs)

    def evaluate(self, trajectories_path: PathLike, clinical_path: Optional[PathLike] = None,
                 task="resp", method="gbdt") -> Dict[str, Path]:
        """Cross-validated pooled scores and AUCs for one method."""
        self._begin("evaluate")
        task, method = Task(task), Method(method)
        cfg = self.config
        cohort = self._cohort(trajectories_path, clinical_path)
        labels = make_targets(cohort.categories, task)
        plan = make_fold_plan(cohort.keys, labels, cohort.groups, cfg.evaluation.n_folds,
                              cfg.seed, cfg.evaluation.grouped)
        outcomes = run_protocol(cohort, task, method, cfg.evaluation, cfg.features, cfg.boost,
                                cfg.gat, seed=cfg.seed, threads=self.threads, plan=plan)
        for outcome in outcomes:
            self.run_logger.log_event("outcome", {**outcome.to_dict(), **outcome.runtime})

        bundle = {
            "schema_version": EVALUATION_SCHEMA_VERSION,
            "task": task.value,
            "method": method.value,
            "cohort": summarize_cohort(cohort),
            "fold_plan": plan.to_dict(),
            "outcomes": [o.to_dict(include_scores=True) for o in outcomes],
        }
        outputs = {"evaluation": self._write(f"evaluation/{task.value}_{method.value}.json",
                                             _json_bytes(bundle))}
        return self._finish("evaluate", outputs)

    def report(self, evaluations_dir: PathLike, task="resp",
               cluster_path: Optional[PathLike] = None,
               flows_path: Optional[PathLike] = None) -> Dict[str, Path]:
        """Aggregate evaluate outputs (plus optional cluster/flow JSON) into the report bundle."""
        self._begin("report")
        task = Task(task)
        paths = sorted(Path(evaluations_dir).glob(f"{task.value}_*.json"))
        if not paths:
            raise EvaluationError("no evaluation outputs found", f"{evaluations_dir}/{task.value}_*.json")

        outcomes: Dict[str, List[EvalOutcome]] = {}
        cohort = None
        for path in paths:
            bundle = _read_json(path, "evaluation output")
            with _malformed(path, "evaluation output"):
                method, bundle_cohort = bundle["method"], bundle["cohort"]
                outcomes[method] = [EvalOutcome.from_dict(o) for o in bundle["outcomes"]]
            if cohort is not None and bundle_cohort != cohort:
                raise EvaluationError("evaluation outputs describe different cohorts", str(path))
            cohort = bundle_cohort

        pvalues = compare_methods(outcomes, self.config.evaluation.n_perm, self.config.seed)
        extras = {}
        if cluster_path is not None:
            extras["clusters"] = _read_json(cluster_path, "cluster report")
        if flows_path is not None:
            extras["flows"] = _read_json(flows_path, "flows file")
        report = build_report(cohort, outcomes, pvalues, extras)

        flat = {}
        if cluster_path is not None:
            with _malformed(cluster_path, "cluster report"):
                flat["cluster_profiles"] = cluster_profiles_csv(report)
        if flows_path is not None:
            with _malformed(flows_path, "flows file"):
                flat["flow_links"] = flow_links_csv(report)

        outputs = {
            "report": self._write("report.json", report_json(report)),
            "table": self._write("auc_table.csv", report_table_csv(report)),
            "pvalues": self._write("pvalues.csv", pvalue_csv(report)),
        }
        for name, data in flat.items():
            outputs[name] = self._write(f"{name}.csv", data)
        return self._finish("report", outputs)

    # ------------------------------------------------------------------
    # synthetic data
    # ------------------------------------------------------------------

    def synth(self, n_lesions: Optional[int] = None) -> Dict[str, Path]:
        """Generate a synthetic cohort: trajectories, clinical and labels CSVs."""
        self._begin("synth")
        cohort = generate(n_lesions, cfg=self.config.synth, threads=self.threads)
        outputs = write_cohort(cohort, self.out_dir)
        counts = np.bincount(cohort.archetypes, minlength=5).tolist()
        self.run_logger.log_event("synth", {"lesions": len(cohort), "archetype_counts": counts})
        return self._finish("synth", outputs)
