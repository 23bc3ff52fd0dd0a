"""Operator-facing command line.

Subcommands wire the pipeline stages end to end: ``extract`` footprints
from probability rasters, ``aggregate`` crowd marks into consensus labels,
``evaluate`` detection/classification/COCO reports, ``simulate`` synthetic
datasets, ``sweep-threshold`` for mask binarisation, and ``export-coco``
for detector-training handoff. A JSON config file supplies inputs and
parameters; command-line flags win over the file. Every command validates
its configuration fully before writing anything, and all outputs
(delimited files, JSON, figures) land in the ``--out`` directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import exports, figures
from .aggregate import (
    AggregationConfig,
    IbccPriors,
    MVWeights,
    dawid_skene_em,
    ibcc_vb,
    majority_vote,
)
from .evaluate import classification_f1, coco_ap, match_detections, voc_metrics
from .ingest import (
    IngestError,
    load_classifications,
    load_detections,
    load_expert_labels,
    load_footprints_raster,
    load_footprints_vector,
    load_results_csv_labels,
    load_results_geojson,
    load_truth_csv,
)
from .matrix import assign_marks, associate_pre_post, build_matrix, make_objects, write_matrix_csv
from .model import N_CLASSES, Phase
from .simulate import SimConfig, export_world, generate

logger = logging.getLogger(__name__)


class CliError(Exception):
    """Configuration or input problem; reported and mapped to exit code 2."""


@dataclass
class RunConfig:
    classifications: str | None = None
    footprints: str | None = None
    footprints_pre: str | None = None
    detections: str | None = None
    results: str | None = None
    rasters: list[dict] = field(default_factory=list)
    expert_labels: str | None = None
    truth: str | None = None
    out: str = "out"
    theta: float = 0.5
    theta_grid: list[float] = field(default_factory=lambda: [round(0.1 * i, 2) for i in range(1, 10)])
    min_area: float = 0.0
    match_iou: float = 0.1
    assign_radius: float = 0.0
    mv_weights: dict = field(default_factory=dict)
    nu0: list[float] = field(default_factory=lambda: [1.0] * N_CLASSES)
    alpha0: list[list[float]] | None = None
    alpha0_diagonal_boost: float = 1.5
    max_iters: int = 200
    tol: float = 1e-4
    em_smoothing: float = 0.1
    seed: int = 0
    verbose: bool = False
    sim: dict = field(default_factory=dict)

    @classmethod
    def load(cls, config_path: str | None, overrides: dict) -> "RunConfig":
        data = {}
        if config_path:
            try:
                with open(config_path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise CliError(f"cannot read config {config_path}: {exc}") from exc
            if not isinstance(data, dict):
                raise CliError(f"config {config_path} must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def numeric_checks(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise CliError(f"theta must lie in [0, 1], got {self.theta}")
        if not all(0.0 <= t <= 1.0 for t in self.theta_grid):
            raise CliError("theta_grid values must lie in [0, 1]")
        if self.min_area < 0:
            raise CliError("min_area must be >= 0")
        if not 0.0 < self.match_iou <= 1.0:
            raise CliError(f"match_iou must lie in (0, 1], got {self.match_iou}")
        if self.assign_radius < 0:
            raise CliError("assign_radius must be >= 0")
        if self.max_iters < 1 or self.tol < 0 or self.em_smoothing < 0:
            raise CliError("max_iters must be >= 1; tol and em_smoothing >= 0")

    def out_dir(self) -> Path:
        return Path(self.out)

    def require_inputs(self, *names: str) -> list[Path]:
        paths = []
        out = self.out_dir().resolve()
        for name in names:
            value = getattr(self, name)
            if not value:
                raise CliError(f"config field {name!r} is required for this command")
            p = Path(value)
            if not p.exists():
                raise CliError(f"{name} path does not exist: {p}")
            resolved = p.resolve()
            if resolved == out or out in resolved.parents:
                raise CliError(f"{name} path {p} lies inside the output directory {out}")
            paths.append(p)
        return paths

    def aggregation_config(self) -> AggregationConfig:
        return AggregationConfig(max_iters=self.max_iters, tol=self.tol, smoothing=self.em_smoothing)

    def ibcc_priors(self) -> IbccPriors:
        if self.alpha0 is not None:
            alpha0 = np.asarray(self.alpha0, dtype=float)
        else:
            alpha0 = np.ones((N_CLASSES, N_CLASSES)) + self.alpha0_diagonal_boost * np.eye(N_CLASSES)
        try:
            return IbccPriors(nu0=np.asarray(self.nu0, dtype=float), alpha0=alpha0)
        except ValueError as exc:
            raise CliError(str(exc)) from exc

    def weights(self) -> MVWeights:
        try:
            return MVWeights(**self.mv_weights)
        except (TypeError, ValueError) as exc:
            raise CliError(f"bad mv_weights: {exc}") from exc


def _validate_rasters(config: RunConfig) -> list[dict]:
    if not config.rasters:
        raise CliError("config field 'rasters' is required for this command")
    out = config.out_dir().resolve()
    entries = []
    for i, entry in enumerate(config.rasters):
        for key in ("png", "geotransform", "subject_id", "phase"):
            if key not in entry:
                raise CliError(f"rasters[{i}] missing key {key!r}")
        try:
            phase = Phase(str(entry["phase"]).lower())
        except ValueError:
            raise CliError(f"rasters[{i}] phase must be pre|post, got {entry['phase']!r}") from None
        for key in ("png", "geotransform"):
            p = Path(entry[key])
            if not p.exists():
                raise CliError(f"rasters[{i}].{key} path does not exist: {p}")
            if p.resolve() == out or out in p.resolve().parents:
                raise CliError(f"rasters[{i}].{key} lies inside the output directory")
        entries.append({**entry, "phase": phase})
    return entries


def _prepare_out(config: RunConfig) -> Path:
    out = config.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _extract_all(config: RunConfig, theta: float) -> list:
    footprints = []
    for entry in _validate_rasters(config):
        scene = load_footprints_raster(entry["png"], entry["geotransform"], theta,
                                       config.min_area, entry["subject_id"], entry["phase"])
        logger.info("extracted %d footprints from %s (subject %s)",
                    len(scene), entry["png"], entry["subject_id"])
        footprints.extend(scene)
    return footprints


def cmd_extract(config: RunConfig) -> int:
    config.numeric_checks()
    _validate_rasters(config)
    out = _prepare_out(config)
    footprints = _extract_all(config, config.theta)
    exports.write_json(out / "footprints.geojson", exports.footprints_geojson(footprints))
    print(f"extract: {len(footprints)} footprints -> {out / 'footprints.geojson'}")
    return 0


def cmd_aggregate(config: RunConfig, method: str) -> int:
    config.numeric_checks()
    config.require_inputs("classifications", "footprints")
    if config.footprints_pre:
        config.require_inputs("footprints_pre")
    weights = config.weights()
    priors = config.ibcc_priors()
    agg_config = config.aggregation_config()
    out = _prepare_out(config)

    classifications = load_classifications(config.classifications)
    post = [fp for fp in load_footprints_vector(config.footprints) if fp.phase is Phase.POST]
    matches = None
    if config.footprints_pre:
        pre = load_footprints_vector(config.footprints_pre)
        matches = associate_pre_post(pre, post, config.match_iou)
        logger.info("pre/post association: %d matches", len(matches))
    objects = make_objects(post, matches)
    if not objects:
        raise CliError("no post-event footprints to aggregate over")

    marks = [m for c in classifications for m in c.marks]
    assignment = assign_marks(marks, objects, config.assign_radius)
    matrix = build_matrix(classifications, objects, assignment)

    posteriors = None
    confusions = None
    if method == "mv":
        result = majority_vote(matrix, weights)
    elif method == "em":
        output = dawid_skene_em(matrix, agg_config)
        result = output.result
        confusions = output.confusions
    elif method == "ibcc":
        output = ibcc_vb(matrix, priors, agg_config)
        result = output.result
        posteriors = output.posteriors
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown method {method!r}")

    write_matrix_csv(matrix, out / "label_matrix.csv")
    exports.write_json(out / "results.geojson", exports.results_geojson(result, objects))
    exports.atomic_write_text(out / "results.csv", exports.results_csv_text(result, objects))
    if posteriors is not None:
        exports.write_json(out / "volunteer_posteriors.json", exports.posteriors_json(posteriors))
    if confusions is not None:
        exports.write_json(out / "confusion_matrices.json", [
            {"volunteer_id": v, "confusion": [[float(x) for x in row] for row in confusions[k]]}
            for k, v in enumerate(matrix.volunteers)])
    exports.atomic_write_text(out / "convergence.log", "\n".join([
        f"method: {method}",
        f"objects: {len(matrix.objects)}",
        f"volunteers: {len(matrix.volunteers)}",
        f"assigned_marks: {sum(len(v) for v in assignment.by_object.values())}",
        f"unassigned_marks: {len(assignment.unassigned)}",
        f"iterations: {result.iterations}",
        f"converged: {str(result.converged).lower()}",
        f"final_delta: {result.final_delta!r}",
    ]) + "\n")
    figures.save_severity_map(result, objects, out / "severity_map.png")
    print(f"aggregate[{method}]: {len(matrix.objects)} objects x {len(matrix.volunteers)} volunteers, "
          f"{result.iterations} iterations, {len(assignment.unassigned)} unassigned marks -> {out}")
    return 0


def cmd_evaluate(config: RunConfig, mode: str, class_aware: bool) -> int:
    config.numeric_checks()
    if mode == "detection":
        det_field = "detections" if config.detections else "footprints"
        config.require_inputs(det_field, "expert_labels")
        out = _prepare_out(config)
        dets = load_detections(getattr(config, det_field))
        gts = load_expert_labels(config.expert_labels)
        match = match_detections(dets, gts, iou_thresh=0.5, class_aware=False)
        report = voc_metrics(match)
        exports.write_json(out / "detection_report.json", report.as_dict())
        exports.atomic_write_text(out / "detection_report.txt",
                                  exports.detection_table({"detections": report}))
        figures.save_pr_curve(report.curve, out / "pr_curve.png")
        print(exports.detection_table({"detections": report}), end="")
    elif mode == "classification":
        config.require_inputs("results", "truth")
        out = _prepare_out(config)
        predicted = load_results_csv_labels(config.results)
        truth = load_truth_csv(config.truth)
        try:
            report = classification_f1(predicted, truth)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        exports.write_json(out / "classification_report.json", report.as_dict())
        exports.atomic_write_text(out / "classification_report.txt",
                                  exports.classification_table({"consensus": report}))
        figures.save_f1_bars(report, out / "f1_bars.png")
        print(exports.classification_table({"consensus": report}), end="")
    else:  # coco
        det_field = "detections" if config.detections else "results"
        config.require_inputs(det_field, "expert_labels")
        out = _prepare_out(config)
        if det_field == "results":
            objects, labels = load_results_geojson(config.results)
            from .evaluate import Detection
            dets = [Detection(bbox=o.bbox, subject_id=o.subject_id, score=1.0, label=lab)
                    for o, lab in zip(objects, labels)]
        else:
            dets = load_detections(config.detections)
        gts = load_expert_labels(config.expert_labels)
        report = coco_ap(dets, gts, class_aware=class_aware)
        exports.write_json(out / "coco_report.json", report.as_dict())
        exports.atomic_write_text(out / "coco_report.txt", exports.coco_table(report))
        figures.save_coco_bars(report, out / "coco_ap.png")
        print(exports.coco_table(report), end="")
    return 0


def cmd_simulate(config: RunConfig) -> int:
    config.numeric_checks()
    if "seed" in config.sim:
        raise CliError("set the top-level 'seed' field; sim.seed is not allowed")
    try:
        sim_config = SimConfig(seed=config.seed, **config.sim)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad sim config: {exc}") from exc
    out = _prepare_out(config)
    world = generate(sim_config)
    paths = export_world(world, out)
    print(f"simulate: {len(world.objects)} objects, {len(world.volunteers)} volunteers, "
          f"{len(world.classifications)} classifications -> {out}")
    for name, path in paths.items():
        logger.info("wrote %s: %s", name, path)
    return 0


def cmd_sweep_threshold(config: RunConfig) -> int:
    config.numeric_checks()
    _validate_rasters(config)
    config.require_inputs("expert_labels")
    if not config.theta_grid:
        raise CliError("theta_grid must be non-empty")
    out = _prepare_out(config)
    gts = load_expert_labels(config.expert_labels)
    rows = []
    for theta in config.theta_grid:
        footprints = _extract_all(config, theta)
        dets = [d for d in _footprints_as_detections(footprints)]
        report = voc_metrics(match_detections(dets, gts, iou_thresh=0.5, class_aware=False))
        rows.append((theta, report.f1))
    best_theta = max(rows, key=lambda r: (r[1], -r[0]))[0]
    exports.write_json(out / "threshold_sweep.json",
                       {"rows": [{"theta": t, "f1": f} for t, f in rows], "best_theta": best_theta})
    exports.atomic_write_text(out / "threshold_sweep.txt", exports.sweep_table(rows, best_theta))
    figures.save_threshold_sweep(rows, best_theta, out / "threshold_sweep.png")
    print(exports.sweep_table(rows, best_theta), end="")
    print(f"best theta: {best_theta}")
    return 0


def _footprints_as_detections(footprints):
    from .evaluate import Detection

    for fp in footprints:
        yield Detection(bbox=fp.bbox, subject_id=fp.subject_id,
                        score=fp.score if fp.score is not None else 1.0)


def cmd_export_coco(config: RunConfig) -> int:
    config.numeric_checks()
    config.require_inputs("results")
    out = _prepare_out(config)
    objects, labels = load_results_geojson(config.results)
    exports.write_json(out / "coco_annotations.json", exports.coco_annotations(objects, labels))
    print(f"export-coco: {len(objects)} annotations -> {out / 'coco_annotations.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowddamage",
        description="Aggregate crowdsourced damage marks into per-building consensus labels.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        p.add_argument("--verbose", action="store_true", default=None, help="debug logging")

    p = sub.add_parser("extract", help="extract footprints from probability rasters")
    common(p)
    p.add_argument("--theta", type=float, help="mask threshold in [0, 1]")
    p.add_argument("--min-area", type=float, dest="min_area", help="minimum bbox area")

    p = sub.add_parser("aggregate", help="aggregate marks into consensus labels")
    common(p)
    p.add_argument("--method", choices=["mv", "em", "ibcc"], default="ibcc")

    p = sub.add_parser("evaluate", help="compute metric reports")
    common(p)
    p.add_argument("--mode", choices=["detection", "classification", "coco"], required=True)
    p.add_argument("--class-aware", action="store_true", help="per-class COCO averaging")

    p = sub.add_parser("simulate", help="generate a synthetic crowd dataset")
    common(p)

    p = sub.add_parser("sweep-threshold", help="detection F1 across mask thresholds")
    common(p)
    p.add_argument("--theta-grid", help="comma-separated thresholds, e.g. 0.3,0.5,0.7")

    p = sub.add_parser("export-coco", help="write COCO annotations from aggregation results")
    common(p)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {"out": args.out, "seed": args.seed, "verbose": args.verbose}
    if getattr(args, "theta", None) is not None:
        out["theta"] = args.theta
    if getattr(args, "min_area", None) is not None:
        out["min_area"] = args.min_area
    if getattr(args, "theta_grid", None):
        try:
            out["theta_grid"] = [float(t) for t in args.theta_grid.split(",") if t.strip()]
        except ValueError:
            raise CliError(f"bad --theta-grid value {args.theta_grid!r}") from None
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config, _overrides(args))
        logging.basicConfig(level=logging.DEBUG if config.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "extract":
            return cmd_extract(config)
        if args.command == "aggregate":
            return cmd_aggregate(config, args.method)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.mode, args.class_aware)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "sweep-threshold":
            return cmd_sweep_threshold(config)
        if args.command == "export-coco":
            return cmd_export_coco(config)
        raise CliError(f"unknown command {args.command!r}")  # pragma: no cover
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
