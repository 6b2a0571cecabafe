"""protoscope ingest|build|train|explain|synth [--config PATH] [--seed N] [--out DIR]"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import RunConfig
from .dataset import FeatureTable, SplitIndices
from .errors import ProtoscopeError
from .learners import load_model
from .pipeline import (FORMAT_VERSION, build_dataset, evaluation_document, explain_models,
                       ingest_dir, render_table, train_models)
from .plotting import beeswarm_svg, bubble_svg, table_csv, top_features_svg
from .synth import cohort_files, gen_cohort

log = logging.getLogger("protoscope")

RECORD_COLUMNS = ("path", "study_id", "series_id", "instance_number", "protocol_name",
                  "body_part", "coil", "plane", "weighting", "tr_ms", "te_ms", "nex",
                  "percent_sampling", "percent_phase_fov", "fov_mm", "slice_thickness_mm",
                  "slice_location_mm", "rows", "cols", "age_years", "weight_kg", "sex")


class Outputs:
    """Collects files in memory and writes them together at the end."""

    def __init__(self, root):
        self.root = Path(root)
        self.files: dict[str, bytes] = {}

    def text(self, rel: str, content: str):
        self.files[rel] = content.encode("utf-8")

    def json(self, rel: str, obj):
        self.text(rel, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def raw(self, rel: str, data: bytes):
        self.files[rel] = data

    def flush(self):
        for rel, data in sorted(self.files.items()):
            path = self.root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _metadata(command: str) -> dict:
    return {"command": command, "created_utc": datetime.now(timezone.utc).isoformat()}


def _input_dir(cfg: RunConfig) -> Path:
    if not cfg.input:
        raise ProtoscopeError("no input directory (--input or 'input' in the config file)")
    path = Path(cfg.input)
    if not path.is_dir():
        raise ProtoscopeError(f"input {path} is not a directory")
    return path


# --------------------------------------------------------------- commands

def cmd_ingest(cfg: RunConfig, out: Outputs) -> int:
    images, errors = ingest_dir(_input_dir(cfg), cfg.salt)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for img in images:
        data = img.record.to_dict()
        writer.writerow([img.path] + ["" if data[c] is None else data[c]
                                      for c in RECORD_COLUMNS[1:]])
    warnings = [f"{e['path']}: {e['error']}" for e in errors]
    if not images:
        warnings.append("no readable DICOM files found")
        log.warning("no readable DICOM files found")
    out.text("metadata.csv", buf.getvalue())
    out.json("ingest_manifest.json", {
        "format_version": FORMAT_VERSION, "rows": len(images), "errors": errors,
        "warning_count": len(warnings), "warnings": warnings, "metadata": _metadata("ingest")})
    return len(warnings)


def cmd_build(cfg: RunConfig, out: Outputs) -> int:
    seed = cfg.require_seed()
    images, errors = ingest_dir(_input_dir(cfg), cfg.salt)
    built = build_dataset(images, cfg, seed)
    manifest = built.manifest(cfg)
    manifest["all_features"] = built.full_table.names
    manifest["ingest_errors"] = errors
    warnings = [f"{e['path']}: {e['error']}" for e in errors]
    if built.small_cohort:
        warnings.append(f"cohort has {len(built.table)} rows, fewer than {cfg.min_cohort_size}; "
                        "expect overfitting")
    manifest["warning_count"] = len(warnings)
    manifest["warnings"] = warnings
    manifest["metadata"] = _metadata("build")
    out.text("dataset.csv", built.table.to_csv())
    out.json("dataset_manifest.json", manifest)
    return len(warnings)


def _load_dataset(root: Path):
    manifest = json.loads((root / "dataset_manifest.json").read_text())
    groups = {c["name"]: c["group"] for c in manifest["columns"]}
    table = FeatureTable.from_csv((root / "dataset.csv").read_text(), groups)
    split = SplitIndices(np.array(manifest["split"]["train"], dtype=int),
                         np.array(manifest["split"]["test"], dtype=int), manifest["split"]["seed"])
    return table, split, manifest


def cmd_train(cfg: RunConfig, out: Outputs) -> int:
    seed = cfg.require_seed()
    table, split, _ = _load_dataset(out.root)
    reports = train_models(table, split, cfg, seed)
    evaluation = evaluation_document(reports, table, seed)
    out.json("evaluation.json", evaluation)
    out.text("evaluation_table.csv", table_csv(render_table(evaluation)))
    for kind, report in reports.items():
        out.json(f"models/{kind}.json", report.model.to_dict())
    return 0


def cmd_explain(cfg: RunConfig, out: Outputs) -> int:
    seed = cfg.require_seed()
    table, split, manifest = _load_dataset(out.root)
    evaluation = json.loads((out.root / "evaluation.json").read_text())
    kinds = [k for k in cfg.models if k in evaluation["models"]]
    models = {k: load_model(out.root / "models" / f"{k}.json") for k in kinds}
    f1 = {k: evaluation["models"][k]["holdout"]["f1"] for k in kinds}
    result = explain_models(table, split, models, f1, cfg, seed,
                            manifest.get("all_features", table.names))
    out.json("explanation.json", result.document(manifest.get("all_features", table.names)))
    for kind, attr in result.attributions.items():
        out.text(f"attributions/{kind}.csv", attr.to_csv())
        out.text(f"figures/beeswarm_{kind}.svg",
                 beeswarm_svg(attr, result.explained_rows, f"{kind} attributions", seed))
    out.text("figures/top5_bar.svg", top_features_svg(result.summary, "Top features"))
    out.text("figures/bubble.svg", bubble_svg(result.summary, "Trends across models"))
    return 0


def cmd_synth(cfg: RunConfig, out: Outputs) -> int:
    seed = cfg.require_seed()
    records, slabs, truth = gen_cohort(cfg.synth_n, seed, cfg.physics)
    for rel, data in cohort_files(records, slabs):
        out.raw(f"dicom/{rel}", data)
    physics = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.physics.__dict__.items()}
    out.json("ground_truth.json", {"format_version": FORMAT_VERSION, "seed": seed,
                                   "n": cfg.synth_n, "physics": physics, **truth.to_dict()})
    return 0


COMMANDS = {"ingest": cmd_ingest, "build": cmd_build, "train": cmd_train,
            "explain": cmd_explain, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="protoscope", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory (also the input of train/explain)")
    parser.add_argument("--input", help="DICOM directory for ingest/build")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config, seed=args.seed, out=args.out, input=args.input)
        out = Outputs(cfg.out)
        warnings = COMMANDS[args.command](cfg, out)
        out.flush()
    except (ProtoscopeError, OSError, ValueError, KeyError) as exc:
        print(f"protoscope {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if warnings:
        print(f"protoscope {args.command}: finished with {warnings} warning(s)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
