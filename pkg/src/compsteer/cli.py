"""Command-line front end.

Subcommands: distances, steer, eval, sweep, tree. Inputs are either a
corpus directory laid out as <root>/<class>/<file> or a previously saved
matrix CSV. Option precedence is built-in defaults, then a JSON config
file, then explicit flags. Every output embeds the effective
configuration, the seed, and a hash of its inputs, so any file can be
reproduced from what it records. Writes are atomic.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .compressors import CodecId
from .distances import (
    CorpusObject,
    DistanceMatrix,
    RowStats,
    atomic_write_text,
    build_distance_matrix,
    hex_encode,
    load_matrix,
    save_matrix,
)
from .errors import CompsteerError, CorpusReadError, EmptyClass, InvalidInput
from .evaluation import (
    SUMMARY_HEADER,
    MethodConfig,
    grid_points,
    make_folds,
    run_experiment,
    save_report,
    summary_line,
)
from .steering import SelectionPolicy, SteeringConfig, class_trees, model_to_json
from .steering import build_embedding_model

DEFAULTS = {
    "codec": "deflate",
    "measure": "ncd",
    "standardize": "none",
    "method": "ours",
    "folds": 5,
    "seed": 0,
    "policy": "above-avg",
    "refs": 1,
    "ref_strategy": "centroid",
    "aggregate": "mean",
    "weighting": "row",
    "classes": None,
    "workers": 1,
    "iterations": 10,
    "knn_k": 3,
    "feature_count": None,
    "encoding": "auto",
    "out": ".",
}

_AGGREGATE_NAMES = {
    "min": "min",
    "max": "max",
    "mean": "mean",
    "median": "median",
    "l2": "euclidean_norm",
}
_STRATEGY_NAMES = {"centroid": "centroid_closest", "farthest": "iterative_farthest"}
_WEIGHTING_NAMES = {"row": "row_scale", "distance": "distance_scale"}


# ---------------------------------------------------------------------------
# corpus ingestion


def _looks_textual(payload: bytes) -> bool:
    try:
        payload.decode("utf-8")
    except UnicodeDecodeError:
        return False
    return b"\x00" not in payload


def _fragment_group(filename: str) -> str | None:
    stem = filename.rsplit(".", 1)[0]
    if "__" in stem:
        group, _, index = stem.rpartition("__")
        if group and index.isdigit():
            return group
    return None


def ingest_corpus(
    root, encoding: str = "auto", codec: CodecId = CodecId.DEFLATE
) -> tuple[list[CorpusObject], dict[str, str], dict]:
    """Read a directory-per-class corpus.

    Returns the objects, a fragment-to-file map for names following the
    <group>__<index>.<ext> convention, and a manifest describing what was
    read. ``encoding`` can be raw, hex, or auto; the relative codec cannot
    take raw non-text payloads, auto hex-encodes them.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusReadError(root, "not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise EmptyClass(f"no class directories under {root}")
    objects: list[CorpusObject] = []
    fragment_to_file: dict[str, str] = {}
    entries = []
    for class_dir in class_dirs:
        files = sorted(p for p in class_dir.iterdir() if p.is_file())
        if not files:
            raise EmptyClass(f"class directory {class_dir} has no files")
        for path in files:
            try:
                payload = path.read_bytes()
            except OSError as exc:
                raise CorpusReadError(path, str(exc)) from exc
            if not payload:
                raise CorpusReadError(path, "empty file")
            textual = _looks_textual(payload)
            if encoding == "hex" or (
                encoding == "auto" and codec is CodecId.RLZ and not textual
            ):
                payload = hex_encode(payload)
                applied = "hex"
            else:
                if codec is CodecId.RLZ and not textual:
                    raise InvalidInput(
                        f"{path}: binary content must be hex-encoded for the rlz codec"
                    )
                applied = "raw"
            object_id = f"{class_dir.name}/{path.name}"
            objects.append(CorpusObject(object_id, class_dir.name, payload))
            group = _fragment_group(path.name)
            if group is not None:
                fragment_to_file[object_id] = f"{class_dir.name}/{group}"
            entries.append({"id": object_id, "class": class_dir.name, "encoding": applied})
    manifest = {"root": str(root), "entries": entries}
    return objects, fragment_to_file, manifest


def _hash_corpus(objects: list[CorpusObject]) -> str:
    digest = hashlib.sha256()
    for obj in objects:
        digest.update(obj.id.encode())
        digest.update(b"\x00")
        digest.update(obj.payload)
        digest.update(b"\x00")
    return digest.hexdigest()


def _hash_files(*paths) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(Path(path).read_bytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# option plumbing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("corpus", nargs="?", help="corpus root (directory per class)")
    parser.add_argument("--matrix", help="use a saved matrix CSV instead of a corpus")
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--codec", choices=[c.value for c in CodecId])
    parser.add_argument("--measure", choices=["ncd", "nrc"])
    parser.add_argument("--standardize", help="none, pipeline, or external:<stats.json>")
    parser.add_argument("--method", choices=list(_METHOD_CHOICES))
    parser.add_argument("--folds", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--policy", help="top:<N> or above-avg")
    parser.add_argument("--refs", type=int, help="references per cluster")
    parser.add_argument("--ref-strategy", dest="ref_strategy", choices=["centroid", "farthest"])
    parser.add_argument("--aggregate", choices=list(_AGGREGATE_NAMES))
    parser.add_argument("--weighting", choices=["row", "distance"])
    parser.add_argument("--classes", help="comma-separated class subset to keep")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--knn-k", dest="knn_k", type=int)
    parser.add_argument("--feature-count", dest="feature_count", type=int)
    parser.add_argument("--encoding", choices=["raw", "hex", "auto"])


_METHOD_CHOICES = ("ours", "random", "dummy", "kbest_f", "kbest_chi2", "kbest_mi", "knn")


def _effective_options(args: argparse.Namespace) -> dict:
    options = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CorpusReadError(args.config, str(exc)) from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        options.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def _steering_config(options: dict) -> SteeringConfig:
    policy_text = options["policy"]
    if policy_text == "above-avg":
        policy = SelectionPolicy("above_tree_average")
    elif policy_text.startswith("top:"):
        policy = SelectionPolicy("top_n", int(policy_text.split(":", 1)[1]))
    else:
        raise InvalidInput(f"unknown policy {policy_text!r}; use top:<N> or above-avg")
    return SteeringConfig(
        policy=policy,
        refs_per_cluster=int(options["refs"]),
        ref_strategy=_STRATEGY_NAMES[options["ref_strategy"]],
        f_aggregate=_AGGREGATE_NAMES[options["aggregate"]],
        weighting_mode=_WEIGHTING_NAMES[options["weighting"]],
    )


def _standardize_arg(options: dict) -> str | RowStats:
    text = options["standardize"]
    if text in ("none", "pipeline"):
        return text
    if text.startswith("external:"):
        stats_path = text.split(":", 1)[1]
        doc = json.loads(Path(stats_path).read_text(encoding="utf-8"))
        return RowStats(
            stats={k: (v[0], v[1]) for k, v in doc["stats"].items()},
            provenance="external",
        )
    raise InvalidInput(f"unknown standardization {text!r}")


def _load_inputs(args: argparse.Namespace, options: dict):
    """Matrix, labels, fragment map, and input hash from corpus or CSV."""
    if args.matrix:
        matrix = load_matrix(args.matrix)
        from .distances import sidecar_path

        input_hash = _hash_files(args.matrix, sidecar_path(args.matrix))
        fragment_to_file = {
            oid: f"{lab}/{group}"
            for oid, lab in zip(matrix.object_ids, matrix.labels)
            if (group := _fragment_group(oid.rsplit("/", 1)[-1])) is not None
        }
    elif args.corpus:
        codec = CodecId(options["codec"])
        objects, fragment_to_file, _manifest = ingest_corpus(
            args.corpus, options["encoding"], codec
        )
        input_hash = _hash_corpus(objects)
        matrix = build_distance_matrix(
            objects, options["measure"], codec, workers=int(options["workers"])
        )
    else:
        raise InvalidInput("provide a corpus directory or --matrix")
    if options["classes"]:
        wanted = set(str(options["classes"]).split(","))
        known = set(matrix.labels)
        missing = wanted - known
        if missing:
            raise InvalidInput(f"unknown classes requested: {sorted(missing)}")
        keep = [oid for oid, lab in zip(matrix.object_ids, matrix.labels) if lab in wanted]
        matrix = matrix.subset(keep)
        fragment_to_file = {k: v for k, v in fragment_to_file.items() if k in set(keep)}
    labels = matrix.label_map()
    return matrix, labels, fragment_to_file, input_hash


def _manifest(options: dict, input_hash: str) -> dict:
    return {"config": options, "seed": options["seed"], "input_hash": input_hash,
            "version": __version__}


# ---------------------------------------------------------------------------
# subcommands


def _cmd_distances(args: argparse.Namespace) -> int:
    options = _effective_options(args)
    matrix, _labels, _fragments, input_hash = _load_inputs(args, options)
    out = Path(options["out"])
    save_matrix(matrix, out / "distances.csv", extra=_manifest(options, input_hash))
    print(out / "distances.csv")
    return 0


def _cmd_steer(args: argparse.Namespace) -> int:
    options = _effective_options(args)
    matrix, labels, _fragments, input_hash = _load_inputs(args, options)
    if matrix.measure == "nrc":
        standardize = _standardize_arg(options)
        if isinstance(standardize, RowStats):
            from .distances import standardize_rows

            matrix = standardize_rows(matrix, standardize)
    model = build_embedding_model(matrix, labels, _steering_config(options))
    doc = json.loads(model_to_json(model))
    doc["manifest"] = _manifest(options, input_hash)
    out = Path(options["out"])
    atomic_write_text(out / "model.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(out / "model.json")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    options = _effective_options(args)
    matrix, labels, fragment_to_file, input_hash = _load_inputs(args, options)
    method = MethodConfig(
        method=options["method"],
        feature_count=options["feature_count"],
        steering=_steering_config(options),
        knn_k=int(options["knn_k"]),
        iterations=int(options["iterations"]),
        seed=int(options["seed"]),
    )
    folds = make_folds(labels, int(options["folds"]), int(options["seed"]))
    report = run_experiment(
        matrix, labels, method, folds,
        standardize=_standardize_arg(options),
        fragment_to_file=fragment_to_file or None,
    )
    out = Path(options["out"])
    save_report(report, out / "report.json", extra=_manifest(options, input_hash))
    atomic_write_text(
        out / "report.csv",
        SUMMARY_HEADER + "\n" + summary_line(report, len(set(labels.values()))) + "\n",
    )
    print(out / "report.json")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    options = _effective_options(args)
    if not args.grid:
        raise InvalidInput("sweep needs --grid <file.json>")
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    unknown = set(grid) - set(DEFAULTS)
    if unknown:
        raise InvalidInput(f"unknown grid keys: {sorted(unknown)}")
    matrix, labels, fragment_to_file, input_hash = _load_inputs(args, options)
    out = Path(options["out"])
    manifest_entries = []
    for point_id, point in enumerate(grid_points(grid)):
        merged = dict(options)
        merged.update(point)
        method = MethodConfig(
            method=merged["method"],
            feature_count=merged["feature_count"],
            steering=_steering_config(merged),
            knn_k=int(merged["knn_k"]),
            iterations=int(merged["iterations"]),
            seed=int(merged["seed"]),
        )
        folds = make_folds(labels, int(merged["folds"]), int(merged["seed"]))
        report = run_experiment(
            matrix, labels, method, folds,
            standardize=_standardize_arg(merged),
            fragment_to_file=fragment_to_file or None,
        )
        name = f"report_{point_id:03d}.json"
        save_report(report, out / name, extra=_manifest(merged, input_hash))
        manifest_entries.append({"point": point, "report": name,
                                 "test_f1": report.mean("test_f1")})
    atomic_write_text(
        out / "sweep_manifest.json",
        json.dumps(
            {"grid": grid, "points": manifest_entries, **_manifest(options, input_hash)},
            indent=2, sort_keys=True,
        ) + "\n",
    )
    print(out / "sweep_manifest.json")
    return 0


def _cmd_tree(args: argparse.Namespace) -> int:
    options = _effective_options(args)
    matrix, labels, _fragments, input_hash = _load_inputs(args, options)
    out = Path(options["out"])
    written = []
    for label, (tree, _grouped) in class_trees(matrix, labels).items():
        safe = label.replace("/", "_")
        atomic_write_text(out / f"tree_{safe}.nwk", tree.to_newick() + "\n")
        doc = tree.to_json_dict()
        doc["manifest"] = _manifest(options, input_hash)
        atomic_write_text(out / f"tree_{safe}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(out / f"tree_{safe}.nwk")
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compsteer",
        description="compression-based similarity analysis with steered embeddings",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, extra in (
        ("distances", _cmd_distances, "build and save a pairwise distance matrix"),
        ("steer", _cmd_steer, "build and save an embedding model"),
        ("eval", _cmd_eval, "cross-validated evaluation of one method"),
        ("sweep", _cmd_sweep, "evaluate every point of a parameter grid"),
        ("tree", _cmd_tree, "export per-class dendrograms"),
    ):
        p = sub.add_parser(name, help=extra)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--grid", help="JSON file mapping option names to value lists")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CompsteerError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
