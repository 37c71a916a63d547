"""Command line entry point: ``modelatlas <command> ...``.

Exit status is 0 on success, 1 when inputs fail validation and 2 on I/O
errors (unreadable or unwritable files, unreachable endpoints).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import syngen
from .charting import ChartingConfig, RhoPolicy, chart_components
from .core import Atlas, ModelNode
from .distance import compute_distance_matrix, load_matrix, save_matrix
from .errors import AtlasError
from .evaluation import DEFAULT_LINKAGE, METHODS, benchmark, make_split
from .export import GexfStyle, export_dot, export_gexf, export_json
from .imputation import (
    MetricLabelSet,
    evaluate_imputation,
    impute_attribute_hub,
    impute_metric_knn,
)
from .ingest import (
    dumps_metadata,
    fetch_metadata,
    fingerprint_files,
    load_metadata,
    read_fingerprints,
    write_fingerprints,
)
from .report import FORMATS, atlas_stats, render

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
ABLATIONS = {
    "dedup": "dedup",
    "temporal": "temporal_filter",
    "snake-fan": "snake_fan",
    "quant-leaf": "quantized_are_leaves",
    "merge": "honor_known_parents",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which we reserve for I/O
        raise UsageError(f"{self.prog}: {message}")


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _emit(report: Any, args: argparse.Namespace) -> None:
    _write(render(report, args.format), getattr(args, "report", None))


def _load_nodes(path: str) -> list[ModelNode]:
    nodes, errors = load_metadata(path)
    for err in errors:
        print(f"warning: {path}: {err}", file=sys.stderr)
    return nodes


def _load_atlas(path: str) -> Atlas:
    return Atlas.loads(Path(path).read_text(encoding="utf-8"))


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc.msg}") from exc
    return rows


def _config(args: argparse.Namespace) -> ChartingConfig:
    disabled = {ABLATIONS[name]: False for name in args.disable or ()}
    return ChartingConfig(
        K=args.k, K_th=args.kth, rho_policy=RhoPolicy.parse(args.rho),
        distance_normalization=args.normalization, duplicate_policy=args.duplicate_policy,
        tie_seed=args.seed, **disabled,
    )


# -- commands ----------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    spec = syngen.load_spec(args.spec) if args.spec else syngen.SyntheticSpec()
    if args.seed is not None:
        spec = spec.with_(seed=args.seed)
    corpus = syngen.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_fingerprints(corpus.fingerprint_list(), out / "fingerprints.jsonl")
    (out / "metadata.jsonl").write_text(dumps_metadata(corpus.metadata), encoding="utf-8")
    (out / "truth.json").write_text(corpus.truth.dumps(), encoding="utf-8")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"nodes": len(corpus.truth), "edges": len(corpus.truth.edges), "seed": spec.seed,
           "out": str(out)}, args)
    return EXIT_OK


def cmd_fingerprint(args: argparse.Namespace) -> int:
    paths: dict[str, str] = {}
    if args.manifest:
        paths.update(json.loads(Path(args.manifest).read_text(encoding="utf-8")))
    for item in args.model or ():
        model_id, sep, path = item.partition("=")
        if not sep or not model_id or not path:
            raise UsageError(f"--model expects ID=PATH, got {item!r}")
        paths[model_id] = path
    if not paths:
        raise UsageError("give --manifest or at least one --model")
    fps = fingerprint_files(paths, selector=args.selector, dim=args.dim, seed=args.seed, workers=args.workers)
    write_fingerprints(fps, args.out)
    _emit({"fingerprints": len(fps), "dim": args.dim, "out": args.out}, args)
    return EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    ids = [line.strip() for line in Path(args.ids).read_text(encoding="utf-8").splitlines() if line.strip()]
    nodes, errors = fetch_metadata(args.endpoint, ids, attempts=args.attempts, timeout=args.timeout)
    _write(dumps_metadata(nodes), args.out)
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_IO if errors else EXIT_OK


def cmd_chart(args: argparse.Namespace) -> int:
    config = _config(args)
    fps = {fp.id: fp for fp in read_fingerprints(args.fingerprints)}
    nodes = _load_nodes(args.meta)
    matrix = None
    if args.matrix_cache:
        cache = Path(args.matrix_cache)
        if cache.exists():
            matrix = load_matrix(cache)
        else:
            ordered = sorted(nodes, key=lambda n: n.sort_key)
            missing = [n.id for n in ordered if n.id not in fps]
            if not missing:
                matrix = compute_distance_matrix([fps[n.id] for n in ordered],
                                                 {n.id: n.created_at for n in ordered},
                                                 normalize=config.normalize)
                save_matrix(matrix, cache)
    atlas = chart_components(nodes, fps, config, linkage_threshold=args.linkage, matrix=matrix)
    Path(args.out).write_text(atlas.dumps(), encoding="utf-8")
    stats = atlas_stats(atlas)
    _emit({"nodes": stats["nodes"], "edges": stats["edges"], "components": stats["components"],
           "out": args.out}, args)
    return EXIT_OK


def cmd_impute(args: argparse.Namespace) -> int:
    if (args.metric is None) == (args.attribute is None):
        raise UsageError("give exactly one of --metric or --attribute")
    atlas = _load_atlas(args.atlas)
    labels = None
    if args.labels:
        labels = {str(r["id"]): r["value"] for r in _read_jsonl(args.labels)}
    if args.metric is not None:
        labelset = (MetricLabelSet(args.metric, {k: float(v) for k, v in labels.items()}) if labels is not None
                    else MetricLabelSet.from_atlas(atlas, args.metric))
        preds = impute_metric_knn(atlas, labelset, args.k)
    else:
        preds = impute_attribute_hub(atlas, args.attribute,
                                     {k: str(v) for k, v in labels.items()} if labels is not None else None)
    lines = [json.dumps({"id": m, "value": p.value, "source": p.source, "support": p.support, "hops": p.hops},
                        sort_keys=True) for m, p in sorted(preds.items())]
    _write("".join(line + "\n" for line in lines), args.out)
    if args.truth:
        truth = {str(r["id"]): r["value"] for r in _read_jsonl(args.truth)}
        scored = {m: preds[m] for m in truth if m in preds}
        _emit(evaluate_imputation(scored, {m: truth[m] for m in scored}).summary(), args)
    else:
        _emit({"predictions": len(preds), "out": args.out}, args)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    truth = _load_atlas(args.truth)
    fps = {fp.id: fp for fp in read_fingerprints(args.fingerprints)}
    nodes = _load_nodes(args.meta) if args.meta else [replace(n, known_parents=None) for n in truth.sorted_nodes()]
    split = make_split(truth, args.split, policy=args.split_policy, seed=args.seed)
    rows = []
    for method in args.method:
        report = benchmark(method, truth, nodes, fps, split, config=config, seed=args.seed,
                           linkage_threshold=args.linkage).to_dict()
        if not args.timing:
            report.pop("wall_time")
        rows.append(report)
    _emit(rows[0] if len(rows) == 1 else rows, args)
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    atlas = _load_atlas(args.atlas)
    if args.to == "gexf":
        text = export_gexf(atlas, GexfStyle(size_by=args.size_by))
    elif args.to == "dot":
        text = export_dot(atlas)
    else:
        text = export_json(atlas)
    _write(text, args.out)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    _emit(atlas_stats(_load_atlas(args.atlas)), args)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _charting_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=5, help="nearest candidates per model")
    p.add_argument("--kth", type=float, default=0.05, help="spread threshold for the nearest-parent shortcut")
    p.add_argument("--rho", default="p60", help="correlation threshold: pNN percentile or a number")
    p.add_argument("--normalization", choices=("unit", "none"), default="unit")
    p.add_argument("--duplicate-policy", choices=("leaf", "same-parent"), default="leaf")
    p.add_argument("--linkage", type=float, default=DEFAULT_LINKAGE, help="component linkage threshold")
    p.add_argument("--disable", action="append", choices=sorted(ABLATIONS), help="switch off one prior")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # None lets ``gen`` keep a seed from its spec file; other commands resolve it to 0
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--format", choices=FORMATS, default="json", help="report format")
    common.add_argument("--report", help="write the report here instead of stdout")

    parser = _Parser(prog="modelatlas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--spec", help="SyntheticSpec JSON (defaults when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fingerprint", parents=[common], help="fingerprint safetensors files")
    p.add_argument("--manifest", help="JSON object mapping model id to file path")
    p.add_argument("--model", action="append", metavar="ID=PATH")
    p.add_argument("--selector", default="*")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fingerprint)

    p = sub.add_parser("fetch", parents=[common], help="download metadata records over HTTP")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--ids", required=True, help="file with one model id per line")
    p.add_argument("--attempts", type=int, default=3)
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("chart", parents=[common], help="recover lineage edges")
    p.add_argument("--fingerprints", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--matrix-cache", help="distance cache file, created when absent")
    p.add_argument("--out", required=True)
    _charting_flags(p)
    p.set_defaults(func=cmd_chart)

    p = sub.add_parser("impute", parents=[common], help="fill in metrics or attributes")
    p.add_argument("--atlas", required=True)
    p.add_argument("--metric")
    p.add_argument("--attribute")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--labels", help='JSONL {"id", "value"}; defaults to values on the atlas')
    p.add_argument("--truth", help='held-out JSONL {"id", "value"} to score against')
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("eval", parents=[common], help="score methods against a true atlas")
    p.add_argument("--truth", required=True)
    p.add_argument("--fingerprints", required=True)
    p.add_argument("--meta", help="observed metadata (defaults to truth nodes without lineage)")
    p.add_argument("--method", action="append", choices=METHODS)
    p.add_argument("--split", type=float, default=0.1, help="stem fraction")
    p.add_argument("--split-policy", choices=("earliest", "random"), default="earliest")
    p.add_argument("--timing", action="store_true", help="include wall time (breaks byte-identical output)")
    _charting_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", parents=[common], help="write GEXF, DOT or JSON")
    p.add_argument("--atlas", required=True)
    p.add_argument("--to", choices=("gexf", "dot", "json"), default="gexf")
    p.add_argument("--size-by", choices=("subtree_downloads", "downloads"), default="subtree_downloads")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("stats", parents=[common], help="summary statistics of an atlas")
    p.add_argument("--atlas", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed is None and args.command != "gen":
            args.seed = 0
        if args.command == "eval" and not args.method:
            args.method = ["ours"]
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AtlasError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
