"""Command-line entry point.

Subcommands: annotate, compare-labels, build-samples, score, rerank,
report. Option precedence is flags > environment variables > config file
(flat TOML given with --config). Every run writes a manifest.json beside
its outputs recording the resolved config, the seed, and SHA-256 digests
of all inputs and outputs; nothing in the outputs depends on wall time,
so identical runs are byte-identical.

Exit codes: 0 success, 1 domain error (schema violations, missing scores,
unreachable services), 2 usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import annotator, contextualizer, report, rerank, scoring
from .corpus import load_corpus
from .errors import LabelShapeMismatch, ToolkitError

log = logging.getLogger(__name__)

ENV_KEYS = {
    "endpoint": "PRM_ENDPOINT",
    "judge_endpoint": "JUDGE_ENDPOINT",
}
TOKEN_ENV = {"score": "PRM_TOKEN", "annotate": "JUDGE_TOKEN"}


@dataclass
class RunConfig:
    subcommand: str
    values: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # name -> path

    def manifest(self, outdir: Path, outputs: list[Path]) -> dict:
        def rel(path: Path) -> str:
            try:
                return str(path.relative_to(outdir))
            except ValueError:
                return path.name

        return {
            "subcommand": self.subcommand,
            "config": {k: v for k, v in sorted(self.values.items())},
            "seed": self.values.get("seed"),
            "inputs": {
                name: _digest(path) for name, path in sorted(self.inputs.items())
            },
            "outputs": {rel(path): _digest(path) for path in sorted(outputs)},
        }


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _resolve(args, key: str, file_config: dict, default=None, env_key: Optional[str] = None):
    """flags > environment > config file > default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if env_key and os.environ.get(env_key):
        return os.environ[env_key]
    if key in file_config:
        return file_config[key]
    return default


def _require(value, flag: str):
    if value is None:
        raise ToolkitError(f"missing required setting {flag}")
    return value


def _check_input(name: str, path, config: RunConfig) -> Path:
    path = Path(path)
    if not path.exists():
        raise ToolkitError(f"{name} path does not exist: {path}")
    config.inputs[name] = path
    return path


def _write_manifest(config: RunConfig, outdir: Path, outputs: list[Path]) -> None:
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(
        json.dumps(config.manifest(outdir, outputs), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _parse_ns(text) -> list[int]:
    if isinstance(text, list):
        return [int(n) for n in text]
    return [int(part) for part in str(text).split(",") if part.strip()]


def _add_common(parser):
    parser.add_argument("--config", help="flat TOML config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prmkit",
        description="Coherence annotation, PRM sample construction, and "
        "test-time-scaling evaluation",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("annotate", help="judge-grade every CoT in a corpus")
    _add_common(p)
    p.add_argument("--corpus", help="corpus JSONL")
    p.add_argument("--judge-endpoint", dest="judge_endpoint")
    p.add_argument("--judge-model", dest="judge_model")
    p.add_argument("--in-flight", dest="in_flight", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--audit", help="audit JSONL for judge traffic")

    p = sub.add_parser("compare-labels", help="first-error comparison vs original labels")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--annotations", help="annotations JSONL from `annotate`")

    p = sub.add_parser("build-samples", help="emit trainer-ready sample JSONL")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--mode", choices=["contextual", "conventional"])
    p.add_argument(
        "--labels",
        choices=["original", "annotations"],
        help="label source: the corpus original_labels or an annotations file",
    )
    p.add_argument("--annotations")

    p = sub.add_parser("score", help="produce step rewards into a resumable cache")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--cache", help="append-only score cache JSONL")
    p.add_argument("--backend", choices=["remote", "gold", "static"])
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--static-scores", dest="static_scores")
    p.add_argument("--in-flight", dest="in_flight", type=int)
    p.add_argument("--timeout", type=float)

    p = sub.add_parser("rerank", help="accuracy-vs-N curves from cached rewards")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--scores", help="score cache JSONL")
    p.add_argument("--method", choices=[m.value for m in rerank.Method])
    p.add_argument("--agg", choices=[a.value for a in rerank.Aggregation])
    p.add_argument("--ns", help="comma-separated sample counts")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scope")
    p.add_argument("--backend-tag", dest="backend_tag")
    p.add_argument("--backend-model", dest="backend_model")
    p.add_argument("--formats")

    p = sub.add_parser("report", help="improvement table and combined charts")
    _add_common(p)
    p.add_argument(
        "--curve",
        action="append",
        default=None,
        metavar="TAG=PATH",
        help="configuration curve JSON (repeatable)",
    )
    p.add_argument(
        "--baseline",
        action="append",
        default=None,
        metavar="PATH",
        help="majority-voting baseline curve JSON (repeatable)",
    )
    p.add_argument("--at-n", dest="at_n", type=int)
    p.add_argument("--normalize", action="store_true", default=None)
    p.add_argument("--formats")

    return parser


def _cmd_annotate(args, file_config) -> int:
    config = RunConfig("annotate")
    corpus_path = _check_input(
        "corpus", _require(_resolve(args, "corpus", file_config), "--corpus"), config
    )
    outdir = Path(_require(_resolve(args, "out", file_config), "--out"))
    endpoint = _require(
        _resolve(args, "judge_endpoint", file_config, env_key="JUDGE_ENDPOINT"),
        "--judge-endpoint",
    )
    model = _require(_resolve(args, "judge_model", file_config), "--judge-model")
    in_flight = int(_resolve(args, "in_flight", file_config, default=1))
    timeout = float(_resolve(args, "timeout", file_config, default=60.0))
    audit = _resolve(args, "audit", file_config)
    config.values = {
        "corpus": str(corpus_path),
        "judge_endpoint": endpoint,
        "judge_model": model,
        "in_flight": in_flight,
        "timeout": timeout,
        "audit": audit,
        "out": str(outdir),
    }

    corpus = load_corpus(corpus_path, uniform_cots=False)
    outdir.mkdir(parents=True, exist_ok=True)
    judge = annotator.JudgeClient(
        base_url=endpoint,
        model=model,
        api_key=os.environ.get("JUDGE_TOKEN"),
        timeout=timeout,
        audit_path=audit,
    )
    results = annotator.annotate_corpus(judge, corpus, in_flight=in_flight)
    out_path = outdir / "annotations.jsonl"
    count = annotator.write_annotations(results, out_path)
    log.info("wrote %d annotations to %s", count, out_path)
    _write_manifest(config, outdir, [out_path])
    return 0


def _cmd_compare_labels(args, file_config) -> int:
    config = RunConfig("compare-labels")
    corpus_path = _check_input(
        "corpus", _require(_resolve(args, "corpus", file_config), "--corpus"), config
    )
    ann_path = _check_input(
        "annotations",
        _require(_resolve(args, "annotations", file_config), "--annotations"),
        config,
    )
    outdir = Path(_require(_resolve(args, "out", file_config), "--out"))
    config.values = {
        "corpus": str(corpus_path),
        "annotations": str(ann_path),
        "out": str(outdir),
    }

    corpus = load_corpus(corpus_path, uniform_cots=False)
    annotations = annotator.read_annotations(ann_path)
    outcomes = []
    statuses = []
    for q in corpus.questions:
        for idx, cot in enumerate(corpus.cots[q.id]):
            if cot.original_labels is None or (q.id, idx) not in annotations:
                continue
            ann = annotations[(q.id, idx)]
            outcome = annotator.compare_first_error(
                cot.original_labels, ann, len(cot.steps), cot_id=f"{q.id}#{idx}"
            )
            outcomes.append(outcome)
            statuses.append("Correct" if 0 not in cot.original_labels else "Incorrect")
    if not outcomes:
        raise ToolkitError("no CoT has both original labels and an annotation")
    table = annotator.comparison_table(outcomes, statuses)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "comparison.csv"
    csv_path.write_text(table.render() + "\n", encoding="utf-8")
    json_path = outdir / "comparison.json"
    json_path.write_text(
        json.dumps(
            {
                group: {
                    "total": counts.total,
                    "same": counts.same,
                    "earlier_wrong": counts.earlier_wrong,
                    "later_wrong": counts.later_wrong,
                    "modification_rate": counts.modification_rate,
                }
                for group, counts in (
                    ("correct", table.origin_correct),
                    ("incorrect", table.origin_incorrect),
                    ("total", table.total),
                )
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    _write_manifest(config, outdir, [csv_path, json_path])
    return 0


def _cmd_build_samples(args, file_config) -> int:
    config = RunConfig("build-samples")
    corpus_path = _check_input(
        "corpus", _require(_resolve(args, "corpus", file_config), "--corpus"), config
    )
    outdir = Path(_require(_resolve(args, "out", file_config), "--out"))
    mode = _require(_resolve(args, "mode", file_config), "--mode")
    label_source = _resolve(args, "labels", file_config, default="original")
    ann_path = _resolve(args, "annotations", file_config)
    config.values = {
        "corpus": str(corpus_path),
        "mode": mode,
        "labels": label_source,
        "annotations": ann_path,
        "out": str(outdir),
    }

    corpus = load_corpus(corpus_path, uniform_cots=False)
    annotations = {}
    if label_source == "annotations":
        ann_path = _check_input("annotations", _require(ann_path, "--annotations"), config)
        annotations = annotator.read_annotations(ann_path)

    builder = (
        contextualizer.build_context_samples
        if mode == "contextual"
        else contextualizer.build_conventional_samples
    )
    samples = []
    for q in corpus.questions:
        for idx, cot in enumerate(corpus.cots[q.id]):
            if label_source == "original":
                labels = cot.original_labels
                if labels is None:
                    raise LabelShapeMismatch(
                        f"({q.id}, {idx}) has no original labels; use --labels annotations"
                    )
            else:
                if (q.id, idx) not in annotations:
                    raise LabelShapeMismatch(f"no annotation for ({q.id}, {idx})")
                labels = annotations[(q.id, idx)].labels
            samples.extend(builder(q, cot, labels))
    outdir.mkdir(parents=True, exist_ok=True)
    out_path = outdir / "samples.jsonl"
    count = contextualizer.emit_training_file(samples, out_path)
    log.info("wrote %d samples to %s", count, out_path)
    _write_manifest(config, outdir, [out_path])
    return 0


def _cmd_score(args, file_config) -> int:
    config = RunConfig("score")
    corpus_path = _check_input(
        "corpus", _require(_resolve(args, "corpus", file_config), "--corpus"), config
    )
    cache = Path(_require(_resolve(args, "cache", file_config), "--cache"))
    outdir = Path(_resolve(args, "out", file_config, default=cache.parent))
    backend_name = _require(_resolve(args, "backend", file_config), "--backend")
    in_flight = int(_resolve(args, "in_flight", file_config, default=1))
    timeout = float(_resolve(args, "timeout", file_config, default=60.0))
    config.values = {
        "corpus": str(corpus_path),
        "cache": str(cache),
        "backend": backend_name,
        "in_flight": in_flight,
        "timeout": timeout,
        "out": str(outdir),
    }

    corpus = load_corpus(corpus_path, uniform_cots=False)
    if backend_name == "remote":
        endpoint = _require(
            _resolve(args, "endpoint", file_config, env_key="PRM_ENDPOINT"), "--endpoint"
        )
        model = _require(_resolve(args, "model", file_config), "--model")
        config.values["endpoint"] = endpoint
        config.values["model"] = model
        backend = scoring.RemoteBackend(
            endpoint=endpoint,
            model=model,
            auth_token=os.environ.get("PRM_TOKEN"),
            timeout=timeout,
        )
    elif backend_name == "gold":
        backend = scoring.GoldOracleBackend()
    else:
        static_path = _check_input(
            "static_scores",
            _require(_resolve(args, "static_scores", file_config), "--static-scores"),
            config,
        )
        config.values["static_scores"] = str(static_path)
        backend = scoring.StaticBackend(static_path)

    scores = scoring.score_corpus(backend, corpus, cache, in_flight=in_flight)
    log.info("cache %s now covers %d CoTs", cache, len(scores.rewards))
    outdir.mkdir(parents=True, exist_ok=True)
    _write_manifest(config, outdir, [cache])
    return 0


def _cmd_rerank(args, file_config) -> int:
    config = RunConfig("rerank")
    corpus_path = _check_input(
        "corpus", _require(_resolve(args, "corpus", file_config), "--corpus"), config
    )
    scores_path = _check_input(
        "scores", _require(_resolve(args, "scores", file_config), "--scores"), config
    )
    outdir = Path(_require(_resolve(args, "out", file_config), "--out"))
    method = rerank.Method(_require(_resolve(args, "method", file_config), "--method"))
    agg = rerank.Aggregation(_resolve(args, "agg", file_config, default="min"))
    ns = _parse_ns(_resolve(args, "ns", file_config, default="1,2,4,8,16,32,64,128"))
    trials = int(_resolve(args, "trials", file_config, default=50))
    seed = int(_resolve(args, "seed", file_config, default=0))
    scope = _resolve(args, "scope", file_config, default="all")
    formats = str(_resolve(args, "formats", file_config, default="csv,json,svg")).split(",")
    backend_tag = _resolve(args, "backend_tag", file_config)
    backend_model = _resolve(args, "backend_model", file_config)
    config.values = {
        "corpus": str(corpus_path),
        "scores": str(scores_path),
        "method": method.value,
        "agg": agg.value,
        "ns": ns,
        "trials": trials,
        "seed": seed,
        "scope": scope,
        "formats": formats,
        "backend_tag": backend_tag,
        "backend_model": backend_model,
        "out": str(outdir),
    }

    corpus = load_corpus(corpus_path)
    identities = scoring.cache_identities(scores_path)
    if backend_tag is None or backend_model is None:
        if len(identities) != 1:
            raise ToolkitError(
                "score cache holds several (backend, model) sets; pass "
                f"--backend-tag/--backend-model (found {sorted(identities)})"
            )
        backend_tag, backend_model = next(iter(identities))
    scores = scoring.read_cache(scores_path, backend_tag, backend_model)
    curve = rerank.evaluate_curve(
        corpus, scores, method, agg, ns, trials=trials, seed=seed, scope=scope
    )
    outdir.mkdir(parents=True, exist_ok=True)
    written = report.render(curves=[curve], formats=formats, outdir=outdir)
    _write_manifest(config, outdir, written)
    return 0


def _cmd_report(args, file_config) -> int:
    config = RunConfig("report")
    outdir = Path(_require(_resolve(args, "out", file_config), "--out"))
    formats = str(_resolve(args, "formats", file_config, default="csv,json,svg")).split(",")
    normalize = bool(_resolve(args, "normalize", file_config, default=False))
    curve_specs = _resolve(args, "curve", file_config, default=[]) or []
    baseline_specs = _resolve(args, "baseline", file_config, default=[]) or []
    config.values = {
        "curves": list(curve_specs),
        "baselines": list(baseline_specs),
        "formats": formats,
        "normalize": normalize,
        "out": str(outdir),
    }

    by_tag: dict[str, list[rerank.EvalCurve]] = {}
    all_curves: list[rerank.EvalCurve] = []
    labels: list[str] = []
    for spec in curve_specs:
        tag, _, path = spec.partition("=")
        if not path:
            raise ToolkitError(f"--curve wants TAG=PATH, got {spec!r}")
        path = _check_input(f"curve:{tag}:{Path(path).name}", path, config)
        curve = rerank.EvalCurve.from_json(path.read_text(encoding="utf-8"))
        by_tag.setdefault(tag, []).append(curve)
        all_curves.append(curve)
        labels.append(f"{tag} {curve.scope}")
    baselines = []
    for spec in baseline_specs:
        path = _check_input(f"baseline:{Path(spec).name}", spec, config)
        curve = rerank.EvalCurve.from_json(path.read_text(encoding="utf-8"))
        baselines.append(curve)
        all_curves.append(curve)
        labels.append(f"mv-baseline {curve.scope}")

    table = None
    if baselines and by_tag:
        at_n = _resolve(args, "at_n", file_config)
        if at_n is None:
            at_n = max(p.n for c in baselines for p in c.points)
        at_n = int(at_n)
        config.values["at_n"] = at_n
        table = report.improvement_table(by_tag, baselines, at_n, normalize=normalize)

    outdir.mkdir(parents=True, exist_ok=True)
    written = report.render(
        curves=all_curves or None,
        table=table,
        formats=formats,
        outdir=outdir,
        curve_labels=labels or None,
    )
    _write_manifest(config, outdir, written)
    return 0


_COMMANDS = {
    "annotate": _cmd_annotate,
    "compare-labels": _cmd_compare_labels,
    "build-samples": _cmd_build_samples,
    "score": _cmd_score,
    "rerank": _cmd_rerank,
    "report": _cmd_report,
}


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        file_config = _load_config_file(args.config)
        return _COMMANDS[args.subcommand](args, file_config)
    except (ToolkitError, OSError) as exc:
        message = str(exc).replace("\n", "; ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
