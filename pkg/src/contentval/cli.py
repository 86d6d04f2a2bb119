"""Command-line entry point.

Exit codes: 0 success, 2 input or configuration error, 3 runtime or remote failure.
Settings resolve as command-line flag, then config file, then environment
variable ``CONTENTVAL_<NAME>``, then built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Sequence

from contentval import assigner, cvr, pairs, reporting
from contentval.embeddings import ProviderConfig, fetch_embeddings, load_embeddings, save_embeddings
from contentval.errors import ConfigError, ContentValidityError, InputError
from contentval.model import AccuracyReport, Questionnaire, parse_questionnaire, parse_ratings, save_questionnaire, validate_alignment
from contentval.synthetic import synthesize

ENV_PREFIX = "CONTENTVAL_"

# (name, type, default) for settings that may come from flags, config file or environment.
PROVIDER_SETTINGS = [
    ("provider", str, None),
    ("model", str, "default"),
    ("batch_size", int, 16),
    ("max_retries", int, 3),
    ("timeout", float, 30.0),
    ("token_env", str, "EMBEDDINGS_API_KEY"),
    ("max_in_flight", int, 1),
    ("backoff", float, 0.5),
]
SCORER_SETTINGS = [
    ("scorer", str, None),
    ("batch_size", int, 64),
    ("max_retries", int, 3),
    ("timeout", float, 30.0),
    ("token_env", str, "SCORER_API_KEY"),
    ("max_in_flight", int, 1),
    ("backoff", float, 0.5),
]
SETTINGS: dict[str, list[tuple[str, Callable[[Any], Any], Any]]] = {
    "cvr": [
        ("positive_rule", str, "ge1"),
        ("thresholds", str, None),
        ("threshold", float, None),
        ("method", str, "humans"),
    ],
    "assign": [("embeddings", str, None), ("temperature", float, 1.0), ("method", str, "embedding")] + PROVIDER_SETTINGS,
    "embed": [("format", str, "jsonl")] + PROVIDER_SETTINGS,
    "pairs": [("format", str, "jsonl")] + SCORER_SETTINGS,
    "compare": [("test_name", str, "test")],
    "synth": [
        ("k", int, 5),
        ("per_construct", int, 10),
        ("dim", int, 768),
        ("sigma", float, 0.1),
        ("seed", int, 0),
        ("format", str, "jsonl"),
    ],
}


def resolve_settings(args: argparse.Namespace, config: dict[str, Any]) -> dict[str, Any]:
    section = config.get(args.command, {}) if isinstance(config.get(args.command), dict) else {}
    resolved = {}
    for name, kind, default in SETTINGS[args.command]:
        flag = getattr(args, name, None)
        env = os.environ.get(ENV_PREFIX + name.upper())
        if flag is not None:
            value = flag
        elif name in section:
            value = section[name]
        elif name in config and not isinstance(config[name], dict):
            value = config[name]
        elif env is not None:
            value = env
        else:
            value = default
        if value is not None:
            try:
                value = kind(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"setting {name}: cannot convert {value!r} to {kind.__name__}") from exc
        resolved[name] = value
    return resolved


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def _out_dir(args: argparse.Namespace) -> Path:
    if not args.out:
        raise ConfigError("an output directory is required (--out)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _provider_config(s: dict[str, Any]) -> ProviderConfig:
    return ProviderConfig(
        base_url=s["provider"],
        model_name=s["model"],
        batch_size=s["batch_size"],
        max_retries=s["max_retries"],
        timeout=s["timeout"],
        token_env=s["token_env"],
        max_in_flight=s["max_in_flight"],
        backoff=s["backoff"],
    )


def _report_json(report: AccuracyReport, method: str, q: Questionnaire) -> str:
    doc = report.to_dict(method)
    doc["test_name"] = q.name
    return _dump_json(doc)


def cmd_cvr(args: argparse.Namespace, s: dict[str, Any]) -> int:
    q = parse_questionnaire(args.questionnaire)
    ratings = parse_ratings(args.ratings, q, allow_sparse=args.allow_sparse)
    if s["positive_rule"] not in cvr.POSITIVE_RULES:
        raise ConfigError(f"--positive-rule must be one of {cvr.POSITIVE_RULES}")
    results = cvr.all_item_cvrs(ratings, q)
    explicit = s["thresholds"] is not None or s["threshold"] is not None
    table = cvr.ThresholdTable.from_json(s["thresholds"]) if s["thresholds"] else cvr.ThresholdTable.lawshe()
    try:
        retained, _ = cvr.screen(results, table, s["threshold"])
    except ConfigError:
        if explicit:
            raise
        print(
            f"warning: bundled threshold table has no entry for a panel of {ratings.panel_size}; "
            "CVR screening skipped (pass --threshold)",
            file=sys.stderr,
        )
    else:
        kept = {(r.item_id, r.construct_id) for r in retained}
        results = [replace(r, passes=(r.item_id, r.construct_id) in kept) for r in results]
    assignments = cvr.panel_assign(ratings, q, s["positive_rule"])
    report = cvr.panel_accuracy(assignments, q)
    out = _out_dir(args)
    _write(out, "cvr.csv", cvr.cvr_csv(results))
    _write(out, "panel_assignments.csv", cvr.panel_assignments_csv(assignments, q))
    _write(out, "accuracy.json", _report_json(report, s["method"], q))
    print(f"panel of {ratings.panel_size}: macro accuracy {reporting.format_pct(100 * report.macro)}%, "
          f"micro {reporting.format_pct(100 * report.micro)}%")
    return 0


def cmd_assign(args: argparse.Namespace, s: dict[str, Any]) -> int:
    q = parse_questionnaire(args.questionnaire)
    if bool(s["embeddings"]) == bool(s["provider"]):
        raise ConfigError("give exactly one of --embeddings FILE or --provider URL")
    if s["embeddings"]:
        e = load_embeddings(s["embeddings"])
    else:
        e = fetch_embeddings(_provider_config(s), q.items)
    check = validate_alignment(q, e)
    for warning in check.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    check.raise_for_errors()
    assignments = assigner.assign(e, q, s["temperature"])
    report = assigner.accuracy(assignments, q)
    out = _out_dir(args)
    _write(out, "assignments.csv", assigner.assignments_csv(assignments, q))
    _write(out, "accuracy.json", _report_json(report, s["method"], q))
    _write(out, "accuracy.csv", reporting.accuracy_csv(report, s["method"]))
    _write(out, "grid.csv", reporting.assignment_grid(assignments, q))
    labels = {c.id: c.display() for c in q.constructs}
    radar = reporting.radar_data(report)
    _write(out, "radar.json", _dump_json([{"construct": c, "accuracy": a} for c, a in radar]))
    if args.svg and len(radar) < 3:
        print(f"warning: radar.svg skipped, a radar plot needs at least 3 constructs (got {len(radar)})", file=sys.stderr)
    elif args.svg:
        _write(out, "radar.svg", reporting.radar_svg([(labels[c], a) for c, a in radar], f"{q.name}: {s['method']}"))
    print(f"{len(assignments)} items: macro accuracy {reporting.format_pct(100 * report.macro)}%, "
          f"micro {reporting.format_pct(100 * report.micro)}%")
    return 0


def cmd_embed(args: argparse.Namespace, s: dict[str, Any]) -> int:
    q = parse_questionnaire(args.questionnaire)
    if not s["provider"]:
        raise ConfigError("--provider URL is required")
    if s["format"] not in ("jsonl", "binary"):
        raise ConfigError("--format must be jsonl or binary")
    e = fetch_embeddings(_provider_config(s), q.items)
    out = _out_dir(args)
    name = "embeddings.jsonl" if s["format"] == "jsonl" else "embeddings.vlemb"
    save_embeddings(e, out / name, s["format"])
    print(f"wrote {len(e)} x {e.dim} embeddings to {out / name}")
    return 0


def cmd_pairs(args: argparse.Namespace, s: dict[str, Any]) -> int:
    pool = pairs.load_pool(args.pool)
    if args.count_only:
        print(pairs.count_only(pool))
        return 0
    if not s["scorer"]:
        raise ConfigError("--scorer URL is required unless --count-only")
    if s["format"] not in ("jsonl", "csv"):
        raise ConfigError("--format must be jsonl or csv")
    cfg = pairs.ScorerConfig(
        base_url=s["scorer"],
        batch_size=s["batch_size"],
        max_retries=s["max_retries"],
        timeout=s["timeout"],
        token_env=s["token_env"],
        max_in_flight=s["max_in_flight"],
        backoff=s["backoff"],
    )
    out = _out_dir(args)
    target = out / f"pairs.{s['format']}"
    try:
        summary = pairs.build_dataset(pool, cfg, target, s["format"], resume=args.resume)
    except ContentValidityError as exc:
        done = pairs.read_checkpoint(target)
        raise exc.__class__(f"{exc}\ncheckpoint: {done} records written; rerun with --resume") from exc
    doc = {"n_items": pool.n, "expected_pairs": pairs.count_pairs(pool.n), **summary.to_dict()}
    _write(out, "summary.json", _dump_json(doc))
    print(f"wrote {summary.records_written} pairs to {target}")
    return 0


def cmd_compare(args: argparse.Namespace, s: dict[str, Any]) -> int:
    if args.names and len(args.names) != len(args.accuracy):
        raise InputError(f"{len(args.names)} names for {len(args.accuracy)} accuracy files")
    rows = []
    constructs: tuple[str, ...] | None = None
    for k, path in enumerate(args.accuracy):
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: cannot read accuracy JSON: {exc}") from exc
        name = args.names[k] if args.names else None
        row = reporting.MethodResult.from_json(raw, name or raw.get("method") or Path(path).stem)
        these = tuple(raw["constructs"])
        if constructs is None:
            constructs = these
        elif set(these) != set(constructs):
            raise InputError(f"{path}: constructs {list(these)} differ from {list(constructs)}")
        rows.append(row)
    table = reporting.ComparisonTable(s["test_name"], constructs or (), tuple(rows))
    out = _out_dir(args)
    markdown = reporting.render_table(table, "markdown")
    _write(out, "table.md", markdown)
    _write(out, "table.csv", reporting.render_table(table, "csv"))
    if args.assignments:
        if len(args.assignments) != len(rows):
            raise InputError(f"{len(args.assignments)} assignment files for {len(rows)} methods")
        loaded = [reporting.read_assignments_csv(Path(p).read_text(encoding="utf-8")) for p in args.assignments]
        stats = []
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                agr = reporting.agreement(loaded[i], loaded[j])
                stats.append({"a": rows[i].name, "b": rows[j].name, **agr.to_dict()})
        _write(out, "agreement.json", _dump_json(stats))
    print(markdown, end="")
    return 0


def cmd_synth(args: argparse.Namespace, s: dict[str, Any]) -> int:
    if s["format"] not in ("jsonl", "binary"):
        raise ConfigError("--format must be jsonl or binary")
    q, e = synthesize(s["k"], s["per_construct"], s["dim"], s["sigma"], s["seed"])
    out = _out_dir(args)
    save_questionnaire(q, out / "questionnaire.json")
    name = "embeddings.jsonl" if s["format"] == "jsonl" else "embeddings.vlemb"
    save_embeddings(e, out / name, s["format"])
    print(f"wrote {len(q.items)} items in {len(q.constructs)} constructs to {out}")
    return 0


COMMANDS = {
    "cvr": cmd_cvr,
    "assign": cmd_assign,
    "embed": cmd_embed,
    "pairs": cmd_pairs,
    "compare": cmd_compare,
    "synth": cmd_synth,
}


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", help="embedding service base URL (POST {url}/embeddings)")
    p.add_argument("--model", help="model name sent to the provider")
    _add_transport_flags(p)


def _add_transport_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--token-env", help="environment variable holding the bearer token")
    p.add_argument("--max-in-flight", type=int, help="concurrent batches")
    p.add_argument("--backoff", type=float, help="initial retry delay in seconds (doubles per retry)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory; nothing is written elsewhere")
    common.add_argument("--config", help="JSON config file (flags override it, it overrides the environment)")
    common.add_argument("--print-config", action="store_true", help="print the resolved settings and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="contentval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cvr", parents=[common], help="CVR and expert-panel assignment from ratings")
    p.add_argument("questionnaire")
    p.add_argument("ratings")
    p.add_argument("--thresholds", help="JSON map of panel size -> minimum CVR")
    p.add_argument("--threshold", type=float, help="single minimum CVR, overriding any table")
    p.add_argument("--positive-rule", choices=cvr.POSITIVE_RULES)
    p.add_argument("--allow-sparse", action="store_true", help="treat missing rating cells as 0")
    p.add_argument("--method", help="method name stored in accuracy.json")

    p = sub.add_parser("assign", parents=[common], help="embedding-based construct assignment")
    p.add_argument("questionnaire")
    p.add_argument("--embeddings", help="JSONL or VLEMB1 embedding file")
    _add_provider_flags(p)
    p.add_argument("--temperature", type=float)
    p.add_argument("--method", help="method name stored in accuracy.json")
    p.add_argument("--svg", action="store_true", help="also write radar.svg")

    p = sub.add_parser("embed", parents=[common], help="fetch item embeddings from a provider")
    p.add_argument("questionnaire")
    _add_provider_flags(p)
    p.add_argument("--format", choices=["jsonl", "binary"])

    p = sub.add_parser("pairs", parents=[common], help="build a scored all-pairs dataset")
    p.add_argument("pool", help="CSV with id,text columns")
    p.add_argument("--scorer", help="scoring service base URL (POST {url}/score)")
    _add_transport_flags(p)
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint of a previous run")
    p.add_argument("--count-only", action="store_true", help="enumerate and count pairs without scoring")

    p = sub.add_parser("compare", parents=[common], help="comparison table across methods")
    p.add_argument("accuracy", nargs="+", help="accuracy.json files")
    p.add_argument("--names", nargs="+", help="method names, one per accuracy file")
    p.add_argument("--test-name")
    p.add_argument("--assignments", nargs="+", help="assignment CSVs, one per accuracy file, for agreement stats")

    p = sub.add_parser("synth", parents=[common], help="synthetic questionnaire and embeddings")
    p.add_argument("--k", type=int, help="number of constructs")
    p.add_argument("--per-construct", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["jsonl", "binary"])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args, _load_config(args.config))
        if args.print_config:
            print(_dump_json({"command": args.command, **settings}), end="")
            return 0
        return COMMANDS[args.command](args, settings)
    except ContentValidityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
