"""Operator command line.

Subcommands: run (cases through the pipeline), eval (score prediction
reports against gold), validate (report file against an ontology), replay
(re-derive a report from an audit log), tools (list / ping), gen-corpus
(regenerate the bundled synthetic corpus).

Exit codes: 0 success, 1 case/evaluation failures, 2 usage or config
errors. OPGKIT_CONFIG sets the default config file path.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .evaluator import aggregate, evaluate_case, metrics_table
from .jsonutil import canonical_dumps, load_json, write_canonical
from .ontology import (
    OntologyError,
    StructuredReport,
    default_ontology_path,
    lint_report,
    load_ontology,
)
from .planner import CaseAbortError, ReplayError, RunConfig, replay_audit_log, run_case
from .toolbox import ToolRegistry, Toolbox
from .memory import CaseMemory


def _load_config(args) -> RunConfig:
    path = getattr(args, "config", None) or os.environ.get("OPGKIT_CONFIG")
    config = RunConfig.load(path) if path else RunConfig()
    overrides = {}
    if getattr(args, "manifest", None):
        overrides["manifest_path"] = str(args.manifest)
    if getattr(args, "ontology", None):
        overrides["ontology_path"] = str(args.ontology)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None):
        overrides["jobs"] = args.jobs
    if overrides:
        config = RunConfig.decode({**config.encode(), **overrides})
    return config


def cmd_run(args) -> int:
    try:
        config = _load_config(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        print(f"not a corpus directory: {corpus}", file=sys.stderr)
        return 2
    if not config.manifest_path:
        manifest = corpus / "manifest.json"
        if not manifest.exists():
            print(f"missing tool manifest: {manifest}", file=sys.stderr)
            return 2
        config = RunConfig.decode({**config.encode(), "manifest_path": str(manifest)})
    cases_dir = corpus / "cases" if (corpus / "cases").exists() else corpus
    case_dirs = sorted(d for d in cases_dir.iterdir() if (d / "case.json").exists())
    if not case_dirs:
        print(f"no case bundles under {cases_dir}", file=sys.stderr)
        return 2
    try:
        registry = ToolRegistry.from_manifest(config.manifest_path)
        schema = load_ontology(config.ontology_path or default_ontology_path())
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(case_dir):
        try:
            report, _ = run_case(case_dir, config, registry, schema, out_dir=out_dir)
            return (case_dir.name, True, len(report.findings))
        except CaseAbortError as exc:
            write_canonical(out_dir / case_dir.name / "failure.json", {"case": case_dir.name, "error": str(exc)})
            return (case_dir.name, False, str(exc))

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(one, case_dirs))
    else:
        results = [one(d) for d in case_dirs]
    failed = [r for r in results if not r[1]]
    for name, ok, info in sorted(results):
        status = "ok" if ok else "ABORTED"
        print(f"{name}: {status} ({info})")
    return 1 if failed else 0


def _collect_reports(directory: Path, filename_hint: str) -> dict:
    """Map case_id -> StructuredReport from a directory of report files or
    run-output/corpus case subdirectories."""
    reports = {}

    def take(path):
        doc = load_json(path)
        if isinstance(doc, dict) and "findings" in doc and "case_id" in doc:
            report = StructuredReport.decode(doc)
            reports[report.case_id] = report

    for path in sorted(directory.glob("*.json")):
        take(path)
    for sub in sorted(d for d in directory.iterdir() if d.is_dir()):
        candidate = sub / filename_hint
        if candidate.exists():
            take(candidate)
    return reports


def cmd_eval(args) -> int:
    pred_dir, gold_dir = Path(args.pred), Path(args.gold)
    if not pred_dir.is_dir() or not gold_dir.is_dir():
        print("pred/gold must be directories", file=sys.stderr)
        return 2
    preds = _collect_reports(pred_dir, "report.json")
    golds = _collect_reports(gold_dir, "gold.json")
    if not golds:
        print(f"no gold reports under {gold_dir}", file=sys.stderr)
        return 2
    unpaired = sorted(set(preds) ^ set(golds))
    if unpaired and not args.allow_partial:
        for case_id in unpaired:
            side = "gold" if case_id in golds else "pred"
            print(f"unpaired case ({side} only): {case_id}", file=sys.stderr)
        return 1
    shared = sorted(set(preds) & set(golds))
    if not shared:
        print("no paired cases", file=sys.stderr)
        return 2
    counts = [evaluate_case(preds[c], golds[c]) for c in shared]
    bundle = aggregate(counts, averaging=args.averaging)
    alt = aggregate(counts, averaging="macro" if args.averaging == "micro" else "micro")
    print(metrics_table(bundle, label=pred_dir.name or "corpus"))
    if args.out:
        write_canonical(
            args.out,
            {
                "metrics": bundle.encode(),
                "metrics_alt": alt.encode(),
                "per_case": [c.encode() for c in counts],
            },
        )
    return 0


def cmd_validate(args) -> int:
    try:
        schema = load_ontology(args.ontology or default_ontology_path())
    except OntologyError as exc:
        print(f"ontology error: {exc}", file=sys.stderr)
        return 2
    try:
        report = StructuredReport.load(args.report)
    except (OSError, KeyError, ValueError, OntologyError) as exc:
        print(f"unreadable report: {exc}", file=sys.stderr)
        return 2
    problems = lint_report(report, schema)
    for triple, reason in problems:
        print(f"{triple.encode()}: {reason}")
    if not problems:
        print(f"{args.report}: valid ({len(report.findings)} findings)")
    return 1 if problems else 0


def cmd_replay(args) -> int:
    try:
        report, header = replay_audit_log(args.log)
    except ReplayError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    config = RunConfig.decode(header["config"])
    doc = report.encode()
    doc["meta"] = {
        "config_hash": header["config_hash"],
        "ontology_version": header["ontology_version"],
        "seed": config.seed,
    }
    text = canonical_dumps(doc)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_tools(args) -> int:
    try:
        registry = ToolRegistry.from_manifest(args.manifest)
    except (OSError, ValueError, KeyError) as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2
    if args.tools_command == "list":
        for desc in registry.list():
            vote = "vote" if desc.vote_eligible else "no-vote"
            print(f"{desc.id:<16} {desc.category:<10} {vote:<8} {desc.endpoint}  [{', '.join(desc.capabilities)}]")
        return 0
    toolbox = Toolbox(registry, CaseMemory("__ping__"))
    down = []
    for desc in registry.list():
        alive = toolbox.ping(desc.id)
        print(f"{desc.id:<16} {'alive' if alive else 'DOWN'}")
        if not alive:
            down.append(desc.id)
    return 1 if down else 0


def cmd_gen_corpus(args) -> int:
    from .synth import generate_corpus

    generate_corpus(args.out, n_cases=args.cases, seed=args.seed)
    print(f"wrote {args.cases} cases under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opgkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run case bundles through the pipeline")
    p_run.add_argument("corpus", help="corpus directory (manifest.json + cases/) or a cases directory")
    p_run.add_argument("--out", required=True, help="output directory for reports/traces/audit logs")
    p_run.add_argument("--config", help="run config file (or set OPGKIT_CONFIG)")
    p_run.add_argument("--manifest", help="tool manifest override")
    p_run.add_argument("--ontology", help="ontology schema override")
    p_run.add_argument("--seed", type=int, help="seed override")
    p_run.add_argument("--jobs", type=int, help="case-level parallelism")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="score predictions against gold reports")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--averaging", choices=("micro", "macro"), default="micro")
    p_eval.add_argument("--allow-partial", action="store_true")
    p_eval.add_argument("--out", help="write metrics JSON here")
    p_eval.set_defaults(func=cmd_eval)

    p_val = sub.add_parser("validate", help="validate a report file against an ontology")
    p_val.add_argument("report")
    p_val.add_argument("--ontology")
    p_val.set_defaults(func=cmd_validate)

    p_replay = sub.add_parser("replay", help="reconstruct a report from an audit log")
    p_replay.add_argument("log")
    p_replay.add_argument("--out")
    p_replay.set_defaults(func=cmd_replay)

    p_tools = sub.add_parser("tools", help="inspect the tool registry")
    p_tools.add_argument("tools_command", choices=("list", "ping"))
    p_tools.add_argument("--manifest", required=True)
    p_tools.set_defaults(func=cmd_tools)

    p_gen = sub.add_parser("gen-corpus", help="generate a synthetic fixture corpus")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--cases", type=int, default=20)
    p_gen.add_argument("--seed", type=int, default=7)
    p_gen.set_defaults(func=cmd_gen_corpus)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
