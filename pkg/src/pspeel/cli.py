"""Command-line front end: analyze one script, a corpus, or generate one.

Exit codes: 0 when analysis completes, 2 when it aborts (syntax errors,
layer/emulation limits), 3 for usage problems. Output is stage-by-stage so
an analyst can follow exactly which envelopes were peeled; indicators are
printed defanged unless --raw-iocs is given. Network fetching is off by
default and must be enabled explicitly with --fetch.
"""

from __future__ import annotations

import argparse
import os
import sys

from .behavior import defang
from .model import ActionKind, ReportStatus, ScriptText
from .obfuscator import gen_corpus
from .pipeline import (
    analyze,
    analyze_corpus,
    layer_key,
    report_json,
    write_stats_csv,
)
from .sandbox import FetchPolicy, HttpClient

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pspeel",
        description="Peel, emulate and report on obfuscated PowerShell "
                    "without executing it.")
    sub = parser.add_subparsers(dest="command", required=True)

    one = sub.add_parser("analyze", help="analyze a single script")
    one.add_argument("file", help="script path, or - for standard input")
    one.add_argument("--json", metavar="OUT", help="write the JSON report here")
    one.add_argument("--artifacts", metavar="DIR",
                     help="directory for stored binary payloads")
    one.add_argument("--max-layers", type=int, default=16, metavar="N")
    one.add_argument("--fetch", action="store_true",
                     help="retrieve remote payloads (network access!)")
    one.add_argument("--timeout", type=float, default=10.0, metavar="S",
                     help="per-request timeout when fetching")
    one.add_argument("--raw-iocs", action="store_true",
                     help="print raw indicators instead of defanged ones")

    many = sub.add_parser("corpus", help="analyze every .ps1 in a directory")
    many.add_argument("dir", help="directory of .ps1 files")
    many.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                      metavar="N", help="worker threads")
    many.add_argument("--stats", metavar="OUT",
                      help="write the JSON summary here")
    many.add_argument("--csv", metavar="DIR",
                      help="write histogram CSV tables into this directory")
    many.add_argument("--max-layers", type=int, default=16, metavar="N")

    gen = sub.add_parser("gen", help="generate a labeled obfuscated corpus")
    gen.add_argument("out_dir", help="directory to fill with samples")
    gen.add_argument("--count", type=int, required=True, metavar="N")
    gen.add_argument("--seed", type=int, default=0, metavar="S")
    gen.add_argument("--layer-spec", metavar="SPEC",
                     help="fixed stack, e.g. 'string:tick,base64' "
                          "(innermost first); random stacks otherwise")
    return parser


def _display_url(url: str, raw: bool) -> str:
    return url if raw else defang(url)


def _print_report(report, raw_iocs: bool) -> None:
    print(f"source: {report.source_id}")
    print(f"sha256: {report.sha256}")
    for stage in report.stages:
        line = f"stage {stage.stage_index}: {layer_key(stage.layer)}"
        if stage.techniques:
            line += "  [" + ", ".join(t.value for t in stage.techniques) + "]"
        print(line)
        for warning in stage.warnings:
            print(f"  note: {warning}")
    for removal in report.anti_debug_removed:
        print(f"anti-debug removed: {removal.kind.value}")
    shown_script = report.final_script
    if not raw_iocs:
        for ioc in report.iocs:
            shown_script = shown_script.replace(ioc.raw, ioc.defanged)
    print("final script:")
    for line in shown_script.splitlines() or [""]:
        print(f"  {line}")
    if report.actions:
        print("actions:")
        for action in report.actions:
            detail = action.detail
            if action.kind is ActionKind.DOWNLOAD:
                detail = _display_url(detail, raw_iocs)
            print(f"  {action.kind.value}  {detail}")
    print(f"pattern: {report.pattern.value}")
    if report.env_vars:
        print("environment variables:")
        for name, usage, count in report.env_vars:
            print(f"  {name}  {usage.value}  x{count}")
    if report.iocs:
        print("iocs:")
        for ioc in report.iocs:
            shown = ioc.raw if raw_iocs else ioc.defanged
            print(f"  {ioc.kind.value}  {shown}")
    for warning in report.warnings:
        print(f"warning: {warning}")
    if report.status is ReportStatus.ABORTED:
        print(f"status: aborted ({report.abort_reason})")
    else:
        print("status: complete")


def _cmd_analyze(args) -> int:
    if args.file == "-":
        script = ScriptText.from_bytes(sys.stdin.buffer.read(),
                                       source_id="<stdin>")
    else:
        try:
            with open(args.file, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            print(f"pspeel: cannot read {args.file}: {exc}", file=sys.stderr)
            return 3
        script = ScriptText.from_bytes(data, source_id=args.file)
    if args.max_layers < 1:
        print("pspeel: --max-layers must be at least 1", file=sys.stderr)
        return 3
    policy = FetchPolicy.RECORD_ONLY
    client = None
    if args.fetch:
        print("pspeel: WARNING: --fetch contacts attacker infrastructure; "
              "payloads will be retrieved over the network", file=sys.stderr)
        policy = FetchPolicy.FETCH_VIA_CLIENT
        client = HttpClient(timeout=args.timeout)
    report = analyze(script, policy=policy, max_layers=args.max_layers,
                     artifacts_dir=args.artifacts, client=client)
    _print_report(report, raw_iocs=args.raw_iocs)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report_json(report))
    return 0 if report.status is ReportStatus.COMPLETE else 2


def _cmd_corpus(args) -> int:
    if not os.path.isdir(args.dir):
        print(f"pspeel: not a directory: {args.dir}", file=sys.stderr)
        return 3
    if args.jobs < 1:
        print("pspeel: --jobs must be at least 1", file=sys.stderr)
        return 3
    names = sorted(n for n in os.listdir(args.dir) if n.endswith(".ps1"))
    if not names:
        print(f"pspeel: no .ps1 files in {args.dir}", file=sys.stderr)
        return 3
    scripts = []
    for name in names:
        path = os.path.join(args.dir, name)
        with open(path, "rb") as fh:
            scripts.append(ScriptText.from_bytes(fh.read(), source_id=name))
    stats = analyze_corpus(scripts, parallelism=args.jobs,
                           max_layers=args.max_layers)
    summary = stats.to_json()
    print(summary, end="")
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            fh.write(summary)
    if args.csv:
        for path in write_stats_csv(stats, args.csv):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def _cmd_gen(args) -> int:
    if args.count < 1:
        print("pspeel: --count must be at least 1", file=sys.stderr)
        return 3
    try:
        labels = gen_corpus(args.out_dir, count=args.count, seed=args.seed,
                            layer_spec=args.layer_spec)
    except ValueError as exc:
        print(f"pspeel: bad --layer-spec: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {labels['count']} samples and labels.json to {args.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 3 if code == 2 else code
    if args.command == "analyze":
        return _cmd_analyze(args)
    if args.command == "corpus":
        return _cmd_corpus(args)
    return _cmd_gen(args)


if __name__ == "__main__":
    sys.exit(main())
