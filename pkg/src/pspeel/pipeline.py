"""Analysis driver: peel layers until clean, emulate, assemble the report.

Each iteration normalizes the current text (cleanup, line joining, a
structural syntax check), strips anti-debugging constructs, asks the
detector for the outermost layer and peels it — string transforms for
string-based layers, the decoder for encoded/compressed ones. When the
detector reports a clean script the emulator takes over; any
Invoke-Expression argument it manages to resolve is fed back through the
same peel-and-emulate cycle, so staged droppers unravel without anything
being executed.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .behavior import classify_pattern, extract_env_vars, extract_iocs
from .decoder import (
    CorruptStreamError,
    InvalidBase64Error,
    MalformedGroupError,
    UndecodableBytesError,
    bytes_to_text,
    decode_base64,
    decode_binary,
    decompress,
    store_payload,
)
from .detector import detect_layer, find_base64_blob
from .model import (
    AnalysisReport,
    EncodingKind,
    LayerKind,
    ReportStatus,
    ScriptText,
    StageTrace,
)
from .preprocess import (
    ScriptSyntaxError,
    cleanup,
    join_multiline,
    strip_antidebug,
    syntax_check,
)
from .sandbox import EmulationBudgetError, FetchPolicy, HttpClient, emulate
from .stringdeobf import apply_string_pass

__all__ = [
    "LayerLimitExceeded", "CorpusStats", "analyze", "analyze_corpus",
    "layer_key",
    "report_json", "write_stats_csv",
]

EXCERPT_CHARS = 200


class LayerLimitExceeded(RuntimeError):
    """More peel stages than the configured maximum."""


def layer_key(layer) -> str:
    """Flat histogram key: 'string-based', 'encoded/base64', ..."""
    if layer.encoding is not None:
        return f"{layer.kind.value}/{layer.encoding.value}"
    if layer.compression is not None:
        return f"{layer.kind.value}/{layer.compression.value}"
    return layer.kind.value


class _Analysis:
    """One script's pass through the full peel → emulate → feedback cycle."""

    def __init__(self, report: AnalysisReport, policy: FetchPolicy, client,
                 max_layers: int, artifacts_dir):
        self.report = report
        self.policy = policy
        self.client = client
        self.max_layers = max_layers
        self.artifacts_dir = artifacts_dir
        self.env_events: list = []
        self.dropped: list = []
        self.eval_texts: list = []
        self.emulated: set = set()

    # ------------------------------------------------------------- control

    def run(self, script: ScriptText) -> None:
        try:
            final = self._peel_chain(script)
            self.report.final_script = final.content
            self._emulate_and_feed(final)
        except ScriptSyntaxError as exc:
            self._abort(f"syntax error: {exc.detail}")
        except LayerLimitExceeded as exc:
            self._abort(str(exc))
        except CorruptStreamError as exc:
            self._abort(f"corrupt compressed stream: {exc}")
        except EmulationBudgetError as exc:
            self._abort(f"emulation budget exceeded: {exc}")
        self._finalize()

    def _abort(self, reason: str) -> None:
        self.report.status = ReportStatus.ABORTED
        self.report.abort_reason = reason

    def _finalize(self) -> None:
        self.report.pattern = classify_pattern(self.report.actions)
        scan_text = "\n".join([self.report.final_script, *self.eval_texts])
        self.report.env_vars = extract_env_vars(self.env_events, scan_text)
        self.report.iocs = extract_iocs(self.report.actions, scan_text,
                                        self.dropped)

    # ---------------------------------------------------------------- peel

    def _normalize(self, script: ScriptText) -> ScriptText:
        current = join_multiline(cleanup(script))
        syntax_check(current)
        return current

    def _peel_chain(self, script: ScriptText) -> ScriptText:
        """Peel layers off one text until the detector reports it clean."""
        current = self._normalize(script)
        while True:
            current, removals = strip_antidebug(current)
            self.report.anti_debug_removed.extend(removals)
            finding = detect_layer(current)
            if finding.layer.kind is LayerKind.CLEAN:
                return current
            if len(self.report.stages) >= self.max_layers:
                raise LayerLimitExceeded(
                    f"layer limit exceeded ({self.max_layers})")
            stage_warnings: list = []
            peeled = self._peel_once(current, finding, stage_warnings)
            if peeled is None:
                return current  # reason already recorded as a warning
            if peeled == current.content:
                self.report.warnings.append(
                    f"{layer_key(finding.layer)} layer detected but the peel "
                    "made no progress; stopping")
                return current
            seen: set = set()
            techniques = [tag for tag, _span in finding.evidence
                          if not (tag in seen or seen.add(tag))]
            output = current.replace_content(peeled)
            self.report.stages.append(StageTrace(
                stage_index=len(self.report.stages) + 1,
                layer=finding.layer,
                techniques=techniques,
                input_excerpt=current.content[:EXCERPT_CHARS],
                output_script=output,
                warnings=stage_warnings,
            ))
            current = self._normalize(output)

    def _peel_once(self, current: ScriptText, finding, warnings):
        """Text of the layer underneath, or None when peeling must stop."""
        layer = finding.layer
        text = current.content
        if layer.kind is LayerKind.STRING_BASED:
            return apply_string_pass(current, warnings).content
        try:
            if layer.kind is LayerKind.ENCODED:
                if layer.encoding is EncodingKind.BASE64:
                    found = find_base64_blob(text)
                    if found is None:
                        self.report.warnings.append(
                            "base64 layer reported but no blob located")
                        return None
                    blob, context, _span = found
                    return bytes_to_text(decode_base64(blob),
                                         utf16_first=(context == "flag"))
                lo, hi = finding.evidence[0][1]
                return bytes_to_text(decode_binary(text[lo:hi]))
            # compressed: the deflate/gzip stream arrives base64-wrapped
            found = find_base64_blob(text)
            if found is None:
                self.report.warnings.append(
                    "compressed layer reported but no base64 payload located")
                return None
            payload = decompress(decode_base64(found[0]), layer.compression)
            return bytes_to_text(payload)
        except UndecodableBytesError as exc:
            self._keep_binary_payload(exc.payload)
            return None
        except (InvalidBase64Error, MalformedGroupError) as exc:
            self.report.warnings.append(f"decode failed: {exc}")
            return None

    def _keep_binary_payload(self, payload: bytes) -> None:
        digest = hashlib.sha256(payload).hexdigest()
        if self.artifacts_dir is not None:
            path = store_payload(payload, self.artifacts_dir,
                                 self.report.sha256)
            self.report.warnings.append(
                f"payload is not script text; stored {len(payload)} bytes "
                f"at {path}")
        else:
            self.report.warnings.append(
                f"payload is not script text ({len(payload)} bytes, "
                f"sha256 {digest}); not recursed")

    # ---------------------------------------------------- emulate and feed

    def _emulate_and_feed(self, script: ScriptText) -> None:
        self.emulated.add(script.sha256)
        result = emulate(script.content, policy=self.policy,
                         client=self.client,
                         stage_index=len(self.report.stages))
        self.report.actions.extend(result.actions)
        self.env_events.extend(result.env_usages)
        self.dropped.extend(result.dropped_files)
        for warning in result.warnings:
            message = f"emulation: {warning}"
            if message not in self.report.warnings:
                self.report.warnings.append(message)
        for url, payload in result.fetched_payloads:
            if self.artifacts_dir is not None:
                path = store_payload(payload, self.artifacts_dir,
                                     self.report.sha256)
                self.report.warnings.append(
                    f"fetched payload from {url} stored at {path}")
        for ev in result.evals:
            if ev.resolved is None:
                continue
            self.eval_texts.append(ev.resolved)
            digest = hashlib.sha256(ev.resolved.encode("utf-8")).hexdigest()
            if digest in self.emulated:
                self.report.warnings.append(
                    "recursive eval argument skipped")
                continue
            sub_input = script.replace_content(ev.resolved)
            try:
                sub_final = self._peel_chain(sub_input)
            except ScriptSyntaxError as exc:
                self.report.warnings.append(
                    f"eval argument not analyzable: {exc.detail}")
                continue
            except CorruptStreamError as exc:
                self.report.warnings.append(
                    f"eval argument not analyzable: corrupt stream ({exc})")
                continue
            self._emulate_and_feed(sub_final)


def analyze(script, policy: FetchPolicy = FetchPolicy.RECORD_ONLY,
            max_layers: int = 16, artifacts_dir=None,
            client=None) -> AnalysisReport:
    """Full analysis of one script; never executes any of it.

    Accepts a ScriptText or a plain string. Under the default record-only
    policy no network client is ever invoked; pass policy FETCH_VIA_CLIENT
    (and optionally a client) to let intercepted downloads resolve.
    """
    if isinstance(script, str):
        script = ScriptText.from_text(script)
    if max_layers < 1:
        raise ValueError("max_layers must be at least 1")
    if policy is FetchPolicy.FETCH_VIA_CLIENT and client is None:
        client = HttpClient()
    sha = script.sha256 or hashlib.sha256(
        script.content.encode("utf-8")).hexdigest()
    report = AnalysisReport(source_id=script.source_id, sha256=sha)
    _Analysis(report, policy, client, max_layers, artifacts_dir).run(script)
    return report


def report_json(report: AnalysisReport) -> str:
    """Canonical JSON for a report: stable keys, stable bytes."""
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


# ------------------------------------------------------------------ corpus


def _abort_category(reason: str) -> str:
    return reason.split(":")[0].split("(")[0].strip()


@dataclass
class CorpusStats:
    """Aggregate counters over many analyses.

    Aborted inputs are tallied in ``aborts`` only; every other table counts
    completed analyses, so histogram totals match ``completed``.
    """

    total: int = 0
    completed: int = 0
    stage_histogram: dict = field(default_factory=dict)  # layer count -> n
    layer_types: dict = field(default_factory=dict)      # 'encoded/base64' -> n
    anti_debug: dict = field(default_factory=dict)       # kind -> n
    patterns: dict = field(default_factory=dict)         # pattern -> n
    env_vars: dict = field(default_factory=dict)         # NAME -> reads
    actions: dict = field(default_factory=dict)          # action kind -> n
    aborts: dict = field(default_factory=dict)           # reason -> n

    def add(self, report: AnalysisReport) -> None:
        self.total += 1
        if report.status is ReportStatus.ABORTED:
            _bump(self.aborts, _abort_category(report.abort_reason))
            return
        self.completed += 1
        _bump(self.stage_histogram, len(report.stages))
        for stage in report.stages:
            _bump(self.layer_types, layer_key(stage.layer))
        for removal in report.anti_debug_removed:
            _bump(self.anti_debug, removal.kind.value)
        _bump(self.patterns, report.pattern.value)
        for name, _usage, count in report.env_vars:
            _bump(self.env_vars, name, count)
        for action in report.actions:
            _bump(self.actions, action.kind.value)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "completed": self.completed,
            "stage_histogram": {str(k): self.stage_histogram[k]
                                for k in sorted(self.stage_histogram)},
            "layer_types": dict(sorted(self.layer_types.items())),
            "anti_debug": dict(sorted(self.anti_debug.items())),
            "patterns": dict(sorted(self.patterns.items())),
            "env_vars": dict(sorted(self.env_vars.items())),
            "actions": dict(sorted(self.actions.items())),
            "aborts": dict(sorted(self.aborts.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _bump(table: dict, key, amount: int = 1) -> None:
    table[key] = table.get(key, 0) + amount


def analyze_corpus(inputs, policy: FetchPolicy = FetchPolicy.RECORD_ONLY,
                   parallelism: int = 1, max_layers: int = 16,
                   artifacts_dir=None) -> CorpusStats:
    """Analyze many scripts and fold the results into corpus statistics.

    Results are folded in input order whatever the worker count, so the
    summary is byte-identical for any ``parallelism``.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")

    def one(script):
        return analyze(script, policy=policy, max_layers=max_layers,
                       artifacts_dir=artifacts_dir)

    inputs = list(inputs)
    if parallelism == 1 or len(inputs) <= 1:
        reports = [one(s) for s in inputs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            reports = list(pool.map(one, inputs))
    stats = CorpusStats()
    for report in reports:
        stats.add(report)
    return stats


def write_stats_csv(stats: CorpusStats, out_dir) -> list:
    """Write the three histogram tables as CSV files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def table(filename: str, header: str, rows) -> None:
        path = os.path.join(out_dir, filename)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(header + "\n")
            for key, count in rows:
                fh.write(f"{key},{count}\n")
        written.append(path)

    table("layers.csv", "layers,count",
          sorted(stats.stage_histogram.items()))
    table("layer_types.csv", "layer_type,count",
          sorted(stats.layer_types.items()))
    table("anti_debug.csv", "anti_debug,count",
          sorted(stats.anti_debug.items()))
    return written
