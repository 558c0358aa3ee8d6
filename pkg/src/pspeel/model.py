"""Core value types shared by every stage of the de-obfuscation pipeline."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple


class TokenKind(Enum):
    VARIABLE = "variable"
    CMDLET_NAME = "cmdlet-name"
    METHOD_CALL = "method-call"
    STRING_SINGLE = "string-single"
    STRING_DOUBLE = "string-double"
    NUMBER = "number"
    OPERATOR = "operator"
    FORMAT_OPERATOR = "format-operator"
    CALL_OPERATOR = "call-operator"
    DOT_SOURCE = "dot-source"
    SEMICOLON = "semicolon"
    PIPE = "pipe"
    LPAREN = "lparen"
    RPAREN = "rparen"
    LBRACE = "lbrace"
    RBRACE = "rbrace"
    BACKTICK = "backtick"
    COMMENT = "comment"
    WHITESPACE = "whitespace"
    NEWLINE = "newline"
    WORD = "word"


class Token(NamedTuple):
    """One lexical unit; concatenating .text of a token stream reproduces the input."""

    kind: TokenKind
    text: str
    start: int
    end: int

    @property
    def span(self):
        return (self.start, self.end)


class LayerKind(Enum):
    STRING_BASED = "string-based"
    ENCODED = "encoded"
    COMPRESSED = "compressed"
    CLEAN = "clean"


class EncodingKind(Enum):
    BASE64 = "base64"
    BINARY = "binary"


class CompressionKind(Enum):
    DEFLATE = "deflate"
    GZIP = "gzip"


class TechniqueTag(Enum):
    CONCATENATION = "concatenation"
    REORDERING = "reordering"
    TICK = "tick"
    EVAL = "eval"
    UP_LOW_CASE = "up-low-case"
    WHITE_SPACES = "white-spaces"
    BASE64_ENCODING = "base64-encoding"
    BINARY_ENCODING = "binary-encoding"
    DEFLATE_COMPRESSION = "deflate-compression"
    GZIP_COMPRESSION = "gzip-compression"


# Techniques that rewrite text within a single string-based layer.
STRING_TECHNIQUES = (
    TechniqueTag.CONCATENATION,
    TechniqueTag.REORDERING,
    TechniqueTag.TICK,
    TechniqueTag.EVAL,
    TechniqueTag.UP_LOW_CASE,
    TechniqueTag.WHITE_SPACES,
)


@dataclass(frozen=True)
class LayerType:
    """Outer layer verdict: kind plus the encoding/compression variant when relevant."""

    kind: LayerKind
    encoding: EncodingKind | None = None
    compression: CompressionKind | None = None

    def __post_init__(self):
        if (self.encoding is not None) != (self.kind is LayerKind.ENCODED):
            raise ValueError("encoding is set iff kind is ENCODED")
        if (self.compression is not None) != (self.kind is LayerKind.COMPRESSED):
            raise ValueError("compression is set iff kind is COMPRESSED")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.encoding is not None:
            d["encoding"] = self.encoding.value
        if self.compression is not None:
            d["compression"] = self.compression.value
        return d


CLEAN = LayerType(LayerKind.CLEAN)
STRING_BASED = LayerType(LayerKind.STRING_BASED)
ENCODED_BASE64 = LayerType(LayerKind.ENCODED, encoding=EncodingKind.BASE64)
ENCODED_BINARY = LayerType(LayerKind.ENCODED, encoding=EncodingKind.BINARY)
COMPRESSED_DEFLATE = LayerType(LayerKind.COMPRESSED, compression=CompressionKind.DEFLATE)
COMPRESSED_GZIP = LayerType(LayerKind.COMPRESSED, compression=CompressionKind.GZIP)

# Detection precedence, most specific first.
_PRECEDENCE = {
    LayerKind.COMPRESSED: 0,
    LayerKind.ENCODED: 1,
    LayerKind.STRING_BASED: 2,
    LayerKind.CLEAN: 3,
}


@dataclass(frozen=True)
class LayerFinding:
    """detect_layer result: verdict, per-technique evidence spans, precedence rank."""

    layer: LayerType
    evidence: tuple = ()  # ((TechniqueTag, (start, end)), ...)
    confidence_rank: int = 0

    @staticmethod
    def of(layer: LayerType, evidence=()) -> "LayerFinding":
        return LayerFinding(layer, tuple(evidence), _PRECEDENCE[layer.kind])


def _sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ScriptText:
    """A script plus where it came from; content is always valid unicode."""

    content: str
    source_id: str = "<memory>"
    sha256: str = ""

    @staticmethod
    def from_text(content: str, source_id: str = "<memory>") -> "ScriptText":
        return ScriptText(content, source_id, _sha256_hex(content.encode("utf-8")))

    @staticmethod
    def from_bytes(data: bytes, source_id: str = "<memory>") -> "ScriptText":
        """Decode raw script bytes: BOM first, then an alternating-NUL UTF-16LE
        heuristic, else UTF-8 with replacement (cleanup strips the replacements)."""
        digest = _sha256_hex(data)
        if data.startswith(b"\xef\xbb\xbf"):
            text = data[3:].decode("utf-8", errors="replace")
        elif data.startswith(b"\xff\xfe"):
            text = data[2:].decode("utf-16-le", errors="replace")
        elif data.startswith(b"\xfe\xff"):
            text = data[2:].decode("utf-16-be", errors="replace")
        elif _looks_utf16le(data):
            text = data.decode("utf-16-le", errors="replace")
        else:
            text = data.decode("utf-8", errors="replace")
        return ScriptText(text, source_id, digest)

    def replace_content(self, content: str) -> "ScriptText":
        """New ScriptText for a derived stage; source identity is preserved."""
        return ScriptText(content, self.source_id, _sha256_hex(content.encode("utf-8")))


def _looks_utf16le(data: bytes) -> bool:
    # ASCII text encoded UTF-16LE has NUL at every odd offset.
    window = data[:256]
    if len(window) < 4:
        return False
    odd = window[1::2]
    return odd.count(0) >= 0.6 * len(odd)


class AntiDebugKind(Enum):
    SLEEP = "sleep"
    OUT_NULL = "out-null"
    INFINITE_LOOP = "infinite-loop"
    TRY_CATCH = "try-catch"


@dataclass(frozen=True)
class AntiDebugRemoval:
    kind: AntiDebugKind
    span: tuple  # (start, end) in the text the rule fired on
    replacement: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "span": list(self.span),
                "replacement": self.replacement}


class ActionKind(Enum):
    DOWNLOAD = "download"
    PROC_START = "proc-start"
    SHELL_EXEC = "shell-exec"
    PROC_KILL = "proc-kill"
    MEM_LOAD = "mem-load"
    VAR_MANIP = "var-manip"


@dataclass(frozen=True)
class ActionRecord:
    kind: ActionKind
    detail: str
    span: tuple = (0, 0)
    stage_index: int = 0

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "detail": self.detail,
                "span": list(self.span), "stage_index": self.stage_index}


class EnvUsage(Enum):
    PATH_BUILD = "path-build"
    PROCESS_ARG = "process-arg"
    OTHER = "other"


@dataclass(frozen=True)
class InterceptedEval:
    """An Invoke-Expression argument captured instead of executed.

    ``resolved`` carries the text the script would have run, when the
    emulator could compute it; None means the argument stayed opaque.
    """

    argument_text: str
    resolved: str | None
    span: tuple = (0, 0)

    def to_dict(self) -> dict:
        return {"argument_text": self.argument_text,
                "resolved": self.resolved, "span": list(self.span)}


class IocKind(Enum):
    URL = "url"
    DOMAIN = "domain"
    IP = "ip"
    FILE_PATH = "file-path"


@dataclass(frozen=True)
class Ioc:
    kind: IocKind
    raw: str
    defanged: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "raw": self.raw, "defanged": self.defanged}


class PatternKind(Enum):
    DOWN_EXEC = "down-exec"
    DOWN_SHELL = "down-shell"
    EXEC_SHELL = "exec-shell"
    EXEC_VAR = "exec-var"
    SHELL_KILL = "shell-kill"
    MEM_EXEC = "mem-exec"
    UNCLASSIFIED = "unclassified"


class ReportStatus(Enum):
    COMPLETE = "complete"
    ABORTED = "aborted"


@dataclass
class StageTrace:
    """One peeled layer: what was detected and what the peel produced."""

    stage_index: int
    layer: LayerType
    techniques: list[TechniqueTag]
    input_excerpt: str
    output_script: ScriptText
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage_index": self.stage_index,
            "layer": self.layer.to_dict(),
            "techniques": [t.value for t in self.techniques],
            "input_excerpt": self.input_excerpt,
            "output": self.output_script.content,
            "warnings": list(self.warnings),
        }


@dataclass
class AnalysisReport:
    source_id: str
    sha256: str
    stages: list[StageTrace] = field(default_factory=list)
    anti_debug_removed: list[AntiDebugRemoval] = field(default_factory=list)
    actions: list[ActionRecord] = field(default_factory=list)
    pattern: PatternKind = PatternKind.UNCLASSIFIED
    env_vars: list[tuple] = field(default_factory=list)  # (name, EnvUsage, count)
    iocs: list[Ioc] = field(default_factory=list)
    final_script: str = ""
    status: ReportStatus = ReportStatus.COMPLETE
    abort_reason: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "sha256": self.sha256,
            "status": self.status.value,
            "abort_reason": self.abort_reason,
            "stages": [s.to_dict() for s in self.stages],
            "anti_debug_removed": [r.to_dict() for r in self.anti_debug_removed],
            "actions": [a.to_dict() for a in self.actions],
            "pattern": self.pattern.value,
            "env_vars": [
                {"name": n, "usage": u.value, "count": c} for n, u, c in self.env_vars
            ],
            "iocs": [i.to_dict() for i in self.iocs],
            "final_script": self.final_script,
            "warnings": list(self.warnings),
        }
