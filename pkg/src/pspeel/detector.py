"""Outer-layer classification: compression and encoding markers first, then
string-technique evidence, else clean. Precedence is fixed:
Compressed > Encoded > StringBased > Clean.
"""

from __future__ import annotations

import re

from .model import (
    COMPRESSED_DEFLATE,
    COMPRESSED_GZIP,
    CLEAN,
    ENCODED_BASE64,
    ENCODED_BINARY,
    STRING_BASED,
    LayerFinding,
    ScriptText,
    TechniqueTag,
)
from .stringdeobf import FINDERS
from .tokenizer import tokenize

__all__ = ["detect_layer", "detect_string_techniques", "find_base64_blob"]

_DEFLATE_RE = re.compile(r"compression\.deflatestream", re.IGNORECASE)
_GZIP_RE = re.compile(r"compression\.gzipstream", re.IGNORECASE)
_FROMB64_RE = re.compile(r"frombase64string", re.IGNORECASE)

# -EncodedCommand and its short forms, followed by a blob
_ENC_FLAG_RE = re.compile(
    r"-(?:encodedcommand|enc|ec|e)\s+([A-Za-z0-9+/]{16,}={0,2})", re.IGNORECASE)

# argument of a FromBase64String call
_FROMB64_ARG_RE = re.compile(
    r"frombase64string\s*\(\s*['\"]([A-Za-z0-9+/]+={0,2})['\"]\s*\)", re.IGNORECASE)

# an embedded blob needs 40 chars to avoid hitting ordinary identifiers;
# a whole-script blob only needs 16
_EMBEDDED_BLOB_RE = re.compile(
    r"(?<![A-Za-z0-9+/=])[A-Za-z0-9+/]{40,}={0,2}(?![A-Za-z0-9+/=])")
_WHOLE_BLOB_RE = re.compile(r"^[A-Za-z0-9+/]{16,}={0,2}$")

# >=16 groups of exactly 8 bits, separated by whitespace and/or commas
_BINARY_RE = re.compile(r"(?<![01])[01]{8}(?:[\s,]*[01]{8}){15,}(?![01])")


def _b64_len_ok(blob: str) -> bool:
    return len(blob) % 4 == 0


def find_base64_blob(text: str):
    """Locate the Base64 payload: (blob, context, span) or None.
    context is one of 'flag', 'call', 'bare'."""
    m = _ENC_FLAG_RE.search(text)
    if m and _b64_len_ok(m.group(1)):
        return m.group(1), "flag", m.span(1)
    m = _FROMB64_ARG_RE.search(text)
    if m and _b64_len_ok(m.group(1)):
        return m.group(1), "call", m.span(1)
    stripped = text.strip()
    if _WHOLE_BLOB_RE.match(stripped) and _b64_len_ok(stripped):
        start = text.index(stripped)
        return stripped, "bare", (start, start + len(stripped))
    for m in _EMBEDDED_BLOB_RE.finditer(text):
        if _b64_len_ok(m.group()):
            return m.group(), "bare", m.span()
    return None


def detect_string_techniques(script: ScriptText) -> list:
    """Evidence list [(TechniqueTag, (start, end)), ...] for string-level
    techniques present in the script."""
    tokens = tokenize(script.content)
    evidence = []
    for tag, finder in FINDERS.items():
        for span in finder(tokens):
            evidence.append((tag, span))
    return evidence


def detect_layer(script: ScriptText) -> LayerFinding:
    """Classify the outermost obfuscation layer of a script."""
    text = script.content
    if _FROMB64_RE.search(text):
        m = _DEFLATE_RE.search(text)
        if m:
            return LayerFinding.of(
                COMPRESSED_DEFLATE,
                [(TechniqueTag.DEFLATE_COMPRESSION, m.span())])
        m = _GZIP_RE.search(text)
        if m:
            return LayerFinding.of(
                COMPRESSED_GZIP,
                [(TechniqueTag.GZIP_COMPRESSION, m.span())])
    m = _BINARY_RE.search(text)
    if m:
        return LayerFinding.of(
            ENCODED_BINARY, [(TechniqueTag.BINARY_ENCODING, m.span())])
    found = find_base64_blob(text)
    if found is not None:
        _blob, _context, span = found
        return LayerFinding.of(
            ENCODED_BASE64, [(TechniqueTag.BASE64_ENCODING, span)])
    evidence = detect_string_techniques(script)
    if evidence:
        return LayerFinding.of(STRING_BASED, evidence)
    return LayerFinding.of(CLEAN)
