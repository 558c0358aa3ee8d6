"""Payload decoding: Base64 blobs, 8-bit binary groups, and
raw-deflate/gzip streams, all at the byte level, plus the single
bytes-to-script-text step with its UTF-16LE heuristics. Payloads that
are not text ride along on the exception so callers can store them."""

from __future__ import annotations

import base64
import binascii
import codecs
import gzip as _gzip
import hashlib
import re
import zlib
from pathlib import Path

from .model import CompressionKind

__all__ = ["decode_base64", "decode_binary", "decompress", "bytes_to_text",
           "InvalidBase64Error", "UndecodableBytesError", "MalformedGroupError",
           "CorruptStreamError", "store_payload"]


class InvalidBase64Error(ValueError):
    """Blob fails the Base64 shape (alphabet / length / padding)."""


class UndecodableBytesError(ValueError):
    """Decoded bytes are not script text; .payload carries them."""

    def __init__(self, payload: bytes, why: str = "payload is not text"):
        super().__init__(why)
        self.payload = payload


class MalformedGroupError(ValueError):
    """A binary group is not exactly 8 bits of [01]."""


class CorruptStreamError(ValueError):
    """Compressed payload does not inflate."""


_B64_SHAPE_RE = re.compile(r"^[A-Za-z0-9+/]+={0,2}$")
_PRINTABLE_EXTRA = "\t\n\r "


def _printable_ratio(text: str) -> float:
    # Printable ASCII only: a payload that decodes to ideograph soup is a
    # codec accident, not a script.
    if not text:
        return 0.0
    good = sum(1 for ch in text if " " <= ch <= "~" or ch in _PRINTABLE_EXTRA)
    return good / len(text)


def _alternating_nul(raw: bytes) -> bool:
    window = raw[:256]
    if len(window) < 4:
        return False
    odd = window[1::2]
    return odd.count(0) >= 0.6 * len(odd)


def bytes_to_text(raw: bytes, utf16_first: bool = False) -> str:
    """Decode payload bytes to script text; UndecodableBytesError when the
    result would contain NUL or fall under the 90% printable threshold.

    -EncodedCommand payloads are UTF-16LE by convention, so callers that
    know the blob came from that flag pass utf16_first=True; otherwise a
    NUL-in-odd-positions sniff decides which codec to try first.
    """
    if raw.startswith(codecs.BOM_UTF16_LE):
        candidates = ["utf-16-le"]
        raw = raw[len(codecs.BOM_UTF16_LE):]
    elif raw.startswith(codecs.BOM_UTF16_BE):
        candidates = ["utf-16-be"]
        raw = raw[len(codecs.BOM_UTF16_BE):]
    elif raw.startswith(codecs.BOM_UTF8):
        candidates = ["utf-8"]
        raw = raw[len(codecs.BOM_UTF8):]
    elif utf16_first or _alternating_nul(raw):
        candidates = ["utf-16-le", "utf-8"]
    else:
        candidates = ["utf-8", "utf-16-le"]
    for enc in candidates:
        try:
            text = raw.decode(enc)
        except (UnicodeDecodeError, ValueError):
            continue
        if "\x00" in text:
            continue
        if _printable_ratio(text) >= 0.9:
            return text
    raise UndecodableBytesError(raw)


def decode_base64(blob: str) -> bytes:
    """Base64 blob -> raw bytes, with strict shape validation."""
    blob = blob.strip()
    if not _B64_SHAPE_RE.match(blob) or len(blob) % 4 != 0:
        raise InvalidBase64Error(f"not a base64 blob: {blob[:32]!r}...")
    try:
        return base64.b64decode(blob, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise InvalidBase64Error(str(exc)) from exc


_GROUP_SPLIT_RE = re.compile(r"[\s,]+")


def decode_binary(blob: str) -> bytes:
    """Whitespace/comma separated 8-bit groups -> raw bytes."""
    groups = [g for g in _GROUP_SPLIT_RE.split(blob.strip()) if g]
    if not groups:
        raise MalformedGroupError("no binary groups found")
    data = bytearray()
    for g in groups:
        if len(g) != 8 or any(c not in "01" for c in g):
            raise MalformedGroupError(f"bad group {g!r}")
        data.append(int(g, 2))
    return bytes(data)


def decompress(payload: bytes, kind: CompressionKind) -> bytes:
    """Inflate a raw-deflate or gzip payload."""
    if kind is CompressionKind.DEFLATE:
        try:
            return zlib.decompress(payload, -zlib.MAX_WBITS)
        except zlib.error:
            try:
                return zlib.decompress(payload)  # tolerate a zlib header
            except zlib.error as exc:
                raise CorruptStreamError(str(exc)) from exc
    try:
        return _gzip.decompress(payload)
    except (OSError, EOFError, zlib.error) as exc:
        raise CorruptStreamError(str(exc)) from exc


def store_payload(payload: bytes, artifacts_dir, input_sha256: str) -> str:
    """Write a dropped payload to artifacts/<input-sha256>/<payload-sha256>.bin;
    returns the file path as a string."""
    digest = hashlib.sha256(payload).hexdigest()
    out_dir = Path(artifacts_dir) / input_sha256
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{digest}.bin"
    out_path.write_bytes(payload)
    return str(out_path)
