"""String-level de-obfuscation: concat folding, -f reordering, tick removal,
call-operator unwrapping, and case/whitespace normalization.

Each transform is a pure function ScriptText -> ScriptText; the layer pass in
the pipeline iterates them to a fixed point. The find_* helpers report where a
technique is present and double as detector evidence.
"""

from __future__ import annotations

import re

from .cmdlets import canonical_case
from .model import ScriptText, TechniqueTag, Token, TokenKind
from .tokenizer import (
    double_quoted_value,
    embedded_variables,
    quote_single,
    render,
    single_quoted_value,
    skip_ws,
    split_statements,
    tokenize,
)

_WORDISH = (TokenKind.WORD, TokenKind.CMDLET_NAME, TokenKind.NUMBER)
_STRINGS = (TokenKind.STRING_SINGLE, TokenKind.STRING_DOUBLE)

# {k} placeholder (no format spec) and brace escapes
_PLACEHOLDER_RE = re.compile(r"\{(\d+)\}")
_ANY_BRACE_RE = re.compile(r"\{\{|\}\}|\{[^{}]*\}")

# a folded literal can stand in for a command name when it looks like one
_COMMAND_NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9]*(?:-[A-Za-z][A-Za-z0-9]*)?$")

# backtick escapes that must survive inside double-quoted strings
_DQ_JUNK_TICK_RE = re.compile(r"`(?![nrt0abfv`\"$])", re.IGNORECASE)


def _literal_value(tok: Token):
    """Plain string value of a literal token, or None when it is not static
    (double-quoted text with embedded $vars is left alone)."""
    if tok.kind == TokenKind.STRING_SINGLE:
        return single_quoted_value(tok.text)
    if tok.kind == TokenKind.STRING_DOUBLE and not embedded_variables(tok.text):
        return double_quoted_value(tok.text)
    return None


def _is_plus(tok: Token) -> bool:
    return tok.kind == TokenKind.OPERATOR and tok.text == "+"


# ---------------------------------------------------------------- concat

def _inlinable_variables(tokens) -> dict:
    """Vars assigned exactly once to a static literal chain and used only as
    concatenation operands -> {name: (value, assignment stmt index)}."""
    stmts = split_statements(tokens)
    assigns: dict = {}
    assign_counts: dict = {}
    for si, (lo, hi, _sep) in enumerate(stmts):
        body = [i for i in range(lo, hi)
                if tokens[i].kind not in (TokenKind.WHITESPACE, TokenKind.COMMENT)]
        if len(body) < 3:
            continue
        first, second = tokens[body[0]], tokens[body[1]]
        if first.kind != TokenKind.VARIABLE or ":" in first.text:
            continue
        if not (second.kind == TokenKind.OPERATOR and second.text == "="):
            continue
        name = first.text[1:]
        assign_counts[name] = assign_counts.get(name, 0) + 1
        value = _fold_chain_value(tokens, body[2:])
        if value is not None:
            assigns[name] = (value, si, body[0])

    # occurrences outside the assignment LHS
    assigned_at = {name: lhs for name, (_v, _si, lhs) in assigns.items()}
    uses: dict = {name: [] for name in assigns}
    dq_mentions = set()
    for i, tok in enumerate(tokens):
        if tok.kind == TokenKind.STRING_DOUBLE:
            dq_mentions.update(embedded_variables(tok.text))
        if tok.kind != TokenKind.VARIABLE or ":" in tok.text:
            continue
        name = tok.text[1:]
        if name in assigns and i != assigned_at.get(name):
            uses[name].append(i)

    ok = {}
    for name, (value, si, _lhs) in assigns.items():
        if assign_counts.get(name, 0) != 1 or name in dq_mentions or not uses[name]:
            continue
        if all(_in_concat_position(tokens, i) for i in uses[name]):
            ok[name] = (value, si, uses[name])
    return ok


def _fold_chain_value(tokens, indices):
    """Value of a `lit + lit + ...` token run, or None if anything else appears."""
    expect_literal = True
    parts = []
    for i in indices:
        tok = tokens[i]
        if expect_literal:
            v = _literal_value(tok)
            if v is None:
                return None
            parts.append(v)
        elif not _is_plus(tok):
            return None
        expect_literal = not expect_literal
    if expect_literal or not parts:  # trailing '+' or empty
        return None
    return "".join(parts)


def _in_concat_position(tokens, i: int) -> bool:
    left = skip_ws(tokens, i, -1)
    right = skip_ws(tokens, i, 1)
    return ((left >= 0 and _is_plus(tokens[left]))
            or (right >= 0 and _is_plus(tokens[right])))


def _fold_adjacent_literals(tokens) -> list:
    out = list(tokens)
    i = 0
    while i < len(out):
        v1 = _literal_value(out[i]) if out[i].kind in _STRINGS else None
        if v1 is None:
            i += 1
            continue
        j = skip_ws(out, i, 1)
        if j < 0 or not _is_plus(out[j]):
            i += 1
            continue
        k = skip_ws(out, j, 1)
        if k < 0 or out[k].kind not in _STRINGS:
            i += 1
            continue
        v2 = _literal_value(out[k])
        if v2 is None:
            i += 1
            continue
        merged = Token(TokenKind.STRING_SINGLE, quote_single(v1 + v2),
                       out[i].start, out[k].end)
        out[i:k + 1] = [merged]
        # stay at i: the chain may continue
    return out


def _drop_statements(tokens, stmt_slices) -> list:
    """Remove whole statements (body + terminator + one trailing space)."""
    dead = set()
    for lo, hi, sep in stmt_slices:
        dead.update(range(lo, hi))
        if sep is not None:
            dead.add(sep)
            if sep + 1 < len(tokens) and tokens[sep + 1].kind == TokenKind.WHITESPACE:
                dead.add(sep + 1)
    return [t for i, t in enumerate(tokens) if i not in dead]


def deobf_concat(script: ScriptText, warnings=None) -> ScriptText:
    """Fold literal '+' chains; inline-and-drop single-assignment literal vars
    that are only used in concatenations."""
    tokens = tokenize(script.content)
    inlinable = _inlinable_variables(tokens)
    if inlinable:
        stmts = split_statements(tokens)
        replaced = list(tokens)
        dead_stmts = []
        for name, (value, si, use_idxs) in inlinable.items():
            for i in use_idxs:
                old = replaced[i]
                replaced[i] = Token(TokenKind.STRING_SINGLE, quote_single(value),
                                    old.start, old.end)
            dead_stmts.append(stmts[si])
        tokens = _drop_statements(replaced, dead_stmts)
    tokens = _fold_adjacent_literals(tokens)
    text = render(tokens)
    return script if text == script.content else script.replace_content(text)


def find_concat(tokens) -> list:
    """Spans where literal folding or variable inlining would apply."""
    spans = []
    for i, tok in enumerate(tokens):
        if tok.kind not in _STRINGS or _literal_value(tok) is None:
            continue
        j = skip_ws(tokens, i, 1)
        if j < 0 or not _is_plus(tokens[j]):
            continue
        k = skip_ws(tokens, j, 1)
        if k >= 0 and tokens[k].kind in _STRINGS and _literal_value(tokens[k]) is not None:
            spans.append((tok.start, tokens[k].end))
    for name, (_v, _si, uses) in _inlinable_variables(tokens).items():
        for i in uses:
            spans.append((tokens[i].start, tokens[i].end))
    return spans


# ---------------------------------------------------------------- reorder

def _parse_format(fmt: str):
    """Placeholder indices of a {k}-style format string; None if malformed."""
    indices = []
    for m in _ANY_BRACE_RE.finditer(fmt):
        piece = m.group()
        if piece in ("{{", "}}"):
            continue
        pm = _PLACEHOLDER_RE.fullmatch(piece)
        if pm is None:
            return None
        indices.append(int(pm.group(1)))
    return indices


def _format_args(tokens, start: int):
    """Collect `lit, lit, ...` after a -f; returns (values, last_index) or None."""
    values = []
    i = skip_ws(tokens, start, 1)
    last = -1
    while i >= 0 and tokens[i].kind in _STRINGS:
        v = _literal_value(tokens[i])
        if v is None:
            return None
        values.append(v)
        last = i
        j = skip_ws(tokens, i, 1)
        if j < 0 or not (tokens[j].kind == TokenKind.OPERATOR and tokens[j].text == ","):
            break
        i = skip_ws(tokens, j, 1)
    if not values:
        return None
    return values, last


def deobf_reorder(script: ScriptText, warnings=None) -> ScriptText:
    """Fold `'{1}{0}' -f 'b','a'` format expressions into plain literals."""
    tokens = tokenize(script.content)
    out = list(tokens)
    i = 0
    changed = False
    while i < len(out):
        tok = out[i]
        if tok.kind not in _STRINGS:
            i += 1
            continue
        fmt = _literal_value(tok)
        if fmt is None or "{" not in fmt:
            i += 1
            continue
        j = skip_ws(out, i, 1)
        if j < 0 or out[j].kind != TokenKind.FORMAT_OPERATOR:
            i += 1
            continue
        indices = _parse_format(fmt)
        if indices is None:
            if warnings is not None:
                warnings.append(f"malformed format string left untouched: {tok.text}")
            i += 1
            continue
        if not indices:  # only brace escapes; not a reordering expression
            i += 1
            continue
        parsed = _format_args(out, j)
        if parsed is None:
            if warnings is not None:
                warnings.append(f"non-literal -f arguments left untouched: {tok.text}")
            i += 1
            continue
        values, last = parsed
        if indices and max(indices) >= len(values):
            if warnings is not None:
                warnings.append(f"format index out of range left untouched: {tok.text}")
            i += 1
            continue
        folded = _PLACEHOLDER_RE.sub(lambda m: values[int(m.group(1))], fmt)
        folded = folded.replace("{{", "{").replace("}}", "}")
        out[i:last + 1] = [Token(TokenKind.STRING_SINGLE, quote_single(folded),
                                 tok.start, out[last].end)]
        changed = True
        # re-scan the same position: the folded literal may feed another fold
    if not changed:
        return script
    return script.replace_content(render(out))


def find_reorder(tokens) -> list:
    """Spans of `{k}`-format literals directly followed by -f."""
    spans = []
    for i, tok in enumerate(tokens):
        if tok.kind not in _STRINGS:
            continue
        fmt = _literal_value(tok)
        if fmt is None or not _PLACEHOLDER_RE.search(fmt):
            continue
        j = skip_ws(tokens, i, 1)
        if j >= 0 and tokens[j].kind == TokenKind.FORMAT_OPERATOR:
            spans.append((tok.start, tokens[j].end))
    return spans


# ---------------------------------------------------------------- tick

def deobf_tick(script: ScriptText, warnings=None) -> ScriptText:
    """Drop bare-word backticks and junk escapes inside double-quoted strings;
    real escapes (`n `r `t `0 `a `b `f `v, plus `` ` `" `$) survive."""
    tokens = tokenize(script.content)
    out = []
    for i, tok in enumerate(tokens):
        if tok.kind == TokenKind.BACKTICK:
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if nxt is not None and nxt.kind != TokenKind.NEWLINE:
                continue  # obfuscation tick; line continuations stay
        if tok.kind == TokenKind.STRING_DOUBLE:
            body = _DQ_JUNK_TICK_RE.sub("", tok.text[1:-1])
            tok = Token(tok.kind, '"' + body + '"', tok.start, tok.end)
        out.append(tok)
    text = render(out)
    return script if text == script.content else script.replace_content(text)


def find_tick(tokens) -> list:
    """Spans of backtick tokens that are not line continuations."""
    spans = []
    for i, tok in enumerate(tokens):
        if tok.kind != TokenKind.BACKTICK:
            continue
        nxt = tokens[i + 1] if i + 1 < len(tokens) else None
        if nxt is not None and nxt.kind != TokenKind.NEWLINE:
            spans.append((tok.start, tok.end))
    return spans


# ---------------------------------------------------------------- eval

def _static_value(tokens):
    """Fold a whitespace-free token run that is a literal, a `+` chain, or a
    `fmt -f args` expression into its string value; None otherwise."""
    if not tokens:
        return None
    if len(tokens) == 1:
        return _literal_value(tokens[0])
    if any(t.kind == TokenKind.FORMAT_OPERATOR for t in tokens):
        at = next(n for n, t in enumerate(tokens)
                  if t.kind == TokenKind.FORMAT_OPERATOR)
        fmt = _static_value(tokens[:at])
        if fmt is None:
            return None
        indices = _parse_format(fmt)
        if indices is None:
            return None
        values = []
        expect_literal = True
        for t in tokens[at + 1:]:
            if expect_literal:
                v = _literal_value(t)
                if v is None:
                    return None
                values.append(v)
            elif not (t.kind == TokenKind.OPERATOR and t.text == ","):
                return None
            expect_literal = not expect_literal
        if expect_literal or not values or (indices and max(indices) >= len(values)):
            return None
        folded = _PLACEHOLDER_RE.sub(lambda m: values[int(m.group(1))], fmt)
        return folded.replace("{{", "{").replace("}}", "}")
    return _fold_chain_value(tokens, range(len(tokens)))


def _eval_span(tokens, i: int):
    """Match (&|.) ( <static string expr> ) starting at i; returns
    (value, last_index) or None."""
    j = skip_ws(tokens, i, 1)
    if j < 0 or tokens[j].kind != TokenKind.LPAREN:
        return None
    k = skip_ws(tokens, j, 1)
    inner = []
    while 0 <= k < len(tokens) and tokens[k].kind != TokenKind.RPAREN:
        if tokens[k].kind not in (*_STRINGS, TokenKind.OPERATOR,
                                  TokenKind.FORMAT_OPERATOR, TokenKind.WHITESPACE):
            return None
        if tokens[k].kind != TokenKind.WHITESPACE:
            inner.append(tokens[k])
        k += 1
    if k < 0 or k >= len(tokens) or not inner:
        return None
    value = _static_value(inner)
    if value is None:
        return None
    return value, k


def deobf_eval(script: ScriptText, warnings=None) -> ScriptText:
    """Unwrap `&('Name')` / `.('Name')` to the bare command word."""
    tokens = tokenize(script.content)
    out = list(tokens)
    i = 0
    changed = False
    while i < len(out):
        tok = out[i]
        if tok.kind in (TokenKind.CALL_OPERATOR, TokenKind.DOT_SOURCE):
            hit = _eval_span(out, i)
            if hit is not None:
                value, last = hit
                if _COMMAND_NAME_RE.match(value):
                    kind = (TokenKind.CMDLET_NAME if "-" in value else TokenKind.WORD)
                    out[i:last + 1] = [Token(kind, value, tok.start, out[last].end)]
                    changed = True
                    continue
        i += 1
    if not changed:
        return script
    return script.replace_content(render(out))


def find_eval(tokens) -> list:
    """Spans of call/dot-source operators applied to static string expressions."""
    spans = []
    for i, tok in enumerate(tokens):
        if tok.kind not in (TokenKind.CALL_OPERATOR, TokenKind.DOT_SOURCE):
            continue
        hit = _eval_span(tokens, i)
        if hit is not None and _COMMAND_NAME_RE.match(hit[0]):
            spans.append((tok.start, tokens[hit[1]].end))
    return spans


# ---------------------------------------------------- case / whitespace

def normalize_case_ws(script: ScriptText, warnings=None) -> ScriptText:
    """Canonical cmdlet casing; horizontal whitespace runs collapse to one
    space outside string literals."""
    tokens = tokenize(script.content)
    out = []
    for tok in tokens:
        if tok.kind == TokenKind.WHITESPACE and tok.text != " ":
            tok = Token(tok.kind, " ", tok.start, tok.end)
        elif tok.kind in (TokenKind.WORD, TokenKind.CMDLET_NAME):
            canon = canonical_case(tok.text)
            if canon is not None and canon != tok.text:
                tok = Token(tok.kind, canon, tok.start, tok.end)
        out.append(tok)
    text = render(out)
    return script if text == script.content else script.replace_content(text)


def find_uplow(tokens) -> list:
    """Spans of cmdlet words whose casing deviates from the canonical table."""
    spans = []
    for tok in tokens:
        if tok.kind in (TokenKind.WORD, TokenKind.CMDLET_NAME):
            canon = canonical_case(tok.text)
            if canon is not None and canon != tok.text:
                spans.append((tok.start, tok.end))
    return spans


def find_whitespace(tokens) -> list:
    """Spans of >=3-space runs between tokens on one line."""
    spans = []
    for i, tok in enumerate(tokens):
        if tok.kind != TokenKind.WHITESPACE or "   " not in tok.text:
            continue
        prev = tokens[i - 1] if i > 0 else None
        nxt = tokens[i + 1] if i + 1 < len(tokens) else None
        if prev is None or nxt is None:
            continue
        if prev.kind == TokenKind.NEWLINE or nxt.kind == TokenKind.NEWLINE:
            continue
        spans.append((tok.start, tok.end))
    return spans


# ---------------------------------------------------------------- driver

_PASS = (deobf_concat, deobf_reorder, deobf_tick, deobf_eval, normalize_case_ws)


def apply_string_pass(script: ScriptText, warnings=None) -> ScriptText:
    """Run all five transforms to a fixed point (bounded; each pass shrinks
    or normalizes, so a handful of rounds always suffices)."""
    current = script
    for _ in range(16):
        before = current.content
        for fn in _PASS:
            current = fn(current, warnings)
        if current.content == before:
            break
    return current


FINDERS = {
    TechniqueTag.CONCATENATION: find_concat,
    TechniqueTag.REORDERING: find_reorder,
    TechniqueTag.TICK: find_tick,
    TechniqueTag.EVAL: find_eval,
    TechniqueTag.UP_LOW_CASE: find_uplow,
    TechniqueTag.WHITE_SPACES: find_whitespace,
}
