"""Lossless tokenizer for the PowerShell subset the pipeline rewrites.

Joining token texts always reproduces the input byte-for-byte; anything the
grammar does not know degrades to Word tokens instead of failing.
"""

from __future__ import annotations

import re

from .model import Token, TokenKind

__all__ = ["tokenize", "UnterminatedStringError", "is_cmdlet_shaped",
           "single_quoted_value", "double_quoted_value", "quote_single",
           "embedded_variables", "render", "split_statements", "skip_ws"]


class UnterminatedStringError(ValueError):
    """A quoted literal never closes; .offset is where it opened."""

    def __init__(self, offset: int):
        super().__init__(f"unterminated string literal at offset {offset}")
        self.offset = offset


# Verb-Noun shape, e.g. Start-Process / nEW-oBjECt.
_CMDLET_SHAPE = re.compile(r"^[A-Za-z]+-[A-Za-z][A-Za-z0-9]*$")

# One alternation, tried left to right; longest/most specific prefixes first.
_TOKEN_RE = re.compile(
    r"""
    (?P<newline>\r\n|\r|\n)
  | (?P<ws>[ \t]+)
  | (?P<blockcomment><\#.*?\#>|<\#.*)
  | (?P<comment>\#[^\r\n]*)
  | (?P<sq>'(?:''|[^'])*')
  | (?P<sq_open>'(?:''|[^'])*)
  | (?P<dq>"(?:`.|""|[^`"])*")
  | (?P<dq_open>"(?:`.|""|[^`"])*)
  | (?P<variable>\$\{[^}]*\}
      | \$(?:env|global|script|local|private|using|variable):[A-Za-z_][A-Za-z0-9_]*
      | \$[A-Za-z0-9_]+
      | \$[_$^?])
  | (?P<backtick>`)
  | (?P<number>0[xX][0-9A-Fa-f]+|\d+(?:\.\d+)?|\.\d+)
  | (?P<dashword>-[A-Za-z][A-Za-z0-9]*)
  | (?P<dashnumber>-\d+(?:\.\d+)?)
  | (?P<word>[A-Za-z_](?:[A-Za-z0-9_]|\.(?=[A-Za-z0-9_])|-(?=[A-Za-z]))*)
  | (?P<methodcall>\.[A-Za-z_][A-Za-z0-9_]*)
  | (?P<dotsource>\.)
  | (?P<coloncolon>::)
  | (?P<punct>[()\{\};|&])
  | (?P<operator>[\[\]+,=*/%@<>!:~?^.$-])
  | (?P<other>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_PUNCT_KINDS = {
    "(": TokenKind.LPAREN,
    ")": TokenKind.RPAREN,
    "{": TokenKind.LBRACE,
    "}": TokenKind.RBRACE,
    ";": TokenKind.SEMICOLON,
    "|": TokenKind.PIPE,
    "&": TokenKind.CALL_OPERATOR,
}


def is_cmdlet_shaped(text: str) -> bool:
    return bool(_CMDLET_SHAPE.match(text))


def tokenize(script: str) -> list[Token]:
    """Split a script into Tokens; raises UnterminatedStringError on an open quote."""
    tokens: list[Token] = []
    pos = 0
    n = len(script)
    while pos < n:
        m = _TOKEN_RE.match(script, pos)
        # The alternation ends in a catch-all, so a match is guaranteed.
        group = m.lastgroup
        text = m.group()
        end = m.end()
        if group in ("sq_open", "dq_open"):
            raise UnterminatedStringError(pos)
        kind = _classify(group, text)
        tokens.append(Token(kind, text, pos, end))
        pos = end
    return tokens


def _classify(group: str, text: str) -> TokenKind:
    if group == "newline":
        return TokenKind.NEWLINE
    if group == "ws":
        return TokenKind.WHITESPACE
    if group in ("comment", "blockcomment"):
        return TokenKind.COMMENT
    if group == "sq":
        return TokenKind.STRING_SINGLE
    if group == "dq":
        return TokenKind.STRING_DOUBLE
    if group == "variable":
        return TokenKind.VARIABLE
    if group == "backtick":
        return TokenKind.BACKTICK
    if group in ("number", "dashnumber"):
        return TokenKind.NUMBER
    if group == "dashword":
        return TokenKind.FORMAT_OPERATOR if text.lower() == "-f" else TokenKind.WORD
    if group == "word":
        return TokenKind.CMDLET_NAME if is_cmdlet_shaped(text) else TokenKind.WORD
    if group == "methodcall":
        return TokenKind.METHOD_CALL
    if group == "dotsource":
        return TokenKind.DOT_SOURCE
    if group == "coloncolon":
        return TokenKind.OPERATOR
    if group == "punct":
        return _PUNCT_KINDS[text]
    if group == "operator":
        return TokenKind.OPERATOR
    return TokenKind.WORD  # anything unknown degrades to Word


def single_quoted_value(text: str) -> str:
    """Value of a single-quoted literal token ('' is the only escape)."""
    return text[1:-1].replace("''", "'")


# Real backtick escapes inside double-quoted strings.
_DQ_ESCAPES = {
    "n": "\n", "r": "\r", "t": "\t", "0": "\0",
    "a": "\a", "b": "\b", "f": "\f", "v": "\v",
    "`": "`", '"': '"', "$": "$",
}


def double_quoted_value(text: str, env: dict | None = None) -> str:
    """Value of a double-quoted literal: backtick escapes applied, `$var`
    interpolated from `env` ($env:NAME falls back to a %NAME% placeholder)."""
    body = text[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "`" and i + 1 < len(body):
            nxt = body[i + 1]
            out.append(_DQ_ESCAPES.get(nxt, nxt))
            i += 2
        elif ch == '"' and i + 1 < len(body) and body[i + 1] == '"':
            out.append('"')
            i += 2
        elif ch == "$":
            m = re.match(r"\$env:([A-Za-z_][A-Za-z0-9_]*)", body[i:])
            if m:
                name = m.group(1)
                if env is not None and ("env:" + name) in env:
                    out.append(str(env["env:" + name]))
                else:
                    out.append(f"%{name.upper()}%")
                i += m.end()
                continue
            m = re.match(r"\$([A-Za-z0-9_]+)", body[i:])
            if m and env is not None and m.group(1) in env:
                out.append(str(env[m.group(1)]))
                i += m.end()
                continue
            out.append(ch)
            i += 1
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def embedded_variables(text: str) -> list[str]:
    """Names of $vars referenced inside a double-quoted literal's text."""
    body = text[1:-1]
    # A backtick escapes the following char, so `` `$ `` is not a reference.
    body = re.sub(r"`.", "", body, flags=re.DOTALL)
    return re.findall(r"\$(?:env:)?([A-Za-z_][A-Za-z0-9_]*)", body)


def quote_single(value: str) -> str:
    """Render a value as a single-quoted literal."""
    return "'" + value.replace("'", "''") + "'"


def render(tokens) -> str:
    """Rebuild source text from a token stream."""
    return "".join(t.text for t in tokens)


_TRIVIA = (TokenKind.WHITESPACE, TokenKind.COMMENT, TokenKind.NEWLINE,
           TokenKind.SEMICOLON)


def split_statements(tokens) -> list:
    """Top-level statement slices as (lo, hi, sep): tokens[lo:hi] is the body,
    sep the index of its ';'/newline terminator (None at end of input)."""
    out = []
    depth = 0
    lo = 0

    def flush(hi, sep):
        if any(t.kind not in _TRIVIA for t in tokens[lo:hi]):
            out.append((lo, hi, sep))

    for i, tok in enumerate(tokens):
        if tok.kind in (TokenKind.LPAREN, TokenKind.LBRACE):
            depth += 1
        elif tok.kind in (TokenKind.RPAREN, TokenKind.RBRACE):
            depth = max(0, depth - 1)
        elif depth == 0 and tok.kind in (TokenKind.SEMICOLON, TokenKind.NEWLINE):
            flush(i, i)
            lo = i + 1
    flush(len(tokens), None)
    return out


def skip_ws(tokens, i: int, step: int = 1) -> int:
    """Index of the next non-whitespace token from i (exclusive); -1 if none."""
    i += step
    while 0 <= i < len(tokens):
        if tokens[i].kind != TokenKind.WHITESPACE:
            return i
        i += step
    return -1
