"""Behavior extraction by interpretation.

The emulator walks the final de-obfuscated script statement by statement and
records what the script *would* do — downloads, process launches, shell and
registry activity, in-memory loads — without ever running PowerShell, touching
the filesystem outside the caller's artifact store, or (by default) the
network. Expressions are evaluated against a small whitelist; anything the
whitelist cannot prove becomes an unresolved value rather than a guess.

Downloads are records, not requests: under the default record-only policy the
fetch client is never invoked. An explicit fetch policy plus client enables
retrieving remote bodies so intercepted Invoke-Expression arguments can be
resolved, with per-URL failures downgraded to warnings.
"""

from __future__ import annotations

import re
import urllib.request
from dataclasses import dataclass, field
from enum import Enum

from .model import ActionKind, ActionRecord, EnvUsage, InterceptedEval
from .tokenizer import (
    TokenKind,
    double_quoted_value,
    single_quoted_value,
    skip_ws,
    split_statements,
    tokenize,
)

__all__ = [
    "FetchPolicy", "EmulationBudgetError", "EmulationResult", "RemoteContent",
    "UNRESOLVED", "HttpClient", "emulate",
]

STEP_BUDGET = 10_000


class EmulationBudgetError(RuntimeError):
    """Interpretation exceeded the step budget (runaway or decompression bomb)."""


class FetchPolicy(Enum):
    RECORD_ONLY = "record-only"
    FETCH_VIA_CLIENT = "fetch-via-client"


class _Unresolved:
    """Marker for values the whitelist evaluator cannot prove."""

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return "<unresolved>"


UNRESOLVED = _Unresolved()


@dataclass(frozen=True)
class RemoteContent:
    """Value standing in for a fetched response body."""

    url: str
    text: str | None = None  # populated only when a fetch policy allows it


class _WebClient:
    """Sentinel for New-Object Net.WebClient instances."""


@dataclass
class EmulationResult:
    actions: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    env_usages: list = field(default_factory=list)  # (name, EnvUsage) events
    dropped_files: list = field(default_factory=list)
    fetched_payloads: list = field(default_factory=list)  # (url, bytes)
    warnings: list = field(default_factory=list)


class HttpClient:
    """Minimal fetcher used only under FETCH_VIA_CLIENT."""

    def __init__(self, timeout: float = 10.0, max_bytes: int = 1 << 20):
        self.timeout = timeout
        self.max_bytes = max_bytes

    def fetch(self, url: str) -> bytes:
        with urllib.request.urlopen(url, timeout=self.timeout) as resp:
            return resp.read(self.max_bytes)


_MEMLOAD_RE = re.compile(
    r"reflection\.assembly.*?::load|virtualalloc|invoke-shellcode",
    re.IGNORECASE | re.DOTALL)
_REGISTRY_PATH_RE = re.compile(r"hklm:|hkcu:|hkey_|registry::", re.IGNORECASE)
_ENV_REF_RE = re.compile(r"\$env:([A-Za-z_][A-Za-z0-9_]*)", re.IGNORECASE)
_LOCAL_REF_RE = re.compile(r"\$([A-Za-z_][A-Za-z0-9_]*)")

# Statement-level commands: how the first bare word routes.
_EVAL_COMMANDS = {"iex", "invoke-expression"}
_PROC_START_COMMANDS = {"start-process", "invoke-item", "saps"}
_DOWNLOAD_COMMANDS = {"invoke-webrequest", "iwr", "wget", "curl",
                      "invoke-restmethod", "irm"}
_SHELL_COMMANDS = {"cmd", "cmd.exe"}
_PROC_KILL_COMMANDS = {"stop-process", "taskkill", "spps", "kill"}
_REGISTRY_COMMANDS = {"set-itemproperty", "new-itemproperty", "sp",
                      "new-item", "set-item"}
_BENIGN_COMMANDS = {"write-output", "write-host", "echo", "exit", "return",
                    "set-executionpolicy", "out-null", "start-sleep", "sleep",
                    "new-object", "set-location", "cd", "pushd", "popd",
                    "set-variable", "clear-host", "cls"}

# Parameter names whose value is the command's real target.
_TARGET_PARAMS = {"-filepath", "-name", "-path", "-uri", "-id",
                  "-argumentlist", "-outfile", "-literalpath"}

_WORDISH = (TokenKind.WORD, TokenKind.CMDLET_NAME)


def _basename(path: str) -> str:
    return re.split(r"[\\/]", path)[-1] or path


class _Emulator:
    def __init__(self, policy: FetchPolicy, client, stage_index: int):
        self.policy = policy
        self.client = client
        self.stage_index = stage_index
        self.result = EmulationResult()
        self.variables: dict = {}
        self.steps = 0

    # ------------------------------------------------------------ plumbing

    def _tick(self) -> None:
        self.steps += 1
        if self.steps > STEP_BUDGET:
            raise EmulationBudgetError(
                f"step budget of {STEP_BUDGET} exceeded")

    def _act(self, kind: ActionKind, detail: str, span) -> None:
        self.result.actions.append(
            ActionRecord(kind=kind, detail=detail, span=span,
                         stage_index=self.stage_index))

    def _warn(self, message: str) -> None:
        if message not in self.result.warnings:
            self.result.warnings.append(message)

    def _fetch(self, url: str):
        """Returns response bytes, or None when recording only / on error."""
        if self.policy is not FetchPolicy.FETCH_VIA_CLIENT or self.client is None:
            return None
        try:
            return self.client.fetch(url)
        except Exception as exc:  # noqa: BLE001 - any client failure is soft
            self._warn(f"fetch failed for {url}: {exc}")
            return None

    # ------------------------------------------------------------ evaluator
    #
    # Grammar, loosest to tightest binding:
    #   expression := ['-join'] array { ('-f' | '-join') array }
    #   array      := additive { ',' additive }
    #   additive   := postfix { '+' postfix }
    #   postfix    := primary { '.Method(args)' | '[' indexes ']' }
    #   primary    := string | number | variable | '(' expression ')'
    #                | '[type]' primary | command-expression

    def eval_slice(self, tokens, lo, hi, span):
        self._tick()
        parser = _ExprParser(self, tokens, lo, hi, span)
        try:
            return parser.parse()
        except _EvalPunt as punt:
            self._warn(f"expression not emulated: {punt}")
            return UNRESOLVED

    def read_env(self, name: str) -> str:
        self.result.env_usages.append((name.upper(), None))  # classified later
        return f"%{name.upper()}%"

    def interpolate(self, literal_text: str):
        """Value of a double-quoted literal under the current variables."""
        body = re.sub(r"`.", "", literal_text[1:-1], flags=re.DOTALL)
        env_names = _ENV_REF_RE.findall(body)
        stripped = _ENV_REF_RE.sub("", body)
        local_names = _LOCAL_REF_RE.findall(stripped)
        mapping = {}
        for name in local_names:
            value = self.variables.get(name.lower(), UNRESOLVED)
            if not isinstance(value, str):
                return UNRESOLVED
            mapping[name] = value
        for name in env_names:
            self.read_env(name)
        return double_quoted_value(literal_text, env=mapping)

    # --------------------------------------------------------- side effects

    def download_string(self, url, span):
        detail = url if isinstance(url, str) else "<unresolved url>"
        self._act(ActionKind.DOWNLOAD, detail, span)
        if not isinstance(url, str):
            return UNRESOLVED
        data = self._fetch(url)
        text = None
        if data is not None:
            try:
                text = data.decode("utf-8", errors="strict")
            except UnicodeDecodeError:
                self._warn(f"fetched body from {url} is not text")
        return RemoteContent(url, text)

    def download_file(self, tokens, argslices, span):
        # The download event comes first; building the destination path is
        # its own, later event (it may read environment variables).
        url = self.eval_slice(tokens, *argslices[0], span) if argslices else UNRESOLVED
        detail = url if isinstance(url, str) else "<unresolved url>"
        self._act(ActionKind.DOWNLOAD, detail, span)
        dest = None
        if len(argslices) > 1:
            dest = self.eval_classified(tokens, *argslices[1], span=span)
            if isinstance(dest, str):
                self.result.dropped_files.append(dest)
        if isinstance(url, str):
            data = self._fetch(url)
            if data is not None:
                self.result.fetched_payloads.append((url, data))
        return ""

    def eval_classified(self, tokens, lo, hi, span, context=None):
        """Evaluate and classify any env reads the expression performed.

        Only reads still pending classification are touched, so a nested
        call (say, the destination argument inside DownloadFile) keeps the
        more specific label it already assigned.
        """
        before = len(self.result.env_usages)
        value = self.eval_slice(tokens, lo, hi, span)
        pending = [i for i in range(before, len(self.result.env_usages))
                   if self.result.env_usages[i][1] is None]
        if not pending:
            return value
        if context is EnvUsage.PROCESS_ARG:
            usage = EnvUsage.PROCESS_ARG
        elif isinstance(value, str) and ("\\" in value or "/" in value):
            usage = EnvUsage.PATH_BUILD
        else:
            usage = EnvUsage.OTHER
        for i in pending:
            self.result.env_usages[i] = (self.result.env_usages[i][0], usage)
        if usage is EnvUsage.PATH_BUILD:
            names = sorted({self.result.env_usages[i][0] for i in pending})
            self._act(ActionKind.VAR_MANIP, ",".join(names), span)
        return value

    # ------------------------------------------------------------ dispatch

    def run(self, script_text: str) -> EmulationResult:
        tokens = tokenize(script_text)
        for lo, hi, _sep in split_statements(tokens):
            self._tick()
            segments = self._split_pipes(tokens, lo, hi)
            piped_value = None
            for seg_lo, seg_hi in segments:
                piped_value = self.statement(tokens, seg_lo, seg_hi,
                                             piped_value)
        self.result.env_usages = [
            (name, usage if usage is not None else EnvUsage.OTHER)
            for name, usage in self.result.env_usages]
        return self.result

    @staticmethod
    def _split_pipes(tokens, lo, hi):
        segments = []
        depth = 0
        start = lo
        for i in range(lo, hi):
            kind = tokens[i].kind
            if kind in (TokenKind.LPAREN, TokenKind.LBRACE):
                depth += 1
            elif kind in (TokenKind.RPAREN, TokenKind.RBRACE):
                depth -= 1
            elif kind is TokenKind.PIPE and depth == 0:
                segments.append((start, i))
                start = i + 1
        segments.append((start, hi))
        return segments

    def _statement_span(self, tokens, lo, hi):
        toks = [t for t in tokens[lo:hi] if t.kind is not TokenKind.WHITESPACE]
        if not toks:
            return (0, 0)
        return (toks[0].start, toks[-1].end)

    def statement(self, tokens, lo, hi, piped_value=None):
        head = skip_ws(tokens, lo - 1)
        if head < 0 or head >= hi:
            return None
        span = self._statement_span(tokens, lo, hi)
        text = "".join(t.text for t in tokens[lo:hi])
        first = tokens[head]

        actions_before = len(self.result.actions)
        if first.kind is TokenKind.VARIABLE:
            value = self._assignment(tokens, head, hi, span)
        elif first.kind in _WORDISH:
            value = self._command(tokens, head, hi, span, first, piped_value)
        else:
            # Bare expression statement: evaluate for its side effects.
            value = self.eval_classified(tokens, head, hi, span)

        # The textual net: statements that *mention* in-memory loading
        # machinery count as MemLoad even when the whitelist punted.
        if _MEMLOAD_RE.search(text) and not any(
                a.kind is ActionKind.MEM_LOAD
                for a in self.result.actions[actions_before:]):
            self._act(ActionKind.MEM_LOAD, text.strip()[:120], span)
        return value

    def _assignment(self, tokens, head, hi, span):
        eq = skip_ws(tokens, head)
        if eq < 0 or eq >= hi or tokens[eq].text != "=":
            # Not an assignment after all (e.g. `$x | ...` segment or `$x++`).
            return self.eval_classified(tokens, head, hi, span)
        name = tokens[head].text
        rhs_lo = eq + 1
        match = re.fullmatch(r"\$env:([A-Za-z_][A-Za-z0-9_]*)", name,
                             re.IGNORECASE)
        if match:
            value = self.eval_slice(tokens, rhs_lo, hi, span)
            shown = value if isinstance(value, str) else "<unresolved>"
            self._act(ActionKind.VAR_MANIP,
                      f"{match.group(1).upper()}={shown}", span)
            return None
        plain = re.fullmatch(r"\$(?:(?:global|script|local|private):)?"
                             r"([A-Za-z0-9_]+)", name, re.IGNORECASE)
        if not plain:
            self._warn(f"assignment to {name} not emulated")
            return None
        value = self.eval_classified(tokens, rhs_lo, hi, span)
        self.variables[plain.group(1).lower()] = value
        return None

    def _command(self, tokens, head, hi, span, first, piped_value):
        name = first.text.lower()
        arg_lo = head + 1

        if name in _EVAL_COMMANDS:
            return self._intercept_eval(tokens, arg_lo, hi, span, piped_value)
        if name in _PROC_START_COMMANDS:
            target = self._target_argument(tokens, arg_lo, hi, span,
                                           context=EnvUsage.PROCESS_ARG)
            detail = _basename(target) if isinstance(target, str) else "<unresolved>"
            self._act(ActionKind.PROC_START, detail, span)
            return None
        if name in _DOWNLOAD_COMMANDS:
            target = self._target_argument(tokens, arg_lo, hi, span)
            detail = target if isinstance(target, str) else "<unresolved url>"
            self._act(ActionKind.DOWNLOAD, detail, span)
            if isinstance(target, str):
                data = self._fetch(target)
                if data is not None:
                    text = None
                    try:
                        text = data.decode("utf-8")
                    except UnicodeDecodeError:
                        self._warn(f"fetched body from {target} is not text")
                    return RemoteContent(target, text)
                return RemoteContent(target, None)
            return UNRESOLVED
        if name in _SHELL_COMMANDS:
            rest = "".join(t.text for t in tokens[head + 1:hi]).strip()
            self._act(ActionKind.SHELL_EXEC, rest or name, span)
            return None
        if name in _PROC_KILL_COMMANDS:
            target = self._target_argument(tokens, arg_lo, hi, span)
            detail = target if isinstance(target, str) else name
            self._act(ActionKind.PROC_KILL, detail, span)
            return None
        if name in _REGISTRY_COMMANDS:
            text = "".join(t.text for t in tokens[head:hi])
            if _REGISTRY_PATH_RE.search(text):
                self._act(ActionKind.VAR_MANIP, "registry", span)
            else:
                self._warn(f"command not emulated: {name}")
            return None
        if name in _BENIGN_COMMANDS or first.kind is TokenKind.CMDLET_NAME and (
                name.startswith("write-") or name.startswith("out-")):
            if name == "new-object":
                return self.eval_classified(tokens, head, hi, span)
            return None
        self._warn(f"command not emulated: {name}")
        return None

    def _intercept_eval(self, tokens, lo, hi, span, piped_value):
        body = tokens[lo:hi]
        argument_text = "".join(t.text for t in body).strip()
        if argument_text:
            value = self.eval_classified(tokens, lo, hi, span)
        elif piped_value is not None:
            argument_text = "<pipeline input>"
            value = piped_value
        else:
            value = UNRESOLVED
        resolved = None
        if isinstance(value, str):
            resolved = value
        elif isinstance(value, RemoteContent):
            self._act(ActionKind.MEM_LOAD, value.url, span)
            resolved = value.text
        self.result.evals.append(InterceptedEval(
            argument_text=argument_text, resolved=resolved, span=span))
        return None

    def _target_argument(self, tokens, lo, hi, span, context=None):
        """First positional (or known target-parameter) argument value."""
        args = self._command_args(tokens, lo, hi)
        chosen = None
        for param, (alo, ahi) in args:
            if param is None and chosen is None:
                chosen = (alo, ahi)
            elif param in _TARGET_PARAMS:
                chosen = (alo, ahi)
                break
        if chosen is None:
            return UNRESOLVED
        bare = [t for t in tokens[chosen[0]:chosen[1]]
                if t.kind is not TokenKind.WHITESPACE]
        if len(bare) == 1 and bare[0].kind in _WORDISH \
                and not bare[0].text.startswith("-"):
            return bare[0].text  # unquoted argument word, e.g. a process name
        return self.eval_classified(tokens, *chosen, span=span,
                                    context=context)

    def _command_args(self, tokens, lo, hi):
        """Arguments of a command in (param-name, value-slice) form."""
        args = []
        i = lo
        pending_param = None
        while i < hi:
            tok = tokens[i]
            if tok.kind is TokenKind.WHITESPACE or tok.kind is TokenKind.NEWLINE:
                i += 1
                continue
            if tok.kind in _WORDISH and tok.text.startswith("-"):
                pending_param = tok.text.lower()
                args.append((pending_param, (i, i + 1)))
                i += 1
                continue
            j = self._argument_end(tokens, i, hi)
            if pending_param is not None:
                args[-1] = (pending_param, (i, j))
                pending_param = None
            else:
                args.append((None, (i, j)))
            i = j
        return args

    @staticmethod
    def _argument_end(tokens, i, hi):
        """One command argument: tokens glued together up to bare whitespace."""
        depth = 0
        j = i
        while j < hi:
            kind = tokens[j].kind
            if kind in (TokenKind.LPAREN, TokenKind.LBRACE):
                depth += 1
            elif kind in (TokenKind.RPAREN, TokenKind.RBRACE):
                depth -= 1
            elif depth == 0 and kind in (TokenKind.WHITESPACE,
                                         TokenKind.NEWLINE):
                return j
            j += 1
        return j


class _EvalPunt(Exception):
    """Internal: expression contains something outside the whitelist."""


class _ExprParser:
    def __init__(self, emu: _Emulator, tokens, lo, hi, span):
        self.emu = emu
        self.tokens = tokens
        self.hi = hi
        self.span = span
        self.pos = lo

    # -------------------------------------------------------------- cursor

    def _matching_rparen(self, start: int) -> int:
        depth = 1
        pos = start
        while pos < self.hi:
            kind = self.tokens[pos].kind
            if kind is TokenKind.LPAREN:
                depth += 1
            elif kind is TokenKind.RPAREN:
                depth -= 1
                if depth == 0:
                    return pos + 1
            pos += 1
        return self.hi

    def _skip_trivia(self) -> None:
        while self.pos < self.hi and self.tokens[self.pos].kind in (
                TokenKind.WHITESPACE, TokenKind.NEWLINE, TokenKind.COMMENT):
            self.pos += 1

    def peek(self):
        self._skip_trivia()
        if self.pos >= self.hi:
            return None
        return self.tokens[self.pos]

    def take(self):
        tok = self.peek()
        if tok is None:
            raise _EvalPunt("unexpected end of expression")
        self.pos += 1
        return tok

    # -------------------------------------------------------------- levels

    def parse(self):
        value = self.expression()
        if self.peek() is not None:
            raise _EvalPunt(
                f"trailing tokens near {self.peek().text!r}")
        return value

    def expression(self):
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.WORD \
                and tok.text.lower() == "-join":
            self.take()
            value = self.array()
            return self._join(value, "")
        value = self.array()
        while True:
            tok = self.peek()
            if tok is None:
                return value
            if tok.kind is TokenKind.FORMAT_OPERATOR:
                self.take()
                args = self.array()
                value = self._format(value, args)
            elif tok.kind is TokenKind.WORD and tok.text.lower() == "-join":
                self.take()
                sep = self.array()
                value = self._join(value, sep)
            else:
                return value

    def array(self):
        items = [self.additive()]
        while True:
            tok = self.peek()
            if tok is None or tok.text != ",":
                break
            self.take()
            items.append(self.additive())
        if len(items) == 1:
            return items[0]
        return items

    def additive(self):
        value = self.postfix()
        while True:
            tok = self.peek()
            if tok is None or tok.text != "+":
                return value
            self.take()
            value = self._plus(value, self.postfix())

    def postfix(self):
        value = self.primary()
        while True:
            tok = self.peek()
            if tok is None:
                return value
            if tok.kind is TokenKind.METHOD_CALL:
                self.take()
                value = self._method(value, tok.text[1:].lower())
            elif tok.text == "[":
                self.take()
                indexes = self._index_list()
                value = self._index(value, indexes)
            else:
                return value

    def primary(self):
        self.emu._tick()
        tok = self.peek()
        if tok is None:
            raise _EvalPunt("empty expression")
        if tok.kind is TokenKind.STRING_SINGLE:
            self.take()
            return single_quoted_value(tok.text)
        if tok.kind is TokenKind.STRING_DOUBLE:
            self.take()
            return self.emu.interpolate(tok.text)
        if tok.kind is TokenKind.NUMBER:
            self.take()
            return self._number(tok.text)
        if tok.kind is TokenKind.VARIABLE:
            self.take()
            return self._variable(tok.text)
        if tok.kind is TokenKind.LPAREN:
            self.take()
            inner_start = self.pos
            try:
                value = self.expression()
                closing = self.peek()
                if closing is None or closing.kind is not TokenKind.RPAREN:
                    raise _EvalPunt("unbalanced parenthesis")
                self.take()
                return value
            except _EvalPunt as punt:
                # Soft-fail the sub-expression: skip to the matching close
                # so a later .Kill() or similar is still seen.
                self.emu._warn(f"expression not emulated: {punt}")
                self.pos = self._matching_rparen(inner_start)
                return UNRESOLVED
        if tok.text == "[":
            return self._bracketed()
        if tok.kind in _WORDISH:
            return self._command_expression()
        raise _EvalPunt(f"token {tok.text!r} outside whitelist")

    # ------------------------------------------------------------- helpers

    @staticmethod
    def _number(text: str):
        try:
            return int(text, 0)
        except ValueError:
            try:
                return float(text)
            except ValueError:
                raise _EvalPunt(f"bad number {text!r}") from None

    def _variable(self, name: str):
        match = re.fullmatch(r"\$env:([A-Za-z_][A-Za-z0-9_]*)", name,
                             re.IGNORECASE)
        if match:
            return self.emu.read_env(match.group(1))
        plain = re.fullmatch(r"\$(?:(?:global|script|local|private):)?"
                             r"([A-Za-z0-9_]+)", name, re.IGNORECASE)
        if not plain:
            raise _EvalPunt(f"variable {name} outside whitelist")
        key = plain.group(1).lower()
        if key in ("true", "false"):
            return key == "true"
        if key == "null":
            return ""
        if key not in self.emu.variables:
            raise _EvalPunt(f"variable {name} is not defined")
        return self.emu.variables[key]

    def _bracketed(self):
        # [char]88 casts; [Name]::Member(...) statics are not whitelisted.
        self.take()  # '['
        parts = []
        while True:
            tok = self.peek()
            if tok is None:
                raise _EvalPunt("unterminated [type] cast")
            if tok.text == "]":
                self.take()
                break
            parts.append(self.take().text)
        typename = "".join(parts).lower()
        follow = self.peek()
        if follow is not None and follow.text in (":", "::"):
            raise _EvalPunt(f"[{typename}]:: call outside whitelist")
        inner = self.postfix()
        if typename == "char":
            if isinstance(inner, int):
                return chr(inner)
            raise _EvalPunt("[char] of a non-number")
        if typename in ("string", "text.encoding", "int"):
            if typename == "int" and isinstance(inner, str):
                return int(inner)
            return inner if isinstance(inner, str) else _coerce_str(inner)
        raise _EvalPunt(f"[{typename}] cast outside whitelist")

    def _index_list(self):
        indexes = []
        current: list = []
        while True:
            tok = self.peek()
            if tok is None:
                raise _EvalPunt("unterminated index")
            if tok.text == "]":
                self.take()
                break
            if tok.text == ",":
                self.take()
                indexes.append(current)
                current = []
                continue
            current.append(self.take())
        indexes.append(current)
        out = []
        for group in indexes:
            texts = [t.text for t in group
                     if t.kind is not TokenKind.WHITESPACE]
            if len(texts) == 1:
                out.append(self._number(texts[0]))
            elif len(texts) == 2 and texts[0] == "-":
                out.append(-self._number(texts[1]))
            else:
                raise _EvalPunt("index expression outside whitelist")
        return out

    def _index(self, value, indexes):
        if isinstance(value, _Unresolved):
            return UNRESOLVED
        if not isinstance(value, (str, list)):
            raise _EvalPunt("indexing a non-string")
        try:
            picked = [value[i] for i in indexes]
        except IndexError:
            raise _EvalPunt("string index out of range") from None
        if len(picked) == 1:
            return picked[0]
        return picked

    def _method(self, value, method: str):
        tok = self.peek()
        argslices: list = []
        if tok is not None and tok.kind is TokenKind.LPAREN:
            self.take()
            argslices = self._method_args()
        if isinstance(value, _WebClient):
            return self._webclient_method(method, argslices)
        args = [self._eval_arg(a) for a in argslices]
        if method == "kill":
            self.emu._act(ActionKind.PROC_KILL, "<method>", self.span)
            return ""
        if isinstance(value, _Unresolved):
            return UNRESOLVED
        if not isinstance(value, str):
            value = _coerce_str(value)
        if method == "tostring":
            return value
        if method == "replace" and len(args) == 2 \
                and all(isinstance(a, str) for a in args):
            return value.replace(args[0], args[1])
        if method == "tolower":
            return value.lower()
        if method == "toupper":
            return value.upper()
        if method == "trim":
            return value.strip(*[a for a in args if isinstance(a, str)][:1])
        raise _EvalPunt(f"method .{method} outside whitelist")

    def _method_args(self):
        """Collect argument slices of a call, leaving evaluation to callers."""
        slices = []
        depth = 1
        start = self.pos
        while True:
            if self.pos >= self.hi:
                raise _EvalPunt("unterminated call")
            tok = self.tokens[self.pos]
            if tok.kind is TokenKind.LPAREN:
                depth += 1
            elif tok.kind is TokenKind.RPAREN:
                depth -= 1
                if depth == 0:
                    if self.pos > start:
                        slices.append((start, self.pos))
                    self.pos += 1
                    return slices
            elif tok.text == "," and depth == 1:
                slices.append((start, self.pos))
                start = self.pos + 1
            self.pos += 1

    def _eval_arg(self, argslice):
        lo, hi = argslice
        return self.emu.eval_slice(self.tokens, lo, hi, self.span)

    def _webclient_method(self, method: str, argslices):
        if method == "downloadstring" or method == "downloaddata":
            url = self._eval_arg(argslices[0]) if argslices else UNRESOLVED
            return self.emu.download_string(url, self.span)
        if method == "downloadfile":
            return self.emu.download_file(self.tokens, argslices, self.span)
        raise _EvalPunt(f"WebClient method .{method} outside whitelist")

    def _command_expression(self):
        tok = self.take()
        name = tok.text.lower()
        if name == "new-object":
            cls = self.peek()
            if cls is not None and cls.kind in _WORDISH:
                self.take()
                if cls.text.lower() in ("net.webclient",
                                        "system.net.webclient"):
                    return _WebClient()
                raise _EvalPunt(f"New-Object {cls.text} outside whitelist")
            raise _EvalPunt("New-Object without a class name")
        raise _EvalPunt(f"command {tok.text!r} in expression")

    # ------------------------------------------------------------ operators

    def _plus(self, left, right):
        if isinstance(left, _Unresolved) or isinstance(right, _Unresolved):
            return UNRESOLVED
        if isinstance(left, int) and isinstance(right, int):
            return left + right
        if isinstance(left, list):
            return left + (right if isinstance(right, list) else [right])
        return _coerce_str(left) + _coerce_str(right)

    def _format(self, fmt, args):
        if not isinstance(fmt, str):
            raise _EvalPunt("-f on a non-string format")
        values = args if isinstance(args, list) else [args]
        if any(isinstance(v, _Unresolved) for v in values):
            return UNRESOLVED
        try:
            return fmt.format(*[_coerce_str(v) for v in values])
        except (IndexError, KeyError, ValueError) as exc:
            raise _EvalPunt(f"-f format failed: {exc}") from None

    def _join(self, value, sep):
        if isinstance(value, _Unresolved) or isinstance(sep, _Unresolved):
            return UNRESOLVED
        if not isinstance(sep, str):
            sep = _coerce_str(sep)
        items = value if isinstance(value, list) else [value]
        if any(isinstance(v, _Unresolved) for v in items):
            return UNRESOLVED
        return sep.join(_coerce_str(v) for v in items)


def _coerce_str(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, RemoteContent):
        return value.text if value.text is not None else value.url
    raise _EvalPunt(f"cannot render {type(value).__name__} as text")


def emulate(script_text: str, policy: FetchPolicy = FetchPolicy.RECORD_ONLY,
            client=None, stage_index: int = 1) -> EmulationResult:
    """Interpret a de-obfuscated script and record its would-be behavior.

    Never executes anything. Under RECORD_ONLY (the default) the client is
    never invoked, downloads become records, and intercepted evals resolve
    only when their argument is statically computable.
    """
    emulator = _Emulator(policy, client, stage_index)
    return emulator.run(script_text)
