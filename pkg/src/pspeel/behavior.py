"""Behavioral summary of an analyzed script.

Turns the emulator's raw event stream into the three report-level views:
the overall behavioral pattern (exact match against a small catalogue of
action-kind sets), environment-variable usage statistics, and a deduplicated
indicator list (URLs, domains, IPs, dropped file paths) with defanged display
forms.
"""

from __future__ import annotations

import re
from collections import Counter
from urllib.parse import urlsplit

from .model import ActionKind, ActionRecord, EnvUsage, Ioc, IocKind, PatternKind

__all__ = [
    "classify_pattern", "extract_env_vars", "extract_iocs",
    "defang", "refang", "PATTERN_ROWS",
]

# The catalogue of recognized action-kind combinations. Matching is exact:
# a script that does strictly more than a row describes stays Unclassified
# rather than being force-fitted into the nearest bucket.
PATTERN_ROWS: tuple = (
    (frozenset({ActionKind.DOWNLOAD, ActionKind.PROC_START}),
     PatternKind.DOWN_EXEC),
    (frozenset({ActionKind.DOWNLOAD, ActionKind.SHELL_EXEC}),
     PatternKind.DOWN_SHELL),
    (frozenset({ActionKind.DOWNLOAD, ActionKind.PROC_START,
                ActionKind.SHELL_EXEC}),
     PatternKind.EXEC_SHELL),
    (frozenset({ActionKind.DOWNLOAD, ActionKind.PROC_START,
                ActionKind.VAR_MANIP}),
     PatternKind.EXEC_VAR),
    (frozenset({ActionKind.DOWNLOAD, ActionKind.SHELL_EXEC,
                ActionKind.VAR_MANIP, ActionKind.PROC_KILL}),
     PatternKind.SHELL_KILL),
    (frozenset({ActionKind.PROC_START, ActionKind.MEM_LOAD}),
     PatternKind.MEM_EXEC),
)

_ENV_NAME_RE = re.compile(r"\$env:([A-Za-z_][A-Za-z0-9_]*)", re.IGNORECASE)
_URL_RE = re.compile(r"https?://[^\s'\"<>()\[\]`;|]+", re.IGNORECASE)
_IP_RE = re.compile(r"^\d{1,3}(?:\.\d{1,3}){3}$")


def classify_pattern(actions: list[ActionRecord]) -> PatternKind:
    """The catalogue row whose action-kind set equals the observed one."""
    kinds = frozenset(a.kind for a in actions)
    for row, pattern in PATTERN_ROWS:
        if kinds == row:
            return pattern
    return PatternKind.UNCLASSIFIED


def extract_env_vars(env_events, final_script: str = "") -> list:
    """Aggregate environment-variable reads to (name, usage, count) rows.

    ``env_events`` are the (name, EnvUsage) pairs the emulator recorded.
    Names that appear textually in the final script but never produced an
    event (the statement around them was not emulated) are counted once per
    occurrence with Other usage, so the statistics do not silently drop them.
    """
    counts: Counter = Counter()
    for name, usage in env_events:
        counts[(name.upper(), usage)] += 1
    seen = {name for name, _usage in counts}
    for match in _ENV_NAME_RE.finditer(final_script):
        name = match.group(1).upper()
        if name not in seen:
            counts[(name, EnvUsage.OTHER)] += 1
    return sorted(((name, usage, count) for (name, usage), count in counts.items()),
                  key=lambda row: (-row[2], row[0], row[1].value))


# --------------------------------------------------------------- defanging


def defang(url: str) -> str:
    """Display-safe form: http → hxxp, host dots → [.] (path left alone)."""
    split = urlsplit(url)
    host = split.hostname or ""
    out = url
    if host and split.netloc:
        safe_netloc = split.netloc.replace(host, host.replace(".", "[.]"))
        out = out.replace("://" + split.netloc, "://" + safe_netloc, 1)
    if out[:4].lower() == "http":
        out = out[0] + "xx" + out[3:]  # http → hxxp, https → hxxps
    return out


def refang(text: str) -> str:
    """Inverse of defang, applied to arbitrary text before IOC scanning."""
    return (text.replace("hxxp", "http").replace("HXXP", "HTTP")
            .replace("[.]", "."))


def _defang_host(host: str) -> str:
    return host.replace(".", "[.]")


def _host_of(url: str) -> str:
    try:
        return urlsplit(url).hostname or ""
    except ValueError:
        return ""


def extract_iocs(actions, final_script: str = "", dropped_files=()) -> list:
    """Deduplicated indicators from actions, script text and dropped paths.

    URLs come from Download actions and from URL-shaped literals in the
    final script (defanged occurrences are recognized and normalized back
    to their plain form first); each URL also contributes its host as a
    Domain or Ip indicator. Dropped file destinations become FilePath rows.
    """
    urls: list = []
    for action in actions:
        if action.kind is ActionKind.DOWNLOAD:
            candidate = refang(action.detail).rstrip(".,;:")
            if _URL_RE.fullmatch(candidate):
                urls.append(candidate)
    for match in _URL_RE.finditer(refang(final_script)):
        urls.append(match.group(0).rstrip(".,;:"))

    hosts = [h for h in (_host_of(u) for u in urls) if h]
    paths = [p for p in dropped_files if isinstance(p, str) and p]

    iocs: list = []
    seen: set = set()

    def add(kind: IocKind, raw: str, defanged: str) -> None:
        key = (kind, raw)
        if key not in seen:
            seen.add(key)
            iocs.append(Ioc(kind=kind, raw=raw, defanged=defanged))

    for url in urls:
        add(IocKind.URL, url, defang(url))
    for host in hosts:
        kind = IocKind.IP if _IP_RE.match(host) else IocKind.DOMAIN
        add(kind, host, _defang_host(host))
    for path in paths:
        add(IocKind.FILE_PATH, path, path)
    return iocs
