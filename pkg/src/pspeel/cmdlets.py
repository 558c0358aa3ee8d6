"""Canonical cmdlet-name table loaded from the bundled data file."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=1)
def canonical_cmdlets() -> dict:
    """lowercase name -> canonical-case name."""
    text = resources.files("pspeel").joinpath("data/cmdlets.txt").read_text("utf-8")
    table = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        table[line.lower()] = line
    return table


def canonical_case(word: str) -> str | None:
    """Canonical spelling for a cmdlet-shaped word, or None if unknown."""
    return canonical_cmdlets().get(word.lower())
