"""Canonical ``key=value`` text: one pair per line, keys sorted, UTF-8."""

from __future__ import annotations

from pathlib import Path


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def dump_kv(pairs: dict, sort: bool = True) -> str:
    keys = sorted(pairs) if sort else list(pairs)
    for k in keys:
        if "=" in k or "\n" in k or "\n" in str(pairs[k]):
            raise ValueError(f"cannot encode pair {k!r}")
    return "".join(f"{k}={pairs[k]}\n" for k in keys)


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def write_kv(pairs: dict, path, sort: bool = True) -> None:
    Path(path).write_text(dump_kv(pairs, sort), encoding="utf-8")
