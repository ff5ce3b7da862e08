"""Line-aware reader for the plain-text experiment configs.

Format: ``[section]`` headers, ``key = value`` lines, ``#`` or ``;``
comments. Every value remembers its line so validation errors can point at
it. Lists are comma separated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from .expr import Expression, ExprError


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path, self.line = path, line
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass(frozen=True)
class Entry:
    value: str
    line: int


class Section:
    def __init__(self, name: str, line: int, path: str):
        self.name, self.line, self.path = name, line, path
        self._entries: dict[str, Entry] = {}
        self._used: set[str] = set()

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def keys(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, str]]:
        return ((k, e.value) for k, e in self._entries.items())

    def error(self, key: str | None, message: str) -> ConfigError:
        line = self._entries[key].line if key in self._entries else self.line
        label = f"[{self.name}] {key}: " if key else f"[{self.name}] "
        return ConfigError(label + message, self.path, line)

    def raw(self, key: str, default=None) -> str | None:
        self._used.add(key)
        e = self._entries.get(key)
        return default if e is None else e.value

    def _parse(self, key: str, default, required: bool, fn: Callable[[str], object]):
        text = self.raw(key)
        if text is None:
            if required:
                raise self.error(None, f"missing required key {key!r}")
            return default
        try:
            return fn(text)
        except (ValueError, ExprError) as exc:
            raise self.error(key, str(exc)) from None

    def str(self, key: str, default: str | None = None, required: bool = False, choices=None) -> str | None:
        v = self._parse(key, default, required, str.strip)
        if choices is not None and v is not None and v not in choices:
            raise self.error(key, f"must be one of {', '.join(choices)}")
        return v

    def float(self, key: str, default: float | None = None, required: bool = False) -> float | None:
        return self._parse(key, default, required, _to_float)

    def int(self, key: str, default: int | None = None, required: bool = False) -> int | None:
        return self._parse(key, default, required, _to_int)

    def bool(self, key: str, default: bool = False) -> bool:
        def conv(s: str) -> bool:
            s = s.strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{s!r} is not a boolean")

        return self._parse(key, default, False, conv)

    def floats(self, key: str, default=None, required: bool = False) -> tuple[float, ...] | None:
        return self._parse(key, default, required, lambda s: tuple(_to_float(p) for p in _split(s)))

    def ints(self, key: str, default=None, required: bool = False) -> tuple[int, ...] | None:
        return self._parse(key, default, required, lambda s: tuple(_to_int(p) for p in _split(s)))

    def strs(self, key: str, default=None, required: bool = False) -> tuple[str, ...] | None:
        return self._parse(key, default, required, lambda s: tuple(_split(s)))

    def expr(self, key: str, variables=("n",), default: str | None = None, required: bool = False) -> Expression | None:
        v = self._parse(key, default, required, lambda s: Expression(s, variables))
        if isinstance(v, str):
            v = Expression(v, variables)
        return v

    def unused(self) -> list[str]:
        return [k for k in self._entries if k not in self._used]


def _split(s: str) -> list[str]:
    parts = [p.strip() for p in s.split(",")]
    if any(p == "" for p in parts):
        raise ValueError("empty list item")
    return parts


def _to_float(s: str) -> float:
    s = s.strip().lower()
    if s in ("inf", "+inf"):
        return float("inf")
    if s == "-inf":
        return float("-inf")
    v = float(s)
    if v != v:
        raise ValueError("NaN is not allowed")
    return v


def _to_int(s: str) -> int:
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        v = float(s)
        if v != int(v):
            raise ValueError(f"{s!r} is not an integer") from None
        return int(v)


class Config:
    def __init__(self, path: str = "<string>"):
        self.path = path
        self.sections: dict[str, Section] = {}
        self.text = ""

    def __contains__(self, name: str) -> bool:
        return name in self.sections

    def section(self, name: str, required: bool = True) -> Section:
        if name not in self.sections:
            if required:
                raise ConfigError(f"missing section [{name}]", self.path)
            return Section(name, 0, self.path)
        return self.sections[name]

    def check_unused(self) -> None:
        """Reject unknown keys so typos do not silently fall back to defaults."""
        for s in self.sections.values():
            for k in s.unused():
                raise s.error(k, "unknown key")


def parse_config(text: str, path: str = "<string>") -> Config:
    cfg = Config(path)
    cfg.text = text
    current: Section | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("["):
            if not s.endswith("]") or len(s) < 3:
                raise ConfigError("malformed section header", path, lineno)
            name = s[1:-1].strip()
            if name in cfg.sections:
                raise ConfigError(f"duplicate section [{name}]", path, lineno)
            current = cfg.sections[name] = Section(name, lineno, path)
            continue
        if "=" not in s:
            raise ConfigError("expected 'key = value'", path, lineno)
        if current is None:
            raise ConfigError("key outside any section", path, lineno)
        key, _, value = s.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("empty key", path, lineno)
        if key in current._entries:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        current._entries[key] = Entry(value.strip(), lineno)
    return cfg


def load_config(path: str | Path) -> Config:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from None
    return parse_config(text, str(p))
