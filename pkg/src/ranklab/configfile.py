"""Key-value config files (INI sections) and versioned CSV output.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments. Lists are comma separated. Booleans are
``true``/``false``. Sections: ``[population]``, ``[theory]``, ``[simulate]``,
``[train]``, and ``[run]`` (written into manifests).
"""

from __future__ import annotations

import configparser
import csv
import io
from pathlib import Path

from ranklab.errors import LabError


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.is_file():
        raise LabError("config", f"config file not found: {path}")
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise LabError("config", str(exc)) from exc
    return cp


def write_config(path, sections: dict[str, dict]) -> None:
    lines = []
    for name, values in sections.items():
        lines.append(f"[{name}]")
        for key, value in values.items():
            lines.append(f"{key} = {format_value(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


class Section:
    """Typed accessors over one config section with defaults."""

    def __init__(self, cp: configparser.ConfigParser, name: str):
        self.name = name
        self._items = dict(cp.items(name)) if cp.has_section(name) else {}

    def __contains__(self, key):
        return key in self._items

    def _raw(self, key, default):
        if key not in self._items:
            if default is _REQUIRED:
                raise LabError("config", f"[{self.name}] missing key {key!r}")
            return None
        return self._items[key].strip()

    def get_int(self, key, default=None):
        raw = self._raw(key, default)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise LabError("config", f"[{self.name}] {key} must be an integer, got {raw!r}") from None

    def get_float(self, key, default=None):
        raw = self._raw(key, default)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise LabError("config", f"[{self.name}] {key} must be a number, got {raw!r}") from None

    def get_bool(self, key, default=None):
        raw = self._raw(key, default)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise LabError("config", f"[{self.name}] {key} must be true/false, got {raw!r}")

    def get_str(self, key, default=None):
        raw = self._raw(key, default)
        return default if raw is None else raw

    def get_list(self, key, cast, default=None):
        raw = self._raw(key, default)
        if raw is None or raw.lower() == "none":
            return default
        try:
            return tuple(cast(x.strip()) for x in raw.split(",") if x.strip())
        except ValueError:
            raise LabError("config", f"[{self.name}] {key}: cannot parse list {raw!r}") from None


_REQUIRED = object()
REQUIRED = _REQUIRED


def format_cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, schema: str, header, rows) -> None:
    """CSV with a ``#schema=`` comment line; floats use shortest round-trip repr."""
    buf = io.StringIO()
    buf.write(f"#schema={schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_cell(x) for x in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("#schema="):
        raise LabError("config", f"{path}: missing #schema= header")
    schema = text[0][len("#schema="):]
    rows = list(csv.reader(text[1:]))
    if not rows:
        raise LabError("config", f"{path}: no header row")
    return schema, rows[0], rows[1:]
