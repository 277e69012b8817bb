"""Flat ``key = value`` configuration files.

Grammar, one entry per line::

    line    := blank | comment | entry
    comment := "#" any text
    entry   := key "=" value
    key     := [A-Za-z_][A-Za-z0-9_.]*

Surrounding whitespace is ignored.  A value is parsed as JSON when it is
valid JSON (numbers, ``true``/``false``/``null``, quoted strings, lists and
objects); otherwise it is kept as a bare string.  Keys may appear once.
Dotted keys such as ``opt.lambda_`` collect into the nested dict ``opt``.
"""

import json
import re

from .errors import ConfigError

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(text):
    """Parse configuration text into a dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"line {lineno}: invalid key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    nested = {}
    for key, value in out.items():
        head, _, tail = key.partition(".")
        if (head in nested) and (bool(tail) != isinstance(nested[head], dict)):
            raise ConfigError(f"key {head!r} is used both as a value and as a section")
        if tail:
            nested.setdefault(head, {})[tail] = value
        else:
            nested[key] = value
    return nested


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(mapping):
    """Render a dict in the same grammar, with keys sorted and nested dicts dotted."""
    lines = []
    for key in sorted(mapping):
        value = mapping[key]
        if isinstance(value, dict):
            for sub in sorted(value):
                lines.append(f"{key}.{sub} = {json.dumps(value[sub], sort_keys=True)}")
        else:
            lines.append(f"{key} = {json.dumps(value, sort_keys=True)}")
    return "\n".join(lines) + "\n"
