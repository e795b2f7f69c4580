"""Parser for the line-oriented run configuration format.

    # comment
    experiment = run

    [mesh]
    size = 33

    [solve]
    problem = StefanLimit
    epsilon = 1/16

    [graph]
    kind = StefanPiecewiseLinear

Values are typed on the way in:
- true / false -> bool
- 33 -> int
- 0.5, 1e-3, 1/16 -> float
- "quoted" -> str (JSON string escapes)
- anything else -> bare str

The [graph] and [perturbation] sections nest into [solve]. Every key remembers
its line so validation errors point back into the file.
"""

import re
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import orjson
from pydantic import ValidationError

from app.core.exceptions import ConfigError
from app.schemas.config import RunConfig

SECTIONS = ("mesh", "solve", "graph", "perturbation", "source", "initial", "output")
NESTED = {"graph": "solve", "perturbation": "solve"}

_INT = re.compile(r"^[+-]?\d+$")
_FRACTION = re.compile(r"^([+-]?\d+(?:\.\d*)?)\s*/\s*(\d+(?:\.\d*)?)$")
_QUOTED = re.compile(r'^("(?:[^"\\]|\\.)*")\s*(?:#.*)?$')
_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_VALIDATOR_MESSAGE = re.compile(r"^(\w+): (.*)$", re.DOTALL)


class RunConfigParser:
    """Typed `key = value` parser that keeps a key -> line map."""

    @staticmethod
    def parse_value(raw: str) -> Any:
        quoted = _QUOTED.match(raw)
        if quoted:
            return orjson.loads(quoted.group(1))
        value = raw.split("#", 1)[0].strip()
        if value.lower() in ("true", "false"):
            return value.lower() == "true"
        if _INT.match(value):
            return int(value)
        fraction = _FRACTION.match(value)
        if fraction:
            return float(fraction.group(1)) / float(fraction.group(2))
        try:
            return float(value)
        except ValueError:
            return value

    @staticmethod
    def parse(text: str) -> Tuple[Dict[str, Any], Dict[str, int]]:
        """
        Parse config text into a nested dict and a "section.key" -> line map.

        Raises:
            ConfigError: malformed line, unknown section or duplicated key
        """
        data: Dict[str, Any] = {}
        lines: Dict[str, int] = {}
        section: Optional[str] = None

        for number, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue

            header = _SECTION.match(stripped)
            if header:
                section = header.group(1)
                if section not in SECTIONS:
                    raise ConfigError(f"unknown section [{section}]", key=section, line=number)
                continue

            if "=" not in stripped:
                raise ConfigError(f"expected `key = value`, got {stripped!r}", line=number)
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if not key:
                raise ConfigError("missing key before '='", line=number)

            dotted = f"{section}.{key}" if section else key
            if dotted in lines:
                raise ConfigError(f"duplicated key (first set on line {lines[dotted]})", key=dotted, line=number)
            lines[dotted] = number

            target = data
            if section in NESTED:
                target = data.setdefault(NESTED[section], {})
            if section:
                target = target.setdefault(section, {})
            target[key] = RunConfigParser.parse_value(raw)

        return data, lines


def _locate(error: Dict[str, Any], lines: Dict[str, int]) -> Tuple[str, Optional[int], str]:
    """Map a pydantic error to (section.key, line, message)."""
    loc = [str(part) for part in error["loc"]]
    if len(loc) >= 2 and loc[0] == "solve" and loc[1] in NESTED:
        loc = loc[1:]
    message = error["msg"]
    if message.startswith("Value error, "):
        message = message[len("Value error, "):]

    named = _VALIDATOR_MESSAGE.match(message)
    if named and len(loc) <= 1:
        # model-level validator: the message names the field
        field, message = named.group(1), named.group(2)
        section = loc[0] if loc else None
        candidates = [f"{section}.{field}" if section else field, f"graph.{field}", f"perturbation.{field}"]
    else:
        candidates = [".".join(loc)]

    for key in candidates:
        if key in lines:
            return key, lines[key], message
    return candidates[0], None, message


def load_config(text: str) -> RunConfig:
    """
    Parse and validate config text.

    Raises:
        ConfigError: with the offending key and, when present in the text, its line
    """
    data, lines = RunConfigParser.parse(text)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key, line, message = _locate(first, lines)
        extra = e.error_count() - 1
        if extra:
            message += f" (and {extra} more error{'s' if extra > 1 else ''})"
        raise ConfigError(message, key=key, line=line) from e


def load_config_file(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return load_config(text)


def _render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return orjson.dumps(value).decode()


def render_config(config: RunConfig) -> str:
    """Serialize a RunConfig so that load_config(render_config(c)) == c."""
    data = config.model_dump(mode="json", by_alias=True)
    solve = dict(data["solve"])
    graph = solve.pop("graph")
    perturbation = solve.pop("perturbation")
    sections = [
        ("mesh", data["mesh"]),
        ("solve", solve),
        ("graph", graph),
        ("perturbation", perturbation),
        ("source", data["source"]),
        ("initial", data["initial"]),
        ("output", data["output"]),
    ]
    out = [f"experiment = {_render_value(data['experiment'])}"]
    for name, values in sections:
        out += ["", f"[{name}]"]
        out += [f"{key} = {_render_value(value)}" for key, value in values.items() if value is not None]
    return "\n".join(out) + "\n"
