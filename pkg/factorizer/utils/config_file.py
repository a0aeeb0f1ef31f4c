import io
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from dotenv import dotenv_values
from dotenv.parser import Binding, parse_stream

from factorizer.exceptions import ConfigurationError
from factorizer.schemas.config import RunConfig

logger = logging.getLogger(__name__)

ROW_SEPARATOR = ";"
ITEM_SEPARATOR = ","


def parse_value(raw: str) -> Any:
    """Parse a config value: bool, int, float, comma list, `;`-separated rows or string."""
    text = raw.strip()
    if ROW_SEPARATOR in text:
        return [_as_row(parse_value(row)) for row in text.split(ROW_SEPARATOR) if row.strip()]
    if ITEM_SEPARATOR in text:
        return [parse_value(part) for part in text.split(ITEM_SEPARATOR) if part.strip()]
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _as_row(value: Any) -> list:
    return value if isinstance(value, list) else [value]


def _line_of(binding: Binding) -> int:
    # the marked text starts with any blank lines skipped before the key
    text = binding.original.string
    return binding.original.line + text[: len(text) - len(text.lstrip())].count("\n")


def parse_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Read `key = value` lines with `#` comments through python-dotenv, then type each value."""
    seen = set()
    for binding in parse_stream(io.StringIO(text)):
        if binding.error:
            raise ConfigurationError(f"{source}:{_line_of(binding)}: cannot parse '{binding.original.string.strip()}'")
        if binding.key is None:
            continue
        if binding.value is None:
            raise ConfigurationError(f"{source}:{_line_of(binding)}: expected 'key = value', got '{binding.original.string.strip()}'")
        if binding.key in seen:
            logger.warning(f"{source}:{_line_of(binding)}: '{binding.key}' set twice, keeping the later value")
        seen.add(binding.key)
    raw = dotenv_values(stream=io.StringIO(text), interpolate=False)
    return {key: parse_value(value) for key, value in raw.items()}


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, Any]:
    return parse_text("\n".join(lines), source=source)


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_text(path.read_text(encoding="utf-8"), source=str(path))


def parse_assignments(assignments: Iterable[str]) -> Dict[str, Any]:
    """Parse `--set key=value` overrides."""
    return parse_lines(assignments, source="--set")


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    defaults: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Model defaults, then `defaults`, then the file, then `overrides`."""
    values: Dict[str, Any] = dict(defaults or {})
    if path is not None:
        values.update(read_config_file(path))
    values.update(overrides or {})
    config = RunConfig.from_flat(values)
    logger.debug(f"Loaded run config with {len(values)} explicit keys")
    return config


def format_value(value: Any) -> str:
    """Inverse of `parse_value` for the values a config holds."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (list, tuple)):
        if value and all(isinstance(item, (list, tuple)) for item in value):
            rows = f"{ROW_SEPARATOR} ".join(format_value(list(row)).rstrip(ITEM_SEPARATOR) for row in value)
            return rows + ROW_SEPARATOR if len(value) == 1 else rows
        items = f"{ITEM_SEPARATOR} ".join(format_value(item) for item in value)
        # a lone item still needs a separator to read back as a list
        return items + ITEM_SEPARATOR if len(value) == 1 else items
    return str(value)


def dump_run_config(config: RunConfig) -> str:
    """Render a config back to dotted key=value lines."""
    lines = []

    def walk(prefix: str, node: Dict[str, Any]) -> None:
        for key, value in node.items():
            name = f"{prefix}{key}"
            if isinstance(value, dict):
                walk(f"{name}.", value)
            else:
                lines.append(f"{name} = {format_value(value)}")

    walk("", config.model_dump(mode="json"))
    return "\n".join(lines) + "\n"
