"""
setup.py

This module resolves the experiment configuration from its sources and
renders it back into canonical form.

Precedence, highest first:
    1. command-line overrides (`--set section.key=value`)
    2. the TOML config file
    3. `FELO_SEED` from the environment (experiment.seed only)
    4. model defaults

Features:
- TOML parsing with section and key checks
- `key=value` overrides; values are read as TOML and fall back to strings
- Validation errors reported with the dotted key at fault
- Canonical TOML rendering that parses back to an equal configuration

Usage:
    config = parse_config(Path("felo.toml"), ["experiment.alpha=0.25"])
    Path("config.resolved").write_text(config_canonical(config))
"""

from copy import deepcopy
from pathlib import Path
from typing import Any, Optional
import toml
from pydantic import BaseModel, ValidationError
from app.config.settings import settings_refresh
from app.lib.errors import ConfigurationError
from app.lib.log import LOG
from app.models.dataModel import ExperimentConfig

SECTIONS: dict[str, type[BaseModel]] = {
    name: info.annotation  # type: ignore[misc]
    for name, info in ExperimentConfig.model_fields.items()
}


def document_load(path: Optional[Path]) -> dict[str, Any]:
    """
    Read a TOML config file into a nested dict.

    Args:
        path: Config file; None means an empty document

    Returns:
        dict[str, Any]: Sections and their keys

    Raises:
        ConfigurationError: If the file is unreadable, malformed, or names an
            unknown section
    """
    if path is None:
        return {}
    try:
        document: dict[str, Any] = toml.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    except toml.TomlDecodeError as e:
        raise ConfigurationError(f"{path}: malformed TOML: {e}") from e
    for section, body in document.items():
        if section not in SECTIONS:
            raise ConfigurationError(
                f"unknown section [{section}] (expected one of {sorted(SECTIONS)})",
                key=section,
            )
        if not isinstance(body, dict):
            raise ConfigurationError(f"{section} must be a table", key=section)
    return document


def key_resolve(key: str) -> tuple[str, str]:
    """
    Split an override key into (section, field).

    A bare key is accepted when exactly one section has a field of that name.

    Raises:
        ConfigurationError: On unknown or ambiguous keys
    """
    if "." in key:
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in SECTIONS[section].model_fields:
            raise ConfigurationError(f"unknown configuration key {key}", key=key)
        return section, name
    owners: list[str] = [s for s, model in SECTIONS.items() if key in model.model_fields]
    if not owners:
        raise ConfigurationError(f"unknown configuration key {key}", key=key)
    if len(owners) > 1:
        raise ConfigurationError(
            f"ambiguous key {key}: qualify it as one of "
            f"{', '.join(f'{s}.{key}' for s in owners)}",
            key=key,
        )
    return owners[0], key


def value_parse(text: str) -> Any:
    """A TOML value (number, bool, array, quoted string) or the raw text."""
    try:
        return toml.loads(f"value = {text}")["value"]
    except (toml.TomlDecodeError, ValueError, IndexError):
        return text


def override_apply(document: dict[str, Any], override: str) -> str:
    """
    Apply one `key=value` override to a config document in place.

    Returns:
        str: The dotted key that was set

    Raises:
        ConfigurationError: If the override has no `=` or names an unknown key
    """
    key, separator, text = override.partition("=")
    if not separator or not key.strip():
        raise ConfigurationError(f"override {override!r} is not of the form key=value")
    section, name = key_resolve(key.strip())
    document.setdefault(section, {})[name] = value_parse(text.strip())
    return f"{section}.{name}"


def validation_translate(error: ValidationError) -> ConfigurationError:
    """Field-level messages from a pydantic error, naming the first bad key."""
    messages: list[str] = []
    keys: list[str] = []
    for item in error.errors():
        location: str = ".".join(str(part) for part in item["loc"])
        message: str = str(item["msg"]).removeprefix("Value error, ")
        messages.append(f"{location}: {message}" if location else message)
        if location:
            keys.append(location)
    return ConfigurationError("; ".join(messages), key=keys[0] if keys else None)


def parse_config(path: Optional[Path], overrides: Optional[list[str]] = None) -> ExperimentConfig:
    """
    Resolve and validate the experiment configuration.

    Args:
        path: TOML config file, or None for defaults only
        overrides: `key=value` strings applied over the file

    Returns:
        ExperimentConfig: The validated configuration

    Raises:
        ConfigurationError: On unreadable files, unknown keys, type errors,
            or violated constraints, naming the key at fault
    """
    document: dict[str, Any] = deepcopy(document_load(path))
    sources: dict[str, str] = {
        f"{section}.{name}": "file" for section, body in document.items() for name in body
    }

    environment_seed: Optional[int] = settings_refresh().seed
    if environment_seed is not None and "seed" not in document.get("experiment", {}):
        document.setdefault("experiment", {})["seed"] = environment_seed
        sources["experiment.seed"] = "FELO_SEED"

    for override in overrides or []:
        sources[override_apply(document, override)] = "command line"

    try:
        config: ExperimentConfig = ExperimentConfig.model_validate(document)
    except ValidationError as e:
        raise validation_translate(e) from e
    for key, source in sorted(sources.items()):
        LOG(f"config {key} from {source}")
    return config


def config_canonical(config: ExperimentConfig) -> str:
    """
    Sorted TOML rendering of a configuration; unset optional keys are omitted.
    """
    dumped: dict[str, Any] = config.model_dump(mode="json", exclude_none=True)
    ordered: dict[str, Any] = {
        section: dict(sorted(dumped[section].items())) for section in sorted(dumped)
    }
    return toml.dumps(ordered)
