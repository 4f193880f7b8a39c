"""
Configuration validator
"""

from typing import Any, Dict, List

from pydantic import ValidationError

from src.utils.config import RunConfig
from src.utils.logger import logger


class ConfigError(Exception):
    """Exception raised for configuration errors"""
    pass


def _field_errors(error: ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "config"
        if item["type"] == "extra_forbidden":
            messages.append(f"'{field}' is not a known setting")
        else:
            messages.append(f"{field} '{item.get('input')}' is invalid: {item['msg']}")
    return messages


def _consistency_errors(config: RunConfig) -> List[str]:
    errors = []
    if config.d % config.heads:
        errors.append(f"heads '{config.heads}' must divide d '{config.d}'")
    if config.phone_short_ms >= config.phone_long_ms:
        errors.append(f"phone_short_ms '{config.phone_short_ms}' must be below phone_long_ms '{config.phone_long_ms}'")
    if config.word_short_ms >= config.word_long_ms:
        errors.append(f"word_short_ms '{config.word_short_ms}' must be below word_long_ms '{config.word_long_ms}'")
    if min(config.layers) < 0:
        errors.append(f"layers '{config.layers}' must all be >= 0")
    for name in ("windows", "merges"):
        values = getattr(config, name)
        if values is not None and min(values) < 1:
            errors.append(f"{name} '{values}' must all be >= 1")
    return errors


def validate_config(values: Dict[str, Any]) -> RunConfig:
    """
    Validate raw configuration values

    Args:
        values: Setting name to value, strings allowed

    Returns:
        The validated RunConfig

    Raises:
        ConfigError: If any value is invalid; the message lists every problem
    """
    try:
        config = RunConfig(**values)
        errors = _consistency_errors(config)
    except ValidationError as e:
        errors = _field_errors(e)

    # If there are errors, raise exception
    if errors:
        error_message = "Configuration errors:\n" + "\n".join(f"- {error}" for error in errors)
        logger.error(error_message)
        raise ConfigError(error_message)

    return config
