"""
Utility functions for the Shape Space toolkit.

Helpers shared by several pipeline components: JSON reading/writing for
manifests and reports, key validation, and the summary statistics used in
every error table.
"""

import json
from pathlib import Path

import numpy as np


def load_json_file(path, context="JSON file"):
    """
    Read a JSON document with error messages that name the file.

    Args:
        path: Path of the file to read
        context: Description of what this is for (used in error messages)

    Returns:
        dict or list: The parsed JSON object

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the content is not valid JSON
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{context} not found: {path}")

    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise ValueError(f"Empty {context}: {path}")

    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(
            f"Failed to parse {context} {path} at line {e.lineno} column {e.colno}: {e.msg}"
        )


def to_builtin(value):
    """Convert numpy scalars/arrays nested in dicts and lists to JSON-native types."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def dump_json(data, path):
    """
    Write JSON deterministically: sorted keys, fixed indentation, trailing newline.

    Identical inputs give byte-identical files, which the reproducibility
    checks rely on.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_builtin(data), indent=2, sort_keys=True, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def validate_dict_keys(data, required_keys, context="data"):
    """
    Validate that a dictionary contains required keys.

    Args:
        data: Dictionary to validate
        required_keys: List of required key names
        context: Description for error messages

    Raises:
        ValueError: If any required keys are missing
    """
    if not isinstance(data, dict):
        raise ValueError(f"{context} must be a dictionary, got {type(data)}")

    missing_keys = [key for key in required_keys if key not in data]

    if missing_keys:
        raise ValueError(
            f"{context} missing required keys: {missing_keys}. "
            f"Available keys: {list(data.keys())}"
        )


def summary_stats(values):
    """
    Mean / median / stddev / max of a set of errors, in the row format of
    the landmark- and surface-distance tables.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("Cannot summarise an empty set of values")
    return {
        "mean": float(values.mean()),
        "median": float(np.median(values)),
        "stddev": float(values.std()),
        "max": float(values.max()),
    }
