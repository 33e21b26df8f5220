"""
JSON helpers for result files: floats keep all 17 significant digits and
non-finite values become null.
"""

import json
import math

import numpy as np

FLOAT_FORMAT = "%.17g"


def _clean(value):
    if isinstance(value, dict):
        return {str(key): _clean(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_clean(item) for item in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(FLOAT_FORMAT % float(value))
        return value if math.isfinite(value) else None
    return value


def dumps(document) -> str:
    return json.dumps(_clean(document), indent=2, allow_nan=False)


def write_json(path, document):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dumps(document))
        handle.write("\n")
