"""
Results files: the results JSON document and the CSV tables written next to it.
Floats are written with 17 significant digits.
"""

import json
import logging
import os
from importlib import resources

import pandas as pd

from mtbart import __version__
from mtbart.utils.json_format import FLOAT_FORMAT, write_json

SCHEMA_VERSION = "1.0"

_JSON_TYPES = {"object": dict, "array": list, "string": str, "integer": int,
               "number": (int, float), "boolean": bool, "null": type(None)}


def results_schema() -> dict:
    text = resources.files("mtbart").joinpath("results.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def results_document(command, estimates, treatment_labels, seed, failures=None,
                     extra=None) -> dict:
    """
    The results JSON of a run: the records of every estimate plus the
    treatment-label mapping (code -> original label).
    """
    document = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "command": command,
        "seed": int(seed),
        "treatment_labels": {str(code): str(label)
                             for code, label in enumerate(treatment_labels, start=1)},
        "estimates": [estimate.to_record() for estimate in estimates],
        "failures": dict(failures or {}),
    }
    if extra:
        document.update(extra)
    return document


def _type_matches(value, expected):
    types = expected if isinstance(expected, list) else [expected]
    for name in types:
        if name in ("integer", "number") and isinstance(value, bool):
            continue
        if isinstance(value, _JSON_TYPES[name]):
            return True
    return False


def _check(value, schema, path, problems):
    if "type" in schema and not _type_matches(value, schema["type"]):
        problems.append(f"{path}: expected {schema['type']}")
        return
    if "enum" in schema and value not in schema["enum"]:
        problems.append(f"{path}: {value!r} not one of {schema['enum']}")
    if isinstance(value, dict):
        for key in schema.get("required", []):
            if key not in value:
                problems.append(f"{path}: missing {key}")
        for key, sub_schema in schema.get("properties", {}).items():
            if key in value:
                _check(value[key], sub_schema, f"{path}.{key}", problems)
    if isinstance(value, list) and "items" in schema:
        for position, item in enumerate(value):
            _check(item, schema["items"], f"{path}[{position}]", problems)


def check_results(document, schema=None) -> list:
    """
    Problems of a results document against the shipped schema (types,
    required keys and enums); an empty list when it conforms.
    """
    problems = []
    _check(document, schema or results_schema(), "$", problems)
    return problems


def write_results(out_dir, document, name="results.json"):
    path = os.path.join(out_dir, name)
    write_json(path, document)
    logging.info("Results written to %s", path)
    return path


def write_csv(out_dir, name, frame: pd.DataFrame):
    """
    Write a table with full float precision.
    """
    path = os.path.join(out_dir, name)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logging.info("%s written (%s rows)", path, len(frame))
    return path
