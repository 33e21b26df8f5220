"""
This module reads a dataset from a CSV file and its sidecar schema file.

The schema is an INI file:

    [SCHEMA]
    Treatment=W
    Outcome=Y

    [COLUMNS]
    age=continuous
    stage=categorical:3

Columns of the CSV that are not listed in [COLUMNS] are ignored.
"""

import configparser
import logging

import humanize
import numpy as np
import pandas as pd

from mtbart.core import CATEGORICAL, CONTINUOUS, ColumnMeta, Dataset, validate_dataset
from mtbart.errors import DataValidationError

# the first data row is line 2 of the file, after the header
FIRST_DATA_LINE = 2


class DatasetSchema:
    """
    This class contains the column layout of one dataset file
    """
    def __init__(self):
        self.treatment_column = "W"
        self.outcome_column = "Y"
        self.columns = {}

    def set_treatment_column(self, name):
        """
        set the name of the treatment column
        """
        name = str(name).strip()
        if name == "":
            raise ValueError("Treatment column name must not be empty")
        self.treatment_column = name

    def set_outcome_column(self, name):
        """
        set the name of the outcome column, an empty name means there is no outcome
        """
        name = str(name).strip() if name is not None else ""
        self.outcome_column = name or None

    def add_column(self, name, declaration):
        """
        declare a covariate column as 'continuous' or 'categorical:<levels>'
        """
        name = name.strip()
        kind, _, levels = declaration.strip().partition(":")
        kind = kind.strip().lower()
        if name in (self.treatment_column, self.outcome_column):
            raise ValueError(f"Column {name} is already used as treatment or outcome")
        if kind == CONTINUOUS:
            if levels:
                raise ValueError(f"Continuous column {name} cannot declare levels")
            self.columns[name] = (CONTINUOUS, 0)
        elif kind == CATEGORICAL:
            try:
                levels = int(levels)
            except ValueError as exc:
                raise ValueError(f"Categorical column {name} must declare its level count, "
                                 f"e.g. categorical:3") from exc
            if levels < 2:
                raise ValueError(f"Categorical column {name} must have at least 2 levels")
            self.columns[name] = (CATEGORICAL, levels)
        else:
            raise ValueError(f"Unknown kind for column {name}: {declaration}")


def read_schema(path) -> DatasetSchema:
    """
    Read the sidecar schema file.
    """
    logging.info("Reading the dataset schema %s... ", path)
    ini = configparser.ConfigParser()
    # column names are case sensitive
    ini.optionxform = str
    if not ini.read(path):
        raise ValueError(f"Cannot read schema file {path}")
    if "COLUMNS" not in ini:
        raise ValueError(f"Schema file {path} has no [COLUMNS] section")

    schema = DatasetSchema()
    if "SCHEMA" in ini:
        section = ini["SCHEMA"]
        if "Treatment" in section:
            schema.set_treatment_column(section["Treatment"])
        if "Outcome" in section:
            schema.set_outcome_column(section["Outcome"])

    for name, declaration in ini["COLUMNS"].items():
        if name in ini.defaults():
            continue
        schema.add_column(name, declaration)
    logging.debug("Schema columns: %s", schema.columns)
    return schema


def _missing_rows(frame, column):
    rows = np.flatnonzero(frame[column].isna().to_numpy())
    return [f"column '{column}' has missing value (line {row + FIRST_DATA_LINE})"
            for row in rows[:5]]


def _sorted_labels(values):
    labels = pd.unique(values)
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def load_dataset(csv_path, schema: DatasetSchema) -> Dataset:
    """
    Read a CSV file into a Dataset. Treatment values are mapped to 1..Z in sorted
    order and categorical values to codes 0..L-1; the original values are kept as labels.
    """
    logging.info("Reading the dataset %s... ", csv_path)
    frame = pd.read_csv(csv_path, dtype=str, keep_default_na=True, skipinitialspace=True)

    required = [schema.treatment_column, *schema.columns]
    if schema.outcome_column:
        required.append(schema.outcome_column)
    absent = [column for column in required if column not in frame.columns]
    if absent:
        raise DataValidationError([f"column '{column}' is declared in the schema "
                                   f"but missing from {csv_path}" for column in absent])

    violations = []
    for column in required:
        violations += _missing_rows(frame, column)

    treatment_values = frame[schema.treatment_column].str.strip()
    treatment_labels = tuple(str(label) for label in _sorted_labels(treatment_values.dropna()))
    treatment = treatment_values.map({label: code + 1 for code, label in
                                      enumerate(treatment_labels)}).fillna(0).to_numpy(int)

    covariates = np.zeros((len(frame), len(schema.columns)))
    column_meta = []
    for j, (name, (kind, levels)) in enumerate(schema.columns.items()):
        values = frame[name].str.strip()
        if kind == CONTINUOUS:
            numeric = pd.to_numeric(values, errors="coerce")
            for row in np.flatnonzero(numeric.isna().to_numpy() & values.notna().to_numpy())[:5]:
                violations.append(f"column '{name}' is not numeric "
                                  f"(line {row + FIRST_DATA_LINE}: {values.iloc[row]})")
            covariates[:, j] = numeric.to_numpy(float)
            column_meta.append(ColumnMeta(name, CONTINUOUS))
        else:
            labels = tuple(str(label) for label in _sorted_labels(values.dropna()))
            if len(labels) > levels:
                violations.append(f"column '{name}' has {len(labels)} distinct values, "
                                  f"more than the {levels} declared levels")
            covariates[:, j] = values.map({label: code for code, label in
                                           enumerate(labels)}).to_numpy(float)
            labels = labels + tuple(f"level{code}" for code in range(len(labels), levels))
            column_meta.append(ColumnMeta(name, CATEGORICAL, levels, labels[:levels]))

    outcome = None
    if schema.outcome_column:
        numeric = pd.to_numeric(frame[schema.outcome_column], errors="coerce")
        for row in np.flatnonzero(~numeric.isin([0, 1]).to_numpy())[:5]:
            violations.append(f"outcome not binary (line {row + FIRST_DATA_LINE}: "
                              f"{frame[schema.outcome_column].iloc[row]})")
        outcome = numeric.fillna(-1).to_numpy(int)

    if violations:
        raise DataValidationError(violations)

    dataset = Dataset(covariates=covariates, column_meta=tuple(column_meta),
                      treatment=treatment, outcome=outcome,
                      n_treatments=len(treatment_labels), treatment_labels=treatment_labels)
    violations = validate_dataset(dataset)
    if violations:
        raise DataValidationError(violations)

    logging.info("Read %s units, %s covariates and %s treatments (%s)",
                 humanize.intcomma(dataset.n_units), dataset.n_covariates,
                 dataset.n_treatments, ", ".join(treatment_labels))
    return dataset
