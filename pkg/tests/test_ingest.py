import os
import tempfile
import unittest

import numpy as np

from mtbart.errors import DataValidationError
from mtbart.ingest import DatasetSchema, load_dataset, read_schema

SCHEMA = """[SCHEMA]
Treatment=W
Outcome=Y

[COLUMNS]
age=continuous
stage=categorical:3
"""

ROWS = """W,Y,age,stage,note
B,1,50,low,first
A,0,60.5,high,second
C,1,55,mid,third
A,1,41,low,fourth
"""


class TestIngest(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.schema_path = self.write("schema.ini", SCHEMA)

    def tearDown(self):
        self.directory.cleanup()

    def write(self, name, text):
        path = os.path.join(self.directory.name, name)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
        return path

    def test_read_schema(self):
        """
        The schema names the treatment and outcome columns and declares the covariates
        """
        schema = read_schema(self.schema_path)
        self.assertEqual(schema.treatment_column, "W")
        self.assertEqual(schema.outcome_column, "Y")
        self.assertEqual(schema.columns, {"age": ("continuous", 0), "stage": ("categorical", 3)})

    def test_load_dataset(self):
        """
        Treatments map to 1..Z in sorted order and unlisted columns are ignored
        """
        dataset = load_dataset(self.write("data.csv", ROWS), read_schema(self.schema_path))
        self.assertEqual(dataset.treatment_labels, ("A", "B", "C"))
        np.testing.assert_array_equal(dataset.treatment, [2, 1, 3, 1])
        np.testing.assert_array_equal(dataset.outcome, [1, 0, 1, 1])
        self.assertEqual(dataset.n_covariates, 2)
        np.testing.assert_allclose(dataset.covariates[:, 0], [50, 60.5, 55, 41])
        stage = dataset.column_meta[1]
        self.assertEqual(stage.level_labels, ("high", "low", "mid"))
        np.testing.assert_array_equal(dataset.covariates[:, 1], [1, 0, 2, 1])

    def test_missing_value_reports_line(self):
        """
        A missing value is reported with its line in the file
        """
        rows = ROWS.replace("A,1,41,low", "A,1,,low")
        with self.assertRaises(DataValidationError) as context:
            load_dataset(self.write("data.csv", rows), read_schema(self.schema_path))
        self.assertIn("column 'age' has missing value (line 5)", context.exception.violations)

    def test_non_binary_outcome(self):
        """
        Outcomes other than 0 and 1 are rejected with their line
        """
        rows = ROWS.replace("A,0,60.5", "A,2,60.5")
        with self.assertRaises(DataValidationError) as context:
            load_dataset(self.write("data.csv", rows), read_schema(self.schema_path))
        self.assertIn("outcome not binary (line 3: 2)", context.exception.violations)

    def test_declared_column_missing(self):
        """
        A column declared in the schema must exist in the file
        """
        rows = "W,Y,age\nA,1,3\nB,0,4\n"
        with self.assertRaises(DataValidationError):
            load_dataset(self.write("data.csv", rows), read_schema(self.schema_path))

    def test_too_many_levels(self):
        """
        More distinct values than declared levels is an error
        """
        rows = ROWS + "B,0,47,extra,fifth\n"
        with self.assertRaises(DataValidationError):
            load_dataset(self.write("data.csv", rows), read_schema(self.schema_path))

    def test_bad_declarations(self):
        """
        Categorical columns must declare at least two levels
        """
        schema = DatasetSchema()
        with self.assertRaises(ValueError):
            schema.add_column("stage", "categorical")
        with self.assertRaises(ValueError):
            schema.add_column("stage", "categorical:1")
        with self.assertRaises(ValueError):
            schema.add_column("age", "ordinal")
        with self.assertRaises(ValueError):
            schema.add_column("W", "continuous")


if __name__ == '__main__':
    unittest.main()
