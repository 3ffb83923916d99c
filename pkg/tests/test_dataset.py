# tests/test_dataset.py
"""
Dataset tests for Fair GLM.

These tests verify:
- Schema and CSV loading with complete-case filtering
- Row-level and schema-level errors
- Train-only encoding, one-hot references and decoding
- Reproducible stratified splitting
"""

import json

import numpy as np
import pandas as pd
import pytest


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _toy_schema(outcome_type="continuous", **extra):
    from src.models import DatasetSchema
    return DatasetSchema(
        outcome="y", outcome_type=outcome_type, sensitive="g",
        features=[{"name": "x", "kind": "continuous"}, {"name": "c", "kind": "categorical"}],
        **extra,
    )


# =============================================================================
# Loading Tests
# =============================================================================

class TestLoadSchema:
    """Test schema document loading."""

    def test_load_schema(self, tmp_path):
        """Test a schema document loads with its roles."""
        from src.dataset import load_schema
        from tests.conftest import schema_document

        path = _write(tmp_path, json.dumps(schema_document("binary")), "schema.json")
        schema = load_schema(path)

        assert schema.sensitive_column == "group"
        assert schema.positive_label == "yes"

    def test_missing_schema_file(self, tmp_path):
        """Test an absent schema file raises SchemaError."""
        from src.dataset import load_schema
        from src.errors import SchemaError

        with pytest.raises(SchemaError):
            load_schema(tmp_path / "absent.json")

    def test_invalid_schema_document(self, tmp_path):
        """Test a document without required keys raises SchemaError."""
        from src.dataset import load_schema
        from src.errors import SchemaError

        path = _write(tmp_path, json.dumps({"outcome": "y"}), "schema.json")
        with pytest.raises(SchemaError):
            load_schema(path)


class TestLoadCsv:
    """Test CSV loading."""

    def test_drops_incomplete_rows(self, tmp_path):
        """Test a 3-row file with one missing outcome keeps 2 rows."""
        from src.dataset import load_csv

        path = _write(tmp_path, "y,g,x,c\n1.5,a,1,u\n,b,2,v\n2.5,b,3,u\n")
        data = load_csv(path, _toy_schema())

        assert data.n == 2
        assert data.dropped_rows == 1
        assert list(data.frame["y"]) == [1.5, 2.5]

    def test_missing_tokens_count_as_missing(self, tmp_path):
        """Test NA and ? mark a field as missing."""
        from src.dataset import load_csv

        path = _write(tmp_path, "y,g,x,c\n1.5,a,NA,u\n2.0,b,2,?\n2.5,b,3,u\n")
        data = load_csv(path, _toy_schema())

        assert data.n == 1
        assert data.dropped_rows == 2

    def test_missing_column(self, tmp_path):
        """Test a header without a schema column names the column."""
        from src.dataset import load_csv
        from src.errors import SchemaError

        path = _write(tmp_path, "y,g,x\n1,a,1\n")
        with pytest.raises(SchemaError, match="c"):
            load_csv(path, _toy_schema())

    def test_unparseable_numeric_reports_row(self, tmp_path):
        """Test a bad number reports its row and column."""
        from src.dataset import load_csv
        from src.errors import RowParseError

        path = _write(tmp_path, "y,g,x,c\n1,a,1,u\n2,b,abc,u\n")
        with pytest.raises(RowParseError) as info:
            load_csv(path, _toy_schema())

        assert info.value.row_index == 1
        assert info.value.column == "x"

    def test_no_complete_rows(self, tmp_path):
        """Test a file with no complete row raises EmptyDatasetError."""
        from src.dataset import load_csv
        from src.errors import EmptyDatasetError

        path = _write(tmp_path, "y,g,x,c\n,a,1,u\n2,,1,u\n")
        with pytest.raises(EmptyDatasetError):
            load_csv(path, _toy_schema())

    def test_count_outcome_must_be_integer(self, tmp_path):
        """Test a fractional count outcome is rejected."""
        from src.dataset import load_csv
        from src.errors import RowParseError

        path = _write(tmp_path, "y,g,x,c\n1,a,1,u\n2.5,b,1,u\n")
        with pytest.raises(RowParseError):
            load_csv(path, _toy_schema("count"))

    def test_quoted_fields(self, tmp_path):
        """Test quoted fields may contain commas."""
        from src.dataset import load_csv

        path = _write(tmp_path, 'y,g,x,c\n1,"group, one",1,"u"\n2,b,2,v\n')
        data = load_csv(path, _toy_schema())

        assert sorted(data.frame["g"]) == ["b", "group, one"]

    def test_four_groups(self, make_files):
        """Test a four-category sensitive attribute gives K=4."""
        from src.dataset import encode, load_csv, load_schema, split

        schema_path, data_path = make_files(groups=("w", "x", "y", "z"), n=400)
        data = load_csv(data_path, load_schema(schema_path))
        train, test = encode(*split(data, 0.3, 0))

        assert train.n_groups == 4
        assert test.group_names == train.group_names


# =============================================================================
# Encoding Tests
# =============================================================================

def _frame_dataset(frame, schema):
    from src.dataset import Dataset
    return Dataset(frame.reset_index(drop=True), schema)


class TestEncode:
    """Test design-matrix encoding."""

    def test_one_hot_reference_dropped(self):
        """Test levels {a,b,c} with reference a give 2 indicator columns."""
        from src.dataset import encode

        schema = _toy_schema()
        frame = pd.DataFrame({"y": [1.0, 2.0, 3.0], "g": ["p", "q", "p"],
                              "x": [1.0, 2.0, 3.0], "c": ["a", "b", "c"]})
        train, _ = encode(_frame_dataset(frame, schema), _frame_dataset(frame, schema))

        assert train.column_names == ("(intercept)", "x", "c=b", "c=c")
        assert np.array_equal(train.X[:, 2:], [[0, 0], [1, 0], [0, 1]])
        assert np.all(train.X[:, 2:].sum(axis=1) <= 1)

    def test_standardizes_with_train_statistics(self):
        """Test train mean 5, sd 2 maps a test value 7 to 1.0."""
        from src.dataset import encode

        schema = _toy_schema()
        train = pd.DataFrame({"y": [0.0, 1.0], "g": ["p", "q"], "x": [3.0, 7.0], "c": ["a", "a"]})
        test = pd.DataFrame({"y": [0.0], "g": ["p"], "x": [7.0], "c": ["a"]})
        _, encoded = encode(_frame_dataset(train, schema), _frame_dataset(test, schema))

        assert encoded.X[0, 1] == pytest.approx(1.0)

    def test_zero_variance_column_passes_through(self, caplog):
        """Test a constant column is left unstandardized with a warning."""
        from src.dataset import encode

        schema = _toy_schema()
        frame = pd.DataFrame({"y": [0.0, 1.0, 2.0], "g": ["p", "q", "p"], "x": [3.0, 3.0, 3.0],
                              "c": ["a", "b", "a"]})
        train, _ = encode(_frame_dataset(frame, schema), _frame_dataset(frame, schema))

        assert np.all(train.X[:, 1] == 3.0)
        assert train.encoder_state.unstandardized == ("x",)
        assert any("zero-variance" in w for w in train.warnings)
        assert "zero variance" in caplog.text

    def test_unseen_test_level_is_reference(self):
        """Test a level absent from training encodes as the reference."""
        from src.dataset import encode

        schema = _toy_schema()
        train = pd.DataFrame({"y": [0.0, 1.0], "g": ["p", "q"], "x": [1.0, 2.0], "c": ["a", "b"]})
        test = pd.DataFrame({"y": [0.0], "g": ["q"], "x": [1.0], "c": ["z"]})
        _, encoded = encode(_frame_dataset(train, schema), _frame_dataset(test, schema))

        assert encoded.X[0, 2] == 0.0

    def test_test_data_never_changes_encoder(self, binary_dataset):
        """Test the encoder depends on training rows only."""
        from src.dataset import encode, split

        train_raw, test_raw = split(binary_dataset, 0.3, 1)
        other_test = binary_dataset.take(np.arange(5))
        first, _ = encode(train_raw, test_raw)
        second, _ = encode(train_raw, other_test)

        assert first.encoder_state == second.encoder_state
        assert np.array_equal(first.X, second.X)

    def test_binary_positive_label(self, binary_dataset):
        """Test the positive label maps to 1 and the intercept is first."""
        from src.dataset import encode

        train, _ = encode(binary_dataset, binary_dataset)
        expected = (binary_dataset.frame["outcome"] == "yes").to_numpy(dtype=float)

        assert np.array_equal(train.y, expected)
        assert train.X[:, 0].tolist() == [1.0] * train.n

    def test_binary_without_positive_label_needs_zero_one(self):
        """Test text labels need a positive_label."""
        from src.dataset import encode
        from src.errors import RowParseError

        schema = _toy_schema("binary")
        frame = pd.DataFrame({"y": ["0", "yes"], "g": ["p", "q"], "x": [1.0, 2.0], "c": ["a", "a"]})
        with pytest.raises(RowParseError):
            encode(_frame_dataset(frame, schema), _frame_dataset(frame, schema))

    def test_positive_label_absent_from_training(self):
        """Test a misspelled positive label is rejected instead of encoding all zeros."""
        from src.dataset import encode
        from src.errors import DataError

        schema = _toy_schema("binary", positive_label="Yes")
        frame = pd.DataFrame({"y": ["yes", "no", "yes", "no"], "g": ["p", "q"] * 2,
                              "x": [1.0, 2.0, 3.0, 4.0], "c": ["a"] * 4})
        with pytest.raises(DataError, match="positive_label 'Yes'"):
            encode(_frame_dataset(frame, schema), _frame_dataset(frame, schema))

    def test_third_binary_label_in_training(self):
        """Test a binary column with three labels is rejected."""
        from src.dataset import encode
        from src.errors import DataError

        schema = _toy_schema("binary", positive_label="yes")
        frame = pd.DataFrame({"y": ["yes", "no", "maybe", "no"], "g": ["p", "q"] * 2,
                              "x": [1.0, 2.0, 3.0, 4.0], "c": ["a"] * 4})
        with pytest.raises(DataError, match="3 labels"):
            encode(_frame_dataset(frame, schema), _frame_dataset(frame, schema))

    def test_unknown_binary_label_in_test_rows(self):
        """Test a test row outside the two training labels reports its row."""
        from src.dataset import encode
        from src.errors import RowParseError

        schema = _toy_schema("binary", positive_label="yes")
        train = pd.DataFrame({"y": ["yes", "no", "yes", "no"], "g": ["p", "q"] * 2,
                              "x": [1.0, 2.0, 3.0, 4.0], "c": ["a"] * 4})
        test = pd.DataFrame({"y": ["no", "maybe"], "g": ["p", "q"], "x": [1.0, 2.0], "c": ["a"] * 2})
        with pytest.raises(RowParseError) as info:
            encode(_frame_dataset(train, schema), _frame_dataset(test, schema))

        assert info.value.row_index == 1

    def test_multiclass_uses_schema_order(self, make_files):
        """Test class_labels fixes the class order."""
        from src.dataset import encode, load_csv, load_schema

        schema_path, data_path = make_files("multiclass")
        data = load_csv(data_path, load_schema(schema_path))
        train, _ = encode(data, data)

        assert train.encoder_state.class_labels == ("low", "mid", "high")
        assert train.n_classes == 3
        assert set(np.unique(train.y)) <= {0.0, 1.0, 2.0}

    def test_single_group_rejected(self):
        """Test training with one group raises DataError."""
        from src.dataset import encode
        from src.errors import DataError

        schema = _toy_schema()
        frame = pd.DataFrame({"y": [0.0, 1.0], "g": ["p", "p"], "x": [1.0, 2.0], "c": ["a", "a"]})
        with pytest.raises(DataError):
            encode(_frame_dataset(frame, schema), _frame_dataset(frame, schema))

    def test_encoded_arrays_are_read_only(self, binary_dataset):
        """Test encoded arrays cannot be modified."""
        from src.dataset import encode

        train, _ = encode(binary_dataset, binary_dataset)
        with pytest.raises(ValueError):
            train.X[0, 0] = 2.0


class TestDecode:
    """Test recovery of raw values."""

    def test_round_trip(self, binary_dataset):
        """Test decoding recovers the raw feature values."""
        from src.dataset import decode, encode, split

        train_raw, test_raw = split(binary_dataset, 0.3, 3)
        train, test = encode(train_raw, test_raw)

        for raw, encoded in [(train_raw, train), (test_raw, test)]:
            decoded = decode(encoded)
            assert list(decoded.columns) == ["age", "priors", "charge"]
            np.testing.assert_allclose(decoded["age"].to_numpy(dtype=float),
                                       raw.frame["age"].to_numpy(), rtol=0, atol=1e-12)
            np.testing.assert_allclose(decoded["priors"].to_numpy(dtype=float),
                                       raw.frame["priors"].to_numpy(), rtol=0, atol=1e-12)
            assert list(decoded["charge"]) == list(raw.frame["charge"])


# =============================================================================
# Splitting Tests
# =============================================================================

def _small_dataset():
    schema = _toy_schema("binary", positive_label="1")
    frame = pd.DataFrame({
        "y": ["0", "0", "1", "1", "1", "0", "0", "1", "1", "1"],
        "g": ["a"] * 5 + ["b"] * 5,
        "x": np.arange(10, dtype=float),
        "c": ["u", "v"] * 5,
    })
    return _frame_dataset(frame, schema)


class TestSplit:
    """Test reproducible splitting."""

    def test_sizes(self):
        """Test n=10 with fraction 0.3 gives 3 test rows."""
        from src.dataset import split

        train, test = split(_small_dataset(), 0.3, 7)

        assert test.n == 3
        assert train.n == 7

    def test_deterministic(self):
        """Test one seed gives the same partition."""
        from src.dataset import split

        first = split(_small_dataset(), 0.3, 7)
        second = split(_small_dataset(), 0.3, 7)

        assert first[1].frame.equals(second[1].frame)
        assert first[0].frame.equals(second[0].frame)

    @pytest.mark.parametrize("stratified", [True, False])
    def test_partition(self, binary_dataset, stratified):
        """Test the halves partition the rows with a rounded test share."""
        from src.dataset import split

        train, test = split(binary_dataset, 0.3, 11, stratified=stratified)
        rows = pd.concat([train.frame, test.frame]).sort_values(list(train.frame.columns))
        expected = binary_dataset.frame.sort_values(list(train.frame.columns))

        assert train.n + test.n == binary_dataset.n
        assert test.n == int(np.floor(binary_dataset.n * 0.3 + 0.5))
        assert rows.reset_index(drop=True).equals(expected.reset_index(drop=True))

    def test_every_group_in_both_halves(self, make_files):
        """Test stratification keeps every group on both sides."""
        from src.dataset import load_csv, load_schema, split

        schema_path, data_path = make_files(groups=("w", "x", "y", "z"), n=60)
        data = load_csv(data_path, load_schema(schema_path))
        for seed in range(10):
            train, test = split(data, 0.3, seed)
            assert set(train.frame["group"]) == set(data.frame["group"])
            assert set(test.frame["group"]) == set(data.frame["group"])

    def test_distinct_partitions_across_seeds(self, binary_dataset):
        """Test different seeds give different partitions."""
        from src.dataset import split

        partitions = {tuple(split(binary_dataset, 0.3, seed)[1].frame["age"]) for seed in range(20)}

        assert len(partitions) == 20

    def test_singleton_group_goes_to_train(self, caplog):
        """Test a group with one row stays in training."""
        from src.dataset import split

        schema = _toy_schema("binary", positive_label="1")
        frame = pd.DataFrame({
            "y": ["0", "1"] * 5,
            "g": ["a"] * 5 + ["b"] * 4 + ["c"],
            "x": np.arange(10, dtype=float),
            "c": ["u"] * 10,
        })
        train, test = split(_frame_dataset(frame, schema), 0.3, 0)

        assert "c" in set(train.frame["g"])
        assert "c" not in set(test.frame["g"])
        assert "single row" in caplog.text

    def test_fraction_out_of_range(self):
        """Test a test fraction of 1 is rejected."""
        from src.dataset import split

        with pytest.raises(ValueError):
            split(_small_dataset(), 1.0, 0)
