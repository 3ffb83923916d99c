# tests/conftest.py
"""
Shared pytest fixtures for Fair GLM.

These fixtures provide synthetic tabular datasets, schema documents and
random GLM instances for the unit and integration tests.
"""

import json

import numpy as np
import pandas as pd
import pytest


# =============================================================================
# Logging
# =============================================================================

@pytest.fixture(autouse=True)
def quiet_logging(caplog):
    """Capture warnings instead of printing them."""
    caplog.set_level("WARNING")
    yield


# =============================================================================
# Synthetic Data
# =============================================================================

def synthetic_frame(n: int = 200, seed: int = 0, outcome_type: str = "binary",
                    groups=("a", "b"), group_effect: float = 1.0) -> pd.DataFrame:
    """Tabular data whose outcome depends on the group through the features."""
    rng = np.random.default_rng(seed)
    group = rng.choice(list(groups), size=n)
    shift = np.array([list(groups).index(g) for g in group], dtype=float)

    age = rng.normal(35 + 5 * shift, 8)
    priors = rng.poisson(1 + shift).astype(float)
    charge = rng.choice(["F", "M", "O"], size=n)
    eta = -0.5 + group_effect * 0.4 * shift + 0.03 * (age - 35) + 0.3 * priors + 0.4 * (charge == "F")

    if outcome_type == "binary":
        outcome = np.where(rng.random(n) < 1 / (1 + np.exp(-eta)), "yes", "no")
    elif outcome_type == "continuous":
        outcome = np.round(eta + rng.normal(0, 0.5, n), 6)
    elif outcome_type == "count":
        outcome = rng.poisson(np.exp(0.5 * eta))
    else:
        outcome = np.array(["low", "mid", "high"])[np.clip(np.round(eta + rng.normal(0, 0.7, n)), 0, 2).astype(int)]

    return pd.DataFrame({
        "outcome": outcome,
        "group": group,
        "age": np.round(age, 3),
        "priors": priors,
        "charge": charge,
    })


def schema_document(outcome_type: str = "binary") -> dict:
    document = {
        "outcome": "outcome",
        "outcome_type": outcome_type,
        "sensitive": "group",
        "features": [
            {"name": "age", "kind": "continuous"},
            {"name": "priors", "kind": "continuous"},
            {"name": "charge", "kind": "categorical"},
        ],
    }
    if outcome_type == "binary":
        document["positive_label"] = "yes"
    if outcome_type == "multiclass":
        document["class_labels"] = ["low", "mid", "high"]
    return document


@pytest.fixture
def make_files(tmp_path):
    """Write a synthetic CSV and its schema; returns (schema_path, data_path)."""
    def _make(outcome_type="binary", n=200, seed=0, groups=("a", "b"), name="data", **kwargs):
        frame = synthetic_frame(n=n, seed=seed, outcome_type=outcome_type, groups=groups, **kwargs)
        data_path = tmp_path / f"{name}.csv"
        schema_path = tmp_path / f"{name}_schema.json"
        frame.to_csv(data_path, index=False)
        schema_path.write_text(json.dumps(schema_document(outcome_type)))
        return str(schema_path), str(data_path)
    return _make


@pytest.fixture
def binary_files(make_files):
    return make_files("binary")


@pytest.fixture
def schema():
    from src.models import DatasetSchema
    return DatasetSchema(**schema_document("binary"))


@pytest.fixture
def binary_dataset(binary_files):
    from src.dataset import load_csv, load_schema
    schema_path, data_path = binary_files
    return load_csv(data_path, load_schema(schema_path))


# =============================================================================
# Random GLM Instances
# =============================================================================

def glm_instance(kind: str, n: int, p: int, rng: np.random.Generator, n_classes: int = 3):
    """Random (X, y, family) with an intercept column and moderate signal."""
    from src.families import get_family

    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    family = get_family(kind, n_classes if kind == "multinomial" else None)
    if kind == "gaussian":
        y = X @ rng.normal(size=p) + rng.normal(size=n)
    elif kind == "bernoulli":
        y = (rng.random(n) < 1 / (1 + np.exp(-X @ rng.normal(scale=0.5, size=p)))).astype(float)
    elif kind == "poisson":
        y = rng.poisson(np.exp(X @ rng.normal(scale=0.3, size=p))).astype(float)
    else:
        y = rng.integers(0, n_classes, size=n).astype(float)
    return X, y, family


def random_psd(p: int, rng: np.random.Generator) -> np.ndarray:
    """Random PSD matrix with a zero intercept row and column."""
    A = rng.normal(size=(p - 1, p - 1))
    D = np.zeros((p, p))
    D[1:, 1:] = A @ A.T / p
    return D


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
