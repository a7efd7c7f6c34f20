import numpy as np
import pytest

from tabbias.harness.data import toy_paths
from tabbias.schema import encode, fit_encoder, load_schema, load_table
from tabbias.vae import VaeConfig

TINY = VaeConfig(latent_dim=2, hidden_size=8, depth=1, max_epochs=4, patience=2, batch_size=32, gmm_components=2)


@pytest.fixture(scope="session")
def toy_table():
    csv_path, schema_path = toy_paths()
    return load_table(csv_path, load_schema(schema_path))


@pytest.fixture(scope="session")
def toy_encoded(toy_table):
    return encode(fit_encoder(toy_table), toy_table)


@pytest.fixture(scope="session")
def toy_small(toy_encoded):
    idx = np.random.default_rng(0).choice(toy_encoded.n_rows, size=200, replace=False)
    return toy_encoded.take(np.sort(idx))


@pytest.fixture(scope="session")
def tiny_config():
    return TINY


_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance check; returns the flag for asserting."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in _VERDICTS:
            terminalreporter.line(line)
