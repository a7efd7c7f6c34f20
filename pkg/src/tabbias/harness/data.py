"""Bundled toy data, the Adult fetcher, and per-dataset presets."""

from __future__ import annotations

import csv
import io
import logging
import math
import shutil
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ADULT_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data"
# the wheel ships the untouched UCI adult.data; used when the UCI host is unreachable
ADULT_WHEEL = ("responsibly==0.1.2", "responsibly/dataset/adult/adult.data")
ADULT_ROWS = 32561
ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country",
]  # fmt: skip

LATENT_PRESETS = {"adult": 10, "intrusion": 10, "news": 20, "king": 15}
ML_PRESETS = {"reliable": (7500, 1000), "unreliable": (100, 100)}


def default_latent_dim(dataset: str, encoded_width: int) -> int:
    return LATENT_PRESETS.get(dataset.lower(), min(16, math.ceil(encoded_width / 4)))


def bundled(name: str) -> Path:
    return Path(str(resources.files("tabbias") / "data" / name))


def toy_paths() -> tuple[Path, Path]:
    """(csv, schema) of the bundled two-moons toy table."""
    return bundled("toy.csv"), bundled("toy.schema.json")


def adult_schema_path() -> Path:
    return bundled("adult.schema.json")


def make_toy(n: int = 6000, seed: int = 7) -> list[list[str]]:
    """Rows (header first) of the mixed-type two-moons toy table.

    ``x``, ``y`` trace two interleaved half circles with noise; ``moon``
    says which one; ``band`` bins ``x`` coarsely (5% missing); ``count`` is
    a Poisson count whose rate depends on the moon.
    """
    rng = np.random.default_rng(seed)
    upper = rng.random(n) < 0.5
    t = rng.uniform(0.0, np.pi, n)
    x = np.where(upper, np.cos(t), 1.0 - np.cos(t)) + 0.1 * rng.standard_normal(n)
    y = np.where(upper, np.sin(t), 0.5 - np.sin(t)) + 0.1 * rng.standard_normal(n)
    band = np.where(x < 0.0, "left", np.where(x < 1.0, "middle", "right")).astype(object)
    band[rng.random(n) < 0.05] = ""
    count = rng.poisson(np.where(upper, 2.0, 6.0))
    rows = [["x", "y", "moon", "band", "count"]]
    for i in range(n):
        rows.append([
            f"{x[i]:.6f}", f"{y[i]:.6f}", "upper" if upper[i] else "lower", band[i], str(int(count[i]))
        ])  # fmt: skip
    return rows


def write_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _adult_raw_from_uci(timeout: float) -> str:
    with urllib.request.urlopen(ADULT_URL, timeout=timeout) as resp:
        return resp.read().decode("utf-8")


def _adult_raw_from_wheel() -> str:
    spec, member = ADULT_WHEEL
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:", "-q", "-d", tmp, spec],
            check=True,
            capture_output=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            return zf.read(member).decode("utf-8")


def adult_rows(raw: str) -> list[list[str]]:
    """Convert UCI ``adult.data`` text to CSV rows: 14 features, '?' -> empty, label dropped."""
    rows = [ADULT_COLUMNS]
    for line in io.StringIO(raw):
        line = line.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 15:
            raise ValueError(f"unexpected adult.data line: {line[:80]!r}")
        rows.append(["" if c == "?" else c for c in cells[:14]])
    return rows


def fetch_adult(dest, timeout: float = 30.0) -> tuple[Path, Path]:
    """Download Adult into ``dest`` as ``adult.csv`` + ``adult.schema.json``.

    Tries the UCI repository first and falls back to the copy inside a
    PyPI wheel. Returns the two paths.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    csv_path, schema_path = dest / "adult.csv", dest / "adult.schema.json"
    raw = None
    errors = []
    for source in (lambda: _adult_raw_from_uci(timeout), _adult_raw_from_wheel):
        try:
            raw = source()
            break
        except Exception as exc:  # noqa: BLE001 - any failure means "try the next source"
            errors.append(f"{type(exc).__name__}: {exc}")
            log.info("adult source failed: %s", errors[-1])
    if raw is None:
        raise RuntimeError("could not fetch the Adult data: " + "; ".join(errors))
    rows = adult_rows(raw)
    if len(rows) - 1 != ADULT_ROWS:
        raise RuntimeError(f"expected {ADULT_ROWS} Adult rows, got {len(rows) - 1}")
    write_csv(rows, csv_path)
    shutil.copyfile(adult_schema_path(), schema_path)
    return csv_path, schema_path
