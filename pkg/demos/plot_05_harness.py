"""
Running a scenario grid and reading the gain table
===================================================

The harness runs scenarios with shared caches and writes per-scenario
results plus the scenario and gain tables. The command line does the same:

    tabbias run --data toy.csv --schema toy.schema.json --scenario low_data \
        --scenario pretrain --n 300 --m 1500 --l 500 --out runs/
"""

import tempfile
from pathlib import Path

from tabbias.harness.data import toy_paths
from tabbias.harness.scenarios import ScenarioConfig, grid_configs, run_grid
from tabbias.vae import VaeConfig

csv_path, schema_path = toy_paths()
base = ScenarioConfig(
    data=str(csv_path),
    schema=str(schema_path),
    n=300,
    m=1500,
    l=500,
    s=3,
    repeats=2,
    n_synth=2000,
    n_per_task=500,
    vae=VaeConfig(latent_dim=3, hidden_size=32, max_epochs=40, patience=8),
)

out = Path(tempfile.mkdtemp())
run_grid(grid_configs(base, ["big_data", "low_data", "pretrain", "avg"], big_n=3000), out)
print((out / "scenario_table.md").read_text())
print((out / "gain_table.md").read_text())
print("per-scenario results under", out / "toy")
