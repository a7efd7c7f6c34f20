"""Scenario configuration, execution and result files."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..bias import (
    MamlConfig,
    SeedEnsemble,
    average_bias,
    best_seed,
    derive_seed,
    drs_bias,
    fine_tune,
    maml_bias,
    make_task_datasets,
    pretrain_bias,
    save_bias,
    train_ensemble,
)
from ..schema import EncodedMatrix, TableError, carve, encode, fit_encoder, load_schema, load_table
from ..validate import DiscriminatorConfig, DivergenceReport, divergence_report
from ..vae import TrainedVae, VaeConfig, VaeSampler, fit_latent_gmm, save_vae, train_vae


log = logging.getLogger(__name__)

SCENARIOS = ("big_data", "low_data", "pretrain", "avg", "maml", "drs")
BIAS_SCENARIOS = ("pretrain", "avg", "maml", "drs")

# stream tags for derive_seed; fixed so that results never depend on run order
_SPLIT, _MODEL, _ENSEMBLE, _BIAS, _VALIDATE = 1, 2, 3, 4, 5


@dataclass
class ScenarioConfig:
    scenario: str = "low_data"
    n: int = 300
    m: int = 7500
    l: int = 1000
    s: int = 10
    vae: VaeConfig = field(default_factory=VaeConfig)
    maml: MamlConfig = field(default_factory=MamlConfig)
    repeats: int = 5
    master_seed: int = 0
    data: str = ""
    schema: str = ""
    out: str = "runs"
    extra_ml: list[tuple[int, int]] = field(default_factory=list)
    n_synth: int = 10000
    n_per_task: int = 1000
    dataset: str = ""
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if min(self.n, self.m, self.l, self.repeats) < 1:
            raise ValueError("n, m, l and repeats must all be >= 1")
        if self.scenario in BIAS_SCENARIOS and self.s < 1:
            raise ValueError("bias scenarios need s >= 1 seeds")
        if isinstance(self.vae, dict):
            self.vae = VaeConfig(**self.vae)
        if isinstance(self.maml, dict):
            self.maml = MamlConfig(**self.maml)
        if isinstance(self.discriminator, dict):
            d = dict(self.discriminator)
            d["hidden"] = tuple(d.get("hidden", (128, 64)))
            self.discriminator = DiscriminatorConfig(**d)
        self.extra_ml = [tuple(int(v) for v in p) for p in self.extra_ml]
        if not self.dataset and self.data:
            self.dataset = Path(self.data).name.split(".")[0]

    @property
    def validations(self) -> list[tuple[int, int]]:
        out = [(self.m, self.l)]
        for p in self.extra_ml:
            if p not in out:
                out.append(p)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extra_ml"] = [list(p) for p in self.extra_ml]
        d["discriminator"]["hidden"] = list(d["discriminator"]["hidden"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentResult:
    config: dict
    dataset: str
    scenario: str
    n: int
    reports: list[DivergenceReport]
    ensemble_val_losses: list[float] = field(default_factory=list)
    theta0: dict | None = None
    model: dict = field(default_factory=dict)
    index_sets: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def report(self) -> DivergenceReport:
        return self.reports[0]

    def to_dict(self) -> dict:
        """Deterministic content only; wall-clock timings live in their own file."""
        return {
            "format": "tabbias-result/1",
            "dataset": self.dataset,
            "scenario": self.scenario,
            "n": self.n,
            "config": self.config,
            "config_hash": self.config.get("_hash", ""),
            "reports": [r.to_dict() for r in self.reports],
            "ensemble_val_losses": self.ensemble_val_losses,
            "theta0": self.theta0,
            "model": self.model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentResult:
        return cls(
            config=d["config"],
            dataset=d["dataset"],
            scenario=d["scenario"],
            n=d["n"],
            reports=[DivergenceReport.from_dict(r) for r in d["reports"]],
            ensemble_val_losses=d.get("ensemble_val_losses", []),
            theta0=d.get("theta0"),
            model=d.get("model", {}),
        )

    @classmethod
    def load(cls, path) -> ExperimentResult:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Prepared:
    """Loaded data split into the generator's rows and the validation pool."""

    encoded: EncodedMatrix
    train_idx: np.ndarray
    pool_idx: np.ndarray

    @property
    def train(self) -> EncodedMatrix:
        return self.encoded.take(self.train_idx)

    @property
    def pool(self) -> EncodedMatrix:
        return self.encoded.take(self.pool_idx)


def prepare_data(config: ScenarioConfig) -> Prepared:
    schema = load_schema(config.schema)
    table = load_table(config.data, schema)
    # one encoder for every split, fitted on the whole available table
    enc = fit_encoder(table)
    encoded = encode(enc, table)
    need_pool = max(m + l for m, l in config.validations)
    if config.n + need_pool > table.n_rows:
        raise TableError(
            f"{config.data} has {table.n_rows} rows but disjoint carving needs "
            f"n={config.n} training rows + m+l={need_pool} validation rows "
            f"({config.n + need_pool} total)"
        )
    train_idx, pool_idx = carve(
        table.n_rows, [config.n, table.n_rows - config.n], derive_seed(config.master_seed, _SPLIT)
    )
    return Prepared(encoded, train_idx, pool_idx)



class Runner:
    """Runs scenarios, sharing data and seed ensembles between them.

    Everything cached is a pure function of its key, so caching never
    changes any output.
    """

    def __init__(self):
        self._data: dict = {}
        self._ensembles: dict = {}

    def data(self, config: ScenarioConfig) -> Prepared:
        key = (config.data, config.schema, config.n, config.master_seed, tuple(config.validations))
        if key not in self._data:
            self._data[key] = prepare_data(config)
        return self._data[key]

    def ensemble(self, config: ScenarioConfig, train: EncodedMatrix) -> SeedEnsemble:
        key = (config.data, config.n, config.s, config.vae, config.master_seed)
        if key not in self._ensembles:
            seeds = [derive_seed(config.master_seed, _ENSEMBLE, s) for s in range(1, config.s + 1)]
            self._ensembles[key] = train_ensemble(train, config.vae, seeds)
        return self._ensembles[key]

    def run(self, config: ScenarioConfig, out_dir: Path | None = None) -> ExperimentResult:
        timings: dict[str, float] = {}
        t0 = time.perf_counter()
        prepared = self.data(config)
        train = prepared.train
        timings["data"] = time.perf_counter() - t0

        model_seed = derive_seed(config.master_seed, _MODEL)
        bias_seed = derive_seed(config.master_seed, _BIAS)
        ensemble_losses: list[float] = []
        theta0_info = None
        theta0 = None

        t0 = time.perf_counter()
        if config.scenario in BIAS_SCENARIOS:
            ens = self.ensemble(config, train)
            ensemble_losses = ens.val_losses
            timings["ensemble"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            theta0, theta0_info = build_bias(config, ens, bias_seed)
            timings["bias"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            model = fine_tune(theta0, train, config.vae, model_seed)
        else:
            model = train_vae(train, config.vae, model_seed)
        gmm = fit_latent_gmm(model, train, seed=model_seed)
        timings["generator"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        sampler = VaeSampler(model, gmm)
        reports = []
        pool = prepared.pool
        val_seed = derive_seed(config.master_seed, _VALIDATE)
        for m, l in config.validations:
            rep = divergence_report(sampler, pool.values, m, l, config.repeats, val_seed, config.discriminator)
            rep.provenance = {
                "dataset": config.dataset,
                "scenario": config.scenario,
                "n": config.n,
                "master_seed": config.master_seed,
                "config_hash": config.config_hash(),
                "validation_seed": val_seed,
            }
            reports.append(rep)
        timings["validation"] = time.perf_counter() - t0

        snapshot = config.to_dict()
        snapshot["_hash"] = config.config_hash()
        result = ExperimentResult(
            config=snapshot,
            dataset=config.dataset,
            scenario=config.scenario,
            n=config.n,
            reports=reports,
            ensemble_val_losses=ensemble_losses,
            theta0=theta0_info,
            model={
                "seed": model.seed,
                "best_val_loss": model.best_val_loss,
                "best_epoch": model.best_epoch,
                "epochs_run": len(model.train_curve) - 1,
                "gmm_components": gmm.k,
                "gmm_dropped": list(gmm.dropped),
                "latent_sampler": "maximum-likelihood EM Gaussian mixture, refit after training",
            },
            index_sets={
                "train": prepared.train_idx.tolist(),
                "pool": prepared.pool_idx.tolist(),
                "validation": {
                    f"{m}x{l}": repeat_index_sets(prepared.pool_idx, m, l, config.repeats, val_seed)
                    for m, l in config.validations
                },
            },
            timings=timings,
        )
        if out_dir is not None:
            write_result(result, model, gmm, theta0, Path(out_dir))
        return result


def repeat_index_sets(pool_idx: np.ndarray, m: int, l: int, repeats: int, seed: int) -> list[dict]:
    """Original-table row ids used for discriminator training and estimation in each repeat.

    Mirrors the carving inside :func:`divergence_report`.
    """
    out = []
    for r in range(repeats):
        rseed = int(np.random.SeedSequence([seed, r]).generate_state(1)[0])
        perm = np.random.default_rng(rseed).permutation(pool_idx.size)
        out.append({"m": pool_idx[perm[:m]].tolist(), "l": pool_idx[perm[m : m + l]].tolist()})
    return out


def build_bias(config: ScenarioConfig, ens: SeedEnsemble, seed: int):
    info = {
        "strategy": config.scenario,
        "source_seeds": [m.seed for m in ens.members],
        "ensemble_val_losses": ens.val_losses,
    }
    if config.scenario == "pretrain":
        info["best_seed_index"] = best_seed(ens)
        info["n_synth"] = config.n_synth
        theta0 = pretrain_bias(ens, config.n_synth, config.vae, seed)
    elif config.scenario == "avg":
        theta0 = average_bias(ens)
    elif config.scenario == "maml":
        tasks = make_task_datasets(ens, config.n_per_task, seed)
        info["n_per_task"] = config.n_per_task
        info["maml"] = asdict(config.maml)
        info["maml_mode"] = "first-order" if config.maml.first_order else "second-order"
        theta0 = maml_bias(tasks, config.maml, config.vae, seed)
    elif config.scenario == "drs":
        tasks = make_task_datasets(ens, config.n_per_task, seed)
        info["n_per_task"] = config.n_per_task
        theta0 = drs_bias(tasks, config.vae, seed)
    else:
        raise ValueError(f"{config.scenario} is not a bias scenario")
    info["fine_tune"] = "fresh Adam state, same learning rate as base training"
    return theta0, info


def result_dir(out: Path, result: ExperimentResult) -> Path:
    return out / result.dataset / result.scenario


def write_result(result: ExperimentResult, model: TrainedVae, gmm, theta0, out: Path) -> Path:
    d = result_dir(out, result)
    d.mkdir(parents=True, exist_ok=True)
    (d / "result.json").write_text(json.dumps(result.to_dict(), indent=1, sort_keys=True) + "\n")
    (d / "indices.json").write_text(json.dumps(result.index_sets, sort_keys=True) + "\n")
    (d / "timings.json").write_text(json.dumps(result.timings, indent=1, sort_keys=True) + "\n")
    for rep in result.reports:
        rep.save(d / f"report_m{rep.m}_l{rep.l}.json")
    save_vae(model, gmm, d / "model")
    if theta0 is not None:
        save_bias(theta0, result.theta0, d / "bias")
    return d


def run_grid(configs: Sequence[ScenarioConfig], out: str | Path | None = None, runner: Runner | None = None):
    """Run several scenarios with one shared cache, then write the tables."""
    from .tables import emit_tables

    runner = runner or Runner()
    results = []
    for cfg in configs:
        log.info("running %s on %s (n=%d)", cfg.scenario, cfg.dataset, cfg.n)
        results.append(runner.run(cfg, None if out is None else Path(out)))
    if out is not None and results:
        emit_tables(results, Path(out))
    return results


def grid_configs(base: ScenarioConfig, scenarios: Sequence[str], big_n: int = 10000) -> list[ScenarioConfig]:
    out = []
    for sc in scenarios:
        n = big_n if sc == "big_data" else base.n
        out.append(replace(base, scenario=sc, n=n))
    return out
