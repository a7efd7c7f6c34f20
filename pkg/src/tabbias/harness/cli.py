"""Command line entry point: ``tabbias {run,oracle,gains,fetch-data}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..schema import load_schema
from ..validate import DivergenceReport
from .data import ML_PRESETS, default_latent_dim, fetch_adult
from .oracle import ORACLE_CASES, oracle_mode
from .scenarios import SCENARIOS, ScenarioConfig, run_grid
from .tables import compute_gains, fmt_pair

log = logging.getLogger("tabbias")

DEFAULT_DATA_DIR = Path.home() / ".cache" / "tabbias"


def _encoded_width(schema_path: str) -> int:
    width = 0
    for col in load_schema(schema_path).columns:
        width += len(col.categories) if col.kind in ("categorical", "binary") else 1
        width += 1 if col.missing_allowed else 0
    return width


def build_configs(args) -> list[ScenarioConfig]:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    overrides = {
        "data": args.data,
        "schema": args.schema,
        "n": args.n,
        "m": args.m,
        "l": args.l,
        "s": args.seeds,
        "repeats": args.repeats,
        "master_seed": args.master_seed,
        "out": args.out,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.ml_preset:
        m, l = ML_PRESETS[args.ml_preset[0]]
        base["m"], base["l"] = m, l
        base["extra_ml"] = [list(ML_PRESETS[p]) for p in args.ml_preset[1:]]
    if not base.get("data") or not base.get("schema"):
        raise ValueError("both a data file and a schema file are required (--data/--schema or the config)")
    latent_given = args.latent_dim is not None or "latent_dim" in base.get("vae", {})
    scenarios = args.scenario or [base.pop("scenario", "low_data")]
    base.pop("scenario", None)
    template = ScenarioConfig.from_dict({**base, "scenario": scenarios[0]})
    if args.latent_dim is not None:
        template = replace(template, vae=template.vae.replace(latent_dim=args.latent_dim))
    elif not latent_given:
        dim = default_latent_dim(template.dataset, _encoded_width(template.schema))
        template = replace(template, vae=template.vae.replace(latent_dim=dim))
    configs = []
    for sc in scenarios:
        n = args.big_n if (sc == "big_data" and args.n is None and args.big_n) else template.n
        configs.append(replace(template, scenario=sc, n=n))
    return configs


def cmd_run(args) -> int:
    configs = build_configs(args)
    out = Path(configs[0].out)
    results = run_grid(configs, out)
    for res in results:
        for rep in res.reports:
            flag = "" if rep.reliable else "  UNRELIABLE"
            print(
                f"{res.dataset} {res.scenario} n={res.n} m={rep.m} l={rep.l}  "
                f"JS {fmt_pair(rep.js_mean, rep.js_std)}  KL {fmt_pair(rep.kl_mean, rep.kl_std)}{flag}"
            )
    print(f"tables written to {out}")
    return 0


def cmd_oracle(args) -> int:
    res = oracle_mode(args.case, m=args.m, l=args.l, repeats=args.repeats, seed=args.seed)
    rep = res.report
    kl_err = "n/a" if res.kl_rel_error is None else f"{res.kl_rel_error:.3f}"
    print(f"case {res.case}: m={rep.m} l={rep.l} repeats={rep.repeats}")
    print(f"  KL true {res.true_kl:.4f}  estimate {fmt_pair(rep.kl_mean, rep.kl_std)}  rel. error {kl_err}")
    print(f"  JS true {res.true_js:.4f}  estimate {fmt_pair(rep.js_mean, rep.js_std)}  abs. error {res.js_abs_error:.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n")
    return 0


def cmd_gains(args) -> int:
    low = DivergenceReport.load(args.low)
    for path in args.method:
        method = DivergenceReport.load(path)
        for g in compute_gains(low, method):
            rel = "N/A" if g.relative is None else f"{g.relative:.3f}"
            print(f"{path} {g.metric.upper()} gain {g.absolute:.3f} ({rel})")
    return 0


def cmd_fetch(args) -> int:
    if args.dataset != "adult":
        raise ValueError(f"no fetcher for {args.dataset!r}")
    csv_path, schema_path = fetch_adult(args.dest)
    print(f"wrote {csv_path} and {schema_path}")
    return 0


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabbias", description="Inductive-bias experiments for tabular VAEs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one or more scenarios and write tables")
    r.add_argument("--config", help="JSON file mirroring ScenarioConfig")
    r.add_argument("--data")
    r.add_argument("--schema")
    r.add_argument("--scenario", action="append", choices=SCENARIOS, help="repeatable")
    r.add_argument("--n", type=_positive)
    r.add_argument("--big-n", type=_positive, default=10000, help="rows for big_data when --n is not given")
    r.add_argument("--m", type=_positive)
    r.add_argument("--l", type=_positive)
    r.add_argument("--seeds", type=_positive, help="ensemble size S")
    r.add_argument("--latent-dim", type=_positive)
    r.add_argument("--repeats", type=_positive)
    r.add_argument("--master-seed", type=int)
    r.add_argument("--ml-preset", action="append", choices=sorted(ML_PRESETS), help="repeatable; first one sets m/l")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="calibrate the estimators on analytic distributions")
    o.add_argument("--case", required=True, choices=sorted(ORACLE_CASES))
    o.add_argument("--m", type=_positive, default=5000)
    o.add_argument("--l", type=_positive, default=5000)
    o.add_argument("--repeats", type=_positive, default=5)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--json", help="also write the full report here")
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("gains", help="gains of method reports over a low-data report")
    g.add_argument("--low", required=True)
    g.add_argument("--method", required=True, nargs="+")
    g.set_defaults(func=cmd_gains)

    f = sub.add_parser("fetch-data", help="download a public dataset")
    f.add_argument("dataset", choices=["adult"])
    f.add_argument("--dest", default=str(DEFAULT_DATA_DIR))
    f.set_defaults(func=cmd_fetch)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one diagnostic line
        print(f"tabbias: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
