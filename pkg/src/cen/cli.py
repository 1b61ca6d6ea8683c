"""Command-line surface: generate data, run chains, evaluate, dump, ablate.

Every command takes one JSON config (sections: data, run, optional ablate)
plus dotted-path overrides, and writes into an output directory that holds a
copy of the fully resolved config. Exit codes: 0 success, 1 config error,
2 numerical divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .data import DataConfig, datasets_from_config, save_csv, split_at, synth_generate
from .errors import ConfigError, DataError, DivergenceError
from .evolution import (
    RUN_LOG_NAME,
    RunConfig,
    config_with_generations,
    gen_dir,
    generation_complete,
    run,
)
from .inference import dump_distributions, evaluate
from .metrics import format_report
from .model import load_checkpoint

CONFIG_COPY_NAME = "config.json"


def default_config() -> dict:
    """A complete config: the seed-0 synthetic benchmark with default training."""
    return {
        "data": {
            "source": "synth",
            "seed": 0,
            "n_train": 2000,
            "n_test": 500,
            "l1": 16,
            "lk": 77,
            "feature_dim": 32,
            "noise_sigma": 0.1,
            "n_identities": 50,
            "split_seed": 0,
            "train_csv": None,
            "test_csv": None,
            "eval_sigma": None,
        },
        "run": {
            "tau": 2.0,
            "alpha": 0.5,
            "lambda1": 4.0,
            "lambda_t": 4.0,
            "epochs": 30,
            "batch_size": 128,
            "lr": 0.01,
            "momentum": 0.9,
            "weight_decay": 1e-4,
            "lr_decay_factor": 0.1,
            "lr_decay_interval": 20,
            "generations": 4,
            "warm_start": True,
            "init_seed": 0,
            "shuffle_seed": 0,
            "trunk_dims": [64, 64],
            "activation": "relu",
            "head_mode": "both",
            "kl_tau_square_rescale": False,
            "ce_at_transfer_tau": False,
            "inference_tau": 1.0,
        },
    }


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be an object")
    return doc


def parse_override(spec: str) -> tuple[list[str], object]:
    if "=" not in spec:
        raise ConfigError(f"override '{spec}' must look like section.key=value")
    key, raw = spec.split("=", 1)
    path = key.strip().split(".")
    if len(path) < 2 or not all(path):
        raise ConfigError(f"override key '{key}' must be a dotted path like data.seed")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    doc = json.loads(json.dumps(doc))  # deep copy
    for spec in overrides:
        path, value = parse_override(spec)
        node = doc
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"override '{spec}': unknown section '{part}'")
            node = node[part]
        node[path[-1]] = value
    return doc


def resolve_config(doc: dict) -> tuple[DataConfig, RunConfig, dict | None]:
    for key in doc:
        if key not in ("data", "run", "ablate"):
            raise ConfigError(f"unknown config section '{key}'")
    for key in ("data", "run"):
        if key not in doc:
            raise ConfigError(f"missing config section '{key}'")
    data_cfg = DataConfig.from_dict(doc["data"])
    run_cfg = RunConfig.from_dict(doc["run"])
    ablate = doc.get("ablate")
    if ablate is not None:
        if not isinstance(ablate, dict) or set(ablate) != {"grid"}:
            raise ConfigError("ablate section must be an object with a single 'grid' key")
        grid = ablate["grid"]
        if not isinstance(grid, dict) or not all(
            isinstance(v, list) and v for v in grid.values()
        ):
            raise ConfigError("ablate.grid must map dotted keys to non-empty value lists")
    return data_cfg, run_cfg, ablate


def resolved_doc(data_cfg: DataConfig, run_cfg: RunConfig, ablate: dict | None) -> dict:
    doc = {"data": data_cfg.to_dict(), "run": run_cfg.to_dict()}
    if ablate is not None:
        doc["ablate"] = ablate
    return doc


def write_config_copy(out: Path, doc: dict) -> None:
    (out / CONFIG_COPY_NAME).write_text(json.dumps(doc, indent=2) + "\n")


def prepare_out_dir(out: Path, force: bool, resume: bool = False) -> None:
    """Create the output directory, refusing to clobber an existing run."""
    if out.exists() and any(out.iterdir()):
        if resume:
            return
        if not force:
            raise ConfigError(
                f"output directory '{out}' already contains files (pass --force to overwrite)"
            )
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _check_resume_config(out: Path, doc: dict) -> None:
    copy = out / CONFIG_COPY_NAME
    if copy.exists():
        existing = json.loads(copy.read_text())
        if existing != doc:
            raise ConfigError(
                f"--resume config does not match the config recorded in '{out}'"
            )


def cmd_synth(args) -> int:
    doc = apply_overrides(load_config_file(args.config), args.override)
    data_cfg, run_cfg, ablate = resolve_config(doc)
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    total = synth_generate(
        seed=data_cfg.seed,
        n=data_cfg.n_train + data_cfg.n_test,
        age_range=data_cfg.age_range,
        feature_dim=data_cfg.feature_dim,
        noise_sigma=data_cfg.noise_sigma,
        n_identities=data_cfg.n_identities,
    )
    train, test = split_at(total, data_cfg.n_train, data_cfg.split_seed)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    sidecar = {
        "l1": data_cfg.l1,
        "lk": data_cfg.lk,
        "d": data_cfg.feature_dim,
        "seed": data_cfg.seed,
        "sigma": data_cfg.noise_sigma,
        "identities": data_cfg.n_identities,
    }
    (out / "dataset.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    write_config_copy(out, resolved_doc(data_cfg, run_cfg, ablate))
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return 0


def _run_chain(doc: dict, out: Path, resume: bool) -> int:
    data_cfg, run_cfg, ablate = resolve_config(doc)
    resolved = resolved_doc(data_cfg, run_cfg, ablate)
    if resume:
        _check_resume_config(out, resolved)
    write_config_copy(out, resolved)
    states = run(data_cfg, run_cfg, out, resume=resume)
    print("\n\n".join(format_report(s.eval_report, generation=s.t) for s in states))
    return 0


def cmd_evolve(args) -> int:
    doc = apply_overrides(load_config_file(args.config), args.override)
    out = Path(args.out)
    prepare_out_dir(out, args.force, resume=args.resume)
    return _run_chain(doc, out, args.resume)


def cmd_train(args) -> int:
    """Single-generation run: train the initial ancestor only."""
    doc = apply_overrides(load_config_file(args.config), args.override)
    data_cfg, run_cfg, ablate = resolve_config(doc)
    run_cfg = config_with_generations(run_cfg, 1)
    out = Path(args.out)
    prepare_out_dir(out, args.force, resume=args.resume)
    resolved = resolved_doc(data_cfg, run_cfg, ablate)
    if args.resume:
        _check_resume_config(out, resolved)
    write_config_copy(out, resolved)
    states = run(data_cfg, run_cfg, out, resume=args.resume)
    print(format_report(states[-1].eval_report, generation=1))
    return 0


def _completed_generations(out: Path, run_cfg: RunConfig) -> list[int]:
    ts = [t for t in range(1, run_cfg.generations + 1) if generation_complete(out, t)]
    if not ts:
        raise ConfigError(f"no completed generations found in '{out}'")
    return ts


def cmd_eval(args) -> int:
    doc = apply_overrides(load_config_file(args.config), args.override)
    data_cfg, run_cfg, _ = resolve_config(doc)
    out = Path(args.out)
    if not out.is_dir():
        raise DataError(f"run directory '{out}' does not exist")
    _, test = datasets_from_config(data_cfg)
    blocks = []
    for t in _completed_generations(out, run_cfg):
        params, _doc = load_checkpoint(gen_dir(out, t) / "checkpoint.json")
        report = evaluate(params, test, run_cfg.head_mode, run_cfg.inference_tau, data_cfg.eval_sigma)
        blocks.append(format_report(report, generation=t))
    print("\n\n".join(blocks))
    return 0


def cmd_dump_dist(args) -> int:
    doc = apply_overrides(load_config_file(args.config), args.override)
    data_cfg, run_cfg, _ = resolve_config(doc)
    out = Path(args.out)
    if not out.is_dir():
        raise DataError(f"run directory '{out}' does not exist")
    _, test = datasets_from_config(data_cfg)
    for t in _completed_generations(out, run_cfg):
        params, _doc = load_checkpoint(gen_dir(out, t) / "checkpoint.json")
        path = gen_dir(out, t) / "dist.csv"
        dump_distributions(params, test, path, tau=run_cfg.inference_tau)
        print(f"wrote {path}")
    return 0


def _grid_combos(grid: dict) -> list[list[str]]:
    keys = list(grid.keys())
    combos = []
    for values in itertools.product(*(grid[k] for k in keys)):
        combos.append([f"{k}={json.dumps(v)}" for k, v in zip(keys, values)])
    return combos


def _ablate_one(base_doc: dict, overrides: list[str], out: str) -> None:
    doc = apply_overrides(base_doc, overrides)
    doc.pop("ablate", None)
    data_cfg, run_cfg, _ = resolve_config(doc)
    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    write_config_copy(out_path, resolved_doc(data_cfg, run_cfg, None))
    run(data_cfg, run_cfg, out_path, resume=False)


def cmd_ablate(args) -> int:
    doc = apply_overrides(load_config_file(args.config), args.override)
    data_cfg, run_cfg, ablate = resolve_config(doc)
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    write_config_copy(out, resolved_doc(data_cfg, run_cfg, ablate))
    grid = ablate["grid"] if ablate else {}
    keys = list(grid.keys())
    combos = _grid_combos(grid) if grid else [[]]
    dirs = [out / f"grid_{i:03d}" for i in range(len(combos))]
    jobs = [(doc, combo, str(d)) for combo, d in zip(combos, dirs)]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [pool.submit(_ablate_one, *job) for job in jobs]
            for fut in futures:
                fut.result()
    else:
        for job in jobs:
            _ablate_one(*job)
    header = ["run"] + keys + RUN_LOG_NAME_COLUMNS
    lines = [",".join(header)]
    for combo, d in zip(combos, dirs):
        last = (d / RUN_LOG_NAME).read_text().splitlines()[-1]
        values = [spec.split("=", 1)[1] for spec in combo]
        lines.append(",".join([d.name] + values + [last]))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'summary.csv'} ({len(combos)} runs)")
    return 0


RUN_LOG_NAME_COLUMNS = ["t", "train_loss", "test_mae", "ca3", "ca5", "ca7", "mean_slack"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors, not exit code 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text, resume=False, parallel=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite an existing run")
        if resume:
            p.add_argument("--resume", action="store_true", help="continue a partial run")
        if parallel:
            p.add_argument("--parallel", type=int, default=1, metavar="N",
                           help="run up to N grid points concurrently")
        p.add_argument("--override", action="append", default=[], metavar="K=V",
                       help="dotted config override, e.g. data.seed=7 (repeatable)")
        p.set_defaults(func=fn)
        return p

    add("synth", cmd_synth, "generate train/test CSVs plus metadata")
    add("train", cmd_train, "train the initial ancestor only", resume=True)
    add("evolve", cmd_evolve, "run the full generation chain", resume=True)
    add("eval", cmd_eval, "re-evaluate checkpoints in a run directory")
    add("dump-dist", cmd_dump_dist, "dump per-sample label distributions to CSV")
    add("ablate", cmd_ablate, "run the config's hyperparameter grid", parallel=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DivergenceError as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
