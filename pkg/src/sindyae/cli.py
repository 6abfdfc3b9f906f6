"""Command-line workflow: generate, preprocess, train, predict, evaluate, report.

Exit codes: 0 success, 1 usage, 2 configuration, 3 data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import container, datagen, predictor, trainer
from .config import PRESETS, ConfigError, RunConfig, build_config, load_config
from .datagen import ConfigurationError, Dataset, IntegrationError
from .sindy import equation_strings
from .trainer import TrainingDivergence

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("sindyae")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers


def _run_config(args) -> RunConfig:
    if args.config:
        rc = load_config(args.config)
        if args.preset:
            raise UsageError("give either --config or --preset, not both")
        return rc
    if getattr(args, "preset", None):
        return build_config({"preset": args.preset})
    raise UsageError("a --config or --preset is required")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(container._jsonable(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _load_dataset(path) -> Dataset:
    if path is None:
        raise UsageError("--dataset is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset {p} does not exist")
    return container.read_dataset(p)[0]


def _split(ds: Dataset, seed: int) -> tuple[Dataset, Dataset | None]:
    """Default train/validation split: whole trajectories, or random rows for RD."""
    n_traj = int(ds.meta.get("n_traj", 1))
    if ds.meta.get("system") == "rd" or n_traj == 1:
        if ds.n_samples < 20:
            return ds, None
        rng = np.random.default_rng(seed)
        n_val = max(1, ds.n_samples // 10)
        idx = rng.permutation(ds.n_samples)
        return ds.subset(np.sort(idx[n_val:])), ds.subset(np.sort(idx[:n_val]))
    n_val = max(1, n_traj // 10)
    if n_traj - n_val < 1:
        return ds, None
    return ds.trajectory_subset(range(n_traj - n_val)), ds.trajectory_subset(range(n_traj - n_val, n_traj))


def _loss_rows(history):
    return [[i + 1, *h.as_row()] for i, h in enumerate(history)]


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    rc = _run_config(args)
    out = _require_out(args)
    seed = rc.data.seed if args.seed is None else args.seed
    ds = datagen.generate(rc.data, seed)
    container.write_dataset(out, ds, provenance={"command": "generate", "seed": seed, "config": rc.resolved()})
    print(f"wrote {ds.n_samples} samples x {ds.n_features} features to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .videopipe import FrameSequence, PipelineConfig, frames_to_dataset

    if args.dataset is None:
        raise UsageError("--dataset (a frames container) is required")
    out = _require_out(args)
    arrays, man = container.read_container(args.dataset, required=("frames",))
    if "dt" not in man:
        raise container.SchemaError(f"{args.dataset}: manifest lacks 'dt'")
    cfg = PipelineConfig()
    if args.config or args.preset:
        rc = _run_config(args)
        cfg = rc.pipeline or cfg
    ds = frames_to_dataset(FrameSequence(arrays["frames"], float(man["dt"])), cfg)
    container.write_dataset(out, ds, provenance={"command": "preprocess", "source": str(args.dataset)})
    print(f"wrote {ds.n_samples} frames x {ds.n_features} pixels to {out}")
    return EXIT_OK


def _seed_list(args, rc: RunConfig) -> list[int]:
    base = 0 if args.seed is None else args.seed
    k = args.seeds if args.seeds is not None else rc.seeds
    if k < 1:
        raise UsageError("--seeds must be >= 1")
    return list(range(base, base + k))


def cmd_train(args) -> int:
    rc = _run_config(args)
    ds = _load_dataset(args.dataset)
    if rc.input_dim is not None and rc.input_dim != ds.n_features:
        raise ConfigError(f"model.input_dim={rc.input_dim} but the dataset has {ds.n_features} features",
                          key="model.input_dim")
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", rc.resolved())
    train_ds, val_ds = (ds, _load_dataset(args.val)) if args.val else _split(ds, 0)
    cfg = rc.train
    if args.checkpoint:
        state, *_ , man = container.read_checkpoint(args.checkpoint)
        seed = int(man.get("seed", 0))
        results = [(seed, *trainer.train_run(train_ds, cfg, seed, val_ds, state))]
    else:
        seeds = _seed_list(args, rc)
        runs = trainer.train_many(train_ds, cfg, seeds, val_ds, with_state=True)
        results = [(s, st, m) for s, (st, m) in zip(seeds, runs)]
    template = trainer.Trainer(train_ds, cfg, 0).autoencoder()
    for seed, state, model in results:
        d = out / f"seed_{seed}"
        d.mkdir(exist_ok=True)
        container.write_checkpoint(d / "checkpoint", state, template, cfg.library, rc.resolved(), seed,
                                   model.metrics)
        _write_csv(d / "loss.csv", ["epoch", "recon", "sindy_x", "sindy_z", "reg", "total"],
                   _loss_rows(model.history))
        _write_json(d / "metrics.json", {**model.metrics, "seed": seed, "equations": equation_strings(model.sindy)})
        print(f"seed {seed}: active={model.active_terms} fuv_x={model.metrics['fuv_x']:.3g} "
              f"fuv_dx={model.metrics['fuv_dx']:.3g}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    _, ae, model, man = container.read_checkpoint(args.checkpoint)
    ds = _load_dataset(args.dataset)
    metrics = trainer.evaluate(ae, model, ds)
    metrics["equations"] = equation_strings(model)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", metrics)
    print(json.dumps(container._jsonable(metrics), indent=2))
    return EXIT_OK


def cmd_predict(args) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    state, ae, model, _ = container.read_checkpoint(args.checkpoint)
    ds = _load_dataset(args.dataset)
    row = ds.trajectories()[args.trajectory].start
    x0 = ds.X[row:row + 1]
    dx0 = ds.Xdot[row:row + 1]
    samples = state.ensemble.samples or [model.coefficients]
    ens = predictor.posterior_predict(ae, samples, model.spec, x0, ds.dt, args.steps, dx0=dx0)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    sd = ens.latent.shape[2]
    header = ["t", "member"] + [f"s{j}" for j in range(sd)]
    rows = [[t, i, *ens.latent[i, k]] for i in range(ens.members) for k, t in enumerate(ens.t)]
    _write_csv(out / "trajectory.csv", header, rows)
    if ens.members >= 2:
        bands = predictor.uncertainty_bands(ens, (0.05, 0.5, 0.95))
        header = ["t"] + [f"s{j}_q{q:g}" for j in range(sd) for q in bands.quantiles]
        rows = [[t, *(bands.latent[qi, k, j] for j in range(sd) for qi in range(len(bands.quantiles)))]
                for k, t in enumerate(ens.t)]
        _write_csv(out / "bands.csv", header, rows)
    print(f"simulated {ens.members} member(s) for {args.steps} steps into {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.out) if args.out else None
    if run is None or not run.is_dir():
        raise UsageError("--out must name an existing training run directory")
    cands = []
    for ck in sorted(run.glob("seed_*/checkpoint")):
        state, ae, model, man = container.read_checkpoint(ck)
        metrics = dict(man.get("metrics", {}))
        cands.append(trainer.TrainedModel(ae, model, state.ensemble, state.history, metrics, int(man["seed"])))
    if not cands:
        raise DataError(f"no seed_*/checkpoint containers under {run}")
    best = trainer.select_model(cands)
    lines = equation_strings(best.sindy)
    summary = {"selected_seed": best.seed, "active_terms": best.active_terms, "equations": lines,
               "candidates": [{"seed": c.seed, "active_terms": c.active_terms,
                               "fuv_dx": c.metrics.get("fuv_dx"), "fuv_x": c.metrics.get("fuv_x")} for c in cands]}
    _write_json(run / "report.json", summary)
    print(f"selected seed {best.seed} ({best.active_terms} active terms of {len(cands)} candidates)")
    for line in lines:
        print(line)
    return EXIT_OK


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sindyae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="run config file (YAML or JSON)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment preset")
    common.add_argument("--out", help="output container or run directory")
    common.add_argument("--seed", type=int, help="data seed (generate) or first training seed")
    common.add_argument("--seeds", type=int, help="number of training seeds")
    common.add_argument("--dataset", help="dataset container directory")
    common.add_argument("--checkpoint", help="checkpoint container directory")
    for name, helptext in (("generate", "synthesize a dataset container from a preset/config"),
                           ("preprocess", "turn a frames container into a training dataset"),
                           ("train", "train one model per seed"),
                           ("predict", "simulate and decode from a checkpoint"),
                           ("evaluate", "FUV metrics of a checkpoint on a dataset"),
                           ("report", "select the best seed of a run and print its equations")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        if name == "train":
            sp.add_argument("--val", help="explicit validation dataset container")
        if name == "predict":
            sp.add_argument("--steps", type=int, default=500, help="simulation steps")
            sp.add_argument("--trajectory", type=int, default=0, help="trajectory whose first frame seeds the run")
    return p


COMMANDS = {"generate": cmd_generate, "preprocess": cmd_preprocess, "train": cmd_train,
            "predict": cmd_predict, "evaluate": cmd_evaluate, "report": cmd_report}


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ConfigurationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (container.ContainerError, container.SchemaError, DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, IntegrationError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
