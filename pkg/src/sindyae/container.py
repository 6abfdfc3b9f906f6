"""On-disk container: a directory with ``manifest.json`` plus one raw
little-endian float64 file (row-major) per array.

Datasets and training checkpoints both use this layout. Writes go to a
sibling temporary directory that is renamed into place, so readers never see
a half-written container.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bayes import AdamState, EMVSState
from .datagen import Dataset
from .network import Autoencoder, MLPParams
from .objective import LossBreakdown
from .sindy import LibrarySpec, SindyModel

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
DTYPE = "<f8"


class ContainerError(Exception):
    """Raw data disagrees with the manifest (truncated or resized file)."""


class SchemaError(Exception):
    """Manifest missing, malformed, or lacking a required entry."""


def write_container(path, arrays: dict[str, np.ndarray], manifest: dict | None = None) -> Path:
    """Write ``arrays`` and the extra ``manifest`` keys atomically to ``path``."""
    path = Path(path)
    man = dict(manifest or {})
    man["schema_version"] = SCHEMA_VERSION
    entries = {}
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise ValueError(f"array {name!r} contains non-finite values")
        entries[name] = {"shape": list(a.shape), "dtype": DTYPE, "file": f"{name}.f8"}
    man["arrays"] = entries
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        for name, arr in arrays.items():
            np.ascontiguousarray(arr, dtype=DTYPE).tofile(tmp / entries[name]["file"])
        (tmp / MANIFEST).write_text(json.dumps(man, indent=2, sort_keys=True))
        if path.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{path.name}.old.", dir=path.parent))
            os.rename(path, old / "x")
            os.rename(tmp, path)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.rename(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    mf = path / MANIFEST
    if not mf.is_file():
        raise SchemaError(f"{path}: no {MANIFEST}")
    try:
        man = json.loads(mf.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{mf}: invalid JSON ({e})") from e
    if not isinstance(man, dict) or not isinstance(man.get("arrays"), dict):
        raise SchemaError(f"{mf}: missing 'arrays' table")
    if man.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{mf}: unsupported schema_version {man.get('schema_version')!r}")
    return man


def read_container(path, required=()) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(arrays, manifest)``; unknown manifest keys are kept as-is."""
    path = Path(path)
    man = read_manifest(path)
    arrays = {}
    for name, ent in man["arrays"].items():
        try:
            shape = tuple(int(s) for s in ent["shape"])
            fname = ent["file"]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"{path}: bad manifest entry for array {name!r}") from e
        if ent.get("dtype", DTYPE) != DTYPE:
            raise SchemaError(f"{path}: array {name!r} has dtype {ent.get('dtype')!r}, expected {DTYPE}")
        f = path / fname
        if not f.is_file():
            raise SchemaError(f"{path}: array {name!r} file {fname} is missing")
        expected = 8 * int(np.prod(shape, dtype=np.int64))
        size = f.stat().st_size
        if size != expected:
            raise ContainerError(f"{path}: array {name!r} has {size} bytes, manifest implies {expected}")
        arrays[name] = np.fromfile(f, dtype=DTYPE).astype(np.float64).reshape(shape)
    missing = [r for r in required if r not in arrays]
    if missing:
        raise SchemaError(f"{path}: missing required array(s) {missing}")
    return arrays, man


# ---------------------------------------------------------------- datasets

_DATASET_ARRAYS = ("X", "Xdot", "Xddot", "Z", "Zdot", "Zddot")


def write_dataset(path, ds: Dataset, provenance: dict | None = None, extra: dict | None = None) -> Path:
    arrays = {k: v for k, v in ds.arrays().items() if v is not None}
    man = dict(extra or {})
    man.update(kind="dataset", dt=float(ds.dt), meta=_jsonable(ds.meta), provenance=provenance or {})
    return write_container(path, arrays, man)


def read_dataset(path) -> tuple[Dataset, dict]:
    arrays, man = read_container(path, required=("X", "Xdot"))
    if "dt" not in man:
        raise SchemaError(f"{path}: manifest lacks 'dt'")
    kw = {k: arrays.get(k) for k in _DATASET_ARRAYS}
    return Dataset(dt=float(man["dt"]), meta=dict(man.get("meta", {})), **kw), man


# ------------------------------------------------------------- checkpoints


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def checkpoint_arrays(state, template: Autoencoder) -> tuple[dict, dict]:
    """Flatten a :class:`~sindyae.trainer.TrainState` into arrays plus manifest fields."""
    arrays = {f"param.{k}": v for k, v in state.params.items()}
    arrays["mask"] = state.mask
    if state.emvs is not None:
        arrays.update({"emvs.rho": state.emvs.rho, "emvs.kappa0": state.emvs.kappa0,
                       "emvs.kappa1": state.emvs.kappa1})
    for k, v in state.adam.m.items():
        arrays[f"adam.m.{k}"] = v
    for k, v in state.adam.v.items():
        arrays[f"adam.v.{k}"] = v
    if state.history:
        arrays["history"] = np.array([h.as_row() for h in state.history])
    if len(state.ensemble):
        arrays["ensemble"] = state.ensemble.stack()
    man = {
        "epoch": state.epoch, "step": state.step, "sgld_step": state.sgld_step,
        "support_fixed": state.support_fixed, "emvs_k": None if state.emvs is None else state.emvs.k,
        "adam": {"t": state.adam.t, "beta1": state.adam.beta1, "beta2": state.adam.beta2, "eps": state.adam.eps},
        "rng_state": _jsonable(state.rng_state), "active_history": list(map(int, state.active_history)),
        "ensemble_steps": state.ensemble.steps, "ensemble_eps": state.ensemble.eps,
        "layer_dims": {"encoder": list(template.encoder.layer_dims), "decoder": list(template.decoder.layer_dims)},
        "activation": template.encoder.activation,
    }
    return arrays, man


def write_checkpoint(path, state, template: Autoencoder, spec: LibrarySpec, config: dict | None = None,
                     seed: int = 0, metrics: dict | None = None) -> Path:
    arrays, man = checkpoint_arrays(state, template)
    man.update(kind="checkpoint", seed=int(seed), library=asdict(spec), config=_jsonable(config or {}),
               metrics=_jsonable(metrics or {}))
    return write_container(path, arrays, man)


def read_checkpoint(path):
    """Return ``(state, autoencoder, sindy_model, manifest)``."""
    from .trainer import PosteriorEnsemble, TrainState

    arrays, man = read_container(path, required=("mask", "param.xi"))
    if man.get("kind") != "checkpoint":
        raise SchemaError(f"{path}: not a checkpoint container")
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    emvs = None
    if "emvs.rho" in arrays:
        emvs = EMVSState(arrays["emvs.rho"], arrays["emvs.kappa0"], arrays["emvs.kappa1"], int(man["emvs_k"]))
    a = man["adam"]
    adam = AdamState({k[7:]: v for k, v in arrays.items() if k.startswith("adam.m.")},
                     {k[7:]: v for k, v in arrays.items() if k.startswith("adam.v.")},
                     int(a["t"]), a["beta1"], a["beta2"], a["eps"])
    ens = PosteriorEnsemble()
    if "ensemble" in arrays:
        for xi, st, ep in zip(arrays["ensemble"], man["ensemble_steps"], man["ensemble_eps"]):
            ens.add(xi, st, ep)
    history = [LossBreakdown(*row) for row in arrays.get("history", np.empty((0, 5)))]
    state = TrainState(params, arrays["mask"], emvs, adam, man["rng_state"], int(man["epoch"]), int(man["step"]),
                       int(man["sgld_step"]), bool(man["support_fixed"]), history,
                       list(man["active_history"]), ens)
    dims = man["layer_dims"]
    act = man.get("activation", "sigmoid")
    enc = _mlp_from(params, "enc", dims["encoder"], act)
    dec = _mlp_from(params, "dec", dims["decoder"], act)
    spec = LibrarySpec(**man["library"])
    return state, Autoencoder(enc, dec), SindyModel(spec, params["xi"].copy(), arrays["mask"].copy()), man


def _mlp_from(params: dict, prefix: str, dims, activation) -> MLPParams:
    n = len(dims) - 1
    try:
        W = [params[f"{prefix}.W{j}"] for j in range(n)]
        b = [params[f"{prefix}.b{j}"] for j in range(n)]
    except KeyError as e:
        raise SchemaError(f"checkpoint lacks network parameter {e.args[0]!r}") from e
    return MLPParams(list(dims), W, b, activation)
