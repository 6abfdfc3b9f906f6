"""Run configuration files and experiment presets.

A run config is a YAML (or JSON) mapping with the sections below; every key
is optional and unknown keys are rejected with their line number::

    preset: pendulum          # start from a preset, then override
    data:     {...GeneratorConfig fields}
    pipeline: {...PipelineConfig fields}   # optional, video preprocessing
    model:    {input_dim, latent_dim, widths, activation, poly_order,
               include_sine, include_constant, model_order}
    train:    {epochs, refine_epochs, batch_size, lr, threshold_tau,
               threshold_interval, xi_init, xi_init_std, optimizer, support,
               rho_cut, mask_fraction, train_networks, seeds}
    loss:     {lambda1, lambda2, lambda3}
    prior:    {kind, v0, v1, delta, sigma, omega0, omega_decay, l2_weight}
    sgld:     {eps0, cycles, explore_fraction, sample_every, sampling_epochs}
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .bayes import PriorConfig
from .datagen import ConfigurationError, GeneratorConfig
from .network import ACTIVATIONS
from .objective import LossWeights
from .sindy import LibrarySpec
from .trainer import SGLDConfig, TrainConfig
from .videopipe import PipelineConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.key, self.line, self.path = key, line, path


MODEL_KEYS = ("input_dim", "latent_dim", "widths", "activation", "poly_order", "include_sine",
              "include_constant", "model_order")
TRAIN_KEYS = ("epochs", "refine_epochs", "batch_size", "lr", "threshold_tau", "threshold_interval", "xi_init",
              "xi_init_std", "optimizer", "support", "rho_cut", "mask_fraction", "train_networks", "seeds")


def _names(cls) -> tuple:
    return tuple(f.name for f in fields(cls))


SECTIONS = {
    "data": _names(GeneratorConfig),
    "pipeline": _names(PipelineConfig),
    "model": MODEL_KEYS,
    "train": TRAIN_KEYS,
    "loss": _names(LossWeights),
    "prior": _names(PriorConfig),
    "sgld": _names(SGLDConfig),
}

# Table values; epochs are the full-scale budgets.
PRESETS: dict[str, dict] = {
    "lorenz": {
        "data": {"system": "lorenz", "n_ics": 2048, "steps": 250, "dt": 0.02},
        "model": {"input_dim": 128, "latent_dim": 3, "widths": [64, 32], "activation": "sigmoid",
                  "poly_order": 3, "include_sine": False, "model_order": 1},
        "train": {"epochs": 10000, "refine_epochs": 1000, "batch_size": 8000, "lr": 1e-3},
        "loss": {"lambda1": 1e-4, "lambda2": 0.0, "lambda3": 1e-5},
        "prior": {"kind": "l1"},
    },
    "rd": {
        "data": {"system": "rd", "n_ics": 1, "dt": 0.05, "rd_samples": 10000, "noise_std": 1e-6},
        "model": {"input_dim": 10000, "latent_dim": 2, "widths": [256], "activation": "sigmoid",
                  "poly_order": 3, "include_sine": True, "model_order": 1},
        "train": {"epochs": 3000, "refine_epochs": 1000, "batch_size": 1024, "lr": 1e-3},
        "loss": {"lambda1": 0.5, "lambda2": 0.01, "lambda3": 0.1},
        "prior": {"kind": "l1"},
    },
    "pendulum": {
        "data": {"system": "pendulum", "n_ics": 100, "steps": 500, "dt": 0.02},
        "model": {"input_dim": 2601, "latent_dim": 1, "widths": [128, 64, 32], "activation": "sigmoid",
                  "poly_order": 3, "include_sine": True, "model_order": 2},
        "train": {"epochs": 5000, "refine_epochs": 1000, "batch_size": 1024, "lr": 1e-4},
        "loss": {"lambda1": 5e-4, "lambda2": 5e-5, "lambda3": 1e-5},
        "prior": {"kind": "l1"},
    },
}
# Small end-to-end benchmark: a rotation embedded in 10-D.
PRESETS["oscillator"] = {
    "data": {"system": "oscillator", "n_ics": 20, "steps": 100, "dt": 0.05, "embed_dim": 10},
    "model": {"input_dim": 10, "latent_dim": 2, "widths": [16], "activation": "sigmoid",
              "poly_order": 1, "include_sine": False, "model_order": 1},
    "train": {"epochs": 2000, "refine_epochs": 0, "batch_size": 500, "lr": 1e-3},
    "loss": {"lambda1": 0.1, "lambda2": 0.01, "lambda3": 1e-5},
    "prior": {"kind": "l1"},
}

# Spike-and-slab variants of the same experiments.
PRESETS["pendulum_ssgl"] = {
    **copy.deepcopy(PRESETS["pendulum"]),
    "train": {"epochs": 1500, "refine_epochs": 1000, "batch_size": 1000, "lr": 1e-3, "xi_init": "gaussian"},
    "loss": {"lambda1": 5e-3, "lambda2": 5e-5, "lambda3": 8e-4},
    "prior": {"kind": "ssgl", "delta": 0.08, "v0": 0.05, "v1": 3.0, "omega0": 0.05, "omega_decay": 0.995},
}
PRESETS["rd_ssgl"] = {
    **copy.deepcopy(PRESETS["rd"]),
    "train": {"epochs": 1500, "refine_epochs": 1000, "batch_size": 1000, "lr": 1e-3},
    "prior": {"kind": "ssgl", "delta": 0.08, "v0": 0.1, "v1": 3.0, "omega0": 0.02, "omega_decay": 0.999},
}
PRESETS["lorenz_ssgl"] = {
    **copy.deepcopy(PRESETS["lorenz"]),
    "data": {"system": "lorenz", "n_ics": 2048, "steps": 250, "dt": 0.02, "beta": -2.7, "z2_power": 2},
    "prior": {"kind": "ssgl"},
}


@dataclass
class RunConfig:
    train: TrainConfig
    data: GeneratorConfig
    pipeline: PipelineConfig | None = None
    input_dim: int | None = None
    preset: str | None = None
    raw: dict | None = None  # fully resolved mapping, echoed into run artifacts

    @property
    def seeds(self) -> int:
        return self.train.seeds

    def resolved(self) -> dict:
        return copy.deepcopy(self.raw) if self.raw is not None else {}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _line_map(text: str) -> dict[tuple, int]:
    """1-based line of every mapping key, addressed by its path."""
    lines: dict[tuple, int] = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (str(k.value),)
                lines[p] = k.start_mark.line + 1
                walk(v, p)

    if root is not None:
        walk(root, ())
    return lines


def _tuplify(v):
    return tuple(v) if isinstance(v, list) else v


def build_config(mapping: dict, lines: dict | None = None, path=None) -> RunConfig:
    """Validate a config mapping (after preset expansion) into a :class:`RunConfig`."""
    lines = lines or {}
    if not isinstance(mapping, dict):
        raise ConfigError("top level must be a mapping", path=path)
    for key in mapping:
        if key != "preset" and key not in SECTIONS:
            raise ConfigError("unknown section", key=key, line=lines.get((key,)), path=path)
    for sec, allowed in SECTIONS.items():
        body = mapping.get(sec)
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError("section must be a mapping", key=sec, line=lines.get((sec,)), path=path)
        for k in body:
            if k not in allowed:
                raise ConfigError("unknown key", key=f"{sec}.{k}", line=lines.get((sec, k)), path=path)

    preset = mapping.get("preset")
    resolved = {k: v for k, v in mapping.items() if k != "preset"}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset (choose from {sorted(PRESETS)})", key="preset",
                              line=lines.get(("preset",)), path=path)
        resolved = _merge(PRESETS[preset], resolved)

    def section(name):
        return dict(resolved.get(name) or {})

    def make(cls, name, body):
        try:
            return cls(**{k: _tuplify(v) for k, v in body.items()})
        except (TypeError, ValueError, ConfigurationError) as e:
            raise ConfigError(str(e), key=name, line=lines.get((name,)), path=path) from e

    model = section("model")
    train = section("train")
    try:
        spec = LibrarySpec(latent_dim=int(model.get("latent_dim", 3)), poly_order=int(model.get("poly_order", 3)),
                           include_sine=bool(model.get("include_sine", False)),
                           model_order=int(model.get("model_order", 1)),
                           include_constant=bool(model.get("include_constant", True)))
    except ValueError as e:
        raise ConfigError(str(e), key="model", line=lines.get(("model",)), path=path) from e
    activation = model.get("activation", "sigmoid")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"activation {activation!r} is not implemented (available: {ACTIVATIONS})",
                          key="model.activation", line=lines.get(("model", "activation")), path=path)
    weights = make(LossWeights, "loss", section("loss"))
    prior = make(PriorConfig, "prior", section("prior"))
    sgld = make(SGLDConfig, "sgld", section("sgld"))
    train_kw = {k: _tuplify(v) for k, v in train.items()}
    if "widths" in model:
        train_kw["widths"] = tuple(int(w) for w in model["widths"])
    tc = make(TrainConfig, "train", dict(library=spec, weights=weights, prior=prior, sgld=sgld,
                                         activation=activation, **train_kw))
    data = make(GeneratorConfig, "data", section("data"))
    pipeline = make(PipelineConfig, "pipeline", section("pipeline")) if "pipeline" in resolved else None
    input_dim = model.get("input_dim")
    return RunConfig(tc, data, pipeline, None if input_dim is None else int(input_dim), preset,
                     _resolved_mapping(tc, data, pipeline, input_dim, preset))


def _resolved_mapping(tc: TrainConfig, data: GeneratorConfig, pipeline, input_dim, preset) -> dict:
    spec = tc.library
    out = {
        "preset": preset,
        "data": asdict(data),
        "model": {"input_dim": input_dim, "latent_dim": spec.latent_dim, "widths": list(tc.widths),
                  "activation": tc.activation, "poly_order": spec.poly_order, "include_sine": spec.include_sine,
                  "include_constant": spec.include_constant, "model_order": spec.model_order},
        "train": {k: getattr(tc, k) for k in TRAIN_KEYS},
        "loss": asdict(tc.weights),
        "prior": asdict(tc.prior),
        "sgld": asdict(tc.sgld),
    }
    if pipeline is not None:
        out["pipeline"] = asdict(pipeline)
    return json.loads(json.dumps(out, default=list))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config ({e.strerror})", path=path) from e
    try:
        mapping = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"parse error: {getattr(e, 'problem', e)}", line=None if mark is None else mark.line + 1,
                          path=path) from e
    if mapping is None:
        mapping = {}
    return build_config(mapping, _line_map(text), path)


def preset_config(name: str) -> RunConfig:
    return build_config({"preset": name})
