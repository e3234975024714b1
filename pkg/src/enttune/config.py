"""Pipeline configuration: a YAML tree with defaults, env overrides and all-at-once validation."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .finetune import FinetuneConfig
from .masking import MaskConfig, MaskScope
from .prompts import PromptStrategy
from .trainer import TuneConfig

ENV_PREFIX = "ENTTUNE__"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {
        "train": None,
        "dev": None,
        "corpus": None,
        "nli": [],
        "triples": None,
        "output_dir": "runs",
        "init_checkpoint": None,
    },
    "model": {
        "hidden": 256,
        "layers": 4,
        "heads": 4,
        "ffn": None,
        "max_len": 256,
        "dropout": 0.1,
        "pooling": "cls",
        "vocab_size": 30000,
    },
    "prompt": {"strategy": "prompt"},
    "mask": {"beta": 0.8, "scope": "hypothesis_only"},
    "tune": {
        "learning_rate": 2e-5,
        "warmup_steps": 100,
        "batch_size": 128,
        "epochs": 10,
        "weight_decay": 0.01,
        "adam_betas": [0.9, 0.999],
        "adam_epsilon": 1e-8,
        "max_grad_norm": 1.0,
        "remask_each_epoch": False,
        "save_every_epoch": False,
    },
    "finetune": {
        "init": "tuned",
        "epochs": 40,
        "learning_rate": 2e-5,
        "batch_size": 32,
        "negatives_per_query": 1,
        "warmup_steps": 100,
        "weight_decay": 0.01,
        "adam_betas": [0.9, 0.999],
        "adam_epsilon": 1e-8,
        "max_grad_norm": 1.0,
    },
    "eval": {
        "hits_cutoffs": [1, 5, 20, 50, 100],
        "mrr_cutoffs": [10, 100],
        "top_k": 100,
        "relevance": "labeled",
        "batch_size": 64,
    },
    "analysis": {"nli_model": None, "bins": 20},
}

STAGE_SEED_NAMES = ("init", "mask", "tune", "finetune", "analysis")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def derive_seed(global_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _merge(base: dict, override: Mapping, errors: list[str], prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            errors.append(f"unknown key {dotted!r}")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                errors.append(f"{dotted!r} must be a mapping")
                continue
            out[key] = _merge(base[key], value, errors, dotted + ".")
        else:
            out[key] = value
    return out


def apply_env_overrides(tree: dict, environ: Mapping[str, str]) -> list[str]:
    """Apply ``ENTTUNE__SECTION__KEY=value`` overrides to scalar leaves in place."""
    errors = []
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX) :].split("__")]
        node = tree
        for part in path[:-1]:
            node = node.get(part) if isinstance(node, dict) else None
            if not isinstance(node, dict):
                break
        if not isinstance(node, dict) or path[-1] not in node or isinstance(node[path[-1]], dict):
            errors.append(f"environment override {name} does not name a scalar setting")
            continue
        node[path[-1]] = yaml.safe_load(raw)
    return errors


@dataclass
class PipelineConfig:
    tree: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- typed views -------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    def path(self, name: str) -> Path | None:
        value = self.tree["paths"][name]
        return None if value is None else (self.base_dir / value).resolve()

    @property
    def nli_paths(self) -> list[Path]:
        return [(self.base_dir / p).resolve() for p in self.tree["paths"]["nli"]]

    @property
    def strategy(self) -> PromptStrategy:
        return PromptStrategy(self.tree["prompt"]["strategy"])

    @property
    def mask(self) -> MaskConfig:
        m = self.tree["mask"]
        return MaskConfig(beta=float(m["beta"]), scope=MaskScope(m["scope"]), seed=self.stage_seed("mask"))

    @property
    def tune(self) -> TuneConfig:
        t = {k: v for k, v in self.tree["tune"].items() if k != "save_every_epoch"}
        return TuneConfig(**t, mask=self.mask, seed=self.stage_seed("tune"))

    @property
    def finetune(self) -> FinetuneConfig:
        f = {k: v for k, v in self.tree["finetune"].items() if k != "init"}
        return FinetuneConfig(**f, seed=self.stage_seed("finetune"))

    def resolved_tree(self) -> dict:
        """The tree with every path made absolute, so it can be reloaded from any directory."""
        tree = copy.deepcopy(self.tree)
        for key, value in tree["paths"].items():
            if key == "nli":
                tree["paths"]["nli"] = [str(p) for p in self.nli_paths]
            elif value is not None:
                tree["paths"][key] = str((self.base_dir / value).resolve())
        return tree

    def snapshot(self) -> dict:
        """Fully resolved tree, including derived stage seeds."""
        snap = copy.deepcopy(self.tree)
        snap["derived_seeds"] = {s: self.stage_seed(s) for s in STAGE_SEED_NAMES}
        return snap

    def config_hash(self) -> str:
        """Hash of everything that can change stage outputs (output_dir excluded)."""
        snap = self.snapshot()
        snap["paths"] = {k: v for k, v in snap["paths"].items() if k != "output_dir"}
        for key in ("train", "dev", "corpus", "triples", "init_checkpoint"):
            p = self.path(key)
            snap["paths"][key] = _file_digest(p) if p is not None and p.exists() else None
        snap["paths"]["nli"] = [_file_digest(p) for p in self.nli_paths if p.exists()]
        blob = json.dumps(snap, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def run_dir(self) -> Path:
        return (self.base_dir / self.tree["paths"]["output_dir"]).resolve() / f"run-{self.config_hash()}"


def _file_digest(path: Path) -> str:
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(path.rglob("*")):
            if f.is_file():
                h.update(str(f.relative_to(path)).encode())
                h.update(_file_digest(f).encode())
        return h.hexdigest()
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _check(tree: dict, base_dir: Path) -> list[str]:
    errors: list[str] = []

    def num(section, key, lo=None, hi=None, integer=False, strict_lo=False):
        value = tree[section][key] if section else tree[key]
        name = f"{section}.{key}" if section else key
        kind = int if integer else (int, float)
        if isinstance(value, bool) or not isinstance(value, kind):
            errors.append(f"{name} must be {'an integer' if integer else 'a number'}")
            return
        if lo is not None and (value <= lo if strict_lo else value < lo):
            errors.append(f"{name} must be {'>' if strict_lo else '>='} {lo}")
        if hi is not None and value > hi:
            errors.append(f"{name} must be <= {hi}")

    num(None, "seed", 0, integer=True)
    beta = tree["mask"]["beta"]
    if isinstance(beta, bool) or not isinstance(beta, (int, float)) or not 0.0 <= beta <= 1.0:
        errors.append("beta must lie in [0,1]")
    if tree["mask"]["scope"] not in {s.value for s in MaskScope}:
        errors.append(f"mask.scope must be one of {[s.value for s in MaskScope]}")
    if tree["prompt"]["strategy"] not in {s.value for s in PromptStrategy}:
        errors.append(f"prompt.strategy must be one of {[s.value for s in PromptStrategy]}")

    for section in ("tune", "finetune"):
        num(section, "learning_rate", 0, strict_lo=True)
        num(section, "warmup_steps", 0, integer=True)
        num(section, "batch_size", 1, integer=True)
        num(section, "epochs", 1, integer=True)
        num(section, "weight_decay", 0)
        num(section, "adam_epsilon", 0, strict_lo=True)
        num(section, "max_grad_norm", 0, strict_lo=True)
        betas = tree[section]["adam_betas"]
        if not (isinstance(betas, (list, tuple)) and len(betas) == 2 and all(isinstance(b, (int, float)) and 0 <= b < 1 for b in betas)):
            errors.append(f"{section}.adam_betas must be two numbers in [0,1)")
    num("finetune", "negatives_per_query", 0, integer=True)
    if tree["finetune"]["init"] not in ("tuned", "base"):
        errors.append("finetune.init must be 'tuned' or 'base'")

    for key in ("hidden", "layers", "heads", "max_len", "vocab_size"):
        num("model", key, 1, integer=True)
    num("model", "dropout", 0, 1)
    if isinstance(tree["model"]["hidden"], int) and isinstance(tree["model"]["heads"], int) and tree["model"]["heads"] > 0:
        if tree["model"]["hidden"] % tree["model"]["heads"]:
            errors.append("model.hidden must be divisible by model.heads")
    if tree["model"]["pooling"] not in ("cls", "mean"):
        errors.append("model.pooling must be 'cls' or 'mean'")

    ev = tree["eval"]
    for key in ("hits_cutoffs", "mrr_cutoffs"):
        if not (isinstance(ev[key], list) and ev[key] and all(isinstance(k, int) and k >= 1 for k in ev[key])):
            errors.append(f"eval.{key} must be a non-empty list of positive integers")
    num("eval", "top_k", 1, integer=True)
    num("eval", "batch_size", 1, integer=True)
    if ev["relevance"] not in ("labeled", "answer"):
        errors.append("eval.relevance must be 'labeled' or 'answer'")
    num("analysis", "bins", 1, integer=True)

    paths = tree["paths"]
    for key in ("train", "dev", "corpus"):
        if paths[key] is None:
            errors.append(f"paths.{key} is required")
    if not isinstance(paths["nli"], list):
        errors.append("paths.nli must be a list of files")
        nli = []
    else:
        nli = paths["nli"]
    for key, value in [(k, paths[k]) for k in ("train", "dev", "corpus", "triples", "init_checkpoint")] + [
        (f"nli[{i}]", v) for i, v in enumerate(nli)
    ]:
        if value is not None and not (base_dir / str(value)).exists():
            errors.append(f"paths.{key} does not exist: {value}")
    return errors


def validate_tree(raw: Mapping, base_dir: Path, environ: Mapping[str, str] | None = None) -> tuple[PipelineConfig | None, list[str]]:
    errors: list[str] = []
    if not isinstance(raw, Mapping):
        return None, ["configuration root must be a mapping"]
    tree = _merge(DEFAULTS, raw, errors)
    errors += apply_env_overrides(tree, os.environ if environ is None else environ)
    errors += _check(tree, base_dir)
    if errors:
        return None, errors
    return PipelineConfig(tree, base_dir.resolve()), []


def validate_config(path: str | Path, environ: Mapping[str, str] | None = None) -> tuple[PipelineConfig | None, list[str]]:
    """Parse and check a config file. Returns (config, []) or (None, every violation found)."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        return None, [f"cannot read {path}: {exc}"]
    return validate_tree(raw, path.parent, environ)


def load_config(path: str | Path, environ: Mapping[str, str] | None = None) -> PipelineConfig:
    config, errors = validate_config(path, environ)
    if errors:
        raise ConfigError(errors)
    return config


def dump_tree(tree: Mapping) -> str:
    return yaml.safe_dump(json.loads(json.dumps(tree)), sort_keys=True)

