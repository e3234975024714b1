"""Command-line entry point: ``enttune <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .claims import question_to_claim
from .config import ConfigError, PipelineConfig, validate_tree
from .data import iter_jsonl, load_qa_dataset, write_jsonl
from .pipeline import STAGES, run_pipeline
from .prompts import EntailmentPair, PromptStrategy, render

TOY_CONFIG = {
    "seed": 0,
    "paths": {
        "train": "train.jsonl",
        "dev": "dev.jsonl",
        "corpus": "corpus.jsonl",
        "nli": ["nli.jsonl"],
        "output_dir": "runs",
    },
    "model": {"hidden": 64, "layers": 2, "heads": 4, "ffn": 128, "dropout": 0.0, "max_len": 64},
    "tune": {"learning_rate": 1e-3, "warmup_steps": 20, "batch_size": 32, "epochs": 60, "remask_each_epoch": True},
    "finetune": {"learning_rate": 1e-4, "warmup_steps": 20, "batch_size": 32, "epochs": 20},
    "eval": {"top_k": 100},
}

# flags of the stage subcommands that override config leaves
_OVERRIDES = {
    "tune": [
        ("--learning-rate", "tune.learning_rate", float),
        ("--warmup-steps", "tune.warmup_steps", int),
        ("--batch-size", "tune.batch_size", int),
        ("--epochs", "tune.epochs", int),
        ("--weight-decay", "tune.weight_decay", float),
        ("--adam-epsilon", "tune.adam_epsilon", float),
        ("--max-grad-norm", "tune.max_grad_norm", float),
        ("--beta", "mask.beta", float),
        ("--scope", "mask.scope", str),
        ("--seed", "seed", int),
    ],
    "finetune": [
        ("--learning-rate", "finetune.learning_rate", float),
        ("--batch-size", "finetune.batch_size", int),
        ("--epochs", "finetune.epochs", int),
        ("--negatives-per-query", "finetune.negatives_per_query", int),
        ("--init", "finetune.init", str),
        ("--seed", "seed", int),
    ],
    "search": [("--top-k", "eval.top_k", int)],
    "analyze": [("--nli-model", "analysis.nli_model", str)],
}


def _set_dotted(tree: dict, dotted: str, value) -> None:
    node = tree
    *parents, leaf = dotted.split(".")
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def load_with_overrides(path: str | Path, overrides: dict[str, object]) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    for dotted, value in overrides.items():
        _set_dotted(raw, dotted, value)
    config, errors = validate_tree(raw, path.parent)
    if errors:
        raise ConfigError(errors)
    return config


def _collect_overrides(args, command: str) -> dict:
    out = {}
    for flag, dotted, _ in _OVERRIDES.get(command, []):
        value = getattr(args, flag.lstrip("-").replace("-", "_"), None)
        if value is not None:
            out[dotted] = value
    for item in args.set or []:
        key, _, raw = item.partition("=")
        out[key] = yaml.safe_load(raw)
    return out


def _print_manifest(manifest) -> None:
    print(json.dumps({"run_dir": str(manifest.run_dir), "stages": [e.stage for e in manifest.entries]}))


def cmd_transform(args) -> None:
    if args.config:
        _print_manifest(run_pipeline(load_with_overrides(args.config, _collect_overrides(args, "transform")), ["transform"]))
        return
    if not (args.input and args.output):
        raise ValueError("transform needs --config or both --input and --output")
    examples = load_qa_dataset(args.input, require_positive=False)
    write_jsonl(args.output, (question_to_claim(ex.question) for ex in examples))


def cmd_assemble(args) -> None:
    if args.config:
        overrides = _collect_overrides(args, "assemble")
        if args.strategy:
            overrides["prompt.strategy"] = args.strategy
        _print_manifest(run_pipeline(load_with_overrides(args.config, overrides), ["assemble"]))
        return
    if not (args.input and args.output):
        raise ValueError("assemble needs --config or both --input and --output")
    strategy = PromptStrategy(args.strategy or "prompt")
    pairs = (EntailmentPair.from_dict(r) for _, r in iter_jsonl(args.input))
    write_jsonl(args.output, (render(p, strategy) for p in pairs))


def _stage_command(stage: str):
    def run(args) -> None:
        config = load_with_overrides(args.config, _collect_overrides(args, stage))
        _print_manifest(run_pipeline(config, [stage], force=args.force))

    return run


def cmd_run(args) -> None:
    config = load_with_overrides(args.config, _collect_overrides(args, "run"))
    stages = args.stages.split(",") if args.stages else list(STAGES)
    _print_manifest(run_pipeline(config, stages, force=args.force))


def cmd_validate(args) -> None:
    config = load_with_overrides(args.config, _collect_overrides(args, "validate"))
    print(json.dumps({"valid": True, "run_dir": str(config.run_dir), "config": config.snapshot()}, sort_keys=True))


def cmd_synth(args) -> None:
    from .synthetic import make_world

    out = Path(args.out)
    make_world(seed=args.seed).write(out)
    config = json.loads(json.dumps(TOY_CONFIG))
    config["seed"] = args.seed
    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
    print(json.dumps({"written": str(out)}))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enttune", description="Entailment tuning for dense retrievers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="pipeline YAML file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config leaf (dotted key)")
        for flag, dotted, kind in _OVERRIDES.get(name, []):
            p.add_argument(flag, type=kind, default=None, help=f"overrides {dotted}")
        p.set_defaults(func=func)
        return p

    p = add("transform", cmd_transform, "questions -> existence claims", config_required=False)
    p.add_argument("--input")
    p.add_argument("--output")
    p = add("assemble", cmd_assemble, "entailment pairs -> prompted text", config_required=False)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--strategy", choices=[s.value for s in PromptStrategy])
    for stage, text in [
        ("tune", "entailment tuning"),
        ("finetune", "contrastive fine-tuning"),
        ("index", "encode the corpus"),
        ("search", "retrieve for dev questions"),
        ("eval", "score retrieval results"),
        ("analyze", "score-separation studies"),
    ]:
        p = add(stage, _stage_command(stage), text)
        p.add_argument("--force", action="store_true", help="recompute even if outputs exist")
    p = add("run", cmd_run, "run several stages in order")
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    p.add_argument("--force", action="store_true")
    add("validate", cmd_validate, "check a config and print the resolved tree")
    p = sub.add_parser("synth", help="write the synthetic toy dataset and a matching config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc), "errors": exc.errors}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        payload = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("stage", "upstream", "line", "field"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        if getattr(exc, "expected", None) is not None:
            payload["expected"] = str(exc.expected)
        print(json.dumps(payload), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
