"""Experiment orchestration: train, eval, dualinf, gridsearch, synth.

Configuration is a single JSON document; command-line flags override file
values, which override the built-in defaults (the defaults are the published
training recipe: hidden 200, embedding 50, batch 48, 10 epochs, teacher
forcing 0.9, beam 20). Every command writes a manifest with the fully
resolved configuration, and reruns with the same configuration and seed
produce byte-identical outputs.

Exit codes: 0 success, 2 usage or configuration, 3 data, 4 checkpoint.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from . import __version__, data, decode, metrics, models
from .data import (Checkpoint, CheckpointError, DataError, augment_nlg_to_nlu,
                   augment_nlu_to_nlg, build_vocabs, load_checkpoint, load_nlg,
                   load_nlu, merge_dedup, save_checkpoint, save_nlg, save_nlu,
                   synth_corpus)
from .decode import DecodeError, DualWeights, ModelsBundle, grid_search
from .frames import FrameError
from .metrics import MetricError
from .models import TrainConfig, model_from_checkpoint, to_checkpoint, train_model
from .textproc import BpeError, save_bpe


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "out_dir": "runs/out",
    "direction": "both",
    "checkpoints": None,
    "data": {
        "nlu_train": None, "nlg_train": None,
        "nlu_valid": None, "nlg_valid": None,
        "nlu_test": None, "nlg_test": None,
        "augment": "auto",
    },
    "model": {"hidden": 200, "embedding": 50, "merges": 1000},
    "train": {"epochs": 10, "batch_size": 48, "teacher_forcing": 0.9,
              "lr": 0.001, "clip": 5.0, "models": ["nlu", "nlg", "lm", "mfm"]},
    "decode": {"beam": 20, "max_len": 60, "k_intent": 3},
    "dual": {"alpha": 0.5, "beta": 0.5, "grid_step": 0.1},
}


def _merge_section(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge_section(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config {config_path}: {e}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge_section(cfg, file_cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["out_dir"] = args.out
    if getattr(args, "direction", None) is not None:
        cfg["direction"] = args.direction
    if getattr(args, "checkpoints", None) is not None:
        cfg["checkpoints"] = args.checkpoints
    if getattr(args, "alpha", None) is not None:
        cfg["dual"]["alpha"] = args.alpha
    if getattr(args, "beta", None) is not None:
        cfg["dual"]["beta"] = args.beta
    if getattr(args, "beam", None) is not None:
        cfg["decode"]["beam"] = args.beam
    if cfg["direction"] not in ("nlu", "nlg", "both"):
        raise ConfigError(f"direction must be nlu, nlg or both, not {cfg['direction']!r}")
    return cfg


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, ensure_ascii=False,
                               indent=2) + "\n", encoding="utf-8")


def _write_manifest(out_dir: Path, command: str, cfg: dict, extra: dict | None = None):
    manifest = {"command": command, "config": cfg, "package_version": __version__}
    if extra:
        manifest.update(extra)
    _write_json(out_dir / "manifest.json", manifest)


def _require_path(cfg: dict, key: str) -> str:
    path = cfg["data"].get(key)
    if not path:
        raise ConfigError(f"config is missing required dataset path data.{key}")
    return path


def _load_train_split(cfg: dict):
    """Training examples for both shapes, filling a missing direction by
    augmentation when data.augment is 'auto'."""
    d = cfg["data"]
    nlu = load_nlu(d["nlu_train"]) if d.get("nlu_train") else None
    nlg = load_nlg(d["nlg_train"]) if d.get("nlg_train") else None
    if nlu is None and nlg is None:
        raise ConfigError("config needs data.nlu_train and/or data.nlg_train")
    if cfg["data"]["augment"] == "auto":
        if nlu is None:
            nlu, _ = augment_nlg_to_nlu(nlg)
            if not nlu:
                raise DataError("augmentation produced no usable tagged examples")
        if nlg is None:
            nlg = augment_nlu_to_nlg(nlu)
    if nlu is None or nlg is None:
        raise ConfigError("both data shapes are required when data.augment is not 'auto'")
    return nlu, nlg


def cmd_train(args, cfg: dict) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    nlu_raw, nlg_raw = _load_train_split(cfg)
    vocabs = build_vocabs(nlu_raw, nlg_raw, cfg["model"]["merges"])
    save_bpe(out_dir / "bpe.txt", vocabs.bpe)

    tc = TrainConfig(
        hidden=cfg["model"]["hidden"], embedding=cfg["model"]["embedding"],
        epochs=cfg["train"]["epochs"], batch_size=cfg["train"]["batch_size"],
        teacher_forcing=cfg["train"]["teacher_forcing"], lr=cfg["train"]["lr"],
        clip=cfg["train"]["clip"], seed=cfg["seed"])
    lm_texts = merge_dedup([ex.text for ex in nlu_raw],
                           [r for ex in nlg_raw for r in ex.refs])
    datasets = {
        "nlu": lambda: models.prepare_nlu_samples(nlu_raw, vocabs),
        "nlg": lambda: models.prepare_nlg_samples(nlg_raw, vocabs),
        "lm": lambda: models.prepare_lm_samples(lm_texts, vocabs),
        "mfm": lambda: [f for f in merge_dedup([ex.frame for ex in nlg_raw], [])
                        if f.n_features > 0],
    }
    echo = {"epochs": tc.epochs, "batch_size": tc.batch_size,
            "teacher_forcing": tc.teacher_forcing, "lr": tc.lr, "clip": tc.clip}
    losses: dict[str, list[float]] = {}
    for kind in cfg["train"]["models"]:
        if kind not in datasets:
            raise ConfigError(f"unknown model kind {kind!r} in train.models")
        model, kind_losses = train_model(kind, datasets[kind](), tc, vocabs)
        losses[kind] = kind_losses
        save_checkpoint(out_dir / f"{kind}.ckpt",
                        to_checkpoint(model, seed=cfg["seed"], extra_config=echo))
    _write_manifest(out_dir, "train", cfg, {"losses": losses})
    return 0


def _load_bundle(cfg: dict) -> ModelsBundle:
    ckpt_dir = cfg.get("checkpoints") or cfg["out_dir"]
    loaded: dict[str, Checkpoint] = {}
    for kind in data.MODEL_KINDS:
        path = Path(ckpt_dir) / f"{kind}.ckpt"
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path}")
        loaded[kind] = load_checkpoint(path)
        if loaded[kind].kind != kind:
            raise CheckpointError(f"{path} holds a {loaded[kind].kind!r} model")
    ref = loaded["nlu"]
    for kind, ckpt in loaded.items():
        if ckpt.vocab != ref.vocab or ckpt.labels != ref.labels:
            raise CheckpointError(
                f"checkpoint inventories are incompatible: {kind} vs nlu")
    return ModelsBundle(*(model_from_checkpoint(loaded[k]) for k in data.MODEL_KINDS))


def _eval_split(cfg: dict, split: str):
    nlu = nlg = None
    if cfg["direction"] in ("nlu", "both"):
        nlu = load_nlu(_require_path(cfg, f"nlu_{split}"))
    if cfg["direction"] in ("nlg", "both"):
        nlg = load_nlg(_require_path(cfg, f"nlg_{split}"))
    return nlu, nlg


def _run_directions(cfg, bundle, nlu_examples, nlg_examples, weights):
    dec = cfg["decode"]
    reports: dict[str, metrics.EvalReport] = {}
    traces: dict[str, list] = {}
    if nlu_examples is not None:
        reports["nlu"], traces["nlu"] = decode.evaluate_direction(
            nlu_examples, bundle, "nlu", weights, beam=dec["beam"],
            max_len=dec["max_len"], k_intent=dec["k_intent"], seed=cfg["seed"])
    if nlg_examples is not None:
        reports["nlg"], traces["nlg"] = decode.evaluate_direction(
            nlg_examples, bundle, "nlg", weights, beam=dec["beam"],
            max_len=dec["max_len"], k_intent=dec["k_intent"], seed=cfg["seed"])
    report = metrics.merge_reports(reports.get("nlu"), reports.get("nlg"))
    return report, traces


def _write_report(out_dir: Path, report: metrics.EvalReport) -> None:
    (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")


def cmd_eval(args, cfg: dict) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = _load_bundle(cfg)
    nlu_examples, nlg_examples = _eval_split(cfg, "test")
    report, _ = _run_directions(cfg, bundle, nlu_examples, nlg_examples, None)
    _write_report(out_dir, report)
    _write_manifest(out_dir, "eval", cfg)
    return 0


def cmd_dualinf(args, cfg: dict) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = _load_bundle(cfg)
    weights = DualWeights(cfg["dual"]["alpha"], cfg["dual"]["beta"])
    nlu_examples, nlg_examples = _eval_split(cfg, "test")
    report, traces = _run_directions(cfg, bundle, nlu_examples, nlg_examples, weights)
    _write_report(out_dir, report)
    for direction, rows in traces.items():
        with open(out_dir / f"trace_{direction}.jsonl", "w", encoding="utf-8") as fh:
            for t in rows:
                fh.write(json.dumps({
                    "index": t.index, "input": t.input_text, "selected": t.selected,
                    "hypotheses": t.hypotheses}, sort_keys=True, ensure_ascii=False) + "\n")
    _write_manifest(out_dir, "dualinf", cfg)
    return 0


def cmd_gridsearch(args, cfg: dict) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = _load_bundle(cfg)
    dec = cfg["decode"]
    nlu_valid, nlg_valid = _eval_split(cfg, "valid")
    selection: dict[str, dict] = {}
    results: dict[str, decode.GridResult] = {}
    for direction, examples in (("nlu", nlu_valid), ("nlg", nlg_valid)):
        if examples is None:
            continue
        res = grid_search(examples, bundle, direction, beam=dec["beam"],
                          max_len=dec["max_len"], k_intent=dec["k_intent"],
                          seed=cfg["seed"], step=cfg["dual"]["grid_step"])
        results[direction] = res
        (out_dir / f"grid_{direction}.csv").write_text(res.to_csv(), encoding="utf-8")
        selection[direction] = {
            name: {"alpha": alpha, "beta": beta, "value": value}
            for name, (alpha, beta, value) in res.best.items()}
    _write_json(out_dir / "selection.json", selection)

    if getattr(args, "eval_test", False):
        test_eval: dict[str, dict] = {}
        nlu_test, nlg_test = _eval_split(cfg, "test")
        for direction, examples in (("nlu", nlu_test), ("nlg", nlg_test)):
            if examples is None or direction not in results:
                continue
            test_eval[direction] = {}
            cache: dict[tuple[float, float], metrics.EvalReport] = {}
            for name, info in selection[direction].items():
                pair = (info["alpha"], info["beta"])
                if pair not in cache:
                    w = DualWeights(*pair)
                    rep, _ = decode.evaluate_direction(
                        examples, bundle, direction, w, beam=dec["beam"],
                        max_len=dec["max_len"], k_intent=dec["k_intent"],
                        seed=cfg["seed"])
                    cache[pair] = rep
                test_eval[direction][name] = {
                    "alpha": pair[0], "beta": pair[1],
                    "report": json.loads(cache[pair].to_json())}
        _write_json(out_dir / "test_report.json", test_eval)
    _write_manifest(out_dir, "gridsearch", cfg)
    return 0


def cmd_synth(args, cfg: dict) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = {"train": args.train_size, "valid": args.valid_size, "test": args.test_size}
    manifest_splits = {}
    for i, (split, size) in enumerate(sizes.items()):
        nlu, nlg = synth_corpus(cfg["seed"] + i, size)
        save_nlu(out_dir / f"nlu_{split}.jsonl", nlu)
        save_nlg(out_dir / f"nlg_{split}.jsonl", nlg)
        manifest_splits[split] = {"count": size,
                                  "nlu": f"nlu_{split}.jsonl",
                                  "nlg": f"nlg_{split}.jsonl"}
    _write_json(out_dir / "dataset.json", {"name": "synthetic", "splits": manifest_splits})
    _write_manifest(out_dir, "synth", cfg, {"sizes": sizes})
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "dualinf": cmd_dualinf,
            "gridsearch": cmd_gridsearch, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualdec",
        description="Dual-inference decoding between slot-filling NLU and "
                    "semantic-frame NLG.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("train", "train the four models and write checkpoints"),
            ("eval", "plain (alpha=1) decoding and metrics on the test split"),
            ("dualinf", "dual-inference re-ranking at one (alpha, beta)"),
            ("gridsearch", "sweep the 121 (alpha, beta) pairs on the validation split"),
            ("synth", "generate the synthetic template corpus")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--direction", choices=["nlu", "nlg", "both"])
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--beam", type=int)
        if name in ("eval", "dualinf", "gridsearch"):
            p.add_argument("--checkpoints", help="directory holding *.ckpt files")
        if name == "gridsearch":
            p.add_argument("--eval-test", action="store_true", dest="eval_test",
                           help="also evaluate the selected pairs on the test split")
        if name == "synth":
            p.add_argument("--train-size", type=int, default=32)
            p.add_argument("--valid-size", type=int, default=16)
            p.add_argument("--test-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, FrameError, BpeError, MetricError, DecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
