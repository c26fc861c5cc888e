"""Operator command line: train / eval / predict / preprocess / plot.

Run configs are strict JSON documents: unknown keys anywhere are rejected
so a typo can never silently shadow a default. Exit codes are stable:
0 success, 2 config or usage problems, 3 missing or unreadable input,
4 checkpoint problems. Setting MTFER_DETERMINISTIC=1 in the environment
forces deterministic mode regardless of the config (the implementation is
sequential, so this currently just pins the recorded mode).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import (
    DEFAULT_FER_EMOTION_MAP,
    load_cache,
    load_fer_csv,
    load_rafdb,
    save_cache,
    split,
)
from .errors import (
    ConfigError,
    CorruptionError,
    FormatError,
    IngestionError,
    LabelError,
    LandmarkError,
    MtferError,
    RangeError,
    RowError,
    SizeError,
    VersionError,
)
from .heads import HEAD_ORDER
from .losses import LossWeights
from .model import ModelConfig, build_model, load_checkpoint, predict, save_checkpoint
from .plots import read_metrics_csv, training_curves_svg
from .preprocess import EyePair, PreprocessConfig, preprocess_image, read_pnm
from .trainer import (
    EarlyStopConfig,
    PlateauConfig,
    TrainConfig,
    evaluate,
    train,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_CHECKPOINT = 4

_DATA_ERRORS = (IngestionError, FormatError, RowError, LabelError, FileNotFoundError,
                IsADirectoryError, PermissionError)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _strict(d: dict, known: set, context: str) -> None:
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{context}: unknown keys {sorted(extra)}")


# ---------------------------------------------------------------------------
# run config
# ---------------------------------------------------------------------------

def _train_config_from_dict(d: dict) -> TrainConfig:
    _strict(d, {"initial_lr", "batch_size", "max_epochs", "loss_weights",
                "plateau", "early_stop", "seed"}, "train")
    kwargs = dict(d)
    if "loss_weights" in kwargs:
        lw = kwargs["loss_weights"]
        _strict(lw, {"emotion", "age", "race", "gender"}, "train.loss_weights")
        kwargs["loss_weights"] = LossWeights(**lw)
    if "plateau" in kwargs:
        p = kwargs["plateau"]
        _strict(p, {"monitor", "patience", "factor", "min_lr", "min_delta"}, "train.plateau")
        kwargs["plateau"] = PlateauConfig(**p)
    if "early_stop" in kwargs:
        e = kwargs["early_stop"]
        _strict(e, {"monitor", "patience", "min_delta", "restore_best"}, "train.early_stop")
        kwargs["early_stop"] = EarlyStopConfig(**e)
    return TrainConfig(**kwargs)


def _train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "initial_lr": cfg.initial_lr,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "loss_weights": cfg.loss_weights.as_dict(),
        "plateau": {"monitor": cfg.plateau.monitor, "patience": cfg.plateau.patience,
                    "factor": cfg.plateau.factor, "min_lr": cfg.plateau.min_lr,
                    "min_delta": cfg.plateau.min_delta},
        "early_stop": {"monitor": cfg.early_stop.monitor, "patience": cfg.early_stop.patience,
                       "min_delta": cfg.early_stop.min_delta,
                       "restore_best": cfg.early_stop.restore_best},
        "seed": cfg.seed,
    }


def _preprocess_config_from_dict(d: dict) -> PreprocessConfig:
    _strict(d, {"target_size", "max_rotation_deg", "luma_weights", "border_fill"}, "preprocess")
    kwargs = dict(d)
    if "target_size" in kwargs:
        kwargs["target_size"] = tuple(kwargs["target_size"])
    if "luma_weights" in kwargs:
        kwargs["luma_weights"] = tuple(kwargs["luma_weights"])
    return PreprocessConfig(**kwargs)


def _preprocess_config_to_dict(cfg: PreprocessConfig) -> dict:
    return {"target_size": list(cfg.target_size), "max_rotation_deg": cfg.max_rotation_deg,
            "luma_weights": list(cfg.luma_weights), "border_fill": cfg.border_fill}


class RunConfig:
    """Parsed + validated run configuration document."""

    KNOWN = {"model", "train", "preprocess", "data", "out_dir", "deterministic", "split"}

    def __init__(self, doc: dict):
        if not isinstance(doc, dict):
            raise ConfigError("run config: top level must be a JSON object")
        _strict(doc, self.KNOWN, "run config")
        self.model = ModelConfig.from_dict(doc.get("model", {}))
        self.train = _train_config_from_dict(doc.get("train", {}))
        self.preprocess = _preprocess_config_from_dict(doc.get("preprocess", {}))
        self.data = doc.get("data")
        if self.data is not None:
            self._check_data_section(self.data)
        self.out_dir = doc.get("out_dir")
        self.deterministic = bool(doc.get("deterministic", True))
        s = doc.get("split", {})
        _strict(s, {"ratio", "seed"}, "split")
        self.split_ratio = float(s.get("ratio", 0.9))
        self.split_seed = int(s.get("seed", self.train.seed))

    @staticmethod
    def _check_data_section(d: dict) -> None:
        kind = d.get("kind")
        required = {
            "fer": {"kind", "csv"},
            "rafdb": {"kind", "image_dir", "emotion_labels", "attribute_dir", "landmarks"},
            "cache": {"kind", "path"},
        }
        optional = {"fer": {"emotion_map"}, "rafdb": {"attr_suffix"}, "cache": set()}
        if kind not in required:
            raise ConfigError(f"data.kind must be one of fer/rafdb/cache, got {kind!r}")
        _strict(d, required[kind] | optional[kind], f"data ({kind})")
        missing = required[kind] - set(d)
        if missing:
            raise ConfigError(f"data ({kind}): missing keys {sorted(missing)}")

    def resolved_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": _train_config_to_dict(self.train),
            "preprocess": _preprocess_config_to_dict(self.preprocess),
            "data": self.data,
            "out_dir": self.out_dir,
            "deterministic": self.deterministic,
            "split": {"ratio": self.split_ratio, "seed": self.split_seed},
        }


def _load_run_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FileNotFoundError(f"cannot read config {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return RunConfig(doc)


def _load_examples(data_cfg: dict, pre_cfg: PreprocessConfig):
    """-> (examples, skipped_rotation_count)"""
    kind = data_cfg["kind"]
    if kind == "fer":
        emotion_map = data_cfg.get("emotion_map")
        if emotion_map is not None:
            emotion_map = {int(k): int(v) for k, v in emotion_map.items()}
        return load_fer_csv(data_cfg["csv"], emotion_map=emotion_map,
                            preprocess_cfg=pre_cfg), 0
    if kind == "rafdb":
        examples, skipped = load_rafdb(
            data_cfg["image_dir"], data_cfg["emotion_labels"],
            data_cfg["attribute_dir"], data_cfg["landmarks"],
            preprocess_cfg=pre_cfg,
            attr_suffix=data_cfg.get("attr_suffix", "_attri.txt"),
        )
        return examples, skipped
    return load_cache(data_cfg["path"]), 0


def _deterministic(flag: bool) -> bool:
    return True if os.environ.get("MTFER_DETERMINISTIC") == "1" else flag


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        cfg = _load_run_config(args.config)
    except (FileNotFoundError, OSError) as e:
        return _fail(EXIT_MISSING, str(e))
    except MtferError as e:
        return _fail(EXIT_CONFIG, str(e))
    if cfg.data is None:
        return _fail(EXIT_CONFIG, "run config: data section is required for train")

    try:
        if args.seed is not None:
            cfg.model = ModelConfig.from_dict({**cfg.model.to_dict(), "seed": args.seed})
            cfg.train = _train_config_from_dict(
                {**_train_config_to_dict(cfg.train), "seed": args.seed})
    except MtferError as e:
        return _fail(EXIT_CONFIG, str(e))
    cfg.deterministic = _deterministic(cfg.deterministic)

    out_dir = Path(args.out or cfg.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.out_dir = str(out_dir)

    try:
        examples, _ = _load_examples(cfg.data, cfg.preprocess)
    except _DATA_ERRORS as e:
        return _fail(EXIT_MISSING, str(e))

    try:
        data = split(examples, ratio=cfg.split_ratio, seed=cfg.split_seed)
        model = build_model(cfg.model)
        model, history = train(model, data, cfg.train,
                               deterministic=cfg.deterministic,
                               log=lambda s: print(s))
    except (SizeError, RangeError) as e:
        return _fail(EXIT_CONFIG, str(e))

    save_checkpoint(model, out_dir / "model.ckpt")
    write_metrics_csv(history, out_dir / "metrics.csv")
    (out_dir / "run_config.resolved.json").write_text(
        json.dumps(cfg.resolved_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"stopped after {len(history)} epochs ({history.stop_reason}); "
          f"best val emotion accuracy {history.best_metric:.4f} at epoch {history.best_epoch}")
    return EXIT_OK


def _dataset_from_flags(args, pre_cfg: PreprocessConfig):
    kind = args.dataset_kind
    path = Path(args.dataset)
    if kind == "auto":
        if path.is_dir():
            kind = "rafdb"
        elif path.suffix == ".csv":
            kind = "fer"
        else:
            kind = "cache"
    if kind == "fer":
        return {"kind": "fer", "csv": str(path)}
    if kind == "rafdb":
        missing = [flag for flag, v in (("--emotion-labels", args.emotion_labels),
                                        ("--attribute-dir", args.attribute_dir),
                                        ("--landmarks", args.landmarks)) if v is None]
        if missing:
            raise ConfigError(f"rafdb dataset needs {', '.join(missing)}")
        return {"kind": "rafdb", "image_dir": str(path),
                "emotion_labels": args.emotion_labels,
                "attribute_dir": args.attribute_dir,
                "landmarks": args.landmarks}
    return {"kind": "cache", "path": str(path)}


def cmd_eval(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError as e:
        return _fail(EXIT_MISSING, str(e))
    except MtferError as e:
        return _fail(EXIT_CHECKPOINT, str(e))

    pre_cfg = PreprocessConfig()
    try:
        data_cfg = _dataset_from_flags(args, pre_cfg)
        examples, _ = _load_examples(data_cfg, pre_cfg)
        result = evaluate(model, examples)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    except _DATA_ERRORS as e:
        return _fail(EXIT_MISSING, str(e))
    except SizeError as e:
        return _fail(EXIT_MISSING, str(e))

    labels = {"emotion": "emotion", "gender": "gender", "race": "race/ethnicity", "age": "age"}
    print(f"{'label':<16}{'accuracy':>10}{'loss':>10}{'n':>8}")
    for head in HEAD_ORDER:
        acc = result["accuracy"][head]
        loss = result["loss"][head]
        acc_s = "N/A" if acc is None else f"{acc:.4f}"
        loss_s = "N/A" if loss is None else f"{loss:.4f}"
        print(f"{labels[head]:<16}{acc_s:>10}{loss_s:>10}{result['present'][head]:>8}")
    print(f"weighted total loss: {result['weighted_total']:.4f}")
    Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
    return EXIT_OK


def _parse_eyes(spec: str) -> EyePair:
    parts = spec.split(",")
    if len(parts) != 4:
        raise ConfigError(f"--eyes must be lx,ly,rx,ry, got {spec!r}")
    try:
        lx, ly, rx, ry = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--eyes must be numeric lx,ly,rx,ry, got {spec!r}") from None
    return EyePair((lx, ly), (rx, ry))


def cmd_predict(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError as e:
        return _fail(EXIT_MISSING, str(e))
    except MtferError as e:
        return _fail(EXIT_CHECKPOINT, str(e))
    try:
        eyes = _parse_eyes(args.eyes) if args.eyes else None
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    try:
        image = read_pnm(args.image)
    except (FileNotFoundError, OSError, FormatError) as e:
        return _fail(EXIT_MISSING, str(e))
    try:
        tensor = preprocess_image(image, eyes)
    except LandmarkError as e:
        return _fail(EXIT_CONFIG, str(e))
    result = predict(model, tensor)
    names = ", ".join(result[h]["name"] for h in HEAD_ORDER)
    confs = " ".join(f"{h}={result[h]['confidence']:.3f}" for h in HEAD_ORDER)
    print(f"{names} (confidence {confs})")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    pre_cfg = PreprocessConfig()
    try:
        data_cfg = _dataset_from_flags(args, pre_cfg)
        examples, skipped = _load_examples(data_cfg, pre_cfg)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    except _DATA_ERRORS as e:
        return _fail(EXIT_MISSING, str(e))
    save_cache(args.out, examples)
    print(f"cached {len(examples)} examples to {args.out} "
          f"({skipped} rotation skip{'s' if skipped != 1 else ''})")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        rows = read_metrics_csv(args.metrics)
    except FileNotFoundError as e:
        return _fail(EXIT_MISSING, str(e))
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    try:
        svg = training_curves_svg(rows)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_dataset_flags(p):
    p.add_argument("--dataset", required=True,
                   help="FER-style CSV, MTFERDS1 cache, or RAF-DB style image directory")
    p.add_argument("--dataset-kind", choices=["auto", "fer", "rafdb", "cache"], default="auto")
    p.add_argument("--emotion-labels", help="rafdb: '<filename> <code 1-7>' label file")
    p.add_argument("--attribute-dir", help="rafdb: directory of per-image attribute files")
    p.add_argument("--landmarks", help="rafdb: landmarks CSV (filename,left_x,left_y,right_x,right_y)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtfer",
        description="Multi-task facial attribute model: train, evaluate, predict, preprocess, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="output directory (model.ckpt, metrics.csv, resolved config)")
    p.add_argument("--seed", type=int, help="override both model and training seeds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    _add_dataset_flags(p)
    p.add_argument("--out", default="eval.json", help="where to write eval.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one PGM/PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="binary PGM (P5) or PPM (P6), maxval 255")
    p.add_argument("--eyes", help="eye centers lx,ly,rx,ry; omitted = no rotation")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("preprocess", help="ingest a dataset into an MTFERDS1 cache")
    _add_dataset_flags(p)
    p.add_argument("--out", required=True, help="cache file to write")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("plot", help="render training curves from metrics.csv to SVG")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CorruptionError, VersionError) as e:
        return _fail(EXIT_CHECKPOINT, str(e))
    except MtferError as e:
        return _fail(EXIT_CONFIG, str(e))


if __name__ == "__main__":
    sys.exit(main())
