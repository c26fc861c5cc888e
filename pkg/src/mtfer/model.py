"""Shared-trunk model with four softmax classification heads.

A Model is a stack of trunk layers (conv / relu / maxpool / dropout /
flatten / dense) whose final flat activation feeds four independent
dense+softmax heads (emotion 7, gender 3, race 3, age 5). The trunk layout
is entirely data: ModelConfig lists the blocks, the dropout schedule, the
init scheme and the seed, so an alternative trunk is a config change.

Checkpoints are a small binary format: magic ``MTFER\\x01``, a u32
little-endian header length, a UTF-8 JSON header (format version, config,
class names, tensor manifest) and the parameters as little-endian float32
in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import layers
from .errors import (
    ConfigError,
    CorruptionError,
    DimensionError,
    FormatError,
    VersionError,
)
from .heads import CLASS_NAMES, HEAD_ORDER, HEAD_SIZES
from .tensor import Rng, rng_uniform, seeded_rng

CHECKPOINT_MAGIC = b"MTFER\x01"
CHECKPOINT_VERSION = 1

_LAYER_FIELDS = {
    "conv2d": {"channels", "kernel", "stride"},
    "relu": set(),
    "maxpool": set(),
    "dropout": set(),
    "flatten": set(),
    "dense": {"units"},
}


@dataclass(frozen=True)
class LayerSpec:
    """One trunk layer. Dropout rates come from the config schedule, not here."""
    kind: str
    channels: int = 0      # conv2d
    kernel: int = 3        # conv2d
    stride: int = 1        # conv2d
    units: int = 0         # dense

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for f in sorted(_LAYER_FIELDS[self.kind]):
            d[f] = getattr(self, f)
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        kind = d.get("kind")
        if kind not in _LAYER_FIELDS:
            raise ConfigError(f"blocks: unknown layer kind {kind!r}")
        extra = set(d) - {"kind"} - _LAYER_FIELDS[kind]
        if extra:
            raise ConfigError(f"blocks: unknown keys {sorted(extra)} for layer kind {kind!r}")
        return LayerSpec(kind=kind, **{k: d[k] for k in d if k != "kind"})


def conv(channels, kernel=3, stride=1):
    return LayerSpec("conv2d", channels=channels, kernel=kernel, stride=stride)


def dense(units):
    return LayerSpec("dense", units=units)


RELU = LayerSpec("relu")
MAXPOOL = LayerSpec("maxpool")
DROPOUT = LayerSpec("dropout")
FLATTEN = LayerSpec("flatten")

REFERENCE_BLOCKS = (
    conv(32), RELU, conv(32), RELU, MAXPOOL, DROPOUT,
    conv(64), RELU, conv(64), RELU, MAXPOOL, DROPOUT,
    conv(128), RELU, conv(128), RELU, MAXPOOL, DROPOUT,
    FLATTEN, dense(256), RELU, DROPOUT,
)


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple = (50, 50, 1)
    blocks: tuple = REFERENCE_BLOCKS
    dropout_schedule: tuple = (0.6, 0.5, 0.4, 0.4)
    heads: dict = field(default_factory=lambda: dict(HEAD_SIZES))
    init: str = "glorot_uniform"
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "dropout_schedule", tuple(self.dropout_schedule))
        validate_config(self)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "blocks": [b.to_dict() for b in self.blocks],
            "dropout_schedule": list(self.dropout_schedule),
            "heads": dict(self.heads),
            "init": self.init,
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        known = {"input_shape", "blocks", "dropout_schedule", "heads", "init", "seed", "dtype"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"model config: unknown keys {sorted(extra)}")
        kwargs = dict(d)
        if "input_shape" in kwargs:
            kwargs["input_shape"] = tuple(kwargs["input_shape"])
        if "blocks" in kwargs:
            kwargs["blocks"] = tuple(LayerSpec.from_dict(b) for b in kwargs["blocks"])
        if "dropout_schedule" in kwargs:
            kwargs["dropout_schedule"] = tuple(kwargs["dropout_schedule"])
        return ModelConfig(**kwargs)


def validate_config(cfg: ModelConfig) -> None:
    if tuple(cfg.input_shape) != (50, 50, 1):
        raise ConfigError(f"input_shape must be (50, 50, 1), got {tuple(cfg.input_shape)}")
    if dict(cfg.heads) != HEAD_SIZES:
        raise ConfigError(f"heads must be exactly {HEAD_SIZES}, got {dict(cfg.heads)}")
    n_dropout = sum(1 for b in cfg.blocks if b.kind == "dropout")
    if len(cfg.dropout_schedule) != n_dropout:
        raise ConfigError(
            f"dropout_schedule has {len(cfg.dropout_schedule)} rates "
            f"but blocks contain {n_dropout} dropout layers"
        )
    for r in cfg.dropout_schedule:
        if not 0.0 <= r < 1.0:
            raise ConfigError(f"dropout_schedule rate {r} outside [0, 1)")
    if cfg.init != "glorot_uniform":
        raise ConfigError(f"init: unknown scheme {cfg.init!r}")
    if cfg.dtype not in ("float32", "float64"):
        raise ConfigError(f"dtype must be 'float32' or 'float64', got {cfg.dtype!r}")
    for b in cfg.blocks:
        if b.kind == "conv2d" and b.channels < 1:
            raise ConfigError(f"blocks: conv2d needs channels >= 1, got {b.channels}")
        if b.kind == "dense" and b.units < 1:
            raise ConfigError(f"blocks: dense needs units >= 1, got {b.units}")
    _trace_shapes(cfg)  # raises ConfigError on inconsistent layouts


def _trace_shapes(cfg: ModelConfig):
    """Walk the blocks, returning ((h,w,c) or features) after each layer."""
    shape = tuple(cfg.input_shape)
    flat = False
    out = []
    for i, b in enumerate(cfg.blocks):
        if b.kind in ("conv2d", "maxpool") and flat:
            raise ConfigError(f"blocks[{i}]: {b.kind} cannot follow flatten")
        if b.kind == "conv2d":
            h, w, _ = shape
            shape = (-(-h // b.stride), -(-w // b.stride), b.channels)
        elif b.kind == "maxpool":
            h, w, c = shape
            if h < 2 or w < 2:
                raise ConfigError(f"blocks[{i}]: maxpool on spatial size {h}x{w}")
            shape = (h // 2, w // 2, c)
        elif b.kind == "flatten":
            if flat:
                raise ConfigError(f"blocks[{i}]: duplicate flatten")
            shape = shape[0] * shape[1] * shape[2]
            flat = True
        elif b.kind == "dense":
            if not flat:
                raise ConfigError(f"blocks[{i}]: dense requires flatten first")
            shape = b.units
        out.append(shape)
    if not flat:
        raise ConfigError("blocks: trunk must end in a flat activation (add flatten)")
    return out


@dataclass
class HeadOutputs:
    """Per-head probability rows, one row per example in the batch."""
    emotion: np.ndarray
    gender: np.ndarray
    race: np.ndarray
    age: np.ndarray

    def __getitem__(self, head: str) -> np.ndarray:
        return getattr(self, head)

    def as_dict(self) -> dict:
        return {h: getattr(self, h) for h in HEAD_ORDER}


@dataclass
class ForwardCaches:
    trunk: list
    heads: dict


class Model:
    """Instantiated parameters plus the topology to run them.

    Parameters live in ``params``, an insertion-ordered dict whose key order
    (trunk first, then heads in canonical order) is also the checkpoint
    manifest order. ``dropout_rates`` holds the schedule resolved onto the
    trunk's dropout layers.
    """

    def __init__(self, config: ModelConfig, params: dict, dropout_rates: dict):
        self.config = config
        self.params = params
        self.dropout_rates = dropout_rates
        self.dtype = np.float32 if config.dtype == "float32" else np.float64

    # -- forward / backward -------------------------------------------------

    def forward(self, batch, mode: str = "infer", rng: Optional[Rng] = None):
        """Run a batch through trunk and all heads.

        batch is (n, 50, 50, 1) or a single (50, 50, 1) image; returns
        (HeadOutputs, ForwardCaches). Caches are only needed for backward.
        """
        x = np.asarray(batch)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != tuple(self.config.input_shape):
            raise DimensionError(
                f"forward expects batch of {tuple(self.config.input_shape)} images, got {tuple(x.shape)}"
            )
        x = x.astype(self.dtype, copy=False)

        trunk_caches = []
        for i, spec in enumerate(self.config.blocks):
            if spec.kind == "conv2d":
                x, c = layers.conv2d_forward(x, self.params[f"trunk.{i}.w"],
                                             self.params[f"trunk.{i}.b"], spec.stride)
            elif spec.kind == "relu":
                x, c = layers.relu_forward(x)
            elif spec.kind == "maxpool":
                x, c = layers.maxpool_forward(x)
            elif spec.kind == "dropout":
                x, c = layers.dropout_forward(x, self.dropout_rates[i], mode, rng)
            elif spec.kind == "flatten":
                x, c = layers.flatten_forward(x)
            elif spec.kind == "dense":
                x, c = layers.dense_forward(x, self.params[f"trunk.{i}.w"],
                                            self.params[f"trunk.{i}.b"])
            trunk_caches.append(c)

        head_caches = {}
        probs = {}
        for head in HEAD_ORDER:
            z, hc = layers.dense_forward(x, self.params[f"head.{head}.w"],
                                         self.params[f"head.{head}.b"])
            probs[head] = layers.softmax(z)
            head_caches[head] = hc
        return HeadOutputs(**probs), ForwardCaches(trunk_caches, head_caches)

    def backward(self, caches: ForwardCaches, logit_grads: dict) -> dict:
        """Backprop per-head logit gradients into a grads dict keyed like params."""
        grads = {}
        trunk_grad = None
        for head in HEAD_ORDER:
            gx, gw, gb = layers.dense_backward(logit_grads[head], caches.heads[head])
            grads[f"head.{head}.w"] = gw
            grads[f"head.{head}.b"] = gb
            trunk_grad = gx if trunk_grad is None else trunk_grad + gx

        g = trunk_grad
        for i in reversed(range(len(self.config.blocks))):
            spec, c = self.config.blocks[i], caches.trunk[i]
            if spec.kind == "conv2d":
                g, gw, gb = layers.conv2d_backward(g, c)
                grads[f"trunk.{i}.w"] = gw
                grads[f"trunk.{i}.b"] = gb
            elif spec.kind == "relu":
                g = layers.relu_backward(g, c)
            elif spec.kind == "maxpool":
                g = layers.maxpool_backward(g, c)
            elif spec.kind == "dropout":
                g = layers.dropout_backward(g, c)
            elif spec.kind == "flatten":
                g = layers.flatten_backward(g, c)
            elif spec.kind == "dense":
                g, gw, gb = layers.dense_backward(g, c)
                grads[f"trunk.{i}.w"] = gw
                grads[f"trunk.{i}.b"] = gb
        return grads

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict) -> None:
        for k in self.params:
            self.params[k] = params[k].copy()


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng_uniform(rng, shape, -limit, limit, dtype=dtype)


def build_model(config: ModelConfig) -> Model:
    """Instantiate the configured architecture with seeded Glorot-uniform
    weights and zero biases. Same config (incl. seed) => identical model."""
    dtype = np.float32 if config.dtype == "float32" else np.float64
    rng = seeded_rng(config.seed)
    shapes = _trace_shapes(config)
    params = {}
    dropout_rates = {}
    d_i = 0
    in_shape = tuple(config.input_shape)
    for i, spec in enumerate(config.blocks):
        if spec.kind == "conv2d":
            c_in = in_shape[2]
            k = spec.kernel
            fan_in = k * k * c_in
            fan_out = k * k * spec.channels
            params[f"trunk.{i}.w"] = _glorot(rng, (k, k, c_in, spec.channels), fan_in, fan_out, dtype)
            params[f"trunk.{i}.b"] = np.zeros(spec.channels, dtype=dtype)
        elif spec.kind == "dense":
            d_in = in_shape if isinstance(in_shape, int) else int(np.prod(in_shape))
            params[f"trunk.{i}.w"] = _glorot(rng, (d_in, spec.units), d_in, spec.units, dtype)
            params[f"trunk.{i}.b"] = np.zeros(spec.units, dtype=dtype)
        elif spec.kind == "dropout":
            dropout_rates[i] = config.dropout_schedule[d_i]
            d_i += 1
        in_shape = shapes[i]

    trunk_out = in_shape
    for head in HEAD_ORDER:
        k = config.heads[head]
        params[f"head.{head}.w"] = _glorot(rng, (trunk_out, k), trunk_out, k, dtype)
        params[f"head.{head}.b"] = np.zeros(k, dtype=dtype)
    return Model(config, params, dropout_rates)


def predict(model: Model, image) -> dict:
    """Classify one preprocessed 50x50 image.

    Returns {head: {"index", "name", "confidence"}} with argmax ties broken
    to the lowest class index.
    """
    outputs, _ = model.forward(np.asarray(image)[None] if np.asarray(image).ndim == 3
                               else np.asarray(image), mode="infer")
    result = {}
    for head in HEAD_ORDER:
        p = outputs[head][0]
        idx = int(np.argmax(p))
        result[head] = {"index": idx, "name": CLASS_NAMES[head][idx], "confidence": float(p[idx])}
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path) -> None:
    """Write magic + u32 header length + JSON header + float32 payload."""
    manifest = []
    chunks = []
    offset = 0
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "class_names": {h: list(CLASS_NAMES[h]) for h in HEAD_ORDER},
        "manifest": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(b"".join(chunks))


def load_checkpoint(path, expect_config: Optional[ModelConfig] = None) -> Model:
    """Restore a Model from a checkpoint file.

    Raises FormatError on bad magic, VersionError on unknown format_version,
    CorruptionError when the payload does not match the manifest, and
    ConfigError when expect_config is given and differs from the stored one.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    if len(blob) < pos + 4:
        raise CorruptionError(f"{path}: truncated before header length")
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + header_len:
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(blob[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError(f"{path}: unreadable header: {e}") from e
    pos += header_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported format_version {header.get('format_version')!r}")
    config = ModelConfig.from_dict(header["config"])
    if expect_config is not None and expect_config.to_dict() != config.to_dict():
        raise ConfigError(f"{path}: checkpoint was built with a different model config")

    payload = blob[pos:]
    expected = 0
    for entry in header["manifest"]:
        if entry["offset"] != expected:
            raise CorruptionError(f"{path}: manifest offset mismatch at {entry['name']}")
        expected += int(np.prod(entry["shape"], dtype=np.int64)) * 4 if entry["shape"] else 4
    # zero-size guard: np.prod([]) == 1.0, which is what scalars need
    if len(payload) != expected:
        raise CorruptionError(f"{path}: payload is {len(payload)} bytes, manifest expects {expected}")

    skeleton = build_model(config)
    dtype = skeleton.dtype
    params = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        params[entry["name"]] = raw.reshape(shape).astype(dtype)
    if set(params) != set(skeleton.params):
        raise CorruptionError(f"{path}: manifest tensors do not match the config's parameter set")
    for name, p in skeleton.params.items():
        if params[name].shape != p.shape:
            raise CorruptionError(f"{path}: tensor {name} has shape {params[name].shape}, expected {p.shape}")
    return Model(config, params, skeleton.dropout_rates)
