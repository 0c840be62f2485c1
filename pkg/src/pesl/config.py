"""Run configuration: parsing, named-field validation, seed streams.

Config files are JSON with four sections (model, train, transport,
data). Loading is total: every malformed document becomes a
ConfigError whose message names the offending field, never a raw
traceback from deep inside numpy.

All randomness in a run flows from `train.seed` through named
sub-streams (weights, data, mixup, shuffle key, ...), so runs that
differ only in shuffle mode consume identical weight/data/mixup
draws. That is what makes vanilla-vs-shuffled loss curves comparable
digit for digit.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

MODES = ("vanilla", "row_shuffle", "row_column_shuffle")
TASKS = ("plain", "order_dependent")

# tags for deriving independent named rng streams from one seed
_STREAM_TAGS = {
    "cloud_weights": 1,
    "edge_weights": 2,
    "data": 3,
    "mixup": 4,
    "key": 5,
    "eval": 6,
    "attack": 7,
}


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent deterministic generator for a named purpose."""
    try:
        tag = _STREAM_TAGS[name]
    except KeyError:
        raise ConfigError(
            f"unknown rng stream {name!r}, expected one of {sorted(_STREAM_TAGS)}"
        ) from None
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


@dataclass
class ModelConfig:
    image_h: int
    image_w: int
    channels: int
    patch_h: int
    patch_w: int
    p: int
    d: int
    n_layers: int
    n_classes: int
    n_heads: int = 1
    teb_variant: str = "minimal"
    position_embedding: bool = False

    @property
    def patch_dim(self) -> int:
        return self.patch_h * self.patch_w * self.channels


@dataclass
class TrainConfig:
    mode: str
    lr: float
    epochs: int
    batch_size: int
    seed: int
    mixup_prob: float = 0.0


@dataclass
class TransportConfig:
    kind: str = "loopback"
    host: str = "127.0.0.1"
    port: int = 0


@dataclass
class DataConfig:
    kind: str = "synthetic"
    task: str = "plain"
    n: int = 1000
    path: Optional[str] = None


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    transport: TransportConfig = field(default_factory=TransportConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _need(section: dict, where: str, name: str, kind, default=_STREAM_TAGS):
    # default sentinel reuse: absence of a real default means required
    if name not in section:
        if default is _STREAM_TAGS:
            raise ConfigError(f"{where}.{name}: missing required field")
        return default
    val = section[name]
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{where}.{name}: expected an integer, got {val!r}")
    elif kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{where}.{name}: expected a number, got {val!r}")
        val = float(val)
    elif kind is str:
        if not isinstance(val, str):
            raise ConfigError(f"{where}.{name}: expected a string, got {val!r}")
    elif kind is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{where}.{name}: expected true/false, got {val!r}")
    return val


def _no_unknown(section: dict, where: str, allowed: set[str]) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown field")


def _positive(where: str, name: str, val):
    if val <= 0:
        raise ConfigError(f"{where}.{name}: must be positive, got {val}")
    return val


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    _no_unknown(doc, "config", {"model", "train", "transport", "data"})
    for sec in ("model", "train"):
        if sec not in doc or not isinstance(doc[sec], dict):
            raise ConfigError(f"{sec}: missing or not an object")

    m = doc["model"]
    _no_unknown(
        m, "model",
        {"image_h", "image_w", "channels", "patch_h", "patch_w", "p", "d",
         "n_layers", "n_classes", "n_heads", "teb_variant",
         "position_embedding"},
    )
    model = ModelConfig(
        image_h=_positive("model", "image_h", _need(m, "model", "image_h", int)),
        image_w=_positive("model", "image_w", _need(m, "model", "image_w", int)),
        channels=_positive("model", "channels", _need(m, "model", "channels", int)),
        patch_h=_positive("model", "patch_h", _need(m, "model", "patch_h", int)),
        patch_w=_positive("model", "patch_w", _need(m, "model", "patch_w", int)),
        p=_positive("model", "p", _need(m, "model", "p", int)),
        d=_positive("model", "d", _need(m, "model", "d", int)),
        n_layers=_positive("model", "n_layers", _need(m, "model", "n_layers", int)),
        n_classes=_need(m, "model", "n_classes", int),
        n_heads=_positive("model", "n_heads", _need(m, "model", "n_heads", int, 1)),
        teb_variant=_need(m, "model", "teb_variant", str, "minimal"),
        position_embedding=_need(m, "model", "position_embedding", bool, False),
    )
    if model.n_classes < 2:
        raise ConfigError(f"model.n_classes: need at least 2, got {model.n_classes}")
    if model.image_h % model.patch_h != 0 or model.image_w % model.patch_w != 0:
        raise ConfigError(
            f"model.patch_h/patch_w: {model.patch_h}x{model.patch_w} does not "
            f"tile a {model.image_h}x{model.image_w} image"
        )
    derived_p = (model.image_h // model.patch_h) * (model.image_w // model.patch_w)
    if model.p != derived_p:
        raise ConfigError(
            f"model.p: {model.p} does not match the {derived_p} patches implied "
            "by image and patch dims"
        )
    if model.teb_variant not in ("minimal", "full"):
        raise ConfigError(
            f"model.teb_variant: expected 'minimal' or 'full', got {model.teb_variant!r}"
        )
    if model.d % model.n_heads != 0:
        raise ConfigError(
            f"model.n_heads: {model.n_heads} does not divide width d={model.d}"
        )

    t = doc["train"]
    _no_unknown(
        t, "train", {"mode", "lr", "epochs", "batch_size", "seed", "mixup_prob"}
    )
    train = TrainConfig(
        mode=_need(t, "train", "mode", str),
        lr=_need(t, "train", "lr", float),
        epochs=_positive("train", "epochs", _need(t, "train", "epochs", int)),
        batch_size=_positive(
            "train", "batch_size", _need(t, "train", "batch_size", int)
        ),
        seed=_need(t, "train", "seed", int),
        mixup_prob=_need(t, "train", "mixup_prob", float, 0.0),
    )
    if train.mode not in MODES:
        raise ConfigError(f"train.mode: expected one of {MODES}, got {train.mode!r}")
    if train.lr <= 0:
        raise ConfigError(f"train.lr: must be positive, got {train.lr}")
    if train.seed < 0:
        raise ConfigError(f"train.seed: must be non-negative, got {train.seed}")
    if not 0.0 <= train.mixup_prob <= 1.0:
        raise ConfigError(
            f"train.mixup_prob: must be in [0, 1], got {train.mixup_prob}"
        )
    if train.mixup_prob > 0.0 and train.batch_size < 2:
        raise ConfigError(
            "train.batch_size: mixing needs a partner, use batch_size >= 2 "
            "when mixup_prob > 0"
        )
    if train.mode == "row_column_shuffle" and model.n_heads != 1:
        raise ConfigError(
            "model.n_heads: column shuffle requires single-head attention; "
            "fixed per-head column slices do not commute with a column "
            "permutation of the width"
        )

    tr = doc.get("transport", {})
    if not isinstance(tr, dict):
        raise ConfigError("transport: must be an object")
    _no_unknown(tr, "transport", {"kind", "host", "port"})
    transport = TransportConfig(
        kind=_need(tr, "transport", "kind", str, "loopback"),
        host=_need(tr, "transport", "host", str, "127.0.0.1"),
        port=_need(tr, "transport", "port", int, 0),
    )
    if transport.kind not in ("loopback", "tcp"):
        raise ConfigError(
            f"transport.kind: expected 'loopback' or 'tcp', got {transport.kind!r}"
        )
    if transport.kind == "tcp" and not 0 <= transport.port <= 65535:
        raise ConfigError(f"transport.port: out of range, got {transport.port}")

    da = doc.get("data", {})
    if not isinstance(da, dict):
        raise ConfigError("data: must be an object")
    _no_unknown(da, "data", {"kind", "task", "n", "path"})
    data = DataConfig(
        kind=_need(da, "data", "kind", str, "synthetic"),
        task=_need(da, "data", "task", str, "plain"),
        n=_positive("data", "n", _need(da, "data", "n", int, 1000)),
        path=da.get("path"),
    )
    if data.kind not in ("synthetic", "csv"):
        raise ConfigError(f"data.kind: expected 'synthetic' or 'csv', got {data.kind!r}")
    if data.task not in TASKS:
        raise ConfigError(f"data.task: expected one of {TASKS}, got {data.task!r}")
    if data.kind == "csv" and not data.path:
        raise ConfigError("data.path: required when data.kind is 'csv'")
    if data.path is not None and not isinstance(data.path, str):
        raise ConfigError(f"data.path: expected a string, got {data.path!r}")
    if data.task == "order_dependent" and model.n_classes != 2:
        raise ConfigError(
            "model.n_classes: order_dependent is a binary task, use n_classes = 2"
        )

    return RunConfig(model=model, train=train, transport=transport, data=data)


def load_run_config(path: str) -> RunConfig:
    """Load and validate a JSON run config from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return parse_run_config(doc)
