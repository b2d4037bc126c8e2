"""Load any map document by its type tag and build maps by method name."""
from __future__ import annotations

from . import serialize
from .baselines import build_hourly_cliff, build_online_cliff, build_stef
from .baselines.cliff import CliffMap
from .baselines.online import OnlineCliffMap
from .baselines.stef import StefMap
from .data import SampleSet
from .field import FieldConfig, NemoField
from .synth import TruthModel
from .trainer import TrainConfig, train

METHODS = ("nemo", "cliff", "cliff-online", "stef")
_LOADERS = {
    "nemo": NemoField,
    "cliff": CliffMap,
    "cliff-online": OnlineCliffMap,
    "stef": StefMap,
    "truth": TruthModel,
}


def from_document(doc: dict):
    kind = doc.get("type")
    if kind not in _LOADERS:
        raise serialize.FormatError(f"unknown model type {kind!r}")
    return _LOADERS[kind].from_document(doc)


def load_model(path):
    return from_document(serialize.load_document(path))


def build_model(
    method: str,
    train_set: SampleSet,
    bounds,
    field_config: FieldConfig | None = None,
    train_config: TrainConfig | None = None,
    resolution: float = 1.0,
    checkpoint=None,
    progress=None,
):
    if method == "nemo":
        cfg = field_config or FieldConfig(bounds=bounds)
        model = NemoField.create(cfg)
        train(model, train_set, train_config or TrainConfig(seed=cfg.seed), checkpoint=checkpoint, progress=progress)
        return model
    if method == "cliff":
        return build_hourly_cliff(train_set, bounds=bounds, resolution=resolution)
    if method == "cliff-online":
        return build_online_cliff(train_set, bounds=bounds, resolution=resolution)
    if method == "stef":
        return build_stef(train_set, bounds=bounds, resolution=resolution)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
