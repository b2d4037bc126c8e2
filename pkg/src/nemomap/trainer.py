"""Minibatch Adam on the mean negative log-likelihood of velocity samples."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import serialize
from .autodiff import NumericError, Tape
from .data import SampleSet
from .field import NemoField, mixture_loglik

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 4096
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class LossHistory:
    epoch_nll: list = field(default_factory=list)

    def append(self, value: float):
        if not math.isfinite(value):
            raise NumericError(f"non-finite epoch loss {value}")
        self.epoch_nll.append(float(value))


def nll_batch(tape: Tape, field_: NemoField, params: dict, batch: SampleSet):
    """Scalar loss node: mean negative log-likelihood of ``batch``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    # build the per-sample terms unchecked so a failure can name its sample
    check, tape.check_finite = tape.check_finite, False
    first = len(tape.nodes)
    try:
        with np.errstate(all="ignore"):
            hd = field_.build_head(tape, params, batch.x, batch.y, batch.t)
            ll = mixture_loglik(tape, hd, batch.speed, batch.theta)
    finally:
        tape.check_finite = check
    bad = np.flatnonzero(~np.isfinite(ll.value[:, 0]))
    if bad.size:
        raise NumericError(f"non-finite log-likelihood at batch sample {int(bad[0])}")
    if check:
        for node in tape.nodes[first:]:
            if not np.all(np.isfinite(node.value)):
                raise NumericError(f"non-finite intermediate at node #{node.id} ({node.op})")
    return tape.scale(tape.mean_all(ll), -1.0)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    """In-place Adam update with bias correction."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def save_checkpoint(field_: NemoField, path, epoch: int, history: LossHistory) -> None:
    doc = field_.to_document()
    doc["checkpoint"] = {"epoch": epoch, "history": list(history.epoch_nll)}
    tmp = Path(str(path) + ".tmp")
    serialize.save_document(doc, tmp)
    tmp.replace(path)


def train(
    field_: NemoField,
    dataset: SampleSet,
    cfg: TrainConfig,
    checkpoint=None,
    progress=None,
) -> tuple:
    """Fit ``field_`` in place; returns ``(field_, history)``.

    ``progress`` is a text stream receiving ``epoch,mean_nll`` lines. On a
    numeric failure the exception propagates and the checkpoint file (if any)
    still holds the last completed epoch.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    history = LossHistory()
    params = field_.params
    if progress is not None:
        print("epoch,mean_nll", file=progress)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = dataset.subset(perm[start : start + cfg.batch_size])
            tape = Tape()
            nodes = field_.param_nodes(tape)
            loss = nll_batch(tape, field_, nodes, batch)
            g = tape.backward(loss)
            adam_step(params, {k: g[nodes[k].id] for k in nodes}, state, cfg)
            total += float(loss.value[0, 0]) * len(batch)
        history.append(total / n)
        if progress is not None:
            print(f"{epoch},{history.epoch_nll[-1]:.6f}", file=progress)
            progress.flush()
        log.debug("epoch %d mean nll %.5f", epoch, history.epoch_nll[-1])
        field_.train_info = {"config": asdict(cfg), "epochs_done": epoch, "history": list(history.epoch_nll)}
        if checkpoint is not None:
            save_checkpoint(field_, checkpoint, epoch, history)
    return field_, history

