"""Optimizers, sequence models, and the training loop.

The loop is deterministic given a seed: shuffling, batching, and
synthetic sampling all run off one numpy PCG64 generator, and both
optimizers apply updates in fixed parameter order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Parameter, backward, ge2e_loss, softmax_cross_entropy
from .cells import ProjectionLayer, run_sequence
from .errors import EmptyDataset, NonFiniteLoss
from .evalbench import accuracy, eer, ScoreSet


class SGD:
    """SGD with classical momentum: v = mu*v + g; p -= lr*v."""

    def __init__(self, params, lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, v in zip(self.params, self.velocity):
            g = p.grad_or_zeros()
            v *= self.momentum
            v += g
            p.data -= self.lr * v


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad_or_zeros()
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(name: str, params, lr: float, momentum: float = 0.9):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr, momentum)
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# models


class SequenceClassifier:
    """Recurrent cell plus a linear readout of the final hidden state."""

    def __init__(self, cell, n_classes: int, rng: Optional[np.random.Generator] = None,
                 output: Optional[ProjectionLayer] = None):
        self.cell = cell
        if output is None:
            output = ProjectionLayer.random(cell.hidden, n_classes, rng)
        self.output = output

    def parameters(self):
        return [*self.cell.parameters(), *self.output.parameters()]

    def logits(self, xs):
        _, final = run_sequence(self.cell, xs)
        return self.output(final.h)

    def predict(self, xs) -> np.ndarray:
        return np.argmax(self.logits(xs).data, axis=1)


class UtteranceEncoder:
    """Recurrent cell plus a projection producing fixed-size embeddings."""

    def __init__(self, cell, embed: int, rng: Optional[np.random.Generator] = None,
                 projection: Optional[ProjectionLayer] = None,
                 w_init: float = 10.0, b_init: float = -5.0):
        self.cell = cell
        if projection is None:
            projection = ProjectionLayer.random(cell.hidden, embed, rng)
        self.projection = projection
        self.sim_w = Parameter(np.array(w_init), "sim_w")
        self.sim_b = Parameter(np.array(b_init), "sim_b")

    def parameters(self):
        return [*self.cell.parameters(), *self.projection.parameters(),
                self.sim_w, self.sim_b]

    def embed(self, xs):
        _, final = run_sequence(self.cell, xs)
        return self.projection(final.h)

    def embed_numpy(self, xs) -> np.ndarray:
        return self.embed(xs).data


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    lr_drop_epoch: int = 15
    lr_drop_factor: float = 0.1
    patience: int = 10
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    # GE2E batch composition (documented defaults, not paper claims)
    speakers_per_batch: int = 8
    utterances_per_speaker: int = 4
    ge2e_exclude_self: bool = False


@dataclass
class TrainingHistory:
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_metric, lr)
    best_epoch: int = -1
    best_metric: float = float("nan")

    def append(self, epoch, train_loss, val_metric, lr):
        self.rows.append((epoch, float(train_loss), float(val_metric), float(lr)))

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_metric,lr"]
        for e, tl, vm, lr in self.rows:
            lines.append(f"{e},{tl:.10g},{vm:.10g},{lr:.10g}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_csv())


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, s in zip(params, snap):
        p.data[...] = s


def _check_finite(loss_value: float):
    if not np.isfinite(loss_value):
        raise NonFiniteLoss(f"training loss became {loss_value}")


def train_classifier(model: SequenceClassifier, dataset: dict, config: TrainConfig):
    """Mini-batch cross-entropy training with early stopping on accuracy.

    ``dataset`` holds train_x (N,T,M), train_y, val_x, val_y.  Returns
    the training history with the best-validation snapshot restored
    into the model.
    """
    train_x, train_y = np.asarray(dataset["train_x"]), np.asarray(dataset["train_y"])
    val_x, val_y = np.asarray(dataset["val_x"]), np.asarray(dataset["val_y"])
    if len(train_x) == 0 or len(val_x) == 0:
        raise EmptyDataset("train and validation splits must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = make_optimizer(config.optimizer, params, config.lr, config.momentum)
    history = TrainingHistory()
    best = _snapshot(params)
    best_metric, best_epoch, bad_epochs = -np.inf, -1, 0

    for epoch in range(config.epochs):
        if epoch == config.lr_drop_epoch:
            opt.lr *= config.lr_drop_factor
        order = rng.permutation(len(train_x))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = softmax_cross_entropy(model.logits(train_x[idx]), train_y[idx])
            _check_finite(float(loss.data))
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
        val_acc = accuracy(model.predict(val_x), val_y)
        history.append(epoch, np.mean(losses), val_acc, opt.lr)
        if val_acc > best_metric:
            best_metric, best_epoch, bad_epochs = val_acc, epoch, 0
            best = _snapshot(params)
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break
    _restore(params, best)
    history.best_epoch, history.best_metric = best_epoch, best_metric
    return history


def verification_scores(model: UtteranceEncoder, utterances: dict) -> ScoreSet:
    """Cosine scores over all embedding pairs, labeled by speaker match."""
    names = sorted(utterances)
    embs, owners = [], []
    for j, name in enumerate(names):
        for utt in utterances[name]:
            embs.append(model.embed_numpy(np.asarray(utt)[None])[0])
            owners.append(j)
    embs = np.asarray(embs)
    embs = embs / np.linalg.norm(embs, axis=1, keepdims=True)
    owners = np.asarray(owners)
    scores = embs @ embs.T
    pos, neg = [], []
    for a in range(len(embs)):
        for b in range(a + 1, len(embs)):
            (pos if owners[a] == owners[b] else neg).append(scores[a, b])
    return ScoreSet(np.asarray(pos), np.asarray(neg))


def train_verifier(model: UtteranceEncoder, dataset: dict, config: TrainConfig):
    """GE2E training on per-speaker utterance lists; early stop on EER.

    ``dataset`` holds "train" and "val", each mapping speaker name to a
    list of (T, M) utterance arrays.
    """
    train, val = dataset["train"], dataset["val"]
    if len(train) < 2 or len(val) < 2:
        raise EmptyDataset("need at least two speakers in train and validation")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = make_optimizer(config.optimizer, params, config.lr, config.momentum)
    history = TrainingHistory()
    best = _snapshot(params)
    best_metric, best_epoch, bad_epochs = np.inf, -1, 0
    names = sorted(train)
    n_spk = min(config.speakers_per_batch, len(names))
    batches_per_epoch = max(1, len(names) // n_spk)

    for epoch in range(config.epochs):
        if epoch == config.lr_drop_epoch:
            opt.lr *= config.lr_drop_factor
        losses = []
        for _ in range(batches_per_epoch):
            chosen = rng.choice(len(names), size=n_spk, replace=False)
            stack = []
            for j in chosen:
                utts = train[names[j]]
                picks = rng.choice(len(utts), size=config.utterances_per_speaker,
                                   replace=len(utts) < config.utterances_per_speaker)
                stack.extend(np.asarray(utts[i]) for i in picks)
            embs = model.embed(np.stack(stack))
            embs = embs.reshape(n_spk, config.utterances_per_speaker, -1)
            opt.zero_grad()
            loss = ge2e_loss(embs, model.sim_w, model.sim_b,
                             exclude_self=config.ge2e_exclude_self)
            _check_finite(float(loss.data))
            backward(loss)
            opt.step()
            # keep the similarity scale positive
            model.sim_w.data[...] = max(float(model.sim_w.data), 1e-6)
            losses.append(float(loss.data))
        val_eer = eer(verification_scores(model, val))
        history.append(epoch, np.mean(losses), val_eer, opt.lr)
        if val_eer < best_metric:
            best_metric, best_epoch, bad_epochs = val_eer, epoch, 0
            best = _snapshot(params)
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break
    _restore(params, best)
    history.best_epoch, history.best_metric = best_epoch, best_metric
    return history


def train_loop(model, dataset: dict, config: TrainConfig) -> TrainingHistory:
    """Dispatch on model type; see train_classifier / train_verifier."""
    if isinstance(model, UtteranceEncoder):
        return train_verifier(model, dataset, config)
    return train_classifier(model, dataset, config)
