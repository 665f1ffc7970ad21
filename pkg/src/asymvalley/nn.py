"""A small fully-connected network with batch normalization, written from scratch.

Parameters live in one flat float64 vector (:class:`ParamVector`) whose
:class:`Layout` names every tensor, so group masks (BN vs non-BN) are derived
rather than hand-indexed. Hidden layers are ``linear -> [BN] -> relu``; a
linear layer feeding a BN layer has no bias (BN's shift makes it redundant
and its gradient identically zero). The head is softmax cross-entropy
averaged over the batch.

BN running statistics are kept with momentum 0.1 during training, but every
evaluation first recomputes them exactly with one full pass over the training
set, so a loss value is a function of the parameters alone.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.datasets import make_blobs, make_moons
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from ._io import atomic_write_bytes, atomic_write_text
from ._validation import make_rng, seed_to_int32
from .exceptions import ConfigError, DivergenceError, LayoutMismatchError

BN_MOMENTUM = 0.1
GROUPS = ("all", "bn", "non-bn")


# --- architecture and layout ----------------------------------------------

@dataclass(frozen=True)
class Architecture:
    widths: tuple = (2, 16, 16, 2)
    bn: tuple | bool = True
    eps: float = 1e-5
    activation: str = "relu"

    def __post_init__(self):
        w = tuple(int(x) for x in self.widths)
        if len(w) < 2 or any(x < 1 for x in w):
            raise ValueError(f"widths must be >= 2 positive ints, got {self.widths}")
        if w[-1] < 2:
            raise ValueError("need at least 2 output classes")
        object.__setattr__(self, "widths", w)
        n_hidden = len(w) - 2
        bn = self.bn
        bn = (bool(bn),) * n_hidden if isinstance(bn, (bool, np.bool_)) else tuple(bool(b) for b in bn)
        if len(bn) != n_hidden:
            raise ValueError(f"bn needs one flag per hidden layer ({n_hidden}), got {len(bn)}")
        object.__setattr__(self, "bn", bn)
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.activation != "relu":
            raise ValueError("only the relu activation is supported")

    @property
    def n_hidden(self):
        return len(self.widths) - 2

    @property
    def n_classes(self):
        return self.widths[-1]

    @property
    def has_bn(self):
        return any(self.bn)

    def layout(self) -> "Layout":
        entries = []
        start = 0

        def add(name, shape, group):
            nonlocal start
            n = int(np.prod(shape))
            entries.append(ParamSpec(name, tuple(shape), start, start + n, group))
            start += n

        for i in range(len(self.widths) - 1):
            fan_in, fan_out = self.widths[i], self.widths[i + 1]
            add(f"layer{i}.weight", (fan_in, fan_out), "weight")
            has_bn = i < self.n_hidden and self.bn[i]
            if not has_bn:
                add(f"layer{i}.bias", (fan_out,), "bias")
            else:
                add(f"layer{i}.bn.gamma", (fan_out,), "bn_gamma")
                add(f"layer{i}.bn.beta", (fan_out,), "bn_beta")
        return Layout(tuple(entries))

    @property
    def n_params(self):
        return self.layout().size

    def to_dict(self):
        return {"widths": list(self.widths), "bn": list(self.bn), "eps": self.eps,
                "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["widths"]), tuple(d["bn"]), float(d.get("eps", 1e-5)),
                   d.get("activation", "relu"))

    @classmethod
    def parse(cls, text, bn=True):
        """``"2-16-16-2"`` (optionally ``"2-16-16-2:nobn"``)."""
        text = str(text)
        if text.endswith(":nobn"):
            text, bn = text[:-5], False
        try:
            widths = tuple(int(x) for x in text.split("-"))
        except ValueError as exc:
            raise ConfigError(f"bad architecture string {text!r}") from exc
        return cls(widths, bn)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    start: int
    stop: int
    group: str

    @property
    def is_bn(self):
        return self.group.startswith("bn_")


@dataclass(frozen=True)
class Layout:
    entries: tuple

    @property
    def size(self):
        return self.entries[-1].stop if self.entries else 0

    @property
    def names(self):
        return [e.name for e in self.entries]

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __contains__(self, name):
        return any(e.name == name for e in self.entries)

    def mask_where(self, pred):
        m = np.zeros(self.size, dtype=bool)
        for e in self.entries:
            if pred(e):
                m[e.start:e.stop] = True
        return m

    def to_list(self):
        return [{"name": e.name, "shape": list(e.shape), "start": e.start, "stop": e.stop,
                 "group": e.group} for e in self.entries]

    @classmethod
    def from_list(cls, items):
        return cls(tuple(ParamSpec(d["name"], tuple(d["shape"]), int(d["start"]), int(d["stop"]),
                                   d["group"]) for d in items))


class ParamVector:
    """Flat float64 parameters plus their :class:`Layout`."""

    def __init__(self, data, layout: Layout):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 1 or len(data) != layout.size:
            raise LayoutMismatchError(f"data of shape {data.shape} does not fit a layout of size {layout.size}")
        self.data = data
        self.layout = layout

    def __getitem__(self, name):
        e = self.layout[name]
        return self.data[e.start:e.stop].reshape(e.shape)

    def __len__(self):
        return len(self.data)

    def copy(self):
        return ParamVector(self.data.copy(), self.layout)

    def with_data(self, data):
        return ParamVector(data, self.layout)

    def check_layout(self, other):
        if self.layout != other.layout:
            raise LayoutMismatchError("parameter layouts differ")

    def __repr__(self):
        return f"ParamVector(size={len(self.data)}, tensors={len(self.layout.entries)})"


@dataclass(frozen=True)
class ParamGroupMask:
    mask: np.ndarray
    name: str

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def count(self):
        return int(self.mask.sum())

    def complement(self):
        return ParamGroupMask(~self.mask, f"not-{self.name}")


def full_mask(layout):
    return ParamGroupMask(np.ones(layout.size, dtype=bool), "all")


def bn_mask(layout):
    return ParamGroupMask(layout.mask_where(lambda e: e.is_bn), "bn")


def non_bn_mask(layout):
    return ParamGroupMask(layout.mask_where(lambda e: not e.is_bn), "non-bn")


def matched_non_bn_mask(layout, seed):
    """A seeded random subset of the non-BN coordinates with as many entries as the BN group."""
    bn = bn_mask(layout).mask
    pool = np.flatnonzero(~bn)
    n = int(bn.sum())
    if n == 0:
        raise ValueError("layout has no BN parameters")
    if n > len(pool):
        raise ValueError("fewer non-BN than BN parameters")
    pick = make_rng(seed, 11).choice(pool, size=n, replace=False)
    m = np.zeros(layout.size, dtype=bool)
    m[pick] = True
    return ParamGroupMask(m, "non-bn-matched")


def group_mask(layout, group, seed=0):
    if group == "all":
        return full_mask(layout)
    if group == "bn":
        return bn_mask(layout)
    if group == "non-bn":
        return matched_non_bn_mask(layout, seed)
    raise ValueError(f"unknown group {group!r}; expected one of {GROUPS}")


def init_params(arch: Architecture, seed=0) -> ParamVector:
    """Uniform fan-in init ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``; biases 0, gamma 1, beta 0."""
    layout = arch.layout()
    data = np.zeros(layout.size)
    rng = make_rng(seed, 3)
    for e in layout.entries:
        if e.group == "weight":
            bound = math.sqrt(6.0 / e.shape[0])
            data[e.start:e.stop] = rng.uniform(-bound, bound, e.stop - e.start)
        elif e.group == "bn_gamma":
            data[e.start:e.stop] = 1.0
    return ParamVector(data, layout)


# --- BN state --------------------------------------------------------------

@dataclass
class BNState:
    """Per-BN-layer running mean and (biased) variance, keyed by hidden-layer index."""

    mean: dict = field(default_factory=dict)
    var: dict = field(default_factory=dict)

    def copy(self):
        return BNState({k: v.copy() for k, v in self.mean.items()},
                       {k: v.copy() for k, v in self.var.items()})

    def to_dict(self):
        return {"mean": {str(k): v.tolist() for k, v in self.mean.items()},
                "var": {str(k): v.tolist() for k, v in self.var.items()}}

    @classmethod
    def from_dict(cls, d):
        if not d:
            return cls()
        return cls({int(k): np.asarray(v, dtype=float) for k, v in d["mean"].items()},
                   {int(k): np.asarray(v, dtype=float) for k, v in d["var"].items()})

    @classmethod
    def initial(cls, arch):
        m, v = {}, {}
        for i, on in enumerate(arch.bn):
            if on:
                m[i] = np.zeros(arch.widths[i + 1])
                v[i] = np.ones(arch.widths[i + 1])
        return cls(m, v)


# --- forward / backward ----------------------------------------------------

def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class ForwardResult:
    loss: float
    logits: np.ndarray
    per_example: np.ndarray
    batch_stats: dict
    cache: list | None = None


def _check_batch(arch, X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.widths[0] or len(X) == 0:
        raise ValueError(f"expected a non-empty (n, {arch.widths[0]}) batch, got {X.shape}")
    if y is not None:
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise ValueError("labels must be 1-D and match the batch")
        if y.min() < 0 or y.max() >= arch.n_classes:
            raise ValueError("label out of range")
        y = y.astype(np.int64)
    return X, y


def forward(arch: Architecture, params: ParamVector, X, y=None, train=False,
            bn_state: BNState | None = None, keep_cache=False) -> ForwardResult:
    """Loss and logits. ``train=True`` normalizes with batch statistics (batch
    size >= 2 when BN is present); otherwise ``bn_state`` supplies them."""
    X, y = _check_batch(arch, X, y)
    n = len(X)
    if train and arch.has_bn and n < 2:
        raise ValueError("BN in training mode needs a batch of at least 2")
    if not train and arch.has_bn and bn_state is None:
        raise ValueError("eval mode with BN needs a BNState")
    h = X
    cache = []
    stats = {}
    L = len(arch.widths) - 1
    for i in range(L):
        W = params[f"layer{i}.weight"]
        z = h @ W
        if i == L - 1:
            z = z + params[f"layer{i}.bias"]
            cache.append(("out", h))
            h = z
            break
        if arch.bn[i]:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                stats[i] = (mu, var)
            else:
                mu, var = bn_state.mean[i], bn_state.var[i]
            inv = 1.0 / np.sqrt(var + arch.eps)
            xhat = (z - mu) * inv
            a = params[f"layer{i}.bn.gamma"] * xhat + params[f"layer{i}.bn.beta"]
            cache.append(("bn", h, xhat, inv, a))
        else:
            a = z + params[f"layer{i}.bias"]
            cache.append(("plain", h, a))
        h = np.maximum(a, 0.0)
    logits = h
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite activation in forward pass")
    per = None
    loss = float("nan")
    if y is not None:
        ls = _log_softmax(logits)
        per = -ls[np.arange(n), y]
        loss = float(per.mean())
    return ForwardResult(loss, logits, per, stats, cache if keep_cache else None)


def loss_and_grad(arch: Architecture, params: ParamVector, X, y, train=True,
                  bn_state: BNState | None = None, return_stats=False):
    """Mean cross-entropy and its exact gradient (BN batch-statistic terms included
    in training mode; eval mode treats the running statistics as constants)."""
    fr = forward(arch, params, X, y, train, bn_state, keep_cache=True)
    n = len(fr.logits)
    yy = np.asarray(y, dtype=np.int64)
    g = np.zeros_like(params.data)
    gv = ParamVector(g, params.layout)
    probs = np.exp(_log_softmax(fr.logits))
    dz = probs
    dz[np.arange(n), yy] -= 1.0
    dz /= n
    L = len(arch.widths) - 1
    for i in range(L - 1, -1, -1):
        entry = fr.cache[i]
        kind = entry[0]
        if kind == "out":
            h = entry[1]
            gv[f"layer{i}.weight"][...] = h.T @ dz
            gv[f"layer{i}.bias"][...] = dz.sum(axis=0)
            dh = dz @ params[f"layer{i}.weight"].T
            continue
        if kind == "bn":
            _, h, xhat, inv, a = entry
            da = dh * (a > 0)
            gv[f"layer{i}.bn.gamma"][...] = (da * xhat).sum(axis=0)
            gv[f"layer{i}.bn.beta"][...] = da.sum(axis=0)
            dxhat = da * params[f"layer{i}.bn.gamma"]
            if train:
                m = len(xhat)
                dzl = inv / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dzl = dxhat * inv
        else:
            _, h, a = entry
            dzl = dh * (a > 0)
            gv[f"layer{i}.bias"][...] = dzl.sum(axis=0)
        gv[f"layer{i}.weight"][...] = h.T @ dzl
        dh = dzl @ params[f"layer{i}.weight"].T
        dz = None
    if return_stats:
        return fr.loss, gv, fr.batch_stats
    return fr.loss, gv


def backward(arch, params, X, y, train=True, bn_state=None) -> ParamVector:
    return loss_and_grad(arch, params, X, y, train, bn_state)[1]


def gradient_check(arch, params, X, y, h_rel=1e-5, floor=1e-8, train=True, bn_state=None):
    """Backward pass vs central differences, coordinate by coordinate.

    Step ``h = h_rel * max(1, |theta_j|)``. Relative error is
    ``|g - fd| / max(|g|, |fd|, floor)``. Returns ``(max_rel_err, grad, fd)``.
    """
    _, g = loss_and_grad(arch, params, X, y, train, bn_state)
    fd = np.empty(len(params))
    q = params.data.copy()
    for j in range(len(q)):
        h = h_rel * max(1.0, abs(q[j]))
        q[j] = params.data[j] + h
        lp = forward(arch, params.with_data(q), X, y, train, bn_state).loss
        q[j] = params.data[j] - h
        lm = forward(arch, params.with_data(q), X, y, train, bn_state).loss
        q[j] = params.data[j]
        fd[j] = (lp - lm) / (2 * h)
    rel = np.abs(g.data - fd) / np.maximum(np.maximum(np.abs(g.data), np.abs(fd)), floor)
    return float(rel.max()), g.data, fd


def recompute_bn_stats(arch: Architecture, params: ParamVector, X) -> BNState:
    """Exact BN statistics from one full-batch pass over ``X``.

    Layer ``i``'s statistics are computed on inputs normalized by the exact
    statistics of the layers before it, which is what a single training-mode
    forward over the whole set does.
    """
    if not arch.has_bn:
        return BNState()
    fr = forward(arch, params, X, None, train=True)
    return BNState({k: v[0].copy() for k, v in fr.batch_stats.items()},
                   {k: v[1].copy() for k, v in fr.batch_stats.items()})


def update_running(state: BNState, batch_stats, n, momentum=BN_MOMENTUM):
    for i, (mu, var) in batch_stats.items():
        state.mean[i] = (1 - momentum) * state.mean[i] + momentum * mu
        # unbiased batch variance, as in common frameworks
        state.var[i] = (1 - momentum) * state.var[i] + momentum * var * n / max(n - 1, 1)


# --- data ------------------------------------------------------------------

DATA_KINDS = ("two-moons", "gaussian-mixture")


@dataclass(frozen=True)
class DataSplits:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Seeded synthetic 2-class data; the large test split estimates the population loss.

    Both splits come from one generator call and are split by index, so they
    are disjoint.
    """

    kind: str = "two-moons"
    n_train: int = 512
    n_test: int = 50000
    noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ValueError(f"unknown dataset {self.kind!r}; expected one of {DATA_KINDS}")
        if self.n_train < 2 or self.n_test < 1:
            raise ValueError("need n_train >= 2 and n_test >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    def generate(self) -> DataSplits:
        n = self.n_train + self.n_test
        rs = seed_to_int32(self.seed, 5)
        if self.kind == "two-moons":
            X, y = make_moons(n_samples=n, noise=self.noise, random_state=rs)
        else:
            # four blobs, two per class
            X, y = make_blobs(n_samples=n, centers=4, cluster_std=max(self.noise, 1e-12),
                              center_box=(-3.0, 3.0), random_state=rs)
            y = y % 2
        perm = make_rng(self.seed, 6).permutation(n)
        X, y = X[perm], y[perm]
        k = self.n_train
        return DataSplits(X[:k].copy(), y[:k].copy(), X[k:].copy(), y[k:].copy())

    def to_dict(self):
        return asdict(self)


def _splits(data):
    return data.generate() if isinstance(data, Dataset) else data


# --- evaluation -------------------------------------------------------------

@dataclass
class Evaluation:
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    test_loss_se: float
    bn_state: BNState

    def metrics(self, prefix=""):
        return {f"{prefix}train_loss": self.train_loss, f"{prefix}train_acc": self.train_acc,
                f"{prefix}test_loss": self.test_loss, f"{prefix}test_acc": self.test_acc,
                f"{prefix}test_loss_se": self.test_loss_se}


def evaluate(arch, params, data) -> Evaluation:
    """Train and held-out loss/accuracy in eval mode, after an exact BN recompute on the train split."""
    d = _splits(data)
    st = recompute_bn_stats(arch, params, d.X_train)
    tr = forward(arch, params, d.X_train, d.y_train, False, st)
    te = forward(arch, params, d.X_test, d.y_test, False, st)
    se = float(te.per_example.std(ddof=1) / math.sqrt(len(te.per_example))) if len(te.per_example) > 1 else float("nan")
    return Evaluation(tr.loss, float((tr.logits.argmax(1) == d.y_train).mean()),
                      te.loss, float((te.logits.argmax(1) == d.y_test).mean()), se, st)


# --- training ----------------------------------------------------------------

SCHEDULES = ("constant", "linear")


@dataclass(frozen=True)
class TrainConfig:
    """Plain minibatch SGD.

    ``schedule="linear"`` decays ``eta`` to ``eta_end`` over the run; once SWA
    starts the rate is held at ``swa_eta`` when given. Full train/held-out
    metrics are computed every ``eval_every`` epochs (0: last epoch only) and
    always at the last epoch.
    """

    eta: float = 0.05
    batch: int = 32
    epochs: int = 100
    seed: int = 0
    schedule: str = "constant"
    eta_end: float | None = None
    swa_eta: float | None = None
    checkpoint_every: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("need batch >= 1 and epochs >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def eta_at(self, epoch, swa_start=None):
        """Learning rate for (1-based) ``epoch``."""
        if swa_start is not None and self.swa_eta is not None and epoch > swa_start:
            return self.swa_eta
        if self.schedule == "linear" and self.epochs > 1:
            end = self.eta_end if self.eta_end is not None else 0.01 * self.eta
            return self.eta + (end - self.eta) * (epoch - 1) / (self.epochs - 1)
        return self.eta

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SWAConfig:
    """Average per-epoch iterates from ``start`` (1-based, inclusive) on.

    ``group`` restricts averaging to ``"bn"`` parameters or a matched-size
    random ``"non-bn"`` subset; the other coordinates keep the final SGD values.
    """

    start: int = 126
    group: str = "all"
    cadence: int = 1

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}")
        if self.start < 1 or self.cadence < 1:
            raise ValueError("start and cadence must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    final: ParamVector
    swa: ParamVector | None
    bn_state: BNState
    swa_bn_state: BNState | None
    history: list
    checkpoints: list = field(default_factory=list)
    mask: ParamGroupMask | None = None


def average_params(checkpoints, mask: ParamGroupMask | None = None) -> ParamVector:
    """Masked coordinates get the mean over ``checkpoints``; the rest keep the
    last checkpoint's values. BN statistics must be recomputed afterwards."""
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    last = checkpoints[-1]
    for c in checkpoints:
        last.check_layout(c)
    mean = np.mean(np.stack([c.data for c in checkpoints]), axis=0)
    if mask is None:
        return last.with_data(mean)
    if len(mask.mask) != len(last.data):
        raise LayoutMismatchError("mask does not match the layout")
    return last.with_data(np.where(mask.mask, mean, last.data))


def _batches(n, batch, rng):
    perm = rng.permutation(n)
    for s in range(0, n, batch):
        idx = perm[s:s + batch]
        if len(idx) >= 2 or s == 0:
            yield idx


def train(arch: Architecture, data, config: TrainConfig, swa: SWAConfig | None = None,
          init: ParamVector | None = None, bn_state: BNState | None = None) -> TrainResult:
    """Minibatch SGD with optional (group-restricted) weight averaging.

    History has one entry per epoch (1-based) with train/held-out metrics of
    the SGD iterate and, from ``swa.start`` on, of the averaged weights.
    """
    d = _splits(data)
    if swa is not None and config.epochs and swa.start >= config.epochs:
        raise ValueError(f"SWA start {swa.start} must precede the last epoch {config.epochs}")
    params = init.copy() if init is not None else init_params(arch, config.seed)
    state = bn_state.copy() if bn_state is not None else BNState.initial(arch)
    mask = group_mask(params.layout, swa.group, config.seed) if swa is not None else None
    rng = make_rng(config.seed, 7)
    history, ckpts = [], []
    swa_sum, swa_n = None, 0
    swa_params = swa_state = None
    n = len(d.X_train)
    for epoch in range(1, config.epochs + 1):
        eta = config.eta_at(epoch, swa.start if swa else None)
        batch_loss, n_batches = 0.0, 0
        for idx in _batches(n, min(config.batch, n), rng):
            xb, yb = d.X_train[idx], d.y_train[idx]
            train_mode = len(idx) >= 2 or not arch.has_bn
            loss, g, stats = loss_and_grad(arch, params, xb, yb, train_mode, state, return_stats=True)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            update_running(state, stats, len(idx))
            batch_loss += loss
            n_batches += 1
            params.data -= eta * g.data
            if not np.all(np.isfinite(params.data)):
                raise DivergenceError(f"non-finite parameters at epoch {epoch}")
        do_eval = epoch == config.epochs or (config.eval_every and epoch % config.eval_every == 0)
        row = {"epoch": epoch, "eta": eta, "batch_loss": batch_loss / n_batches}
        if do_eval:
            row.update(evaluate(arch, params, d).metrics())
        if swa is not None and epoch >= swa.start and (epoch - swa.start) % swa.cadence == 0:
            swa_sum = params.data.copy() if swa_sum is None else swa_sum + params.data
            swa_n += 1
        if swa_n:
            swa_params = params.with_data(np.where(mask.mask, swa_sum / swa_n, params.data))
            row["swa_n"] = swa_n
            if do_eval:
                sev = evaluate(arch, swa_params, d)
                swa_state = sev.bn_state
                row.update(sev.metrics("swa_"))
        history.append(row)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            ckpts.append(params.copy())
    if arch.has_bn and config.epochs:
        state = recompute_bn_stats(arch, params, d.X_train)
    if swa_params is not None and arch.has_bn:
        swa_state = recompute_bn_stats(arch, swa_params, d.X_train)
    return TrainResult(params, swa_params, state, swa_state, history, ckpts, mask)


# --- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ParamVector
    arch: Architecture
    bn_state: BNState
    dataset: dict | None = None
    meta: dict | None = None


def save_checkpoint(path, params: ParamVector, arch: Architecture, bn_state: BNState | None = None,
                    dataset: Dataset | dict | None = None, meta=None):
    """Directory with ``layout.json`` and ``params.bin`` (little-endian float64)."""
    path = Path(path)
    if params.layout != arch.layout():
        raise LayoutMismatchError("params do not match the architecture")
    ds = dataset.to_dict() if isinstance(dataset, Dataset) else dataset
    desc = {"format": "asymvalley-checkpoint-1", "arch": arch.to_dict(), "layout": params.layout.to_list(),
            "n_params": len(params), "dtype": "<f8", "dataset": ds,
            "bn_state": (bn_state or BNState()).to_dict(), "meta": meta or {}}
    atomic_write_bytes(path / "params.bin", params.data.astype("<f8").tobytes())
    atomic_write_text(path / "layout.json", json.dumps(desc, indent=2) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    desc = json.loads((path / "layout.json").read_text())
    arch = Architecture.from_dict(desc["arch"])
    layout = Layout.from_list(desc["layout"])
    if layout != arch.layout():
        raise LayoutMismatchError(f"{path}: layout does not match the architecture")
    data = np.frombuffer((path / "params.bin").read_bytes(), dtype="<f8").astype(np.float64)
    return Checkpoint(ParamVector(data, layout), arch, BNState.from_dict(desc.get("bn_state")),
                      desc.get("dataset"), desc.get("meta"))


# --- estimator -------------------------------------------------------------------

class SWAClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn style wrapper: an MLP (+BN) trained by SGD with weight averaging.

    Predictions use the averaged weights when ``swa_start`` is set, else the
    final SGD iterate. Labels are mapped to ``0..n_classes-1``.
    """

    def __init__(self, hidden=(16, 16), bn=True, eta=0.05, batch_size=32, epochs=100,
                 swa_start=None, swa_group="all", random_state=0):
        self.hidden = hidden
        self.bn = bn
        self.eta = eta
        self.batch_size = batch_size
        self.epochs = epochs
        self.swa_start = swa_start
        self.swa_group = swa_group
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        self.arch_ = Architecture((X.shape[1], *self.hidden, len(self.classes_)), self.bn)
        splits = DataSplits(X, yi, X[:1], yi[:1])
        swa = SWAConfig(self.swa_start, self.swa_group) if self.swa_start else None
        res = train(self.arch_, splits, TrainConfig(self.eta, self.batch_size, self.epochs,
                                                    int(self.random_state or 0)), swa)
        self.params_ = res.swa if res.swa is not None else res.final
        self.bn_state_ = recompute_bn_stats(self.arch_, self.params_, X)
        self.history_ = res.history
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        fr = forward(self.arch_, self.params_, X, None, False, self.bn_state_)
        return np.exp(_log_softmax(fr.logits))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
