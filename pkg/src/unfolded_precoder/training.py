"""Losses, Adam, the training loop with early stopping, and test-set evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import SystemConfig, zf_precoder
from .errors import ConfigError, DimensionError, DivergenceError
from .metrics import column_norms, l21_norm, metrics_report
from .pgd import _t, lagrangian
from .unfolded import UnfoldedNetwork, backward, forward, project_params

log = logging.getLogger(__name__)

SUPERVISED = "supervised"
UNSUPERVISED = "unsupervised"
EVAL_CHUNK = 500


def supervised_loss(W, W_gt):
    """Squared Frobenius distance to the ground-truth precoder."""
    W, W_gt = np.asarray(W), np.asarray(W_gt)
    if W.shape != W_gt.shape:
        raise DimensionError(f"shape mismatch {W.shape} vs {W_gt.shape}")
    return np.sum(np.abs(W - W_gt) ** 2, axis=(-2, -1))


def unsupervised_loss(W, H, cfg: SystemConfig, lambda_cost):
    """``lambda_cost * ||W||_{2,1} + ||H W^T - B||_F^2``."""
    return lagrangian(W, H, cfg, lambda_cost)


def supervised_loss_grad(W, W_gt):
    return 2.0 * (W - W_gt)


def unsupervised_loss_grad(W, H, cfg: SystemConfig, lambda_cost):
    # zero columns take the zero subgradient of the norm
    n = column_norms(W)
    unit = W / np.where(n > 0, n, 1.0)[..., None, :]
    R = H @ _t(W) - cfg.target_matrix
    return lambda_cost * unit + 2.0 * (_t(R) @ np.conj(H))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, **kwargs):
        return cls(np.zeros(shape), np.zeros(shape), **kwargs)


def adam_update(state: AdamState, params, grads, lr, names=None):
    """One bias-corrected Adam step; updates ``state`` in place and returns new params."""
    grads = np.asarray(grads, dtype=float)
    bad = ~np.isfinite(grads)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        name = names[idx] if names is not None else f"parameter {idx}"
        raise DivergenceError(f"non-finite gradient for {name}", where=name)
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads ** 2
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    return np.asarray(params, dtype=float) - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _param_names(num_layers):
    names = np.empty((2, num_layers), dtype=object)
    for i in range(num_layers):
        names[0, i] = f"lambda[{i}]"
        names[1, i] = f"eta[{i}]"
    return names


@dataclass
class TrainConfig:
    loss_kind: str = UNSUPERVISED
    lambda_cost: float = 1 / 15
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in (SUPERVISED, UNSUPERVISED):
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if self.learning_rate < 0 or self.lambda_cost < 0:
            raise ConfigError("learning_rate and lambda_cost must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    stopping_epoch: int = 0
    best_epoch: int = 0
    best_params: np.ndarray | None = None

    COLUMNS = ("epoch", "train_loss", "val_loss", "val_pcg", "val_sum_rate")

    def append(self, **row):
        self.epochs.append(row)

    def __len__(self):
        return len(self.epochs)

    def column(self, name):
        return np.array([r[name] for r in self.epochs])


def _batch_loss(kind, W, H, labels, sys, lambda_cost):
    if kind == SUPERVISED:
        return supervised_loss(W, labels), supervised_loss_grad(W, labels)
    return (unsupervised_loss(W, H, sys, lambda_cost),
            unsupervised_loss_grad(W, H, sys, lambda_cost))


def _require_labels(dataset, what):
    if dataset.labels is None:
        raise ConfigError(f"supervised training needs oracle labels on the {what} set")


def validation_metrics(net, dataset, sys: SystemConfig, cfg: TrainConfig):
    """Mean loss, PCG and sum rate of ``net`` on ``dataset``."""
    losses, gains, rates = [], [], []
    H_all = dataset.channels
    for start in range(0, len(H_all), EVAL_CHUNK):
        H = H_all[start:start + EVAL_CHUNK]
        W = forward(net, H, sys, record=False)[0]
        if cfg.loss_kind == SUPERVISED:
            losses.append(supervised_loss(W, dataset.labels[start:start + EVAL_CHUNK]))
        else:
            losses.append(unsupervised_loss(W, H, sys, cfg.lambda_cost))
        rep = metrics_report(H, W, sys)
        gains.append(rep.pcg)
        rates.append(rep.sum_rate)
    return (float(np.mean(np.concatenate(losses))), float(np.mean(np.concatenate(gains))),
            float(np.mean(np.concatenate(rates))))


def train(net: UnfoldedNetwork, train_set, val_set, cfg: TrainConfig, sys: SystemConfig,
          on_epoch=None):
    """Fit the per-layer parameters with Adam.

    Every update is followed by ``project_params``. Training stops after
    ``cfg.patience`` epochs without a strictly lower validation loss, and the
    parameters of the best validation epoch are returned.
    """
    if len(train_set.channels) == 0 or len(val_set.channels) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    if cfg.loss_kind == SUPERVISED:
        _require_labels(train_set, "training")
        _require_labels(val_set, "validation")
    rng = np.random.default_rng(cfg.seed)
    names = _param_names(net.num_layers)
    net = project_params(net)
    state = AdamState.zeros(net.params.shape)
    history = TrainHistory()
    best_loss, _, _ = validation_metrics(net, val_set, sys, cfg)
    history.initial_val_loss = best_loss
    best_net, best_epoch, waited = net, 0, 0
    n = len(train_set.channels)
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            H = train_set.channels[idx]
            labels = None if train_set.labels is None else train_set.labels[idx]
            W, tape, _ = forward(net, H, sys)
            losses, dW = _batch_loss(cfg.loss_kind, W, H, labels, sys, cfg.lambda_cost)
            loss = float(np.mean(losses))
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}",
                                      where=(epoch, b))
            dlam, deta = backward(tape, net, H, sys, dW / len(idx))
            theta = adam_update(state, net.params, np.stack([dlam, deta]),
                                cfg.learning_rate, names)
            net = project_params(net.with_params(theta))
            total += loss * len(idx)
        val_loss, val_pcg, val_rate = validation_metrics(net, val_set, sys, cfg)
        history.append(epoch=epoch, train_loss=total / n, val_loss=val_loss,
                       val_pcg=val_pcg, val_sum_rate=val_rate)
        log.info("epoch %d train %.6g val %.6g pcg %.4f rate %.3f",
                 epoch, total / n, val_loss, val_pcg, val_rate)
        if on_epoch is not None:
            on_epoch(epoch, net, history)
        if val_loss < best_loss:
            best_loss, best_net, best_epoch, waited = val_loss, net, epoch, 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    history.stopping_epoch = epoch
    history.best_epoch = best_epoch
    history.best_params = best_net.params
    return best_net, history


@dataclass
class EvalResult:
    """``final`` holds per-channel metrics at the last layer; ``per_layer``
    maps each trace column to an array of shape (I + 1, N)."""

    final: object
    per_layer: dict | None
    lam: float

    COLUMNS = ("lagrangian", "residual", "pcg", "sum_rate", "active_columns")

    def summary(self):
        mean, err = self.final.mean(), self.final.stderr()
        keys = ("tx_power", "cons_power", "sum_rate", "pcg", "residual", "active_columns")
        return {k: {"mean": float(mean[k]), "stderr": float(err[k])} for k in keys}

    def mean_rows(self):
        if self.per_layer is None:
            return []
        means = {c: self.per_layer[c].mean(axis=1) for c in self.COLUMNS}
        return [dict(index=i, **{c: float(means[c][i]) for c in self.COLUMNS})
                for i in range(len(means["pcg"]))]


def evaluate(net: UnfoldedNetwork, channels, sys: SystemConfig, lam=1 / 15, per_layer=False):
    """Metrics of the network output on every test channel (and optionally every layer)."""
    finals = []
    layers = {c: [] for c in EvalResult.COLUMNS} if per_layer else None
    for start in range(0, len(channels), EVAL_CHUNK):
        H = channels[start:start + EVAL_CHUNK]
        zf_l21 = l21_norm(zf_precoder(H, sys))
        W, _, iterates = forward(net, H, sys, record=False, keep_iterates=per_layer)
        finals.append(metrics_report(H, W, sys, zf_l21=zf_l21))
        if per_layer:
            cols = {c: [] for c in EvalResult.COLUMNS}
            for Wi in iterates:
                rep = metrics_report(H, Wi, sys, zf_l21=zf_l21)
                cols["lagrangian"].append(lagrangian(Wi, H, sys, lam))
                for c in ("residual", "pcg", "sum_rate", "active_columns"):
                    cols[c].append(getattr(rep, c))
            for c in EvalResult.COLUMNS:
                layers[c].append(np.stack(cols[c]))
    final = type(finals[0])(**{k: np.concatenate([getattr(f, k) for f in finals])
                               for k in asdict(finals[0])})
    if per_layer:
        layers = {c: np.concatenate(v, axis=1) for c, v in layers.items()}
    return EvalResult(final=final, per_layer=layers, lam=lam)
