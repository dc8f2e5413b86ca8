"""Losses, Adam, finite-difference gradient checking and the training loop.

All arithmetic is float64 numpy.  Given identical data, configuration and
seed, two runs produce bitwise-identical parameters: shuffling and dropout
come from a single `numpy.random.default_rng(seed)` stream consumed in a
fixed order.

The utilitarian loss only scores the youngest (least-informed) column of
each window; the MSE baseline scores every entry.  Both operate in robust-
scaled space so channels with very different LTV magnitudes contribute
comparably.

Validation uses a temporal holdout: per channel, the most recent start
days are held out, and any training window whose target range overlaps a
validation target range on the same channel is dropped entirely.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .covariates import build_bundle
from .domain import LtvDataset, format_date
from .errors import DivergenceDetected, EmptyDataset, InvalidConfig, ShapeMismatch
from .model import Batch, ModelConfig, MtFusionNet, prepare_batch
from .trapezoid import TrapezoidWindow, enumerate_windows

LOSSES = ("utilitarian", "mse")


# --- losses -----------------------------------------------------------------


def utilitarian_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over the last (youngest) column only.

    `pred` and `target` are (n, k) matrices for a single window.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred[:, -1] - target[:, -1]
    return float(np.mean(diff * diff))


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all n*k entries of a single window."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def batch_loss_and_grad(pred: np.ndarray, target: np.ndarray, loss: str):
    """Batched (B, n, k) loss averaged over windows, plus d(loss)/d(pred)."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    b, n, k = pred.shape
    grad = np.zeros_like(pred)
    if loss == "utilitarian":
        diff = pred[:, :, -1] - target[:, :, -1]
        value = float(np.sum(diff * diff) / (b * n))
        grad[:, :, -1] = 2.0 * diff / (b * n)
    elif loss == "mse":
        diff = pred - target
        value = float(np.sum(diff * diff) / (b * n * k))
        grad = 2.0 * diff / (b * n * k)
    else:
        raise InvalidConfig(f"unknown loss {loss!r}, expected one of {LOSSES}")
    return value, grad


def model_loss_and_grads(model: MtFusionNet, batch: Batch, loss: str, rng=None):
    """One forward/backward pass in scaled space; returns (loss, grads)."""
    pred, cache = model.scaled_forward(batch, training=rng is not None, rng=rng)
    value, d_pred = batch_loss_and_grad(pred, batch.scaled_targets(), loss)
    return value, model.backward(cache, d_pred)


# --- optimizer ----------------------------------------------------------------


class Adam:
    """Adam with bias correction, matching the standard defaults."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise InvalidConfig(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- gradient checking ----------------------------------------------------------


def gradient_check(model: MtFusionNet, batch: Batch, loss: str = "utilitarian",
                   h: float = 1e-5, param_names=None, max_entries: int = 40,
                   seed: int = 0) -> float:
    """Central finite differences vs. analytic gradients.

    Returns the worst relative error over the probed entries.  Entries where
    both gradients are below 1e-6 in magnitude count as exact matches (the
    quotient is pure rounding noise there).
    """
    if model.config.dropout != 0.0:
        raise InvalidConfig("gradient_check requires dropout == 0")
    _, grads = model_loss_and_grads(model, batch, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    names = list(param_names) if param_names is not None else list(model.params)
    for name in names:
        p = model.params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            original = flat[i]
            flat[i] = original + h
            pred, _ = model.scaled_forward(batch)
            up, _ = batch_loss_and_grad(pred, batch.scaled_targets(), loss)
            flat[i] = original - h
            pred, _ = model.scaled_forward(batch)
            down, _ = batch_loss_and_grad(pred, batch.scaled_targets(), loss)
            flat[i] = original
            fd = (up - down) / (2.0 * h)
            ga = grads[name].reshape(-1)[i]
            denom = max(abs(ga), abs(fd))
            if denom < 1e-6:
                continue
            worst = max(worst, abs(ga - fd) / denom)
    return worst


# --- data splitting ----------------------------------------------------------


def temporal_split(windows: list[TrapezoidWindow], val_fraction: float):
    """Per-channel temporal holdout with target-overlap exclusion.

    For each channel the last ceil(val_fraction * count) start days form the
    validation set.  Training windows on the same channel whose target span
    reaches into any validation target span are dropped (their targets would
    leak future observations the validation set is scored on).
    Returns (train_windows, val_windows).
    """
    if not 0.0 <= val_fraction < 1.0:
        raise InvalidConfig(f"val_fraction must be in [0, 1), got {val_fraction}")
    if val_fraction == 0.0:
        return list(windows), []
    by_channel: dict[str, list[TrapezoidWindow]] = {}
    for w in windows:
        by_channel.setdefault(w.channel, []).append(w)
    train: list[TrapezoidWindow] = []
    val: list[TrapezoidWindow] = []
    for channel in sorted(by_channel):
        ws = sorted(by_channel[channel], key=lambda w: w.start_day)
        n_val = math.ceil(val_fraction * len(ws))
        if n_val == len(ws):  # keep at least one training window per channel
            n_val = len(ws) - 1
        if n_val == 0:
            train.extend(ws)
            continue
        cut = ws[len(ws) - n_val].start_day
        val.extend(w for w in ws if w.start_day >= cut)
        # A training window's newest target day is start_day + n - 1 on the
        # youngest column's axis; it may not reach the earliest validation
        # target day, which is `cut` (target day 0 of the holdout windows).
        horizon = ws[0].spec.n
        train.extend(w for w in ws if w.start_day < cut and w.start_day + horizon - 1 < cut)
    return train, val


def _subsample_starts(windows, stride: int):
    """Keep every stride-th start day per channel, anchored at the newest.

    Windows whose starts differ by one day share almost all their content,
    so thinning them trades little information for a proportional drop in
    epoch cost.  Anchoring at the newest start keeps the most recent window
    in play regardless of how the channel's history length divides.
    """
    by_channel: dict[str, list] = {}
    for w in windows:
        by_channel.setdefault(w.channel, []).append(w)
    kept = []
    for channel in sorted(by_channel):
        ws = sorted(by_channel[channel], key=lambda w: w.start_day)
        kept.extend(ws[::-1][::stride][::-1])
    return kept


# --- training loop -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "utilitarian"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    val_fraction: float = 0.1
    window_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise InvalidConfig(f"unknown loss {self.loss!r}, expected one of {LOSSES}")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise InvalidConfig("max_epochs must be >= 0")
        if self.patience < 1:
            raise InvalidConfig("patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidConfig("val_fraction must be in [0, 1)")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.window_stride < 1:
            raise InvalidConfig("window_stride must be >= 1")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("nan")
    stopped_early: bool = False
    num_train_windows: int = 0
    num_val_windows: int = 0
    num_excluded_windows: int = 0
    wall_time_s: float = 0.0
    param_hash: str = ""
    seed: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)

    def to_text(self) -> str:
        lines = [
            "training report",
            "===============",
            f"epochs run        : {self.epochs_run}",
            f"best epoch        : {self.best_epoch}",
            f"best val loss     : {self.best_val_loss:.6g}",
            f"stopped early     : {self.stopped_early}",
            f"train windows     : {self.num_train_windows}",
            f"val windows       : {self.num_val_windows}",
            f"excluded windows  : {self.num_excluded_windows}",
            f"wall time (s)     : {self.wall_time_s:.2f}",
            f"parameter hash    : {self.param_hash}",
            f"seed              : {self.seed}",
        ]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        for i, tr in enumerate(self.train_losses):
            vl = self.val_losses[i] if i < len(self.val_losses) else float("nan")
            rows.append(f"{i},{tr!r},{vl!r}")
        return "\n".join(rows) + "\n"


def prepare_training_batches(dataset: LtvDataset, config: ModelConfig):
    """Enumerate target-complete windows and a covariate-bundle factory.

    Returns (windows, bundles_for) where bundles_for(subset) produces one
    CovariateBundle per window, sized to the model's covariate widths.
    """
    windows, _ = enumerate_windows(dataset, config.spec, with_target=True)
    if not windows:
        raise EmptyDataset("no trapezoid window fits any channel in this dataset")
    channels = dataset.channels() if config.c_sta else None

    def bundles_for(ws):
        return [
            build_bundle(w, channels, dataset.calendar, dynamic=config.c_dyn > 0)
            for w in ws
        ]

    return windows, bundles_for


def train(model: MtFusionNet, dataset: LtvDataset, config: TrainConfig,
          max_start: int | None = None) -> TrainReport:
    """Minibatch-Adam training with early stopping on the validation loss.

    With `val_fraction == 0` there is no holdout and epoch selection falls
    back to the training loss.  `max_epochs == 0` leaves the model unchanged
    and returns an empty report.  `max_start` drops windows starting after
    that ordinal before splitting (used to fence off evaluation periods).
    """
    windows, bundles_for = prepare_training_batches(dataset, model.config)
    if max_start is not None:
        windows = [w for w in windows if w.start_day <= max_start]
        if not windows:
            raise EmptyDataset("max_start leaves no training windows")
    if config.window_stride > 1:
        windows = _subsample_starts(windows, config.window_stride)
    train_ws, val_ws = temporal_split(windows, config.val_fraction)
    excluded = len(windows) - len(train_ws) - len(val_ws)
    report = TrainReport(
        num_train_windows=len(train_ws),
        num_val_windows=len(val_ws),
        num_excluded_windows=excluded,
        seed=config.seed,
    )
    if config.max_epochs == 0:
        report.param_hash = model.param_hash()
        return report
    if not train_ws:
        raise EmptyDataset("temporal split left no training windows")
    t_start = time.perf_counter()

    train_batch = prepare_batch(train_ws, bundles_for(train_ws), model.config,
                                require_targets=True)
    val_batch = None
    if val_ws:
        val_batch = prepare_batch(val_ws, bundles_for(val_ws), model.config,
                                  require_targets=True)
    for batch in filter(None, [train_batch, val_batch]):
        if not np.all(np.isfinite(batch.inputs)) or not np.all(np.isfinite(batch.targets)):
            raise DivergenceDetected("non-finite value in training data")

    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, lr=config.learning_rate)
    best_params = model.copy_params()
    best_monitor = float("inf")
    epochs_since_best = 0
    n_train = len(train_batch)

    for epoch in range(config.max_epochs):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            mini = train_batch.subset(idx)
            value, grads = model_loss_and_grads(model, mini, config.loss, rng=rng)
            if not np.isfinite(value):
                raise DivergenceDetected(f"training loss became {value} at epoch {epoch}")
            opt.step(grads)
            epoch_loss += value * len(idx)
        epoch_loss /= n_train
        report.train_losses.append(epoch_loss)

        if val_batch is not None:
            pred, _ = model.scaled_forward(val_batch)
            val_loss, _ = batch_loss_and_grad(pred, val_batch.scaled_targets(), config.loss)
            report.val_losses.append(val_loss)
            monitor = val_loss
        else:
            monitor = epoch_loss
        if not np.isfinite(monitor):
            raise DivergenceDetected(f"monitored loss became {monitor} at epoch {epoch}")

        if monitor < best_monitor:
            best_monitor = monitor
            best_params = model.copy_params()
            report.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                report.stopped_early = True
                break

    model.set_params(best_params)
    report.best_val_loss = best_monitor
    report.wall_time_s = time.perf_counter() - t_start
    report.param_hash = model.param_hash()
    return report


def describe_split(train_ws, val_ws) -> str:
    """Human-readable split summary, handy for CLI logging."""
    def span(ws):
        if not ws:
            return "-"
        days = [w.start_day for w in ws]
        return f"{format_date(min(days))}..{format_date(max(days))}"

    return (f"train: {len(train_ws)} windows ({span(train_ws)}), "
            f"val: {len(val_ws)} windows ({span(val_ws)})")
