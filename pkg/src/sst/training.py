"""Adam, the epoch loop with early stopping, and denormalized evaluation.

Loss is computed on the instance-normalized scale for models that declare
`uses_revin`; metrics are always computed on the original scale so models
with and without normalization stay comparable.  Each window is
normalized by its own lookback statistics, precomputed once per split
since they never change during a run.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import checkpoint_bytes, checkpoint_from_bytes
from .errors import ConfigError, ContractError, NumericDomainError


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    loss: str = "mse"

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.loss != "mse":
            raise ConfigError(f"unsupported loss {self.loss!r}; only 'mse'")
        return self


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, state: AdamState, cfg: TrainConfig) -> AdamState:
    """Bias-corrected adaptive-moment update, in place on param data."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient; "
                                "run backward before adam_step")
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)
    return state


def _stack(windows):
    if not windows:
        raise ContractError("empty window list")
    x = np.stack([w.lookback for w in windows])
    y = np.stack([w.target for w in windows])
    return x, y


def _window_stats(x: np.ndarray, eps: float = 1e-5):
    """Per-window per-variate lookback stats: (W, 1, M) mean and std."""
    mean = x.mean(axis=1, keepdims=True)
    std = np.sqrt(x.var(axis=1, keepdims=True) + eps)
    return mean, std


def _prepare(windows, uses_revin: bool):
    """Stack windows; normalize each by its own lookback when asked."""
    x, y = _stack(windows)
    if not uses_revin:
        return x, y, None, None
    mean, std = _window_stats(x)
    return (x - mean) / std, (y - mean) / std, mean, std


def _mse_loss(pred: T.Tensor, target: np.ndarray) -> T.Tensor:
    diff = pred - T.constant(target)
    return (diff * diff).mean()


@dataclass
class TrainResult:
    history: list          # dicts: epoch, train_loss, val_loss, elapsed_ms
    best_epoch: int
    best_val: float
    stopped_early: bool

    def deterministic_history(self):
        """The reproducible fields only; wall-clock stripped."""
        return [{k: r[k] for k in ("epoch", "train_loss", "val_loss")}
                for r in self.history]


def train(model, train_windows, val_windows, cfg: TrainConfig) -> TrainResult:
    """Minimize batch MSE with Adam; early-stop and restore the best state.

    Deterministic for fixed (model init, windows, cfg): batch order comes
    from a generator seeded by cfg.seed alone.  Divergence aborts rather
    than returning garbage.
    """
    cfg.validate()
    uses_revin = bool(getattr(model, "uses_revin", False))
    x_train, y_train, _, _ = _prepare(train_windows, uses_revin)
    x_val, y_val, _, _ = _prepare(val_windows, uses_revin)

    params = model.parameters()
    state = AdamState()
    order_rng = np.random.default_rng(cfg.seed)
    history = []
    best_val = np.inf
    best_epoch = -1
    best_blob = None
    stopped_early = False
    # divergence is caught on the loss below; per-op checks are slow
    with T.checked_mode(False):
        for epoch in range(cfg.max_epochs):
            start = time.perf_counter()
            order = order_rng.permutation(len(x_train))
            total = 0.0
            seen = 0
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                xb = T.constant(np.ascontiguousarray(x_train[idx]))
                yb = np.ascontiguousarray(y_train[idx])
                T.zero_grads(params.values())
                with T.record() as tape:
                    loss = _mse_loss(model.forward_normalized(xb), yb)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericDomainError(
                        f"training diverged: loss became {value} at epoch "
                        f"{epoch}, step {lo // cfg.batch_size}")
                T.backward(tape, loss)
                adam_step(params, state, cfg)
                total += value * len(idx)
                seen += len(idx)
            train_loss = total / seen

            val_loss = _batched_mse(model, x_val, y_val, cfg.batch_size)
            if not np.isfinite(val_loss):
                raise NumericDomainError(
                    f"training diverged: validation loss became {val_loss} "
                    f"at epoch {epoch}")
            history.append({
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "elapsed_ms": (time.perf_counter() - start) * 1e3,
            })
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_blob = checkpoint_bytes(params)
            elif epoch - best_epoch >= cfg.patience:
                stopped_early = True
                break

    if best_blob is not None:
        restored = checkpoint_from_bytes(best_blob)
        for name, p in params.items():
            p.data[...] = restored[name]
    return TrainResult(history=history, best_epoch=best_epoch,
                       best_val=best_val, stopped_early=stopped_early)


def _batched_mse(model, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    total = 0.0
    count = 0
    for lo in range(0, len(x), batch_size):
        xb = T.constant(np.ascontiguousarray(x[lo:lo + batch_size]))
        pred = model.forward_normalized(xb).data
        diff = pred - y[lo:lo + batch_size]
        total += float((diff * diff).sum())
        count += diff.size
    return total / count


@dataclass
class ForecastReport:
    model: str
    horizon: int
    windows: int
    mse: float
    mae: float
    router_mean: float | None = None
    router_std: float | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForecastReport":
        return cls(**json.loads(text))


def evaluate(model, windows, model_name: str | None = None,
             batch_size: int = 64) -> ForecastReport:
    """Denormalized MSE/MAE over all windows and variates.

    `model` is either an object with forward_normalized/uses_revin (fast
    batched path) or a plain callable lookback -> forecast.  Squared and
    absolute errors are accumulated per window, so the result does not
    depend on how the set is batched.
    """
    windows = list(windows)
    if not windows:
        raise ContractError("evaluate needs at least one window")
    x, y = _stack(windows)
    horizon = y.shape[1]

    se_total = 0.0
    ae_total = 0.0
    count = 0
    router_ps: list[np.ndarray] = []

    if callable(model) and not hasattr(model, "forward_normalized"):
        name = model_name or getattr(model, "__name__", "callable")
        for look, target in zip(x, y):
            pred = np.asarray(model(look))
            if pred.shape != target.shape:
                raise ContractError(
                    f"forecast shape {pred.shape} != target {target.shape}")
            se_total += float(((pred - target) ** 2).sum())
            ae_total += float(np.abs(pred - target).sum())
            count += target.size
    else:
        name = model_name or type(model).__name__
        uses_revin = bool(getattr(model, "uses_revin", False))
        router = getattr(model, "router", None)
        for lo in range(0, len(x), batch_size):
            xb = np.ascontiguousarray(x[lo:lo + batch_size])
            if uses_revin:
                mean, std = _window_stats(xb)
                fed = T.constant((xb - mean) / std)
                pred = model.forward_normalized(fed).data * std + mean
            else:
                fed = T.constant(xb)
                pred = model.forward_normalized(fed).data
            diff = pred - y[lo:lo + batch_size]
            se_total += float((diff * diff).sum())
            ae_total += float(np.abs(diff).sum())
            count += diff.size
            if router is not None:
                router_ps.append(router.forward(fed).data[:, 0])

    report = ForecastReport(model=name, horizon=horizon, windows=len(windows),
                            mse=se_total / count, mae=ae_total / count)
    if router_ps:
        p = np.concatenate(router_ps)
        report.router_mean = float(p.mean())
        report.router_std = float(p.std())
    return report


def write_history(history, path) -> None:
    """Line-delimited records: epoch, train_loss, val_loss, elapsed_ms."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_history(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
