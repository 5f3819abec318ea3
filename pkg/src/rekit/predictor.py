"""Lightweight CNN path-loss predictor written directly in numpy.

Architecture for a trajectory of ``J`` receivers::

    (3, J, 1) -conv3x3-> (16, J, 1) -ReLU-conv3x3-> (32, J, 1) -ReLU-> flatten(32 J) -FC-> J

Convolutions are stride-1 cross-correlations with zero "same" padding.
Training minimises NRMSE with hand-derived gradients and Adam.
"""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rekit._io import atomic_write_bytes, substream, write_csv

__all__ = [
    "TrainConfig",
    "CNNModel",
    "TrainResult",
    "TrainingError",
    "ShapeError",
    "to_tensor",
    "conv2d_forward",
    "conv2d_backward",
    "relu",
    "fc_forward",
    "nrmse",
    "nrmse_grad",
    "split_indices",
    "train",
    "predict",
    "gradient_check",
    "save_model",
    "load_model",
    "write_training_log",
]

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def to_tensor(spectrum) -> np.ndarray:
    """``(J, 3)`` (RC, DC, BC) matrix -> ``(3, J, 1)`` input tensor."""
    m = np.asarray(getattr(spectrum, "matrix", spectrum), dtype=float)
    if m.ndim != 2 or m.shape[1] != 3:
        raise ShapeError(f"expected a (J, 3) spectrum, got {m.shape}")
    return np.ascontiguousarray(m.T[:, :, None])


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded 2-D cross-correlation.

    ``x`` is ``(C, H, W)`` or ``(N, C, H, W)``, ``w`` is ``(O, C, kh, kw)``
    with odd kernel sides; output keeps the spatial size.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernels {w.shape}")
    kh, kw = w.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: kernel sides must be odd for same padding")
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (N, C, H, W, kh, kw)
    out = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    if b is not None:
        out = out + b[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_forward` for batched input."""
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    dw = np.einsum("nohw,nchwij->ocij", dout, win, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    # transposed, flipped kernels turn the correlation around
    dx = conv2d_forward(dout, np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)))
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0)


def fc_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine output layer ``W x + b`` (identity activation); ``x`` may be batched."""
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"fc: input {x.shape} incompatible with W {W.shape}, b {b.shape}")
    return x @ W.T + b


def nrmse(pred, truth) -> float:
    """Root of summed squared error over ``n * var(pred)`` (population variance)."""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"nrmse: {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise ValueError("nrmse needs at least two values")
    var = float(np.var(pred))
    if var == 0.0:
        raise ValueError("nrmse undefined: predictions have zero variance")
    return math.sqrt(float(np.sum((truth - pred) ** 2)) / (pred.size * var))


def nrmse_grad(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """NRMSE and its gradient with respect to ``pred`` (same shape)."""
    n = pred.size
    resid = pred - truth
    centered = pred - pred.mean()
    var = float(np.mean(centered**2))
    if var == 0.0:
        raise ValueError("nrmse undefined: predictions have zero variance")
    sse = float(np.sum(resid**2))
    loss = math.sqrt(sse / (n * var))
    if loss == 0.0:
        return 0.0, np.zeros_like(pred)
    # d(sse)/dp = 2 r ; d(var)/dp = 2 (p - mean) / n
    dratio = 2.0 * resid / (n * var) - sse / (n * var * var) * (2.0 * centered / n)
    return loss, dratio / (2.0 * loss)


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 200
    patience: int = 20
    split: float = 0.75
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class CNNModel:
    """Parameters plus the input/target scaling fitted on the training set."""

    J: int
    params: dict[str, np.ndarray]
    width: int = 1
    channels: tuple[int, int] = (16, 32)
    seed: int = 0
    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    in_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    out_mean: float = 0.0
    out_std: float = 1.0

    @classmethod
    def init(cls, J: int, seed: int = 0, width: int = 1, channels: tuple[int, int] = (16, 32)) -> "CNNModel":
        """He-style normal weights, small normal biases."""
        rng = substream(seed, "init")
        c1, c2 = channels
        flat = c2 * J * width

        def he(shape, fan_in):
            return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)

        params = {
            "conv1_w": he((c1, 3, 3, 3), 3 * 9),
            "conv1_b": rng.normal(0.0, 0.01, size=c1),
            "conv2_w": he((c2, c1, 3, 3), c1 * 9),
            "conv2_b": rng.normal(0.0, 0.01, size=c2),
            "fc_w": rng.normal(0.0, math.sqrt(1.0 / flat), size=(J, flat)),
            "fc_b": rng.normal(0.0, 0.01, size=J),
        }
        return cls(J=J, params=params, width=width, channels=tuple(channels), seed=seed)

    def check_shapes(self) -> None:
        c1, c2 = self.channels
        flat = c2 * self.J * self.width
        expected = {
            "conv1_w": (c1, 3, 3, 3),
            "conv1_b": (c1,),
            "conv2_w": (c2, c1, 3, 3),
            "conv2_b": (c2,),
            "fc_w": (self.J, flat),
            "fc_b": (self.J,),
        }
        for name, shape in expected.items():
            got = self.params[name].shape
            if got != shape:
                raise ShapeError(f"{name}: expected {shape}, got {got}")
            if not np.all(np.isfinite(self.params[name])):
                raise ShapeError(f"{name}: non-finite parameters")

    def forward(self, x: np.ndarray, cache: bool = False):
        """Raw (standardised-space) outputs for a batch ``(N, 3, J, W)``."""
        p = self.params
        if x.ndim != 4 or x.shape[1:] != (3, self.J, self.width):
            raise ShapeError(f"expected input (N, 3, {self.J}, {self.width}), got {x.shape}")
        z1 = conv2d_forward(x, p["conv1_w"], p["conv1_b"])
        a1 = relu(z1)
        z2 = conv2d_forward(a1, p["conv2_w"], p["conv2_b"])
        a2 = relu(z2)
        flat = a2.reshape(x.shape[0], -1)
        y = fc_forward(flat, p["fc_w"], p["fc_b"])
        if cache:
            return y, (x, z1, a1, z2, a2, flat)
        return y

    def backward(self, dy: np.ndarray, cache) -> dict[str, np.ndarray]:
        p = self.params
        x, z1, a1, z2, a2, flat = cache
        grads = {"fc_w": dy.T @ flat, "fc_b": dy.sum(axis=0)}
        da2 = (dy @ p["fc_w"]).reshape(a2.shape)
        dz2 = da2 * (z2 > 0)
        da1, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(dz2, a1, p["conv2_w"])
        dz1 = da1 * (z1 > 0)
        _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(dz1, x, p["conv1_w"])
        return grads

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        out, cache = self.forward(x, cache=True)
        loss, dy = nrmse_grad(out, y)
        return loss, self.backward(dy, cache)

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean[None, :, None, None]) / self.in_std[None, :, None, None]

    def copy(self) -> "CNNModel":
        return CNNModel(
            J=self.J,
            params={k: v.copy() for k, v in self.params.items()},
            width=self.width,
            channels=self.channels,
            seed=self.seed,
            in_mean=self.in_mean.copy(),
            in_std=self.in_std.copy(),
            out_mean=self.out_mean,
            out_std=self.out_std,
        )


@dataclass
class TrainResult:
    model: CNNModel
    history: list[dict[str, float]]
    train_idx: list[int]
    test_idx: list[int]
    seconds: float


def split_indices(n: int, split: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle; the first ``floor(split * n)`` go to training."""
    perm = substream(seed, "split").permutation(n)
    n_train = max(1, min(n - 1, int(math.floor(split * n)))) if n > 1 else n
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


def _as_batch(inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 3:
        x = x[None]
    return x


def train(inputs, targets, cfg: TrainConfig | None = None, channels: tuple[int, int] = (16, 32)) -> TrainResult:
    """Fit a model on ``(N, 3, J, W)`` inputs and ``(N, J)`` path-loss targets.

    The samples are split with :func:`split_indices`; inputs are scaled per
    channel and targets by their mean/std from the training part only. NRMSE
    is invariant under a common affine rescaling of prediction and truth,
    so losses in the scaled space equal losses in dB. Training stops after
    ``cfg.epochs`` or when the test NRMSE has not improved for
    ``cfg.patience`` epochs; the best-test-loss parameters are returned.
    """
    cfg = cfg or TrainConfig()
    x_all = _as_batch(inputs)
    y_all = np.asarray(targets, dtype=float)
    if x_all.shape[0] == 0:
        raise ValueError("empty dataset")
    N, C, J, W = x_all.shape
    if C != 3 or y_all.shape != (N, J):
        raise ShapeError(f"inputs {x_all.shape} and targets {y_all.shape} are inconsistent")
    train_idx, test_idx = split_indices(N, cfg.split, cfg.seed)

    model = CNNModel.init(J, seed=cfg.seed, width=W, channels=channels)
    xt = x_all[train_idx]
    model.in_mean = xt.mean(axis=(0, 2, 3))
    std = xt.std(axis=(0, 2, 3))
    model.in_std = np.where(std > 0, std, 1.0)
    model.out_mean = float(y_all[train_idx].mean())
    ostd = float(y_all[train_idx].std())
    model.out_std = ostd if ostd > 0 else 1.0

    xs = model.normalize_inputs(x_all)
    ys = (y_all - model.out_mean) / model.out_std
    x_tr, y_tr = xs[train_idx], ys[train_idx]
    x_te, y_te = xs[test_idx], ys[test_idx]

    m_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    v_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    shuffle = substream(cfg.seed, "shuffle")
    history: list[dict[str, float]] = []
    best = (math.inf, model.copy())
    stale = 0
    step = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(len(train_idx))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            try:
                loss, grads = model.loss_and_grads(x_tr[batch], y_tr[batch])
            except ValueError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from exc
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            step += 1
            lr_t = cfg.learning_rate * math.sqrt(1 - cfg.beta2**step) / (1 - cfg.beta1**step)
            for k in PARAM_ORDER:
                g = grads[k]
                m_state[k] = cfg.beta1 * m_state[k] + (1 - cfg.beta1) * g
                v_state[k] = cfg.beta2 * v_state[k] + (1 - cfg.beta2) * g * g
                model.params[k] = model.params[k] - lr_t * m_state[k] / (np.sqrt(v_state[k]) + cfg.adam_eps)
        tr_loss = _safe_nrmse(model.forward(x_tr), y_tr)
        te_loss = _safe_nrmse(model.forward(x_te), y_te) if test_idx else math.nan
        if not math.isfinite(tr_loss):
            raise TrainingError(f"non-finite training NRMSE after epoch {epoch}")
        history.append(
            {"epoch": epoch, "train_nrmse": tr_loss, "test_nrmse": te_loss, "seconds": time.perf_counter() - t0}
        )
        monitor = te_loss if test_idx else tr_loss
        if monitor < best[0]:
            best = (monitor, model.copy())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best[1], history, train_idx, test_idx, time.perf_counter() - t0)


def _safe_nrmse(pred, truth) -> float:
    try:
        return nrmse(pred, truth)
    except ValueError:
        return math.inf


def predict(model: CNNModel, spectrum) -> np.ndarray:
    """Path loss in dB for one ``(3, J, W)`` tensor, ``(J, 3)`` matrix, or a batch."""
    x = np.asarray(getattr(spectrum, "matrix", spectrum), dtype=float)
    if x.ndim == 2:
        x = to_tensor(x)
    single = x.ndim == 3
    x = _as_batch(x)
    y = model.forward(model.normalize_inputs(x)) * model.out_std + model.out_mean
    return y[0] if single else y


def gradient_check(model: CNNModel, x: np.ndarray, y: np.ndarray, eps: float = 1e-5) -> dict[str, float]:
    """Max relative error between backprop and central differences, per parameter array.

    ``x`` is a raw ``(N, 3, J, W)`` batch and ``y`` the matching ``(N, J)``
    target in the model's output space. The ``"max"`` key holds the overall
    maximum. Relative error is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    x = _as_batch(x)
    _, grads = model.loss_and_grads(x, y)
    report = {}
    for name in PARAM_ORDER:
        arr = model.params[name]
        num = np.empty_like(arr)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = nrmse(model.forward(x), y)
            flat[i] = orig - eps
            down = nrmse(model.forward(x), y)
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * eps)
        a = grads[name]
        rel = np.abs(a - num) / np.maximum(np.abs(a) + np.abs(num), 1e-8)
        report[name] = float(rel.max())
    report["max"] = max(report.values())
    return report


def save_model(model: CNNModel, path: str | Path) -> None:
    """Write an ``.npz`` checkpoint: JSON metadata plus arrays in declared order."""
    meta = {
        "format": "rekit-cnn/1",
        "J": model.J,
        "width": model.width,
        "channels": list(model.channels),
        "seed": model.seed,
        "param_order": list(PARAM_ORDER),
        "out_mean": model.out_mean,
        "out_std": model.out_std,
    }
    arrays = {k: model.params[k] for k in PARAM_ORDER}
    arrays["in_mean"] = model.in_mean
    arrays["in_std"] = model.in_std
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_model(path: str | Path) -> CNNModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != "rekit-cnn/1":
            raise ShapeError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
        params = {k: data[k].copy() for k in meta["param_order"]}
        model = CNNModel(
            J=int(meta["J"]),
            params=params,
            width=int(meta["width"]),
            channels=tuple(meta["channels"]),
            seed=int(meta["seed"]),
            in_mean=data["in_mean"].copy(),
            in_std=data["in_std"].copy(),
            out_mean=float(meta["out_mean"]),
            out_std=float(meta["out_std"]),
        )
    model.check_shapes()
    return model


def write_training_log(path: str | Path, history: Sequence[dict[str, float]]) -> None:
    write_csv(
        path,
        ("epoch", "train_nrmse", "test_nrmse", "seconds"),
        ((h["epoch"], h["train_nrmse"], h["test_nrmse"], h["seconds"]) for h in history),
    )
