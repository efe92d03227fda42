"""Small convolutional network written directly in numpy.

Layout: conv5x5(16) - ReLU - maxpool2 - conv5x5(32) - ReLU - maxpool2 -
conv5x5(32) - ReLU - fc(512) - ReLU - fc(num_classes). Convolutions use
'same' padding. The pre-activation output of the 512-wide layer is the
feature vector handed to feature fusion.

Images are passed as ``(n, C, H, W)``; computation runs channels-last.
Training uses SGD with momentum on mean softmax cross-entropy plus an L2
penalty on weights (not biases).
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class CnnArchitecture:
    in_channels: int = 1
    input_size: int = 64
    conv_channels: tuple = (16, 32, 32)
    kernel_size: int = 5
    feature_width: int = 512
    num_classes: int = 5

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if len(self.conv_channels) != 3:
            raise ValueError("architecture has exactly three conv layers")
        if self.input_size % 4:
            raise ValueError("input_size must be divisible by 4 (two 2x2 pools)")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for 'same' padding")

    @property
    def flat_size(self) -> int:
        return (self.input_size // 4) ** 2 * self.conv_channels[2]

    def param_shapes(self) -> dict:
        k = self.kernel_size
        c1, c2, c3 = self.conv_channels
        return {
            "conv1.w": (c1, self.in_channels, k, k), "conv1.b": (c1,),
            "conv2.w": (c2, c1, k, k), "conv2.b": (c2,),
            "conv3.w": (c3, c2, k, k), "conv3.b": (c3,),
            "fc1.w": (self.flat_size, self.feature_width), "fc1.b": (self.feature_width,),
            "fc2.w": (self.feature_width, self.num_classes), "fc2.b": (self.num_classes,),
        }

    def num_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d) -> "CnnArchitecture":
        return cls(**{**d, "conv_channels": tuple(d["conv_channels"])})


def small_architecture(in_channels=1, input_size=64, num_classes=5) -> CnnArchitecture:
    return CnnArchitecture(in_channels=in_channels, input_size=input_size, num_classes=num_classes)


def tiny_architecture(in_channels=1, num_classes=3) -> CnnArchitecture:
    """8x8 input, 2 kernels per conv layer; used for gradient checking."""
    return CnnArchitecture(in_channels=in_channels, input_size=8, conv_channels=(2, 2, 2),
                           feature_width=6, num_classes=num_classes)


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    initial_learn_rate: float = 0.005
    learn_rate_drop_factor: float = 0.5
    learn_rate_drop_period: int = 10
    l2_regularization: float = 0.004
    mini_batch_size: int = 128
    epochs: int = 30
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learn_rate_drop_factor <= 1:
            raise ValueError("learn_rate_drop_factor must lie in (0, 1]")
        if self.initial_learn_rate <= 0 or self.mini_batch_size < 1 or self.epochs < 1:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if self.momentum < 0 or self.l2_regularization < 0:
            raise ValueError("momentum and l2_regularization must be non-negative")

    def learn_rate(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch`` under the piecewise drop schedule."""
        drops = (epoch - 1) // self.learn_rate_drop_period
        return self.initial_learn_rate * self.learn_rate_drop_factor ** drops


@dataclass
class CnnModel:
    arch: CnnArchitecture
    params: dict
    metadata: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params["fc2.w"].dtype

    def forward(self, images):
        return forward(self, images)

    def predict(self, images, batch_size: int = 256) -> np.ndarray:
        return np.argmax(predict_logits(self, images, batch_size), axis=1)


def init_model(arch: CnnArchitecture, seed: int = 0, dtype=np.float32) -> CnnModel:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        limit = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return CnnModel(arch, params, {"init_seed": seed})


# -- layer primitives (channels-last) -------------------------------------

def _im2col(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # n, h, w, c, k, k
    n, h, w = x.shape[:3]
    # column order (ki, kj, c) keeps the copy channel-contiguous
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, -1)


def _wmat(wt):
    return wt.transpose(0, 2, 3, 1).reshape(wt.shape[0], -1)


def _conv_forward(x, wt, b):
    n, h, w, _ = x.shape
    f, _, k, _ = wt.shape
    cols = _im2col(x, k)
    out = cols @ _wmat(wt).T
    out += b
    return out.reshape(n, h, w, f), cols


def _conv_backward(dout, x_shape, cols, wt, need_dx=True):
    n, h, w, c = x_shape
    f, _, k, _ = wt.shape
    d2 = dout.reshape(-1, f)
    dw = (d2.T @ cols).reshape(f, k, k, c).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # d/dx of a 'same' correlation is a 'same' correlation of dout with the
    # spatially flipped, channel-transposed kernel
    flipped = np.ascontiguousarray(wt.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    dx, _ = _conv_forward(dout, flipped, np.zeros(c, dtype=dout.dtype))
    return dx, dw, db


def _pool_forward(x):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    n, h, w, c = x_shape
    grad = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(grad, arg[..., None], dout[..., None], axis=-1)
    grad = grad.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return grad.reshape(n, h, w, c)


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_nhwc(model: CnnModel, images) -> np.ndarray:
    x = np.asarray(images)
    a = model.arch
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        # (n, H, W) for single-channel nets, (C, H, W) otherwise
        x = x[:, None] if a.in_channels == 1 else x[None]
    if x.ndim != 4 or x.shape[1:] != (a.in_channels, a.input_size, a.input_size):
        raise ShapeError(f"expected images of shape (n, {a.in_channels}, {a.input_size}, "
                         f"{a.input_size}), got {np.shape(images)}")
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=model.dtype)


def _forward_cache(model: CnnModel, x):
    p = model.params
    cache = {"x": x}
    h, cache["cols1"] = _conv_forward(x, p["conv1.w"], p["conv1.b"])
    cache["a1"] = h = np.maximum(h, 0)
    h, cache["arg1"] = _pool_forward(h)
    cache["p1"] = h
    h, cache["cols2"] = _conv_forward(h, p["conv2.w"], p["conv2.b"])
    cache["a2"] = h = np.maximum(h, 0)
    h, cache["arg2"] = _pool_forward(h)
    cache["p2"] = h
    h, cache["cols3"] = _conv_forward(h, p["conv3.w"], p["conv3.b"])
    cache["a3"] = h = np.maximum(h, 0)
    flat = h.reshape(h.shape[0], -1)
    cache["flat"] = flat
    z = flat @ p["fc1.w"] + p["fc1.b"]
    cache["z"] = z
    r = np.maximum(z, 0)
    cache["r"] = r
    logits = r @ p["fc2.w"] + p["fc2.b"]
    return logits, z, cache


def forward(model: CnnModel, images):
    """Return ``(logits, features)`` for a batch (or a single image)."""
    x = _as_nhwc(model, images)
    logits, z, _ = _forward_cache(model, x)
    return logits, z


def predict_logits(model: CnnModel, images, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(images)
    out = [forward(model, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.arch.num_classes))


def extract_features(model: CnnModel, images, batch_size: int = 256) -> np.ndarray:
    """Penultimate-layer features, one row per image."""
    x = np.asarray(images)
    out = [forward(model, x[i:i + batch_size])[1] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.arch.feature_width))


def loss_and_grads(model: CnnModel, images, labels, l2: float = 0.0):
    """Mean cross-entropy + ``l2/2 * sum(w**2)`` over weights, and its gradients."""
    return _loss_and_grads(model, _as_nhwc(model, images), np.asarray(labels), l2)


def _loss_and_grads(model, x, labels, l2):
    p = model.params
    n = x.shape[0]
    logits, _, c = _forward_cache(model, x)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    prob = np.exp(z - logsum[:, None])
    dlogits = prob
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    g = {}
    g["fc2.w"] = c["r"].T @ dlogits
    g["fc2.b"] = dlogits.sum(axis=0)
    dr = dlogits @ p["fc2.w"].T
    dz = dr * (c["z"] > 0)
    g["fc1.w"] = c["flat"].T @ dz
    g["fc1.b"] = dz.sum(axis=0)
    da3 = (dz @ p["fc1.w"].T).reshape(c["a3"].shape) * (c["a3"] > 0)
    dp2, g["conv3.w"], g["conv3.b"] = _conv_backward(da3, c["p2"].shape, c["cols3"], p["conv3.w"])
    da2 = _pool_backward(dp2, c["arg2"], c["a2"].shape) * (c["a2"] > 0)
    dp1, g["conv2.w"], g["conv2.b"] = _conv_backward(da2, c["p1"].shape, c["cols2"], p["conv2.w"])
    da1 = _pool_backward(dp1, c["arg1"], c["a1"].shape) * (c["a1"] > 0)
    _, g["conv1.w"], g["conv1.b"] = _conv_backward(da1, c["x"].shape, c["cols1"], p["conv1.w"],
                                                   need_dx=False)
    if l2:
        for name in p:
            if name.endswith(".w"):
                loss += 0.5 * l2 * float(np.sum(p[name].astype(np.float64) ** 2))
                g[name] = g[name] + l2 * p[name]
    g = {k: v.astype(p[k].dtype, copy=False) for k, v in g.items()}
    return loss, g


def sgdm_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float) -> None:
    """In-place ``v <- momentum * v - lr * g``; ``p <- p + v``."""
    for name, g in grads.items():
        v = velocity[name]
        v *= momentum
        v -= lr * g
        params[name] += v


def weight_norm(model: CnnModel) -> float:
    return float(np.sqrt(sum(np.sum(v.astype(np.float64) ** 2)
                             for k, v in model.params.items() if k.endswith(".w"))))


def evaluate_loss(model: CnnModel, images, labels, batch_size: int = 256) -> float:
    logits = predict_logits(model, images, batch_size)
    prob = softmax(logits)
    return float(-np.mean(np.log(np.maximum(prob[np.arange(len(labels)), labels], 1e-300))))


def train(images, labels, cfg: TrainConfig = TrainConfig(), arch: CnnArchitecture | None = None,
          val_images=None, val_labels=None, dtype=np.float32, progress=None) -> CnnModel:
    """Train a network with minibatch SGDM.

    ``images`` is ``(n, C, H, W)``. When validation data is given, training
    stops after ``cfg.patience`` epochs without validation-loss improvement
    and the best parameters are kept.
    """
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("no training data")
    if arch is None:
        arch = CnnArchitecture(in_channels=images.shape[1], input_size=images.shape[2],
                               num_classes=int(labels.max()) + 1)
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ValueError("labels must lie in [0, num_classes)")
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    model = init_model(arch, int(init_seq.generate_state(1)[0]), dtype)
    x_all = _as_nhwc(model, images)
    rng = np.random.default_rng(shuffle_seq)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    curve, val_curve = [], []
    best, best_val, stale = None, np.inf, 0
    t0 = time.perf_counter()
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learn_rate(epoch)
        order = rng.permutation(len(x_all))
        total = 0.0
        for bi, start in enumerate(range(0, len(order), cfg.mini_batch_size)):
            idx = order[start:start + cfg.mini_batch_size]
            loss, grads = _loss_and_grads(model, x_all[idx], labels[idx], cfg.l2_regularization)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi}, lr={lr}")
            sgdm_step(model.params, grads, velocity, lr, cfg.momentum)
            total += loss * len(idx)
        curve.append(total / len(order))
        msg = f"epoch {epoch}: lr={lr:.5g} loss={curve[-1]:.4f}"
        if val_images is not None and len(val_images):
            v = evaluate_loss(model, val_images, np.asarray(val_labels))
            val_curve.append(v)
            msg += f" val_loss={v:.4f}"
            if v < best_val:
                best_val, stale = v, 0
                best = {k: a.copy() for k, a in model.params.items()}
            else:
                stale += 1
        logger.info(msg)
        if progress is not None:
            progress(msg)
        if best is not None and stale >= cfg.patience:
            logger.info("early stop after %d stale epochs", stale)
            break
    if best is not None:
        model.params = best
    model.metadata.update({
        "seed": cfg.seed, "epochs_run": epoch, "loss_curve": curve, "val_loss_curve": val_curve,
        "final_loss": curve[-1], "train_config": asdict(cfg), "num_params": arch.num_params(),
        "train_seconds": time.perf_counter() - t0,
    })
    return model


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def gradient_check(arch: CnnArchitecture | None = None, tol: float = 1e-4, seed: int = 0,
                   batch: int = 4, h: float = 1e-5, l2: float = 0.004) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64.

    Relative error per entry is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    arch = arch or tiny_architecture()
    rng = np.random.default_rng(seed)
    model = init_model(arch, seed, np.float64)
    for name in model.params:
        if name.endswith(".b"):
            model.params[name] = rng.normal(0, 0.1, model.params[name].shape)
    images = rng.random((batch, arch.in_channels, arch.input_size, arch.input_size))
    labels = rng.integers(0, arch.num_classes, batch)
    _, grads = loss_and_grads(model, images, labels, l2)
    per = {}
    for name, p in model.params.items():
        num = np.empty_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = loss_and_grads(model, images, labels, l2)
            flat[i] = old - h
            lm, _ = loss_and_grads(model, images, labels, l2)
            flat[i] = old
            nflat[i] = (lp - lm) / (2 * h)
        a = grads[name]
        rel = np.abs(a - num) / np.maximum(np.abs(a) + np.abs(num), 1e-8)
        per[name] = float(rel.max())
    return GradCheckReport(max(per.values()), per, tol)


def save_model(model: CnnModel, path) -> None:
    from .formats import write_container
    header = {"arch": model.arch.to_dict(), "metadata": model.metadata}
    write_container(path, "cnn", header, model.params)


def load_model(path) -> CnnModel:
    from .formats import read_container
    _, header, tensors = read_container(path, "cnn")
    arch = CnnArchitecture.from_dict(header["arch"])
    expected = arch.param_shapes()
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != tuple(shape):
            raise ShapeError(f"model file tensor {name!r} missing or misshapen")
    return CnnModel(arch, {k: tensors[k] for k in expected}, header.get("metadata", {}))
