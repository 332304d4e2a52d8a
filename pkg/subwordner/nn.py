"""Forward and backward passes for the shallow tagger layers.

Layers hold ``params`` and ``grads`` dicts keyed by parameter name. ``forward``
caches what ``backward`` needs; ``backward`` overwrites ``grads`` and returns
the gradient with respect to the layer input. Inputs are batched as
``(batch, length, dim)``; a 2-D ``(length, dim)`` input is treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from subwordner.errors import AllMasked, IdOutOfRange, ShapeMismatch


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None, ...], True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatch(f"expected a (len, dim) or (batch, len, dim) array, got shape {x.shape}")


def _unbatch(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[0] if squeeze else y


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def uniform(rng: np.random.Generator, shape: tuple[int, ...], scale: float, dtype: Any = np.float64) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


class Layer:
    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        self.grads = {name: np.zeros_like(value) for name, value in self.params.items()}

    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.params.values()))


class Embedding(Layer):
    def __init__(self, table: np.ndarray) -> None:
        super().__init__()
        if table.ndim != 2:
            raise ShapeMismatch(f"embedding table must be 2-D, got shape {table.shape}")
        self.params["table"] = table
        self._ids: np.ndarray | None = None

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator, dtype: Any = np.float64) -> "Embedding":
        return cls(uniform(rng, (vocab_size, dim), 0.05, dtype))

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        vocab_size = self.params["table"].shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
            raise IdOutOfRange(
                f"ids must lie in [0, {vocab_size})",
                expected=f"[0, {vocab_size})",
                actual=f"[{ids.min()}, {ids.max()}]",
            )
        self._ids = ids
        return self.params["table"][ids]

    def backward(self, dy: np.ndarray) -> None:
        table = self.params["table"]
        grad = np.zeros_like(table)
        np.add.at(grad, self._ids.reshape(-1), dy.reshape(-1, table.shape[1]))
        self.grads["table"] = grad
        return None


class Conv1D(Layer):
    """Same-padded 1-D convolution followed by relu."""

    def __init__(self, kernel: np.ndarray, bias: np.ndarray) -> None:
        super().__init__()
        if kernel.ndim != 3 or kernel.shape[0] % 2 == 0:
            raise ShapeMismatch(f"kernel must be (k, d_in, d_out) with odd k, got shape {kernel.shape}")
        if bias.shape != (kernel.shape[2],):
            raise ShapeMismatch(f"bias shape {bias.shape} does not match {kernel.shape[2]} filters")
        self.params["kernel"] = kernel
        self.params["bias"] = bias
        self._cache: tuple[np.ndarray, np.ndarray, bool] | None = None

    @classmethod
    def init(
        cls, width: int, d_in: int, d_out: int, rng: np.random.Generator, dtype: Any = np.float64
    ) -> "Conv1D":
        return cls(uniform(rng, (width, d_in, d_out), 0.05, dtype), np.zeros(d_out, dtype=dtype))

    @property
    def out_dim(self) -> int:
        return self.params["kernel"].shape[2]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, squeeze = _as_batch(x)
        kernel = self.params["kernel"]
        width, d_in, _ = kernel.shape
        if x.shape[2] != d_in:
            raise ShapeMismatch(f"input dim {x.shape[2]} does not match kernel d_in {d_in}")
        half = (width - 1) // 2
        length = x.shape[1]
        padded = np.pad(x, ((0, 0), (half, half), (0, 0)))
        z = np.broadcast_to(self.params["bias"], (x.shape[0], length, self.out_dim)).copy()
        for j in range(width):
            z += padded[:, j : j + length, :] @ kernel[j]
        self._cache = (padded, z, squeeze)
        return _unbatch(np.maximum(z, 0.0), squeeze)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        padded, z, squeeze = self._cache
        dy, _ = _as_batch(dy)
        kernel = self.params["kernel"]
        width = kernel.shape[0]
        half = (width - 1) // 2
        length = z.shape[1]
        dz = dy * (z > 0)
        dkernel = np.empty_like(kernel)
        dpadded = np.zeros_like(padded)
        for j in range(width):
            window = padded[:, j : j + length, :]
            dkernel[j] = np.einsum("btd,bte->de", window, dz)
            dpadded[:, j : j + length, :] += dz @ kernel[j].T
        self.grads["kernel"] = dkernel
        self.grads["bias"] = dz.sum(axis=(0, 1))
        return _unbatch(dpadded[:, half : half + length, :], squeeze)


class LSTM(Layer):
    """Single-direction LSTM, zero initial state, gate blocks ordered i, f, g, o."""

    def __init__(self, w_x: np.ndarray, w_h: np.ndarray, b: np.ndarray) -> None:
        super().__init__()
        hidden = w_h.shape[0]
        if w_h.shape != (hidden, 4 * hidden) or w_x.shape[1] != 4 * hidden or b.shape != (4 * hidden,):
            raise ShapeMismatch(
                f"inconsistent LSTM weights: w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}"
            )
        self.params["w_x"] = w_x
        self.params["w_h"] = w_h
        self.params["b"] = b
        self._cache: dict[str, Any] | None = None

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator, dtype: Any = np.float64) -> "LSTM":
        scale = 1.0 / np.sqrt(hidden)
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden : 2 * hidden] = 1.0  # forget gate
        return cls(uniform(rng, (d_in, 4 * hidden), scale, dtype), uniform(rng, (hidden, 4 * hidden), scale, dtype), b)

    @property
    def hidden(self) -> int:
        return self.params["w_h"].shape[0]

    @property
    def out_dim(self) -> int:
        return self.hidden

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, squeeze = _as_batch(x)
        w_x, w_h, b = self.params["w_x"], self.params["w_h"], self.params["b"]
        if x.shape[2] != w_x.shape[0]:
            raise ShapeMismatch(f"input dim {x.shape[2]} does not match LSTM input size {w_x.shape[0]}")
        batch, length, _ = x.shape
        h = self.hidden
        hs = np.zeros((batch, length, h), dtype=x.dtype)
        cs = np.zeros((batch, length, h), dtype=x.dtype)
        gates = np.zeros((batch, length, 4 * h), dtype=x.dtype)
        h_prev = np.zeros((batch, h), dtype=x.dtype)
        c_prev = np.zeros((batch, h), dtype=x.dtype)
        projected = x @ w_x + b
        for t in range(length):
            a = projected[:, t, :] + h_prev @ w_h
            i = _sigmoid(a[:, :h])
            f = _sigmoid(a[:, h : 2 * h])
            g = np.tanh(a[:, 2 * h : 3 * h])
            o = _sigmoid(a[:, 3 * h :])
            c_prev = f * c_prev + i * g
            h_prev = o * np.tanh(c_prev)
            gates[:, t, :] = np.concatenate([i, f, g, o], axis=1)
            cs[:, t, :] = c_prev
            hs[:, t, :] = h_prev
        self._cache = {"x": x, "hs": hs, "cs": cs, "gates": gates, "squeeze": squeeze}
        return _unbatch(hs, squeeze)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cache = self._cache
        x, hs, cs, gates = cache["x"], cache["hs"], cache["cs"], cache["gates"]
        dy, _ = _as_batch(dy)
        w_x, w_h = self.params["w_x"], self.params["w_h"]
        batch, length, _ = x.shape
        h = self.hidden
        da_all = np.zeros_like(gates)
        dh_next = np.zeros((batch, h), dtype=x.dtype)
        dc_next = np.zeros((batch, h), dtype=x.dtype)
        for t in reversed(range(length)):
            i = gates[:, t, :h]
            f = gates[:, t, h : 2 * h]
            g = gates[:, t, 2 * h : 3 * h]
            o = gates[:, t, 3 * h :]
            c = cs[:, t, :]
            c_prev = cs[:, t - 1, :] if t > 0 else np.zeros_like(c)
            tanh_c = np.tanh(c)
            dh = dy[:, t, :] + dh_next
            dc = dh * o * (1.0 - tanh_c**2) + dc_next
            da = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - g**2),
                    dh * tanh_c * o * (1.0 - o),
                ],
                axis=1,
            )
            da_all[:, t, :] = da
            dh_next = da @ w_h.T
            dc_next = dc * f
        h_prev_all = np.concatenate([np.zeros((batch, 1, h), dtype=x.dtype), hs[:, :-1, :]], axis=1)
        self.grads["w_x"] = np.einsum("btd,btg->dg", x, da_all)
        self.grads["w_h"] = np.einsum("bth,btg->hg", h_prev_all, da_all)
        self.grads["b"] = da_all.sum(axis=(0, 1))
        return _unbatch(da_all @ w_x.T, cache["squeeze"])


def reverse_within_lengths(x: np.ndarray, lengths: np.ndarray | None) -> np.ndarray:
    """Reverse each row's first ``lengths[b]`` steps in place of the whole row; padding stays put."""
    batch, length = x.shape[0], x.shape[1]
    if lengths is None:
        return x[:, ::-1, ...]
    steps = np.arange(length)[None, :]
    lengths = np.asarray(lengths).reshape(batch, 1)
    index = np.where(steps < lengths, lengths - 1 - steps, steps)
    return np.take_along_axis(x, index.reshape(batch, length, *([1] * (x.ndim - 2))), axis=1)


class BiLSTM(Layer):
    """Forward LSTM over x, backward LSTM over reversed x, outputs concatenated."""

    def __init__(self, forward_lstm: LSTM, backward_lstm: LSTM) -> None:
        if forward_lstm.params["w_x"].shape != backward_lstm.params["w_x"].shape:
            raise ShapeMismatch("forward and backward LSTMs must have the same shapes")
        # params/grads route through fw and bw, so they must exist before Layer.__init__
        self.fw = forward_lstm
        self.bw = backward_lstm
        super().__init__()
        self._cache: tuple[np.ndarray | None, bool] | None = None

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator, dtype: Any = np.float64) -> "BiLSTM":
        return cls(LSTM.init(d_in, hidden, rng, dtype), LSTM.init(d_in, hidden, rng, dtype))

    @property
    def params(self) -> dict[str, np.ndarray]:  # type: ignore[override]
        merged = {f"fw.{k}": v for k, v in self.fw.params.items()}
        merged.update({f"bw.{k}": v for k, v in self.bw.params.items()})
        return merged

    @params.setter
    def params(self, value: dict[str, np.ndarray]) -> None:
        if value:
            raise AttributeError("BiLSTM parameters live in its directional LSTMs")

    @property
    def grads(self) -> dict[str, np.ndarray]:  # type: ignore[override]
        merged = {f"fw.{k}": v for k, v in self.fw.grads.items()}
        merged.update({f"bw.{k}": v for k, v in self.bw.grads.items()})
        return merged

    @grads.setter
    def grads(self, value: dict[str, np.ndarray]) -> None:
        self.fw.grads = {k[3:]: v for k, v in value.items() if k.startswith("fw.")}
        self.bw.grads = {k[3:]: v for k, v in value.items() if k.startswith("bw.")}

    @property
    def out_dim(self) -> int:
        return 2 * self.fw.hidden

    def forward(self, x: np.ndarray, lengths: np.ndarray | None = None) -> np.ndarray:
        x, squeeze = _as_batch(x)
        forward_out = self.fw.forward(x)
        backward_out = reverse_within_lengths(self.bw.forward(reverse_within_lengths(x, lengths)), lengths)
        self._cache = (lengths, squeeze)
        return _unbatch(np.concatenate([forward_out, backward_out], axis=2), squeeze)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        lengths, squeeze = self._cache
        dy, _ = _as_batch(dy)
        h = self.fw.hidden
        dx = self.fw.backward(dy[:, :, :h])
        dx = dx + reverse_within_lengths(self.bw.backward(reverse_within_lengths(dy[:, :, h:], lengths)), lengths)
        return _unbatch(dx, squeeze)


class Dense(Layer):
    def __init__(self, w: np.ndarray, b: np.ndarray) -> None:
        super().__init__()
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ShapeMismatch(f"dense weights {w.shape} and bias {b.shape} do not conform")
        self.params["w"] = w
        self.params["b"] = b
        self._x: np.ndarray | None = None

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, dtype: Any = np.float64) -> "Dense":
        return cls(uniform(rng, (d_in, d_out), 0.05, dtype), np.zeros(d_out, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.params["w"].shape[0]:
            raise ShapeMismatch(f"input dim {x.shape[-1]} does not match dense input {self.params['w'].shape[0]}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        d_in = x.shape[-1]
        self.grads["w"] = x.reshape(-1, d_in).T @ dy.reshape(-1, dy.shape[-1])
        self.grads["b"] = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return dy @ self.params["w"].T


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def masked_softmax_ce(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over unmasked positions and its gradient w.r.t. ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask)
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ShapeMismatch(
            f"logits {logits.shape}, targets {targets.shape} and mask {mask.shape} disagree"
        )
    classes = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise IdOutOfRange(f"targets must lie in [0, {classes})", expected=f"[0, {classes})")
    weights = mask.astype(np.float64)
    denom = weights.sum()
    if denom == 0:
        raise AllMasked()

    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    nll = -np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
    loss = float(np.sum(weights * nll, dtype=np.float64) / denom)

    grad = np.exp(log_probs)
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
    grad *= (weights / denom)[..., None].astype(grad.dtype)
    return loss, grad


@dataclass
class RmspropState:
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: RmspropState) -> None:
    """s <- rho*s + (1-rho)*g^2; p <- p - lr*g/(sqrt(s)+eps), in place."""
    for name, value in params.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {grad.shape}, parameter has {value.shape}")
        square = state.accumulators.get(name)
        if square is None:
            square = np.zeros_like(value)
            state.accumulators[name] = square
        square *= state.rho
        square += (1.0 - state.rho) * grad * grad
        value -= state.learning_rate * grad / (np.sqrt(square) + state.epsilon)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for grad in grads.values():
            grad *= scale
    return norm


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def grad_check(
    layer: Layer,
    x: np.ndarray,
    *,
    eps: float = 1e-5,
    seed: int = 0,
    check_input: bool = True,
    **forward_kwargs: Any,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar objective is ``sum(forward(x) * r)`` for a fixed random ``r``.
    """
    rng = np.random.default_rng(seed)
    out = layer.forward(x, **forward_kwargs)
    upstream = rng.standard_normal(out.shape)
    dx = layer.backward(upstream)
    analytic = {name: grad.copy() for name, grad in layer.grads.items()}

    def objective(inputs: np.ndarray) -> float:
        return float(np.sum(layer.forward(inputs, **forward_kwargs) * upstream))

    worst = 0.0

    def perturb(array: np.ndarray, expected: np.ndarray, evaluate: Callable[[], float]) -> None:
        nonlocal worst
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + eps
            plus = evaluate()
            array[index] = original - eps
            minus = evaluate()
            array[index] = original
            worst = max(worst, relative_error(float(expected[index]), (plus - minus) / (2 * eps)))

    for name, value in layer.params.items():
        perturb(value, analytic[name], lambda: objective(x))

    if check_input and dx is not None and np.issubdtype(np.asarray(x).dtype, np.floating):
        x_copy = np.array(x, copy=True)
        perturb(x_copy, dx, lambda: objective(x_copy))
    return worst
