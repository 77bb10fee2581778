"""Dense tensor layers with explicit forward/backward passes.

Conventions:
  * Activations are numpy arrays, row-major, channel-fastest: a feature map is
    (H, W, C), a batch is (N, H, W, C). Vectors are (D,) or (N, D).
  * Layers run in the dtype of their parameters. float32 is the training and
    inference dtype; float64 exists for gradient checking only.
  * backward() accumulates into the gradient buffers (so a batch can be pushed
    sample by sample or at once) and returns the gradient w.r.t. the input.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass
class LayerParams:
    """Learnable arrays of one layer plus their gradient buffers."""

    weights: np.ndarray
    biases: np.ndarray
    weight_grads: np.ndarray
    bias_grads: np.ndarray

    def zero_grads(self) -> None:
        self.weight_grads[...] = 0
        self.bias_grads[...] = 0


def _as_batch(x: np.ndarray, rank: int):
    """Promote a single sample to a batch of one. Returns (batch, was_single)."""
    if x.ndim == rank:
        return x[None, ...], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got rank {x.ndim}")


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1. Output spatial dims match input."""

    kind = "conv3x3"

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if in_channels < 1 or out_channels < 1:
            raise ShapeError("channel counts must be positive, got "
                             f"{in_channels} -> {out_channels}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        shape = (3, 3, in_channels, out_channels)
        if rng is None:
            weights = np.zeros(shape, dtype=dtype)
        else:
            # He initialization: fan-in of a 3x3 kernel is 9 * in_channels.
            std = np.sqrt(2.0 / (9.0 * in_channels))
            weights = (rng.standard_normal(shape) * std).astype(dtype)
        self.params = LayerParams(
            weights=weights,
            biases=np.zeros(out_channels, dtype=dtype),
            weight_grads=np.zeros(shape, dtype=dtype),
            bias_grads=np.zeros(out_channels, dtype=dtype),
        )
        self._cols = None
        self._single = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, single = _as_batch(x, 3)
        n, h, w, cin = x.shape
        if cin != self.in_channels:
            raise ShapeError(f"conv3x3 built for {self.in_channels} input channels, "
                             f"input has {cin}")
        dtype = self.params.weights.dtype
        xp = np.zeros((n, h + 2, w + 2, cin), dtype=dtype)
        xp[:, 1:-1, 1:-1, :] = x
        # im2col: gather the 9 taps so the convolution becomes one matmul.
        cols = np.empty((n, h, w, 9 * cin), dtype=dtype)
        for k in range(9):
            ki, kj = divmod(k, 3)
            cols[..., k * cin:(k + 1) * cin] = xp[:, ki:ki + h, kj:kj + w, :]
        wmat = self.params.weights.reshape(9 * cin, self.out_channels)
        out = cols.reshape(n * h * w, 9 * cin) @ wmat
        out += self.params.biases
        out = out.reshape(n, h, w, self.out_channels)
        self._cols = cols
        self._single = single
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_out, _ = _as_batch(grad_out, 3)
        cols = self._cols
        if cols is None:
            raise ShapeError("backward called before forward")
        n, h, w, _ = cols.shape
        cin, cout = self.in_channels, self.out_channels
        gmat = grad_out.reshape(n * h * w, cout)
        colmat = cols.reshape(n * h * w, 9 * cin)
        self.params.weight_grads += (colmat.T @ gmat).reshape(3, 3, cin, cout)
        self.params.bias_grads += gmat.sum(axis=0)
        dcols = (gmat @ self.params.weights.reshape(9 * cin, cout).T)
        dcols = dcols.reshape(n, h, w, 9 * cin)
        dxp = np.zeros((n, h + 2, w + 2, cin), dtype=cols.dtype)
        for k in range(9):
            ki, kj = divmod(k, 3)
            dxp[:, ki:ki + h, kj:kj + w, :] += dcols[..., k * cin:(k + 1) * cin]
        dx = dxp[:, 1:-1, 1:-1, :]
        return dx[0] if self._single else dx


class MaxPool2x2:
    """2x2 max pooling with stride 2. A trailing odd row/column is dropped.

    Within a window the first maximum in row-major order wins, and the
    backward pass routes the incoming gradient only to that element.
    """

    kind = "maxpool2x2"
    params = None

    def __init__(self):
        self._arg = None
        self._in_shape = None
        self._single = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, single = _as_batch(x, 3)
        n, h, w, c = x.shape
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool2x2 needs at least 2x2 input, got {h}x{w}")
        h2, w2 = h // 2, w // 2
        x2 = x[:, :h2 * 2, :w2 * 2, :]
        cands = np.stack([x2[:, di::2, dj::2, :] for di, dj in _POOL_OFFSETS],
                         axis=-1)
        arg = cands.argmax(axis=-1)  # argmax returns the first maximum
        out = np.take_along_axis(cands, arg[..., None], axis=-1)[..., 0]
        self._arg = arg
        self._in_shape = x.shape
        self._single = single
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_out, _ = _as_batch(grad_out, 3)
        if self._arg is None:
            raise ShapeError("backward called before forward")
        dx = np.zeros(self._in_shape, dtype=grad_out.dtype)
        for k, (di, dj) in enumerate(_POOL_OFFSETS):
            h2, w2 = self._arg.shape[1], self._arg.shape[2]
            dx[:, di:di + 2 * h2:2, dj:dj + 2 * w2:2, :] += grad_out * (self._arg == k)
        return dx[0] if self._single else dx


class ReLU:
    kind = "relu"
    params = None

    def __init__(self):
        self._mask = None
        self._single = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        # Gradient at exactly zero is defined as zero, hence strict inequality.
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise ShapeError("backward called before forward")
        return grad_out * self._mask


class Flatten:
    """Row-major, channel-fastest flattening of a feature map to a vector."""

    kind = "flatten"
    params = None

    def __init__(self):
        self._in_shape = None
        self._single = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, single = _as_batch(x, 3)
        self._in_shape = x.shape
        self._single = single
        out = x.reshape(x.shape[0], -1)
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_out, _ = _as_batch(grad_out, 1)
        dx = grad_out.reshape(self._in_shape)
        return dx[0] if self._single else dx


class Dense:
    """Fully connected layer: out = weights^T @ input + biases."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"dense dims must be positive, got {in_dim} -> {out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            weights = np.zeros((in_dim, out_dim), dtype=dtype)
        else:
            std = np.sqrt(2.0 / in_dim)
            weights = (rng.standard_normal((in_dim, out_dim)) * std).astype(dtype)
        self.params = LayerParams(
            weights=weights,
            biases=np.zeros(out_dim, dtype=dtype),
            weight_grads=np.zeros((in_dim, out_dim), dtype=dtype),
            bias_grads=np.zeros(out_dim, dtype=dtype),
        )
        self._x = None
        self._single = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, single = _as_batch(x, 1)
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"dense built for input length {self.in_dim}, "
                             f"input has length {x.shape[1]}")
        self._x = x
        self._single = single
        out = x @ self.params.weights + self.params.biases
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_out, _ = _as_batch(grad_out, 1)
        if self._x is None:
            raise ShapeError("backward called before forward")
        self.params.weight_grads += self._x.T @ grad_out
        self.params.bias_grads += grad_out.sum(axis=0)
        dx = grad_out @ self.params.weights.T
        return dx[0] if self._single else dx
