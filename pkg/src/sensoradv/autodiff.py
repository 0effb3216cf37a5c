"""Small dense-tensor engine: conv, ReLU, 2x2 max-pool, dense, dropout and
softmax cross-entropy, each with a hand-written backward pass.

Feature maps are ``N x H x W x C`` float64 arrays; flat activations are
``N x D``. A :class:`Network` is a plain layer stack. Every layer caches
what its backward pass needs during ``forward``, so one network instance
must not run two passes concurrently.
"""

import numpy as np

from .errors import ShapeError

_DEBUG = False


def set_debug(enabled=True):
    """Toggle NaN/Inf checks after every layer."""
    global _DEBUG
    _DEBUG = bool(enabled)


def _check_finite(arr, where):
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values after {where}")


# ---------------------------------------------------------------- conv2d


def _padding(k, padding):
    if padding == "valid":
        return 0, 0
    if padding == "same":
        return (k - 1) // 2, k - 1 - (k - 1) // 2
    raise ValueError(f"unknown padding {padding!r}")


def _conv_geometry(x_shape, kernels_shape, stride, padding):
    if len(x_shape) != 4:
        raise ShapeError(f"conv2d expects N x H x W x C input, got {x_shape}")
    if len(kernels_shape) != 4 or kernels_shape[0] != kernels_shape[1]:
        raise ShapeError(f"kernels must be k x k x Cin x Cout, got {kernels_shape}")
    k, _, cin, _ = kernels_shape
    if x_shape[3] != cin:
        raise ShapeError(f"input has {x_shape[3]} channels, kernels expect {cin}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    lo, hi = _padding(k, padding)
    hp, wp = x_shape[1] + lo + hi, x_shape[2] + lo + hi
    if hp < k or wp < k:
        raise ShapeError(f"spatial dims {x_shape[1:3]} smaller than kernel {k}")
    return k, lo, hi, (hp - k) // stride + 1, (wp - k) // stride + 1


def _im2col(xp, k, stride, ho, wo):
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(n * ho * wo, k * k * c)


def conv2d(x, kernels, bias, stride=1, padding="valid"):
    """2-D cross-correlation.

    ``out[n, h, w, co] = sum(kernels[..., co] * window(n, h, w)) + bias[co]``
    with output size ``floor((H - k) / stride) + 1`` for valid padding.
    """
    out, _ = _conv2d_forward(x, kernels, bias, stride, padding)
    return out


def _conv2d_forward(x, kernels, bias, stride, padding):
    k, lo, hi, ho, wo = _conv_geometry(x.shape, kernels.shape, stride, padding)
    cout = kernels.shape[3]
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0))) if lo or hi else x
    cols = _im2col(xp, k, stride, ho, wo)
    out = cols @ kernels.reshape(-1, cout) + bias
    return out.reshape(x.shape[0], ho, wo, cout), (xp, cols, lo, ho, wo)


def conv2d_backward(dout, x, kernels, stride=1, padding="valid"):
    """Gradients of a conv2d output w.r.t. (input, kernels, bias)."""
    k, lo, hi, ho, wo = _conv_geometry(x.shape, kernels.shape, stride, padding)
    xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0))) if lo or hi else x
    return _conv2d_backward(dout, xp, None, x.shape, kernels, stride, lo, ho, wo)


def _conv2d_backward(dout, xp, cols, x_shape, kernels, stride, lo, ho, wo):
    k, _, _, cout = kernels.shape
    d2 = dout.reshape(-1, cout)
    if cols is None:
        cols = _im2col(xp, k, stride, ho, wo)
    dk = (cols.T @ d2).reshape(kernels.shape)
    db = d2.sum(axis=0)
    del cols
    return _input_grad(d2, kernels, xp.shape, x_shape, stride, lo, ho, wo), dk, db


def _input_grad(d2, kernels, xp_shape, x_shape, stride, lo, ho, wo):
    """Scatter ``d2 @ W^T`` back onto the (unpadded) input; the batch size
    comes from ``d2``."""
    k, _, cin, cout = kernels.shape
    n = d2.shape[0] // (ho * wo)
    dcols = (d2 @ kernels.reshape(-1, cout).T).reshape(n, ho, wo, k, k, cin)
    dxp = np.zeros((n,) + tuple(xp_shape[1:]))
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    return np.ascontiguousarray(dxp[:, lo:lo + x_shape[1], lo:lo + x_shape[2], :])


# ------------------------------------------------------------ elementwise


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    # subgradient at exactly 0 is 0
    return dout * (x > 0)


# ---------------------------------------------------------------- pooling


def _pool_windows(x):
    if x.ndim != 4:
        raise ShapeError(f"maxpool2x2 expects N x H x W x C input, got {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    # window positions in row-major order: (0,0), (0,1), (1,0), (1,1)
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    return win.reshape(n, h // 2, w // 2, c, 4)


def maxpool2x2(x):
    return _pool_windows(x).max(axis=-1)


def maxpool2x2_argmax(x):
    """Index (0..3, row-major) of the routed element in each window; first wins on ties."""
    return _pool_windows(x).argmax(axis=-1)


def maxpool2x2_backward(dout, argmax):
    n, h2, w2, c = dout.shape
    win = np.zeros((n, h2, w2, c, 4))
    np.put_along_axis(win, argmax[..., None], dout[..., None], axis=-1)
    win = win.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return win.reshape(n, 2 * h2, 2 * w2, c)


# ------------------------------------------------------------------ dense


def dense(x, weights, bias):
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: cannot multiply {x.shape} by {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias


def dense_backward(dout, x, weights):
    return dout @ weights.T, x.T @ dout, dout.sum(axis=0)


# ---------------------------------------------------------------- dropout


def dropout_mask(shape, rate, rng):
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, mode="eval", rng=None):
    if mode == "eval" or rate == 0.0:
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        return x
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    return x * dropout_mask(x.shape, rate, rng)


# ---------------------------------------------------------------- softmax


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean categorical cross-entropy.

    Returns ``(loss, probs, dlogits)`` where ``dlogits = (probs - onehot) / N``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} logit rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_norm[:, None]
    probs = np.exp(log_p)
    rows = np.arange(n)
    loss = float(-log_p[rows, labels].mean())
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    return loss, probs, dlogits / n


# ----------------------------------------------------------------- layers


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}

    def output_shape(self, input_shape):
        return input_shape

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout, param_grads=True):
        """Gradient w.r.t. the layer input. ``dout`` may carry B rows against a
        single-sample forward pass; the cached activations then broadcast."""
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind}


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, kernel_size, in_channels, out_channels, stride=1, padding="same"):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.params = {
            "W": np.zeros((kernel_size, kernel_size, in_channels, out_channels)),
            "b": np.zeros(out_channels),
        }

    @property
    def in_channels(self):
        return self.params["W"].shape[2]

    @property
    def out_channels(self):
        return self.params["W"].shape[3]

    def output_shape(self, input_shape):
        h, w, _ = input_shape
        _, _, _, ho, wo = _conv_geometry((1, h, w, self.in_channels), self.params["W"].shape,
                                         self.stride, self.padding)
        return (ho, wo, self.out_channels)

    # im2col buffers above this size are rebuilt in backward instead of kept
    cache_limit_bytes = 256 * 2**20

    def forward(self, x, train=False, rng=None):
        out, (xp, cols, lo, ho, wo) = _conv2d_forward(x, self.params["W"], self.params["b"],
                                                      self.stride, self.padding)
        if cols.nbytes > self.cache_limit_bytes:
            cols = None
        self._cache = (xp, cols, x.shape, lo, ho, wo)
        return out

    def backward(self, dout, param_grads=True):
        xp, cols, x_shape, lo, ho, wo = self._cache
        if param_grads:
            if dout.shape[0] != x_shape[0]:
                raise ShapeError("parameter gradients need a matching forward batch")
            dx, dk, db = _conv2d_backward(dout, xp, cols, x_shape, self.params["W"], self.stride, lo, ho, wo)
            self.grads = {"W": dk, "b": db}
            return dx
        cout = self.params["W"].shape[3]
        return _input_grad(dout.reshape(-1, cout), self.params["W"], xp.shape, x_shape, self.stride, lo, ho, wo)

    def describe(self):
        return {"kind": self.kind, "kernel": self.kernel_size, "in": self.in_channels,
                "out": self.out_channels, "stride": self.stride, "padding": self.padding}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._x = x
        return relu(x)

    def backward(self, dout, param_grads=True):
        return relu_backward(dout, self._x)

    def pattern(self):
        return self._x > 0


class MaxPool2x2(Layer):
    kind = "maxpool"

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x, train=False, rng=None):
        win = _pool_windows(x)
        self._argmax = win.argmax(axis=-1)
        return np.take_along_axis(win, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dout, param_grads=True):
        return maxpool2x2_backward(dout, np.broadcast_to(self._argmax, dout.shape))

    def pattern(self):
        return self._argmax


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, param_grads=True):
        return dout.reshape((dout.shape[0],) + self._shape[1:])


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features):
        super().__init__()
        self.params = {"W": np.zeros((in_features, out_features)), "b": np.zeros(out_features)}

    def output_shape(self, input_shape):
        if input_shape != (self.params["W"].shape[0],):
            raise ShapeError(f"dense expects ({self.params['W'].shape[0]},), got {input_shape}")
        return (self.params["W"].shape[1],)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return dense(x, self.params["W"], self.params["b"])

    def backward(self, dout, param_grads=True):
        if not param_grads:
            return dout @ self.params["W"].T
        dx, dw, db = dense_backward(dout, self._x, self.params["W"])
        self.grads = {"W": dw, "b": db}
        return dx

    def describe(self):
        w = self.params["W"]
        return {"kind": self.kind, "in": w.shape[0], "out": w.shape[1]}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        self._mask = dropout_mask(x.shape, self.rate, rng)
        return x * self._mask

    def backward(self, dout, param_grads=True):
        return dout if self._mask is None else dout * self._mask

    def describe(self):
        return {"kind": self.kind, "rate": self.rate}


class Network:
    """Sequential layer stack ending in raw logits (softmax lives in the loss)."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise ShapeError(f"network must end flat, ends with {shape}")
        self.output_size = shape[0]

    # -- parameters

    def named_parameters(self):
        return [(f"{i}.{name}", arr) for i, layer in enumerate(self.layers)
                for name, arr in layer.params.items()]

    def parameters(self):
        return [arr for _, arr in self.named_parameters()]

    def gradients(self):
        return [layer.grads[name] for layer in self.layers for name in layer.params]

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    # -- passes

    def _as_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] == self.input_shape:
            return x
        if len(self.input_shape) == 3 and self.input_shape[2] == 1 and x.shape[1:] == self.input_shape[:2]:
            return x[..., None]
        raise ShapeError(f"expected input of shape (N, {self.input_shape}), got {x.shape}")

    def forward(self, x, train=False, rng=None):
        out = self._as_input(x)
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng)
            _check_finite(out, layer.kind)
        return out

    def backward(self, dlogits, param_grads=True):
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad, param_grads=param_grads)
            _check_finite(grad, layer.kind + " backward")
        return grad

    def loss_and_gradients(self, x, labels, train=False, rng=None):
        """One forward/backward pass; parameter grads land in ``layer.grads``.

        Returns ``(loss, probs, dx)`` with ``dx`` shaped like ``x``.
        """
        x = np.asarray(x, dtype=np.float64)
        logits = self.forward(x, train=train, rng=rng)
        loss, probs, dlogits = softmax_xent(logits, labels)
        dx = self.backward(dlogits)
        return loss, probs, dx.reshape(x.shape)

    # -- attack protocol: logits and vector-Jacobian products w.r.t. input

    def logits(self, x):
        return self.forward(x, train=False)

    def logits_and_gradient(self, x, upstream):
        """Eval-mode logits of ``x`` and the gradient of ``sum(upstream * logits)``
        w.r.t. ``x``. With a single sample and ``B`` upstream rows, returns
        ``B`` vector-Jacobian products from one forward pass."""
        x = np.asarray(x, dtype=np.float64)
        upstream = np.asarray(upstream, dtype=np.float64)
        logits = self.forward(x, train=False)
        if upstream.shape[0] != x.shape[0] and x.shape[0] != 1:
            raise ShapeError(f"{upstream.shape[0]} upstream rows for a batch of {x.shape[0]}")
        grad = self.backward(upstream, param_grads=False)
        return logits, grad.reshape((upstream.shape[0],) + x.shape[1:])

    def input_gradient(self, x, upstream):
        """Gradient of ``sum(upstream * logits(x))`` w.r.t. ``x``."""
        return self.logits_and_gradient(x, upstream)[1]

    def activation_pattern(self):
        """ReLU masks and pool routes from the last forward pass."""
        return [layer.pattern() for layer in self.layers if hasattr(layer, "pattern")]

    def describe(self):
        return {"input_shape": list(self.input_shape), "layers": [l.describe() for l in self.layers]}


# ------------------------------------------------------------- grad check


def _relative_error(a, n, floor):
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(network, x, label, epsilon=1e-5, max_coords=None, rng=None,
               include_input=True, floor=1e-6, return_details=False):
    """Worst relative error between analytic and central-difference gradients.

    The loss is the mean softmax cross-entropy of ``network(x)`` against
    ``label``, with dropout off. With ``max_coords`` set, that many random
    coordinates are checked per parameter tensor (and for the input);
    otherwise every coordinate is. A coordinate whose +/- probes change any
    ReLU mask or pool route is retried with a 10x smaller step and skipped
    if it still straddles a kink. The error denominator is floored at
    ``floor``: central differences carry roughly 1e-11 of rounding noise,
    so gradients smaller than the floor are compared absolutely.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.array(x, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if x.shape[0] != labels.shape[0]:
        x = x[None]

    def loss_at():
        loss, _, _ = softmax_xent(network.forward(x, train=False), labels)
        return loss, network.activation_pattern()

    _, _, dx = network.loss_and_gradients(x, labels, train=False)
    targets = list(zip(network.parameters(), network.gradients()))
    targets = [(p, g.copy()) for p, g in targets]
    if include_input:
        targets.append((x, dx))
    _, base_pattern = loss_at()

    worst, checked, skipped = 0.0, 0, 0
    for arr, analytic in targets:
        if not arr.flags.c_contiguous:
            raise ValueError("grad_check perturbs arrays in place; they must be C-contiguous")
        flat = arr.reshape(-1)
        if max_coords is None or max_coords >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for idx in coords:
            original = flat[idx]
            numeric = None
            step = epsilon
            for _ in range(3):
                flat[idx] = original + step
                plus, pat_p = loss_at()
                flat[idx] = original - step
                minus, pat_m = loss_at()
                flat[idx] = original
                if all(np.array_equal(a, b) and np.array_equal(a, c)
                       for a, b, c in zip(base_pattern, pat_p, pat_m)):
                    numeric = (plus - minus) / (2 * step)
                    break
                step /= 10
            if numeric is None:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, _relative_error(analytic.reshape(-1)[idx], numeric, floor))
    if return_details:
        return worst, {"checked": checked, "skipped": skipped}
    return worst
