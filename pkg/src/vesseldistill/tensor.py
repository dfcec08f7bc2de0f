"""Dense tensors with reverse-mode automatic differentiation.

The primitive set is deliberately small: exactly the operations the
segmentation network and its losses need (element-wise arithmetic, relu,
sigmoid, log, clamp, reductions, 2x2 max-pool, 3x3 same-padding
convolution, bilinear upsampling, temperature softmax, concat/reshape).
Gradients are computed by replaying closures over a topologically sorted
computation graph, numpy arrays underneath.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised on invalid backward calls (non-scalar loss, leaf tensor)."""


class Tensor:
    """A dense real array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        """A view of the same values with no graph history."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- backward ----

    def backward(self):
        """Populate .grad on every tensor reachable from this scalar loss.

        Grads are zeroed across the graph first, so repeated backward
        calls after the same forward pass are idempotent.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        if not self._prev:
            raise GraphError("backward called on a tensor with no recorded forward pass")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))

        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ---- operator sugar ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b):
    """Coerce a Tensor/scalar operand pair without upcasting float32 data."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    return _as_tensor(a), _as_tensor(b)


def _accumulate(t, g):
    if not t.requires_grad and not t._prev:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        # scalar operand paired with an array one
        g = g.sum().reshape(t.data.shape)
    t.grad = g if t.grad is None else t.grad + g


def _make(data, prev, backward):
    out = Tensor(data)
    tracked = tuple(p for p in prev if p.requires_grad or p._prev)
    if tracked:
        out.requires_grad = True
        out._prev = tracked
        out._backward = backward
    return out


def _check_elementwise(a, b, op):
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(
            f"{op}: operand shapes {a.data.shape} and {b.data.shape} do not match"
        )


# ---- element-wise arithmetic ----

def add(a, b):
    a, b = _pair(a, b)
    _check_elementwise(a, b, "add")
    out_holder = []

    def backward():
        g = out_holder[0].grad
        _accumulate(a, g)
        _accumulate(b, g)

    out = _make(a.data + b.data, (a, b), backward)
    out_holder.append(out)
    return out


def sub(a, b):
    a, b = _pair(a, b)
    _check_elementwise(a, b, "sub")
    out_holder = []

    def backward():
        g = out_holder[0].grad
        _accumulate(a, g)
        _accumulate(b, -g)

    out = _make(a.data - b.data, (a, b), backward)
    out_holder.append(out)
    return out


def mul(a, b):
    a, b = _pair(a, b)
    _check_elementwise(a, b, "mul")
    out_holder = []

    def backward():
        g = out_holder[0].grad
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out = _make(a.data * b.data, (a, b), backward)
    out_holder.append(out)
    return out


def div(a, b):
    a, b = _pair(a, b)
    _check_elementwise(a, b, "div")
    out_holder = []

    def backward():
        g = out_holder[0].grad
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    out = _make(a.data / b.data, (a, b), backward)
    out_holder.append(out)
    return out


# ---- element-wise nonlinearities ----

def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    out_holder = []

    def backward():
        _accumulate(x, out_holder[0].grad * mask)

    out = _make(np.where(mask, x.data, 0.0), (x,), backward)
    out_holder.append(out)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    # split by sign to avoid overflow in exp
    pos = x.data >= 0
    s = np.empty_like(x.data)
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    s[~pos] = ex / (1.0 + ex)
    out_holder = []

    def backward():
        _accumulate(x, out_holder[0].grad * s * (1.0 - s))

    out = _make(s, (x,), backward)
    out_holder.append(out)
    return out


def log(x):
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log: input must be strictly positive (clamp first)")
    out_holder = []

    def backward():
        _accumulate(x, out_holder[0].grad / x.data)

    out = _make(np.log(x.data), (x,), backward)
    out_holder.append(out)
    return out


def clamp(x, lo, hi):
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    out_holder = []

    def backward():
        _accumulate(x, out_holder[0].grad * inside)

    out = _make(np.clip(x.data, lo, hi), (x,), backward)
    out_holder.append(out)
    return out


# ---- reductions / reshaping ----

def tsum(x, axis=None):
    x = _as_tensor(x)
    out_holder = []

    def backward():
        g = out_holder[0].grad
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.data.shape))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape))

    out = _make(x.data.sum(axis=axis), (x,), backward)
    out_holder.append(out)
    return out


def tmean(x):
    x = _as_tensor(x)
    n = x.data.size
    out_holder = []

    def backward():
        _accumulate(x, np.broadcast_to(out_holder[0].grad / n, x.data.shape))

    out = _make(x.data.mean(), (x,), backward)
    out_holder.append(out)
    return out


def reshape(x, shape):
    x = _as_tensor(x)
    out_holder = []

    def backward():
        _accumulate(x, out_holder[0].grad.reshape(x.data.shape))

    out = _make(x.data.reshape(shape), (x,), backward)
    out_holder.append(out)
    return out


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out_holder = []

    def backward():
        pieces = np.split(out_holder[0].grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            _accumulate(t, g)

    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)
    out_holder.append(out)
    return out


# ---- structured primitives ----

def maxpool2x2(x):
    """2x2 max-pool, stride 2, over a [C,H,W] tensor with even H and W."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2x2: expected [C,H,W], got {x.data.shape}")
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial dims must be even, got {h}x{w}")
    windows = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    windows = windows.reshape(c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)
    pooled = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out_holder = []

    def backward():
        g = out_holder[0].grad
        gw = np.zeros((c, h // 2, w // 2, 4), dtype=x.data.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        _accumulate(x, gx)

    out = _make(pooled.copy(), (x,), backward)
    out_holder.append(out)
    return out


def _im2col3(arr):
    """[C,H,W] -> [C*9, H*W] of 3x3 neighborhoods under zero padding 1."""
    c, h, w = arr.shape
    padded = np.pad(arr, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 9, h, w), dtype=arr.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, k] = padded[:, di:di + h, dj:dj + w]
            k += 1
    return cols.reshape(c * 9, h * w)


def _col2im3(cols, c, h, w):
    """Adjoint of _im2col3: scatter-add columns back onto the input grid."""
    padded = np.zeros((c, h + 2, w + 2), dtype=cols.dtype)
    cols = cols.reshape(c, 9, h, w)
    k = 0
    for di in range(3):
        for dj in range(3):
            padded[:, di:di + h, dj:dj + w] += cols[:, k]
            k += 1
    return padded[:, 1:1 + h, 1:1 + w]


def conv2d(x, kernel, bias):
    """Same-size 3x3 cross-correlation with zero padding 1.

    x: [C_in,H,W], kernel: [C_out,C_in,3,3], bias: [C_out].
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d: expected input [C,H,W], got {x.data.shape}")
    if kernel.data.ndim != 4 or kernel.data.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: expected kernel [C_out,C_in,3,3], got {kernel.data.shape}")
    c_in, h, w = x.data.shape
    c_out = kernel.data.shape[0]
    if kernel.data.shape[1] != c_in:
        raise ShapeError(
            f"conv2d: kernel expects {kernel.data.shape[1]} input channels, input has {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({c_out},)")

    cols = _im2col3(x.data)
    kmat = kernel.data.reshape(c_out, c_in * 9)
    y = (kmat @ cols).reshape(c_out, h, w) + bias.data[:, None, None]
    out_holder = []

    def backward():
        g = out_holder[0].grad
        gflat = g.reshape(c_out, h * w)
        _accumulate(kernel, (gflat @ cols.T).reshape(kernel.data.shape))
        _accumulate(bias, g.sum(axis=(1, 2)))
        _accumulate(x, _col2im3(kmat.T @ gflat, c_in, h, w))

    out = _make(y, (x, kernel, bias), backward)
    out_holder.append(out)
    return out


def _interp_matrix(n_in, factor, dtype):
    """Dense 1-D bilinear interpolation matrix, half-pixel centers, edge clamp."""
    n_out = n_in * factor
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    mat = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - w1)
    np.add.at(mat, (rows, i1), w1)
    return mat


def bilinear_upsample(x, factor):
    """Upsample a [C,h,w] tensor by an integer factor (1 = identity)."""
    x = _as_tensor(x)
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"bilinear_upsample: factor must be a positive integer, got {factor}")
    if x.data.ndim != 3:
        raise ShapeError(f"bilinear_upsample: expected [C,h,w], got {x.data.shape}")
    if factor == 1:
        return reshape(x, x.data.shape)
    _, h, w = x.data.shape
    wh = _interp_matrix(h, factor, x.data.dtype)
    ww = _interp_matrix(w, factor, x.data.dtype)
    y = np.einsum("oi,cij,pj->cop", wh, x.data, ww, optimize=True)
    out_holder = []

    def backward():
        g = out_holder[0].grad
        _accumulate(x, np.einsum("oi,cop,pj->cij", wh, g, ww, optimize=True))

    out = _make(y, (x,), backward)
    out_holder.append(out)
    return out


def softmax(logits, tau=1.0):
    """Temperature softmax over a 1-D logit vector, max-subtracted for stability."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"softmax: expected a 1-D vector, got {logits.data.shape}")
    if tau <= 0:
        raise ValueError(f"softmax: temperature must be positive, got {tau}")
    z = logits.data / tau
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    # floor underflowed entries so the output is strictly positive
    p = np.maximum(p, np.finfo(p.dtype).tiny)
    p = p / p.sum()
    out_holder = []

    def backward():
        g = out_holder[0].grad
        _accumulate(logits, (p * (g - np.dot(g, p))) / tau)

    out = _make(p, (logits,), backward)
    out_holder.append(out)
    return out


# ---- gradient checking ----

def gradcheck(fn, inputs, h=1e-4, rtol=1e-3, atol=1e-5, max_per_input=None, seed=0):
    """Compare analytic gradients of a scalar-valued fn against central differences.

    inputs: tensors passed positionally to fn; only those with
    requires_grad are perturbed. max_per_input limits how many
    coordinates of each input are probed (chosen deterministically from
    seed); None probes all of them. Returns (ok, worst_abs_error).
    """
    for t in inputs:
        t.grad = None  # inputs unreachable from the loss keep stale grads otherwise
    loss = fn(*inputs)
    loss.backward()
    analytic = [
        (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        if t.requires_grad else None
        for t in inputs
    ]
    rng = np.random.default_rng(seed)

    ok = True
    worst = 0.0
    for t, g in zip(inputs, analytic):
        if g is None:
            continue
        gflat = g.reshape(-1)
        flat = t.data.reshape(-1)
        if max_per_input is not None and flat.size > max_per_input:
            coords = rng.choice(flat.size, size=max_per_input, replace=False)
        else:
            coords = range(flat.size)
        f0 = None
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*inputs).data)
            flat[i] = orig - h
            fm = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            err = abs(gflat[i] - numeric)
            if err <= atol + rtol * abs(numeric):
                worst = max(worst, err)
                continue
            # central difference straddling a relu kink is not a valid
            # derivative estimate; if the one-sided slopes disagree the
            # point is non-smooth, and the analytic gradient need only
            # match one side (looser tolerance: one-sided error is O(h))
            if f0 is None:
                f0 = float(fn(*inputs).data)
            s_plus = (fp - f0) / h
            s_minus = (f0 - fm) / h
            kink = abs(s_plus - s_minus) > atol + rtol * (abs(s_plus) + abs(s_minus))
            one_sided = min(abs(gflat[i] - s_plus), abs(gflat[i] - s_minus))
            if kink and one_sided <= 10 * (atol + rtol * abs(gflat[i])):
                worst = max(worst, one_sided)
                continue
            worst = max(worst, err)
            ok = False
    return ok, worst
