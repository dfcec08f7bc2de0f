"""Encoder-decoder segmentation network with per-depth side-output heads.

A plain U-Net-style backbone: each encoder level is two 3x3 conv+relu
blocks followed by a 2x2 max-pool (none at the bottleneck); each decoder
level upsamples by 2, concatenates the same-resolution encoder skip, and
applies two 3x3 conv+relu blocks. Every decoder depth i carries a head
convolution to one channel; projecting, upsampling by 2^(i-1), and
applying a sigmoid yields the side output at full input resolution. The
depth-1 head doubles as the final prediction head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 3
    base_channels: int = 8
    in_channels: int = 1
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        stride = 2 ** (self.depth - 1)
        if self.height % stride or self.width % stride:
            raise ValueError(
                f"input {self.height}x{self.width} not divisible by 2^(depth-1) = {stride}"
            )

    def channels(self, level):
        """Feature channels at encoder/decoder level (1 = shallowest)."""
        return self.base_channels * 2 ** (level - 1)


class SegNetwork:
    """Segmentation network; parameters are autodiff tensors in a fixed order."""

    def __init__(self, config: NetworkConfig, seed=0, dtype=np.float64,
                 trainable=True):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.trainable = trainable
        self._params = {}  # name -> Tensor, insertion order is the declared order
        rng = np.random.default_rng(seed)
        d = config.depth

        def conv_param(name, c_in, c_out):
            scale = np.sqrt(2.0 / (c_in * 9))
            w = rng.normal(0.0, scale, size=(c_out, c_in, 3, 3))
            self._params[f"{name}.w"] = Tensor(w.astype(self.dtype), requires_grad=trainable)
            self._params[f"{name}.b"] = Tensor(
                np.zeros(c_out, dtype=self.dtype), requires_grad=trainable)

        for k in range(1, d + 1):
            c_in = config.in_channels if k == 1 else config.channels(k - 1)
            c_out = config.channels(k)
            conv_param(f"enc{k}.conv1", c_in, c_out)
            conv_param(f"enc{k}.conv2", c_out, c_out)
        for k in range(d - 1, 0, -1):
            c_in = config.channels(k + 1) + config.channels(k)
            c_out = config.channels(k)
            conv_param(f"dec{k}.conv1", c_in, c_out)
            conv_param(f"dec{k}.conv2", c_out, c_out)
        for k in range(1, d + 1):
            conv_param(f"head{k}", config.channels(k), 1)

    # ---- parameter access ----

    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        return dict(self._params)

    def state_arrays(self):
        """Parameter values by name, copied out of the graph."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_arrays(self, arrays):
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"parameter {name}: stored shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()
            p.grad = None

    # ---- forward ----

    def _block(self, x, name):
        x = T.relu(T.conv2d(x, self._params[f"{name}.conv1.w"], self._params[f"{name}.conv1.b"]))
        x = T.relu(T.conv2d(x, self._params[f"{name}.conv2.w"], self._params[f"{name}.conv2.b"]))
        return x

    def forward(self, x):
        """Run the network; returns (prediction [1,H,W], decoder features).

        decoder_features[i-1] is the depth-i map, index 0 at full
        resolution, the last entry being the bottleneck output.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        cfg = self.config
        expected = (cfg.in_channels, cfg.height, cfg.width)
        if x.data.shape != expected:
            raise ShapeError(f"forward: input shape {x.data.shape} != {expected}")

        d = cfg.depth
        skips = []
        h = x
        for k in range(1, d + 1):
            h = self._block(h, f"enc{k}")
            skips.append(h)
            if k < d:
                h = T.maxpool2x2(h)

        features = [None] * d
        features[d - 1] = skips[d - 1]  # bottleneck
        h = skips[d - 1]
        for k in range(d - 1, 0, -1):
            up = T.bilinear_upsample(h, 2)
            h = self._block(T.concat([up, skips[k - 1]], axis=0), f"dec{k}")
            features[k - 1] = h

        prediction = self.side_output(features[0], 1)
        return prediction, features

    def side_output(self, feature, depth):
        """Project a depth-i decoder map to a full-resolution probability map."""
        d = self.config.depth
        if not 1 <= depth <= d:
            raise ValueError(f"side_output: depth {depth} outside 1..{d}")
        h = T.conv2d(feature, self._params[f"head{depth}.w"], self._params[f"head{depth}.b"])
        h = T.bilinear_upsample(h, 2 ** (depth - 1))
        return T.sigmoid(h)

    def side_outputs(self, features):
        """All side outputs, shallowest first."""
        return [self.side_output(f, i + 1) for i, f in enumerate(features)]

    # ---- snapshots ----

    def snapshot(self, epoch=0):
        return TeacherSnapshot(self.config, self.state_arrays(), epoch, str(self.dtype))


class TeacherSnapshot:
    """Immutable copy of all network parameters frozen at an epoch boundary."""

    def __init__(self, config, arrays, epoch, dtype="float64"):
        self.config = config
        self._arrays = {k: np.array(v, copy=True) for k, v in arrays.items()}
        self.epoch = int(epoch)
        self.dtype = dtype

    def arrays(self):
        return {k: v.copy() for k, v in self._arrays.items()}

    def restore(self, trainable=False):
        """Rebuild a network with these exact parameter values.

        The default is a frozen (gradient-free) teacher; pass
        trainable=True to resume training from the stored weights.
        """
        net = SegNetwork(self.config, seed=0, dtype=np.dtype(self.dtype),
                         trainable=trainable)
        net.load_state_arrays(self._arrays)
        return net


# ---- checkpoint I/O ----

def save_checkpoint(path, net, epoch, rng_state=None, extras=None):
    """Write a lossless .npz checkpoint: config, parameters, epoch, RNG state.

    extras: optional dict of additional arrays (e.g. optimizer moments,
    teacher parameters), stored under an "extra:" prefix.
    """
    payload = {f"param:{k}": v for k, v in net.state_arrays().items()}
    meta = {
        "config": asdict(net.config),
        "dtype": str(net.dtype),
        "epoch": int(epoch),
        "rng_state": rng_state,
        "param_order": list(net.named_parameters().keys()),
    }
    payload["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    if extras:
        for k, v in extras.items():
            payload[f"extra:{k}"] = np.asarray(v)
    np.savez(path, **payload)


class Checkpoint:
    def __init__(self, config, params, epoch, rng_state, dtype, extras):
        self.config = config
        self.params = params
        self.epoch = epoch
        self.rng_state = rng_state
        self.dtype = dtype
        self.extras = extras

    def to_network(self, trainable=True):
        net = SegNetwork(self.config, seed=0, dtype=np.dtype(self.dtype),
                         trainable=trainable)
        net.load_state_arrays(self.params)
        return net


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        params = {k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")}
        extras = {k[len("extra:"):]: z[k] for k in z.files if k.startswith("extra:")}
    config = NetworkConfig(**meta["config"])
    return Checkpoint(config, params, meta["epoch"], meta["rng_state"],
                      meta["dtype"], extras)
