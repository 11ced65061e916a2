"""Desk-scale conv nets with handwritten reverse-mode gradients.

TinyNet is a skip-connected encoder-decoder that maps an image to a
single-channel map (restoration-style training); TinyRegressor shares the
encoder and reads out two command values through a flattened linear head.
The fixed architectures keep backprop small enough to verify against finite
differences, with no autodiff dependency.

Arrays are (B, C, H, W).  Compute runs in float64; parameters live in the
net's dtype (float32 by default, float64 for gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class TinyNetConfig:
    input_channels: int = 1
    base_width: int = 8
    depth: int = 2
    leaky_slope: float = 0.1

    def __post_init__(self):
        if self.input_channels not in (1, 3):
            raise ValueError(f"input_channels must be 1 or 3, got {self.input_channels}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be >= 1, got {self.base_width}")
        if self.depth not in (1, 2, 3):
            raise ValueError(f"depth must be in {{1, 2, 3}}, got {self.depth}")


class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1 (shape preserving)."""

    def __init__(self, c_in, c_out, rng, dtype, zero_init=False):
        self.c_in, self.c_out = c_in, c_out
        if zero_init:
            self.w = np.zeros((c_out, c_in, 3, 3), dtype=dtype)
        else:
            std = np.sqrt(2.0 / (c_in * 9))
            self.w = (rng.standard_normal((c_out, c_in, 3, 3)) * std).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w, dtype=np.float64)
        self.db = np.zeros_like(self.b, dtype=np.float64)
        self._cols = None
        self._in_shape = None

    def forward(self, x):
        b, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # B,C,H,W,3,3
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * 9, h * w)
        self._cols = cols
        self._in_shape = x.shape
        w2d = self.w.astype(np.float64).reshape(self.c_out, c * 9)
        out = np.matmul(w2d, cols).reshape(b, self.c_out, h, w)
        return out + self.b.astype(np.float64)[None, :, None, None]

    def backward(self, dy):
        b, _, h, w = self._in_shape
        c = self.c_in
        dy2 = dy.reshape(dy.shape[0], self.c_out, h * w)
        self.dw += np.matmul(dy2, self._cols.transpose(0, 2, 1)).sum(0).reshape(self.w.shape)
        self.db += dy.sum(axis=(0, 2, 3))
        w2d = self.w.astype(np.float64).reshape(self.c_out, c * 9)
        dcols = np.matmul(w2d.T, dy2).reshape(b, c, 3, 3, h, w)
        dxp = np.zeros((b, c, h + 2, w + 2), dtype=np.float64)
        for ky in range(3):
            for kx in range(3):
                dxp[:, :, ky : ky + h, kx : kx + w] += dcols[:, :, ky, kx]
        return dxp[:, :, 1 : 1 + h, 1 : 1 + w]

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [self.dw, self.db]


class Linear:
    def __init__(self, n_in, n_out, rng, dtype, zero_init=False):
        if zero_init:
            self.w = np.zeros((n_out, n_in), dtype=dtype)
        else:
            std = np.sqrt(2.0 / n_in)
            self.w = (rng.standard_normal((n_out, n_in)) * std).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dw = np.zeros_like(self.w, dtype=np.float64)
        self.db = np.zeros_like(self.b, dtype=np.float64)
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.w.astype(np.float64).T + self.b.astype(np.float64)

    def backward(self, dy):
        self.dw += dy.T @ self._x
        self.db += dy.sum(0)
        return dy @ self.w.astype(np.float64)

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [self.dw, self.db]


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def _avgpool2(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avgpool2_grad(dy):
    return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample2_grad(dy):
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class TinyNet:
    """Encoder-decoder restoration net with one full-resolution skip.

    conv_in at full resolution feeds both the encoder and a skip that is
    concatenated with the decoder output before the head conv.  The head is
    zero-initialized so a fresh net predicts the all-zero map.
    """

    def __init__(self, cfg: TinyNetConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        w = cfg.base_width
        self.conv_in = Conv3x3(cfg.input_channels, w, rng, dtype)
        self.enc = [
            Conv3x3(w * 2**i, w * 2 ** (i + 1), rng, dtype) for i in range(cfg.depth)
        ]
        self.dec = [
            Conv3x3(w * 2 ** (i + 1), w * 2**i, rng, dtype)
            for i in reversed(range(cfg.depth))
        ]
        self.head = Conv3x3(2 * w, 1, rng, dtype, zero_init=True)
        self._layers = [self.conv_in, *self.enc, *self.dec, self.head]
        self._cache = None

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels:
            raise ValueError(
                f"expected (B, {self.cfg.input_channels}, H, W) input, got {x.shape}"
            )
        div = 2**self.cfg.depth
        if x.shape[2] % div or x.shape[3] % div:
            raise ValueError(
                f"H and W must be divisible by {div}, got {x.shape[2]}x{x.shape[3]}"
            )

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._check_input(x)
        slope = self.cfg.leaky_slope
        x = np.asarray(x, dtype=np.float64)
        pre_acts = []

        z = self.conv_in.forward(x)
        pre_acts.append(z)
        skip = _leaky(z, slope)

        a = skip
        for conv in self.enc:
            z = conv.forward(_avgpool2(a))
            pre_acts.append(z)
            a = _leaky(z, slope)
        for conv in self.dec:
            z = conv.forward(_upsample2(a))
            pre_acts.append(z)
            a = _leaky(z, slope)

        merged = np.concatenate([a, skip], axis=1)
        out = self.head.forward(merged)
        self._cache = pre_acts
        return out

    def backward(self, dout: np.ndarray) -> None:
        """Accumulate parameter gradients for the last forward pass."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        slope = self.cfg.leaky_slope
        pre_acts = self._cache
        w = self.cfg.base_width

        dmerged = self.head.backward(np.asarray(dout, dtype=np.float64))
        da, dskip = dmerged[:, :w], dmerged[:, w:]

        k = len(pre_acts) - 1
        for conv in reversed(self.dec):
            dz = da * _leaky_grad(pre_acts[k], slope)
            da = _upsample2_grad(conv.backward(dz))
            k -= 1
        for conv in reversed(self.enc):
            dz = da * _leaky_grad(pre_acts[k], slope)
            da = _avgpool2_grad(conv.backward(dz))
            k -= 1

        # da now sits at full resolution, joining the skip branch
        dz_in = (da + dskip) * _leaky_grad(pre_acts[0], slope)
        self.conv_in.backward(dz_in)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order (checkpoint order)."""
        return [p for layer in self._layers for _, p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self._layers for g in layer.grads()]

    def zero_grads(self) -> None:
        for g in self.grads():
            g[...] = 0.0

    def set_params(self, arrays) -> None:
        own = self.params()
        if len(own) != len(arrays):
            raise ValueError(f"expected {len(own)} parameter arrays, got {len(arrays)}")
        for p, a in zip(own, arrays):
            if p.shape != a.shape:
                raise ValueError(f"parameter shape mismatch: {p.shape} vs {a.shape}")
            p[...] = np.asarray(a, dtype=p.dtype)


class TinyRegressor:
    """TinyNet's encoder with a flattened linear readout of 2 commands."""

    def __init__(
        self, cfg: TinyNetConfig, geometry: tuple[int, int], seed: int = 0, dtype=np.float32
    ):
        self.cfg = cfg
        self.geometry = geometry
        self.dtype = np.dtype(dtype)
        h, w = geometry
        div = 2**cfg.depth
        if h % div or w % div:
            raise ValueError(f"geometry {geometry} not divisible by {div}")
        rng = np.random.default_rng(seed)
        bw = cfg.base_width
        self.conv_in = Conv3x3(cfg.input_channels, bw, rng, dtype)
        self.enc = [
            Conv3x3(bw * 2**i, bw * 2 ** (i + 1), rng, dtype) for i in range(cfg.depth)
        ]
        feat = bw * 2**cfg.depth * (h // div) * (w // div)
        self.fc = Linear(feat, 2, rng, dtype, zero_init=True)
        self._layers = [self.conv_in, *self.enc, self.fc]
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels or x.shape[2:] != self.geometry:
            raise ValueError(
                f"expected (B, {self.cfg.input_channels}, {self.geometry[0]}, "
                f"{self.geometry[1]}) input, got {x.shape}"
            )
        slope = self.cfg.leaky_slope
        x = np.asarray(x, dtype=np.float64)
        pre_acts = []
        z = self.conv_in.forward(x)
        pre_acts.append(z)
        a = _leaky(z, slope)
        for conv in self.enc:
            z = conv.forward(_avgpool2(a))
            pre_acts.append(z)
            a = _leaky(z, slope)
        self._feat_shape = a.shape
        self._cache = pre_acts
        return self.fc.forward(a.reshape(a.shape[0], -1))

    def backward(self, dout: np.ndarray) -> None:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        slope = self.cfg.leaky_slope
        pre_acts = self._cache
        da = self.fc.backward(np.asarray(dout, dtype=np.float64)).reshape(self._feat_shape)
        k = len(pre_acts) - 1
        for conv in reversed(self.enc):
            dz = da * _leaky_grad(pre_acts[k], slope)
            da = _avgpool2_grad(conv.backward(dz))
            k -= 1
        dz = da * _leaky_grad(pre_acts[0], slope)
        self.conv_in.backward(dz)

    def params(self) -> list[np.ndarray]:
        return [p for layer in self._layers for _, p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self._layers for g in layer.grads()]

    def zero_grads(self) -> None:
        for g in self.grads():
            g[...] = 0.0
