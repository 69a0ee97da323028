"""A small convolutional net with hand-written reverse-mode differentiation.

The architecture is fixed-shape and per-pixel: stacked 3x3 same-padding
convolutions with ReLU, followed by a 1x1 convolution that emits one logit
vector per pixel. Everything is plain numpy in NHWC layout and double
precision by default; backward passes are written against the forward caches
rather than a tape, which is all a fixed layer stack needs.

Gradients flow to every parameter and to the input image, so the same
machinery serves training and input-gradient regularizers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError, TrainingDivergence

__all__ = ["Tensor", "GradBundle", "TinyNet", "sgd_step", "save_checkpoint", "load_checkpoint"]

# arrays are the only tensor type here; the alias marks intent in signatures
Tensor = np.ndarray


@dataclass
class GradBundle:
    """Backward-pass output: one array per parameter, plus the input gradient."""

    params: list[Tensor]
    wrt_input: Tensor


class _Conv:
    """Same-padding convolution, kernel size 1 or 3, NHWC."""

    def __init__(self, cin, cout, ksize, rng, dtype):
        if ksize not in (1, 3):
            raise InvalidInputError("kernel size must be 1 or 3")
        self.ksize = ksize
        self.cin = cin
        self.cout = cout
        fan_in = ksize * ksize * cin
        self.w = (rng.standard_normal((ksize, ksize, cin, cout)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.b = np.zeros(cout, dtype=dtype)

    @property
    def params(self):
        return [self.w, self.b]

    def _cols(self, x):
        # stack the k*k shifted views; order matches w.reshape(k*k*cin, cout)
        b, h, w, _ = x.shape
        k = self.ksize
        if k == 1:
            return x.reshape(b * h * w, self.cin)
        p = k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        views = [
            xp[:, di : di + h, dj : dj + w, :]
            for di in range(k)
            for dj in range(k)
        ]
        return np.concatenate(views, axis=-1).reshape(b * h * w, k * k * self.cin)

    def forward(self, x):
        b, h, w, cin = x.shape
        if cin != self.cin:
            raise InvalidInputError(f"expected {self.cin} input channels, got {cin}")
        cols = self._cols(x)
        out = cols @ self.w.reshape(-1, self.cout) + self.b
        return out.reshape(b, h, w, self.cout), (cols, x.shape)

    def backward(self, cache, dy):
        cols, xshape = cache
        b, h, w, _ = xshape
        k = self.ksize
        dy2 = dy.reshape(-1, self.cout)
        dw = (cols.T @ dy2).reshape(self.w.shape)
        db = dy2.sum(axis=0)
        dcols = dy2 @ self.w.reshape(-1, self.cout).T
        if k == 1:
            dx = dcols.reshape(xshape)
            return [dw, db], dx
        p = k // 2
        dcols = dcols.reshape(b, h, w, k * k, self.cin)
        dxp = np.zeros((b, h + 2 * p, w + 2 * p, self.cin), dtype=dcols.dtype)
        idx = 0
        for di in range(k):
            for dj in range(k):
                dxp[:, di : di + h, dj : dj + w, :] += dcols[:, :, :, idx, :]
                idx += 1
        return [dw, db], dxp[:, p : p + h, p : p + w, :]


class _ReLU:
    params: list = []

    def forward(self, x):
        mask = x > 0.0
        return x * mask, mask

    def backward(self, cache, dy):
        return [], dy * cache


class TinyNet:
    """Stacked 3x3 convs + ReLU with a 1x1 per-pixel classification head.

    Parameters are He fan-in initialized from the given seed; the seed is
    recorded for checkpoint manifests. Input is (batch, height, width,
    in_channels); output is a logit field (batch, height, width, n_classes).
    """

    def __init__(self, in_channels=1, hidden=(8, 16, 16), n_classes=2, seed=0, dtype=np.float64):
        if n_classes < 2:
            raise InvalidInputError("need at least two classes")
        if not hidden:
            raise InvalidInputError("need at least one hidden layer")
        self.in_channels = in_channels
        self.hidden = tuple(int(h) for h in hidden)
        self.n_classes = n_classes
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = []
        cin = in_channels
        for h in self.hidden:
            self.layers.append(_Conv(cin, h, 3, rng, self.dtype))
            self.layers.append(_ReLU())
            cin = h
        self.layers.append(_Conv(cin, n_classes, 1, rng, self.dtype))
        self._velocity = None

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4:
            raise InvalidInputError(
                f"expected input (batch, h, w, channels), got shape {x.shape}"
            )
        if x.shape[-1] != self.in_channels:
            raise InvalidInputError(
                f"expected {self.in_channels} channels, got {x.shape[-1]}"
            )
        return x

    def _forward_cached(self, x):
        x = self._check_input(x)
        caches = []
        out = x
        for layer in self.layers:
            out, cache = layer.forward(out)
            caches.append(cache)
        return out, caches

    def forward(self, x):
        """Logit field for a batch of images."""
        out, _ = self._forward_cached(x)
        return out

    def _backward_from(self, caches, upstream):
        grads = []
        dy = np.asarray(upstream, dtype=self.dtype)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            layer_grads, dy = layer.backward(cache, dy)
            grads = layer_grads + grads
        return GradBundle(params=grads, wrt_input=dy)

    def backward(self, x, upstream):
        """Gradients of sum(upstream * logits) w.r.t. all parameters and the input."""
        logits, caches = self._forward_cached(x)
        if np.asarray(upstream).shape != logits.shape:
            raise InvalidInputError(
                f"upstream shape {np.asarray(upstream).shape} does not match logits {logits.shape}"
            )
        return self._backward_from(caches, upstream)


def sgd_step(net, grads, lr, momentum=0.0):
    """One in-place SGD update: v <- momentum * v + g; p <- p - lr * v.

    Velocity buffers live on the net and start at zero. Raises
    TrainingDivergence if any gradient entry is non-finite, or if the update
    overflowed a parameter (the net is unusable either way).
    """
    params = net.params
    if len(grads.params) != len(params):
        raise InvalidInputError("gradient bundle does not match parameter list")
    for i, g in enumerate(grads.params):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in parameter {i}")
    if net._velocity is None:
        net._velocity = [np.zeros_like(p) for p in params]
    for p, v, g in zip(params, net._velocity, grads.params):
        v *= momentum
        v += g
        p -= lr * v
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p)):
            raise TrainingDivergence(f"parameter {i} overflowed after the update")
    return net


def save_checkpoint(net, path):
    """Write parameters as a flat little-endian float64 blob plus a JSON manifest.

    `path` gets the raw bytes; `path + '.json'` records the architecture, the
    init seed, and the shape of every parameter in file order.
    """
    flat = np.concatenate([p.reshape(-1) for p in net.params]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(flat.tobytes())
    manifest = {
        "format": "tinynet-checkpoint-v1",
        "dtype": "<f8",
        "seed": net.seed,
        "arch": {
            "in_channels": net.in_channels,
            "hidden": list(net.hidden),
            "n_classes": net.n_classes,
        },
        "params": [{"shape": list(p.shape)} for p in net.params],
    }
    with open(path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild a TinyNet from save_checkpoint output."""
    with open(path + ".json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "tinynet-checkpoint-v1":
        raise FormatError(0, "not a tinynet checkpoint manifest")
    arch = manifest["arch"]
    net = TinyNet(
        in_channels=arch["in_channels"],
        hidden=arch["hidden"],
        n_classes=arch["n_classes"],
        seed=manifest["seed"],
    )
    shapes = [tuple(entry["shape"]) for entry in manifest["params"]]
    own = [tuple(p.shape) for p in net.params]
    if shapes != own:
        raise FormatError(0, "manifest shapes do not match the declared architecture")
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    actual = os.path.getsize(path)
    if actual != expected:
        raise FormatError(
            min(actual, expected), f"checkpoint holds {actual} bytes, expected {expected}"
        )
    with open(path, "rb") as fh:
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    offset = 0
    for p in net.params:
        n = p.size
        p[...] = flat[offset : offset + n].reshape(p.shape)
        offset += n
    return net
