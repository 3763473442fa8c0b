"""Network blocks: a small U-Net plus window attention and MLP blocks.

Every weight-bearing layer is either dense or Kronecker-factorized with the
same hypercomplex dimension n, so parameter budgets of the two builds can be
compared directly. Checkpoints are a manifest JSON next to one KTEN file per
parameter array.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .kten import read_kten, write_kten
from .layers import (DenseConv2d, KroneckerConv2d, KroneckerLinear,
                     layer_from_arrays)
from .rng import Rng
from .tensor import Tensor

MANIFEST_NAME = "manifest.json"
CHECKPOINT_FORMAT = 1

# Activation gain for the U-Net body. The conv weights are drawn uniform on
# +/- sqrt(1/fan_in), which shrinks activation variance by 6x per conv+ReLU
# (3x from the draw, 2x from the rectifier), so deep features would decay
# toward zero and starve the output head. Multiplying each rectified output
# by sqrt(6) restores unit variance without adding parameters, in the style
# of normalizer-free networks that use scaled activations instead of norm
# layers.
ACT_GAIN = float(np.sqrt(6.0))


@dataclass
class UNetConfig:
    channel_multiples: list[int] = field(default_factory=lambda: [1, 2])
    base_channels: int = 8
    layer_kind: str = "kronecker"
    n: int = 2
    in_channels: int = 2
    out_channels: int = 2

    def __post_init__(self):
        if not self.channel_multiples:
            raise ConfigError("channel_multiples must be non-empty")
        if any(int(m) != m or m < 1 for m in self.channel_multiples):
            raise ConfigError(f"bad channel_multiples {self.channel_multiples}")
        if self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.layer_kind not in ("dense", "kronecker"):
            raise ConfigError(f"layer_kind must be dense or kronecker, got {self.layer_kind!r}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.layer_kind == "dense" and self.n != 1:
            raise ConfigError("dense build takes n=1; n only shapes kronecker layers")

    @property
    def depth(self) -> int:
        return len(self.channel_multiples)

    def to_dict(self) -> dict:
        return {"channel_multiples": list(self.channel_multiples),
                "base_channels": self.base_channels,
                "layer_kind": self.layer_kind, "n": self.n,
                "in_channels": self.in_channels, "out_channels": self.out_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(**d)


@dataclass
class AttentionConfig:
    embed_dim: int
    heads: int
    window: int
    n: int = 1

    def __post_init__(self):
        if min(self.embed_dim, self.heads, self.window, self.n) < 1:
            raise ConfigError("attention config fields must be >= 1")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.embed_dim % self.n:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by n {self.n}")


class UNet:
    """Encoder-decoder with skip concatenation and a residual output head.

    Downsampling is a stride-2 conv, upsampling nearest-neighbor x2 followed
    by a conv; no normalization layers. The final 3x3 head starts zeroed, so
    with in_channels == out_channels a freshly built model is the identity,
    and training learns a correction on top of its input.
    """

    def __init__(self, cfg: UNetConfig, rng: Rng | None = None,
                 dtype=np.float32, _store: dict | None = None):
        if rng is None and _store is None:
            raise ConfigError("UNet needs an rng")
        self.cfg = cfg
        self.dtype = np.dtype(dtype) if _store is None else None
        self._layers: list[tuple[str, object]] = []
        self._fork = 0

        def conv(name, cin, cout, *, stride=1):
            if _store is not None:
                layer = _store[name]
            else:
                child = rng.fork(self._fork)
                self._fork += 1
                if cfg.layer_kind == "kronecker":
                    layer = KroneckerConv2d(cin, cout, 3, cfg.n, stride=stride,
                                            padding=1, rng=child, dtype=self.dtype)
                else:
                    layer = DenseConv2d(cin, cout, 3, stride=stride, padding=1,
                                        rng=child, dtype=self.dtype)
            self._layers.append((name, layer))
            return layer

        chans = [cfg.base_channels * m for m in cfg.channel_multiples]
        self._stem = (conv("stem.conv1", cfg.in_channels, chans[0]),
                      conv("stem.conv2", chans[0], chans[0]))
        self._downs = []
        for i in range(1, cfg.depth):
            self._downs.append((conv(f"down{i}.pool", chans[i - 1], chans[i], stride=2),
                                conv(f"down{i}.conv1", chans[i], chans[i]),
                                conv(f"down{i}.conv2", chans[i], chans[i])))
        self._ups = []
        for i in range(cfg.depth - 1, 0, -1):
            self._ups.append((conv(f"up{i}.up", chans[i], chans[i - 1]),
                              conv(f"up{i}.conv1", 2 * chans[i - 1], chans[i - 1]),
                              conv(f"up{i}.conv2", chans[i - 1], chans[i - 1])))
        self._head = conv("head", chans[0], cfg.out_channels)
        if _store is None:
            if isinstance(self._head, KroneckerConv2d):
                for t in self._head.kernels:
                    t.data[...] = 0.0
            else:
                self._head.weight.data[...] = 0.0
        if self.dtype is None:
            self.dtype = self._layers[0][1].dtype
        self.residual = cfg.in_channels == cfg.out_channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected [B, {self.cfg.in_channels}, H, W], got {x.shape}")
        step = 2 ** (self.cfg.depth - 1)
        if x.shape[2] % step or x.shape[3] % step:
            raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by {step}")
        act = lambda t: T.scale(T.relu(t), ACT_GAIN)
        c1, c2 = self._stem
        h = act(c2(act(c1(x))))
        skips = [h]
        for pool, d1, d2 in self._downs:
            h = act(pool(h))
            h = act(d2(act(d1(h))))
            skips.append(h)
        for (up, u1, u2), skip in zip(self._ups, reversed(skips[:-1])):
            h = act(up(T.upsample2x(h)))
            h = T.concat([skip, h], axis=1)
            h = act(u2(act(u1(h))))
        out = self._head(h)
        if self.residual:
            out = T.add(out, x)
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, layer in self._layers for p in layer.parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{lname}.{pname}", p) for lname, layer in self._layers
                for pname, p in layer.named_parameters()]

    def param_count(self) -> int:
        return sum(layer.param_count() for _, layer in self._layers)

    def save(self, path: str) -> None:
        os.makedirs(path, exist_ok=True)
        entries = []
        for idx, (name, layer) in enumerate(self._layers):
            entry = {"name": name, "manifest": layer.manifest(), "arrays": {}}
            for aname, arr in layer.arrays().items():
                fname = f"{idx:03d}_{aname}.kten"
                write_kten(os.path.join(path, fname), arr)
                entry["arrays"][aname] = fname
            entries.append(entry)
        manifest = {"format": CHECKPOINT_FORMAT, "model": "unet",
                    "config": self.cfg.to_dict(), "layers": entries}
        with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "UNet":
        with open(os.path.join(path, MANIFEST_NAME)) as fh:
            manifest = json.load(fh)
        if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("model") != "unet":
            raise ConfigError(f"not a recognizable checkpoint: {path}")
        store = {}
        for entry in manifest["layers"]:
            arrays = {aname: read_kten(os.path.join(path, fname))
                      for aname, fname in entry["arrays"].items()}
            store[entry["name"]] = layer_from_arrays(entry["manifest"], arrays)
        return cls(UNetConfig.from_dict(manifest["config"]), _store=store)


def build_unet(cfg: UNetConfig, rng: Rng, dtype=np.float32) -> UNet:
    return UNet(cfg, rng=rng, dtype=dtype)


class WindowAttention:
    """Non-shifted window self-attention with factorized projections.

    Input is [batch, tokens, embed] where tokens split into consecutive
    runs of window^2 (row-major windows). Q, K, V come from three
    independent KroneckerLinear projections, attention is scaled
    dot-product per head within each window, and the output projection is
    factorized as well.
    """

    def __init__(self, cfg: AttentionConfig, rng: Rng, dtype=np.float32):
        self.cfg = cfg
        self.wq, self.wk, self.wv, self.wo = (
            KroneckerLinear(cfg.embed_dim, cfg.embed_dim, cfg.n,
                            rng=rng.fork(tag), dtype=dtype)
            for tag in range(4))

    def _split_heads(self, t: Tensor, groups: int) -> Tensor:
        # [G*w2, E] -> [G*heads, w2, dh]
        cfg = self.cfg
        w2 = cfg.window * cfg.window
        dh = cfg.embed_dim // cfg.heads
        t = T.reshape(t, (groups, w2, cfg.heads, dh))
        t = T.transpose(t, (0, 2, 1, 3))
        return T.reshape(t, (groups * cfg.heads, w2, dh))

    def __call__(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.data.ndim != 3 or x.shape[2] != cfg.embed_dim:
            raise ShapeError(f"expected [batch, tokens, {cfg.embed_dim}], got {x.shape}")
        batch, tokens, embed = x.shape
        w2 = cfg.window * cfg.window
        if tokens % w2:
            raise ShapeError(f"{tokens} tokens do not tile into windows of {w2}")
        groups = batch * (tokens // w2)
        dh = embed // cfg.heads

        flat = T.reshape(x, (batch * tokens, embed))
        q = self._split_heads(self.wq(flat), groups)
        k = self._split_heads(self.wk(flat), groups)
        v = self._split_heads(self.wv(flat), groups)

        scores = T.scale(T.bmm(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        ctx = T.bmm(T.softmax(scores), v)

        ctx = T.reshape(ctx, (groups, cfg.heads, w2, dh))
        ctx = T.transpose(ctx, (0, 2, 1, 3))
        out = self.wo(T.reshape(ctx, (batch * tokens, embed)))
        return T.reshape(out, (batch, tokens, embed))

    def parameters(self) -> list[Tensor]:
        return [p for proj in (self.wq, self.wk, self.wv, self.wo)
                for p in proj.parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for label, proj in (("wq", self.wq), ("wk", self.wk),
                            ("wv", self.wv), ("wo", self.wo)):
            named += [(f"{label}.{pname}", p) for pname, p in proj.named_parameters()]
        return named

    def param_count(self) -> int:
        return sum(proj.param_count()
                   for proj in (self.wq, self.wk, self.wv, self.wo))


class PhmMlp:
    """Two factorized linear layers with a ReLU between, on [batch, features]."""

    def __init__(self, features: int, hidden: int, n: int, rng: Rng,
                 dtype=np.float32):
        self.fc1 = KroneckerLinear(features, hidden, n, rng=rng.fork(0), dtype=dtype)
        self.fc2 = KroneckerLinear(hidden, features, n, rng=rng.fork(1), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))

    def parameters(self) -> list[Tensor]:
        return self.fc1.parameters() + self.fc2.parameters()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return ([(f"fc1.{n}", p) for n, p in self.fc1.named_parameters()]
                + [(f"fc2.{n}", p) for n, p in self.fc2.named_parameters()])

    def param_count(self) -> int:
        return self.fc1.param_count() + self.fc2.param_count()
