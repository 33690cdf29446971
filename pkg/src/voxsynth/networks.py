"""Network definitions for the shape, texture and recognition models.

Networks are built from JSON-serializable layer lists (dense, conv2d,
conv3d, upsample, reshape, concat-latent, activation) so the same machinery
drives generators, critics, patch discriminators and encoders.  There are
no normalization layers anywhere; weights start from N(0, 0.02), biases
from zero.  All tensors are batched: (B, features) or (B, C, *spatial).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad

INIT_STD = 0.02
LOGVAR_CLAMP = 10.0
MASK_GATE = 1e-6

ACTIVATIONS = {
    "relu": ad.relu,
    "leaky_relu": lambda x: ad.leaky_relu(x, 0.2),
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
}


@dataclass
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    factor: int = 2
    shape: list = field(default_factory=list)
    latent_dim: int = 0
    activation: str = ""


@dataclass
class NetworkSpec:
    name: str
    layers: list

    def to_json(self):
        return json.dumps(
            {"name": self.name, "layers": [asdict(l) for l in self.layers]},
            indent=1,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(obj["name"], [LayerSpec(**l) for l in obj["layers"]])


def dense(n_in, n_out):
    return LayerSpec("dense", in_features=n_in, out_features=n_out)


def conv2d(c_in, c_out, kernel=3, stride=1, pad=1):
    return LayerSpec("conv2d", in_channels=c_in, out_channels=c_out, kernel=kernel,
                     stride=stride, pad=pad)


def conv3d(c_in, c_out, kernel=3, stride=1, pad=1):
    return LayerSpec("conv3d", in_channels=c_in, out_channels=c_out, kernel=kernel,
                     stride=stride, pad=pad)


def upsample(factor=2):
    return LayerSpec("upsample", factor=factor)


def reshape(*shape):
    return LayerSpec("reshape", shape=list(shape))


def concat_latent(dim):
    return LayerSpec("concat_latent", latent_dim=dim)


def act(name):
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}")
    return LayerSpec("activation", activation=name)


class Network:
    """Parameters plus a forward pass over a NetworkSpec."""

    def __init__(self, spec: NetworkSpec, rng, tape=None):
        self.spec = spec
        self.params = []
        for i, layer in enumerate(spec.layers):
            if layer.kind == "dense":
                self._add(f"{spec.name}.{i}.w", rng.normal(0.0, INIT_STD,
                          (layer.in_features, layer.out_features)), tape)
                self._add(f"{spec.name}.{i}.b", np.zeros(layer.out_features), tape)
            elif layer.kind in ("conv2d", "conv3d"):
                nd = 2 if layer.kind == "conv2d" else 3
                kshape = (layer.out_channels, layer.in_channels) + (layer.kernel,) * nd
                self._add(f"{spec.name}.{i}.w", rng.normal(0.0, INIT_STD, kshape), tape)
                self._add(f"{spec.name}.{i}.b", np.zeros(layer.out_channels), tape)

    def _add(self, name, data, tape):
        p = tape.parameter(name, data) if tape is not None else ad.Parameter(name, data)
        self.params.append(p)

    def _param(self, layer_idx, which):
        name = f"{self.spec.name}.{layer_idx}.{which}"
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def forward(self, x: ad.Tensor, latent: ad.Tensor | None = None) -> ad.Tensor:
        for i, layer in enumerate(self.spec.layers):
            if layer.kind == "dense":
                w = self._param(i, "w").tensor
                b = self._param(i, "b").tensor
                x = ad.matmul(x, w) + ad.broadcast(
                    b.reshape(1, layer.out_features), (x.shape[0], layer.out_features)
                )
            elif layer.kind in ("conv2d", "conv3d"):
                w = self._param(i, "w").tensor
                b = self._param(i, "b").tensor
                conv = ad.conv2d if layer.kind == "conv2d" else ad.conv3d
                x = conv(x, w, stride=layer.stride, pad=layer.pad)
                ones = (1,) * (len(x.shape) - 2)
                x = x + ad.broadcast(b.reshape((1, layer.out_channels) + ones), x.shape)
            elif layer.kind == "upsample":
                x = ad.upsample_nearest(x, layer.factor)
            elif layer.kind == "reshape":
                x = x.reshape((x.shape[0],) + tuple(layer.shape))
            elif layer.kind == "concat_latent":
                if latent is None:
                    raise ValueError(f"network {self.spec.name!r} needs a latent code")
                spatial = x.shape[2:]
                z = latent.reshape((latent.shape[0], layer.latent_dim) + (1,) * len(spatial))
                z = ad.broadcast(z, (latent.shape[0], layer.latent_dim) + spatial)
                x = ad.concat([x, z], axis=1)
            elif layer.kind == "activation":
                x = ACTIVATIONS[layer.activation](x)
            else:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
        return x

    __call__ = forward


def mean_pool2d(x: ad.Tensor) -> ad.Tensor:
    """2x2 average pooling built from reshape + mean."""
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axes=(3, 5))


# ---------------------------------------------------------------------------
# pipeline networks

def shape_generator_spec(z_dim, w, channels=(16, 8), mode="voxels"):
    """Dense stem, then two upsample+conv3d stages up to side w."""
    base = w // 4
    c0, c1 = channels
    final = "sigmoid" if mode == "voxels" else "softplus"
    return NetworkSpec(
        "shape_gen",
        [
            dense(z_dim, c0 * base**3),
            act("relu"),
            reshape(c0, base, base, base),
            upsample(),
            conv3d(c0, c1),
            act("relu"),
            upsample(),
            conv3d(c1, 1),
            act(final),
        ],
    )


def shape_critic_spec(w, channels=(8, 16)):
    c1, c2 = channels
    flat = c2 * (w // 4) ** 3
    return NetworkSpec(
        "shape_critic",
        [
            conv3d(1, c1, stride=2),
            act("leaky_relu"),
            conv3d(c1, c2, stride=2),
            act("leaky_relu"),
            reshape(flat),
            dense(flat, 1),
        ],
    )


def texture_decoder_spec(z_dim, channels=8):
    c = channels
    return NetworkSpec(
        "texture_gen",
        [
            conv2d(1, c, stride=2),
            act("leaky_relu"),
            conv2d(c, 2 * c, stride=2),
            act("leaky_relu"),
            concat_latent(z_dim),
            conv2d(2 * c + z_dim, 2 * c),
            act("relu"),
            upsample(),
            conv2d(2 * c, c),
            act("relu"),
            upsample(),
            conv2d(c, 3),
            act("sigmoid"),
        ],
    )


def texture_encoder_spec(z_dim, image_hw, channels=8):
    c = channels
    flat = 2 * c * (image_hw // 4) ** 2
    return NetworkSpec(
        "texture_enc",
        [
            conv2d(3, c, stride=2),
            act("leaky_relu"),
            conv2d(c, 2 * c, stride=2),
            act("leaky_relu"),
            reshape(flat),
            dense(flat, 2 * z_dim),
        ],
    )


def depth_predictor_spec(channels=8):
    c = channels
    return NetworkSpec(
        "sketch_enc",
        [
            conv2d(3, c, stride=2),
            act("leaky_relu"),
            conv2d(c, 2 * c, stride=2),
            act("leaky_relu"),
            upsample(),
            conv2d(2 * c, c),
            act("relu"),
            upsample(),
            conv2d(c, 1),
            act("sigmoid"),
        ],
    )


def patch_critic_spec(name, in_channels, channels=8):
    c = channels
    return NetworkSpec(
        name,
        [
            conv2d(in_channels, c, stride=2),
            act("leaky_relu"),
            conv2d(c, 2 * c, stride=2),
            act("leaky_relu"),
            conv2d(2 * c, 1),
        ],
    )


def mlp_spec(name, dims, hidden_act="relu"):
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(dense(a, b))
        if i < len(dims) - 2:
            layers.append(act(hidden_act))
    return NetworkSpec(name, layers)


class TextureGenerator:
    """Masked compositing around the decoder: white background stays exact.

    Takes a normalized sketch (B, 2, H, W) with channel 0 = depth scaled to
    [0, 1] (background 0) and channel 1 = silhouette; pixels whose
    silhouette is below the gate threshold come out exactly 1.
    """

    def __init__(self, decoder: Network):
        self.decoder = decoder
        self.params = decoder.params

    def __call__(self, sketch: ad.Tensor, code: ad.Tensor) -> ad.Tensor:
        b, _, h, w = sketch.shape
        depth = ad.narrow(sketch, 1, 0, 1)
        mask = ad.narrow(sketch, 1, 1, 1)
        gate = ad.constant((mask.data >= MASK_GATE).astype(np.float64))
        gated = mask * gate
        m3 = ad.broadcast(gated, (b, 3, h, w))
        raw = self.decoder(depth, code)
        return m3 * raw + (-m3 + 1.0)


class TextureEncoder:
    """Image -> Gaussian code (mean, clamped log-variance)."""

    def __init__(self, net: Network, z_dim):
        self.net = net
        self.z_dim = z_dim
        self.params = net.params

    def __call__(self, image: ad.Tensor):
        out = self.net(image)
        mu = ad.narrow(out, 1, 0, self.z_dim)
        logvar = ad.clip(ad.narrow(out, 1, self.z_dim, self.z_dim), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar


class SketchEncoder:
    """Image + ground-truth mask -> estimated sketch (depth masked, mask kept)."""

    def __init__(self, net: Network):
        self.net = net
        self.params = net.params

    def predict_depth(self, image: ad.Tensor) -> ad.Tensor:
        return self.net(image)

    def __call__(self, image: ad.Tensor, mask_gt: ad.Tensor) -> ad.Tensor:
        if mask_gt is None:
            raise ValueError("sketch encoding requires the ground-truth object mask")
        depth = self.predict_depth(image) * mask_gt
        return ad.concat([depth, mask_gt], axis=1)


class PatchCritic:
    """Two-scale patch scorer: full resolution and a 2x mean-pooled copy."""

    def __init__(self, net_full: Network, net_half: Network):
        self.net_full = net_full
        self.net_half = net_half
        self.params = net_full.params + net_half.params

    def __call__(self, x: ad.Tensor):
        return [self.net_full(x), self.net_half(mean_pool2d(x))]


def reparameterize(mu: ad.Tensor, logvar: ad.Tensor, rng) -> ad.Tensor:
    """mu + sigma * eps with eps ~ N(0, I) drawn from ``rng``."""
    eps = ad.constant(rng.standard_normal(mu.shape))
    return mu + ad.exp(logvar * 0.5) * eps


def normalize_depth(sketch_raw: ad.Tensor, near, far) -> ad.Tensor:
    """(B, 2, H, W) raw [depth_m, sil] -> [depth scaled to [0,1], sil].

    The far plane maps to 0 so background pixels are exactly zero.
    """
    b, _, h, w = sketch_raw.shape
    depth = ad.narrow(sketch_raw, 1, 0, 1)
    sil = ad.narrow(sketch_raw, 1, 1, 1)
    scaled = (depth * -1.0 + far) * (1.0 / (far - near))
    return ad.concat([scaled, sil], axis=1)
