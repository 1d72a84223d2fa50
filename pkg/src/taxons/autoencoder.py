"""Convolutional autoencoder over rendered observations.

The encoder halves the spatial size with strided 4x4 convolutions until it
reaches 4x4 at 64 channels (1024 values), then applies fully connected layers
of sizes [1024, 256, latent]. The decoder mirrors it: fully connected layers
[256, 512], a reshape to 32x4x4, then transposed convolutions that double the
spatial size back up. All activations are selu except the final decoder layer,
which is relu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import LayerSpec, Network


def encoder_conv_channels(n_convs: int) -> list[int]:
    if n_convs < 2:
        raise ValueError("need at least two convolution stages")
    return [32] + [128] * (n_convs - 2) + [64]


def decoder_conv_channels(n_convs: int) -> list[int]:
    return [64] + [32] * (n_convs - 2) + [3]


def _n_conv_stages(image_size: int) -> int:
    n = 0
    size = image_size
    while size > 4:
        if size % 2:
            raise ValueError(f"observation size {image_size} is not 4*2^n")
        size //= 2
        n += 1
    if n < 2:
        raise ValueError(f"observation size {image_size} is too small for the conv stack")
    return n


def autoencoder_specs(image_size: int, latent_dim: int = 10):
    """Returns (layer spec list, index of the latent layer boundary)."""
    n = _n_conv_stages(image_size)
    specs = []
    in_ch = 3
    for ch in encoder_conv_channels(n):
        specs.append(LayerSpec("conv", "selu", in_channels=in_ch, out_channels=ch,
                               kernel=4, stride=2, padding=1))
        in_ch = ch
    specs.append(LayerSpec("flatten"))
    for width in (1024, 256, latent_dim):
        specs.append(LayerSpec("dense", "selu", in_dim=_dense_in(specs, image_size),
                               out_dim=width))
    split = len(specs)
    specs.append(LayerSpec("dense", "selu", in_dim=latent_dim, out_dim=256))
    specs.append(LayerSpec("dense", "selu", in_dim=256, out_dim=512))
    specs.append(LayerSpec("reshape", shape=(32, 4, 4)))
    in_ch = 32
    channels = decoder_conv_channels(n)
    for i, ch in enumerate(channels):
        act = "relu" if i == len(channels) - 1 else "selu"
        specs.append(LayerSpec("tconv", act, in_channels=in_ch, out_channels=ch,
                               kernel=4, stride=2, padding=1))
        in_ch = ch
    return specs, split


def _dense_in(specs, image_size):
    shape = (3, image_size, image_size)
    for s in specs:
        shape = s.output_shape(shape)
    return shape[0]


@dataclass
class Autoencoder:
    """Encoder/decoder pair held as one layer stack split at the latent layer."""

    net: Network
    split: int
    image_size: int
    latent_dim: int

    def encode(self, x_chw: np.ndarray) -> np.ndarray:
        return self.net.forward(x_chw, stop=self.split)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.net.forward(z, start=self.split)

    def reconstruct(self, x_chw: np.ndarray) -> np.ndarray:
        return self.net.forward(x_chw)

    def reconstruction_error(self, x_chw: np.ndarray) -> float:
        """Mean squared residual between an input and its reconstruction."""
        return self.net.loss(x_chw, x_chw)


def build_autoencoder(image_size: int, latent_dim: int = 10,
                      rng: np.random.Generator | None = None) -> Autoencoder:
    rng = rng or np.random.default_rng(0)
    specs, split = autoencoder_specs(image_size, latent_dim)
    net = Network(specs, (3, image_size, image_size), rng=rng)
    # Mid-intensity bias on the relu output layer so no output pixel starts in
    # the dead zero-gradient region.
    net.layers[-1].bias[:] = 0.5
    return Autoencoder(net=net, split=split, image_size=image_size, latent_dim=latent_dim)


def save_checkpoint(ae: Autoencoder, path):
    nn.save_network(ae.net, path, meta={
        "latent_split": ae.split,
        "image_size": ae.image_size,
        "latent_dim": ae.latent_dim,
    })


def load_checkpoint(path) -> Autoencoder:
    net, meta = nn.load_network(path)
    return Autoencoder(net=net, split=int(meta["latent_split"]),
                       image_size=int(meta["image_size"]),
                       latent_dim=int(meta["latent_dim"]))


def observation_to_input(observation: np.ndarray) -> np.ndarray:
    """(H, W, 3) image in [0,1] -> (3, H, W) network input."""
    obs = np.asarray(observation, dtype=np.float64)
    if obs.ndim != 3 or obs.shape[2] != 3:
        raise nn.ShapeError(f"expected an (H, W, 3) observation, got {obs.shape}")
    return np.ascontiguousarray(obs.transpose(2, 0, 1))


def encode_observation(ae: Autoencoder, observation: np.ndarray) -> np.ndarray:
    """Outcome descriptor of one observation under the given encoder snapshot."""
    x = observation_to_input(observation)
    if x.shape != ae.net.input_shape:
        raise nn.ShapeError(
            f"observation shape {x.shape} does not match encoder input {ae.net.input_shape}")
    return ae.encode(x)
