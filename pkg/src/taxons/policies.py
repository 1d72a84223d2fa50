"""Policy genomes, the sensor-to-action controller network, and the Gaussian
mutation operator used to generate each new population."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import nn

_fallback_ids = itertools.count(10_000_000)


@dataclass(frozen=True)
class ControllerSpec:
    """Fully connected tanh controller; the tanh output layer bounds every
    action component to [-1, 1]."""

    input_dim: int
    hidden: tuple[int, ...] = (16,)
    output_dim: int = 2

    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = (self.input_dim,) + self.hidden + (self.output_dim,)
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def parameter_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims())

    def network_specs(self) -> list[nn.LayerSpec]:
        return [nn.LayerSpec("dense", "tanh", in_dim=i, out_dim=o)
                for i, o in self.layer_dims()]


@dataclass
class Genome:
    """Flat parameter vector of one policy. Treated as immutable once built."""

    values: np.ndarray
    id: int
    parent_id: int | None = None
    generation: int = 0


def random_genome(spec: ControllerSpec, rng: np.random.Generator,
                  policy_id: int | None = None, generation: int = 0) -> Genome:
    """Fresh genome with every layer drawn N(0, 1) scaled by 1/sqrt(fan-in)."""
    chunks = []
    for fan_in, fan_out in spec.layer_dims():
        scale = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.normal(0.0, scale, size=fan_in * fan_out))
        chunks.append(rng.normal(0.0, scale, size=fan_out))
    values = np.concatenate(chunks)
    if policy_id is None:
        policy_id = next(_fallback_ids)
    return Genome(values=values, id=policy_id, parent_id=None, generation=generation)


def mutate(genome: Genome, p_d: float, sigma: float, rng: np.random.Generator,
           child_id: int | None = None, generation: int | None = None) -> Genome:
    """Child genome: each parameter independently gets N(0, sigma) noise added
    with probability p_d. Always produces a new policy with its own id."""
    if not 0.0 <= p_d <= 1.0:
        raise ValueError(f"mutation probability must be in [0, 1], got {p_d}")
    if sigma < 0.0:
        raise ValueError(f"mutation std-dev must be non-negative, got {sigma}")
    n = genome.values.size
    noise = rng.normal(0.0, sigma, size=n)
    mask = rng.random(n) < p_d
    values = genome.values + np.where(mask, noise, 0.0)
    if child_id is None:
        child_id = next(_fallback_ids)
    if generation is None:
        generation = genome.generation + 1
    return Genome(values=values, id=child_id, parent_id=genome.id,
                  generation=generation)


class Controller:
    """Callable view of a genome: slices the flat vector into per-layer weight
    matrices once, then runs plain tanh dense passes."""

    def __init__(self, spec: ControllerSpec, genome: Genome):
        if genome.values.size != spec.parameter_count:
            raise ValueError(
                f"genome length {genome.values.size} does not match controller "
                f"parameter count {spec.parameter_count}")
        self.spec = spec
        self.layers = []
        pos = 0
        for fan_in, fan_out in spec.layer_dims():
            w = genome.values[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = genome.values[pos:pos + fan_out]
            pos += fan_out
            self.layers.append((w, b))

    def act(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=np.float64)
        if x.shape != (self.spec.input_dim,):
            raise ValueError(
                f"controller expects {self.spec.input_dim} inputs, got shape {x.shape}")
        for w, b in self.layers:
            x = np.tanh(x @ w + b)
        return x


def act(spec: ControllerSpec, genome: Genome, inputs) -> np.ndarray:
    return Controller(spec, genome).act(inputs)


def controller_network(spec: ControllerSpec, genome: Genome) -> nn.Network:
    """The same controller expressed as an nn.Network (reference path)."""
    net = nn.Network(spec.network_specs(), (spec.input_dim,), rng=None)
    pos = 0
    for layer in net.layers:
        w_size = layer.weight.size
        layer.weight[:] = genome.values[pos:pos + w_size].reshape(layer.weight.shape)
        pos += w_size
        layer.bias[:] = genome.values[pos:pos + layer.bias.size]
        pos += layer.bias.size
    return net
