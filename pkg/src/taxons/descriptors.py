"""Observer functions mapping an evaluated policy to its outcome descriptor.

One observer per method family: the learned encoder (TAXONS and ablations),
ground truth (NS), raw parameters (PNS), cached random vectors (RNS) and a
frozen random encoder (NT). Random search uses no observer at all, so the
orchestrator never constructs one for it.
"""

from __future__ import annotations

import numpy as np

from .autoencoder import Autoencoder, encode_observation

RANDOM_DESCRIPTOR_DIM = 10


class EncoderObserver:
    """Descriptor = encoder output on the final observation, under whatever
    parameters the autoencoder currently has."""

    kind = "encoder"

    def __init__(self, ae: Autoencoder):
        self.ae = ae
        self.dim = ae.latent_dim

    def describe(self, genome, result) -> np.ndarray:
        return encode_observation(self.ae, result.observation)


class FrozenEncoderObserver(EncoderObserver):
    """Identical mapping, but the autoencoder is never trained."""

    kind = "frozen_encoder"


class GroundTruthObserver:
    """Privileged observer: the final ground-truth position itself. Reads go
    through the monitored accessor, so they show up in the firewall counter."""

    kind = "ground_truth"
    dim = 2

    def describe(self, genome, result) -> np.ndarray:
        return np.asarray(result.ground_truth, dtype=np.float64)


class ParameterObserver:
    """Descriptor = the full parameter vector of the policy."""

    kind = "parameters"

    def __init__(self, dim: int):
        self.dim = dim

    def describe(self, genome, result) -> np.ndarray:
        return genome.values.copy()


class RandomObserver:
    """Descriptor drawn uniformly from [0, 1]^10 once per policy and cached
    for the policy's lifetime."""

    kind = "random"
    dim = RANDOM_DESCRIPTOR_DIM

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._cache: dict[int, np.ndarray] = {}

    def assign(self, policy_id: int) -> np.ndarray:
        vec = self._cache.get(policy_id)
        if vec is None:
            vec = self.rng.random(self.dim)
            self._cache[policy_id] = vec
        return vec

    def describe(self, genome, result) -> np.ndarray:
        return self.assign(genome.id)


def describe_encoder(ae: Autoencoder, observation) -> np.ndarray:
    return encode_observation(ae, observation)


def describe_ground_truth(result) -> np.ndarray:
    return np.asarray(result.ground_truth, dtype=np.float64)


def describe_parameters(genome) -> np.ndarray:
    return genome.values.copy()
