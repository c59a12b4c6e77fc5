"""
Seeded synthetic NTF instances.

Random streams
--------------
All randomness comes from numpy's PCG64 bit generator. For a user seed ``s``
the root sequence is ``SeedSequence([s, tag])`` with ``tag = 0`` for
synthetic data and ``tag = 1`` for initializations, and the root is split
with ``SeedSequence.spawn``: child ``i`` (``i < N``) draws factor ``i`` with
``Generator.random``, and for data child ``N`` drives the noise. Normal
variates use the Box-Muller transform of those uniform draws, so the noise is
fully specified by the uniform stream.
"""
from dataclasses import dataclass

import numpy as np

from .tensor_core import KruskalModel, reconstruct

__all__ = ["SyntheticSpec", "generate", "random_init", "box_muller", "DATA_TAG", "INIT_TAG"]

DATA_TAG = 0
INIT_TAG = 1


@dataclass(frozen=True)
class SyntheticSpec:
    shape: tuple
    rank: int
    noise_sigma: float = 0.0
    ill_conditioned: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if not self.shape or min(self.shape) < 1:
            raise ValueError("shape must be a non-empty list of positive integers")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.ill_conditioned and self.rank < 2:
            raise ValueError("the ill-conditioning transform needs rank >= 2")


def _streams(seed: int, tag: int, n: int):
    root = np.random.SeedSequence([int(seed), tag])
    return [np.random.Generator(np.random.PCG64(child)) for child in root.spawn(n)]


def box_muller(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws from pairs of uniforms: cos branch first, then sin."""
    n = int(np.prod(size))
    m = (n + 1) // 2
    u1 = rng.random(m)
    u2 = rng.random(m)
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.concatenate([radius * np.cos(2.0 * np.pi * u2), radius * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(size)


def generate(spec: SyntheticSpec):
    """
    Ground-truth factors uniform on [0, 1] and ``T = max(0, [[truth]] + sigma * E)``.

    With ``ill_conditioned`` every mode gets ``A[:, 0] = 0.99 A[:, 1] + 0.01 A[:, 0]``.
    Returns ``(tensor, truth)``.
    """
    N = len(spec.shape)
    rngs = _streams(spec.seed, DATA_TAG, N + 1)
    factors = [rngs[i].random((spec.shape[i], spec.rank)) for i in range(N)]
    if spec.ill_conditioned:
        for A in factors:
            A[:, 0] = 0.99 * A[:, 1] + 0.01 * A[:, 0]
    truth = KruskalModel(factors)
    tensor = reconstruct(truth)
    if spec.noise_sigma > 0:
        noise = box_muller(rngs[N], spec.shape)
        tensor = np.maximum(tensor + spec.noise_sigma * noise, 0.0)
    return np.ascontiguousarray(tensor), truth


def random_init(shape, rank: int, seed: int) -> KruskalModel:
    """Uniform [0, 1] factors, deterministic per ``seed``."""
    shape = tuple(int(s) for s in shape)
    rngs = _streams(seed, INIT_TAG, len(shape))
    return KruskalModel([rng.random((I, rank)) for rng, I in zip(rngs, shape)])
