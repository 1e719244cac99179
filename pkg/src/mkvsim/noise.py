"""Deterministic, address-keyed Gaussian increment streams.

Coupled systems must consume *identical* Brownian increments, and
parallel execution must not change any draw.  Both requirements are met
by counter-based streams: every (replication, stream, step) address maps
to a fresh Philox generator keyed by
``(master_seed, replication, kind, index)``, so the block returned for a
given address is a pure function of the master seed and the address --
independent of evaluation order, thread count, and of how many other
streams exist.
"""

from __future__ import annotations

import numpy as np

_COMMON_KIND = 0
_IDIO_KIND = 1
_INIT_KIND = 2

_U32 = 2**32
_U64 = 2**64


def derive_seed(*parts) -> int:
    """Collision-resistant 64-bit seed derived from integer parts.

    Used to give each experiment cell its own master seed while keeping
    everything reproducible from one top-level seed.
    """
    ss = np.random.SeedSequence(entropy=[int(p) % _U64 for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


class NoisePlan:
    """Seed-addressable allocation of idiosyncratic and common N(0,1) draws.

    One plan describes the noise for a whole family of replications: each
    replication owns one common stream (shared by all particles) plus one
    increment stream and one initial-condition stream per particle.  Two
    systems simulated from the same plan and replication consume the same
    increments, which is what the coupling arguments require.
    """

    def __init__(self, master_seed: int, n_particles: int, n_steps: int, dim_noise: int = 1):
        master_seed = int(master_seed)
        if not 0 <= master_seed < _U64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {n_particles}")
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        if dim_noise < 1:
            raise ValueError(f"dim_noise must be >= 1, got {dim_noise}")
        self.master_seed = master_seed
        self.n_particles = int(n_particles)
        self.n_steps = int(n_steps)
        self.dim_noise = int(dim_noise)

    def _rng(self, replication: int, kind: int, index: int) -> np.random.Generator:
        replication = int(replication)
        index = int(index)
        if not 0 <= replication < _U32:
            raise ValueError("replication must be in [0, 2^32)")
        if not 0 <= index < _U32:
            raise ValueError("stream index must be in [0, 2^32)")
        ss = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(replication, kind, index)
        )
        return np.random.Generator(np.random.Philox(ss))

    def common_increments(self, replication: int) -> np.ndarray:
        """(M, q) standard-normal increments of the shared stream."""
        return self._rng(replication, _COMMON_KIND, 0).standard_normal(
            (self.n_steps, self.dim_noise)
        )

    def particle_increments(self, replication: int, particle: int) -> np.ndarray:
        """(M, q) standard-normal increments of one particle's own stream."""
        self._check_particle(particle)
        return self._rng(replication, _IDIO_KIND, particle).standard_normal(
            (self.n_steps, self.dim_noise)
        )

    def idiosyncratic_block(self, replication: int, n_particles: int | None = None) -> np.ndarray:
        """(M, N, q) block of particle increments, step-major.

        Step-major layout keeps each step's cross-particle slice contiguous,
        so per-step reductions see the same memory order everywhere.
        """
        n = self.n_particles if n_particles is None else int(n_particles)
        self._check_particle(n - 1)
        out = np.empty((self.n_steps, n, self.dim_noise))
        for i in range(n):
            out[:, i, :] = self.particle_increments(replication, i)
        return out

    def init_rng(self, replication: int, particle: int) -> np.random.Generator:
        """Generator reserved for particle ``particle``'s initial condition."""
        self._check_particle(particle)
        return self._rng(replication, _INIT_KIND, particle)

    def _check_particle(self, particle: int) -> None:
        if not 0 <= particle < self.n_particles:
            raise ValueError(
                f"particle index {particle} outside plan with N={self.n_particles}"
            )

    def __repr__(self):
        return (
            f"NoisePlan(master_seed={self.master_seed}, n_particles={self.n_particles}, "
            f"n_steps={self.n_steps}, dim_noise={self.dim_noise})"
        )
