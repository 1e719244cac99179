"""Euler and truncated-Euler simulation of interacting particle systems.

One replication advances N particles on a uniform grid:

    x_{m+1} = x_m + h*b(t_m, x_m, mu_m) + sqrt(h)*sigma(t_m, x_m, mu_m)*Z_{m+1}
                  + sqrt(h)*sigma0(t_m, mu_m)*Z0_{m+1}

where mu_m is the empirical measure of the N current states and Z0 is
shared by every particle.  The conditional-law argument of the limiting
dynamics is approximated by this particle cloud (the approximation
carries an O(N^{-1/2}) bias, see ``solo_mkv_path``).  All draws come
from a :class:`~mkvsim.noise.NoisePlan`, so a run is a pure function of
(master_seed, replication, config).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, MeasureHandle
from .grid import TimeGrid
from .measures import EmpiricalMeasure1D
from .noise import NoisePlan

SCHEME_EULER = "euler"
SCHEME_TRUNCATED = "truncated_euler"


class SimulationBlowupError(RuntimeError):
    """Non-finite state produced by an update (coefficient blow-up or bad config)."""

    def __init__(self, step: int, particle: int):
        self.step = step
        self.particle = particle
        super().__init__(
            f"non-finite state after update at step {step}, particle {particle}"
        )


def truncation_threshold(h: float, lip: float) -> float:
    """Threshold c = 1/(2*sqrt(h)*lip) of the truncated scheme."""
    if h <= 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    if lip <= 0.0:
        raise ValueError(
            f"state-Lipschitz constant of the diffusion must be positive, got {lip}"
        )
    return 1.0 / (2.0 * np.sqrt(h) * lip)


def truncate_gaussian(z, h: float, lip: float):
    """Zero every draw with |z| above the threshold (boundary kept)."""
    c = truncation_threshold(h, lip)
    z_arr = np.asarray(z, dtype=float)
    out = np.where(np.abs(z_arr) <= c, z_arr, 0.0)
    return float(out) if np.ndim(z) == 0 else out


@dataclass
class ParticleEnsemble:
    """N simulated paths plus the common-noise path that generated them.

    ``mean_path`` holds the empirical-mean path.  For exchange drifts
    (pairwise-difference form) the cross-particle drift sum vanishes
    identically, so the mean is tracked in that conserved form,
    mean_{m+1} = mean_m + avg_n(sqrt(h)*sigma_n*Z_n) + sqrt(h)*sigma0*Z0;
    this keeps it bit-exactly free of the drift parameters.  Otherwise it
    is the plain cross-particle average of the states.
    """

    grid: TimeGrid
    states: np.ndarray            # (N, M+1, d)
    common_path: np.ndarray       # (M+1, q), cumulative common noise at nodes
    scheme: str
    replication: int
    mean_path: np.ndarray         # (M+1, d)
    debug_info: dict = field(default_factory=dict)

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim_state(self) -> int:
        return self.states.shape[2]

    def empirical_mean_path(self) -> np.ndarray:
        return self.mean_path

    def terminal_samples(self, coord: int = 0) -> np.ndarray:
        return self.states[:, -1, coord]

    def measure_at(self, node: int, coord: int = 0) -> EmpiricalMeasure1D:
        return EmpiricalMeasure1D(self.states[:, node, coord])


def _draw_initial(init_sampler, noise: NoisePlan, replication: int, n: int, d: int) -> np.ndarray:
    if init_sampler is None:
        return np.zeros((n, d))
    if not callable(init_sampler):
        const = np.broadcast_to(np.asarray(init_sampler, dtype=float), (d,))
        return np.tile(const, (n, 1))
    out = np.empty((n, d))
    for i in range(n):
        out[i] = np.asarray(init_sampler(noise.init_rng(replication, i)), dtype=float)
    return out


def _digest(*arrays) -> str:
    sha = hashlib.sha256()
    for a in arrays:
        sha.update(np.ascontiguousarray(a).tobytes())
    return sha.hexdigest()


def simulate_particle_system(coeffs: CoefficientSet, grid: TimeGrid, init_sampler,
                             n_particles: int, noise: NoisePlan, replication: int,
                             *, debug: bool = False) -> ParticleEnsemble:
    """Plain Euler simulation of one replication of the particle system.

    ``init_sampler`` may be None (all particles start at 0), a constant,
    or a callable ``rng -> initial state`` fed from the per-particle
    initial-condition streams of ``noise``.
    """
    return _simulate(coeffs, grid, init_sampler, n_particles, noise, replication,
                     truncated=False, debug=debug)


def simulate_truncated(coeffs: CoefficientSet, grid: TimeGrid, init_sampler,
                       n_particles: int, noise: NoisePlan, replication: int,
                       *, debug: bool = False) -> ParticleEnsemble:
    """Truncated-Euler simulation: idiosyncratic draws beyond the threshold
    are zeroed, the common draws are used untouched.

    Only stated in dimension one.  Requires a positive state-Lipschitz
    constant for the diffusion (the threshold is otherwise undefined),
    and rejects step sizes h >= 1/(2*lip_drift) when a drift Lipschitz
    constant is supplied.
    """
    if not coeffs.scalar:
        raise ValueError("the truncated scheme is defined for d = q = 1 only")
    # raises if lip_x_diffusion <= 0 (e.g. constant diffusion): use plain Euler
    truncation_threshold(grid.h, coeffs.lip_x_diffusion)
    if coeffs.lip_x_drift > 0.0 and grid.h >= 1.0 / (2.0 * coeffs.lip_x_drift):
        raise ValueError(
            f"step size h={grid.h:g} too large for the truncated scheme: "
            f"needs h < {1.0 / (2.0 * coeffs.lip_x_drift):g} = 1/(2*lip_drift)"
        )
    return _simulate(coeffs, grid, init_sampler, n_particles, noise, replication,
                     truncated=True, debug=debug)


def _simulate(coeffs, grid, init_sampler, n, noise, replication, truncated, debug):
    if n < 1:
        raise ValueError(f"n_particles must be >= 1, got {n}")
    if noise.n_steps != grid.steps:
        raise ValueError(
            f"noise plan has {noise.n_steps} steps but grid has {grid.steps}"
        )
    if noise.dim_noise != coeffs.dim_noise:
        raise ValueError(
            f"noise plan dimension {noise.dim_noise} != coefficient dim_noise {coeffs.dim_noise}"
        )
    idio = noise.idiosyncratic_block(replication, n)  # (M, N, q)
    common = noise.common_increments(replication)     # (M, q)
    x0 = _draw_initial(init_sampler, noise, replication, n, coeffs.dim_state)
    ensemble = simulate_with_increments(
        coeffs, grid, x0, idio, common, truncated=truncated, replication=replication
    )
    if debug:
        ensemble.debug_info["idio_digest"] = _digest(idio)
        ensemble.debug_info["common_digest"] = _digest(common)
        if truncated:
            c = truncation_threshold(grid.h, coeffs.lip_x_diffusion)
            used = truncate_gaussian(idio, grid.h, coeffs.lip_x_diffusion)
            ensemble.debug_info["max_abs_truncated"] = float(np.max(np.abs(used)))
            ensemble.debug_info["truncation_threshold"] = c
    return ensemble


def simulate_with_increments(coeffs: CoefficientSet, grid: TimeGrid, x0, idio, common,
                             *, truncated: bool = False, replication: int = 0) -> ParticleEnsemble:
    """Advance the scheme on explicitly supplied increments.

    Entry point for coupling studies that derive one scheme's increments
    from another's (e.g. coarse increments as normalized sums of fine
    ones).  ``idio`` is (M, N, q) and ``common`` is (M, q); both are
    consumed as given, except that the truncated scheme zeroes the
    idiosyncratic draws beyond its threshold.
    """
    M, h = grid.steps, grid.h
    sqrt_h = np.sqrt(h)
    nodes = grid.nodes
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    n = x0.shape[0]
    d, q = coeffs.dim_state, coeffs.dim_noise
    if x0.shape[1] != d:
        raise ValueError(f"initial states have dimension {x0.shape[1]}, expected {d}")
    idio = np.asarray(idio, dtype=float).reshape(M, n, q)
    common = np.asarray(common, dtype=float).reshape(M, q)

    if truncated:
        idio = truncate_gaussian(idio, h, coeffs.lip_x_diffusion)

    common_path = np.zeros((M + 1, q))
    np.cumsum(sqrt_h * common, axis=0, out=common_path[1:])

    if coeffs.scalar:
        states = np.empty((n, M + 1))
        states[:, 0] = x0[:, 0]
        mean_path = np.empty(M + 1)
        mean_path[0] = np.mean(states[:, 0])
        z_steps = np.ascontiguousarray(idio[:, :, 0])   # (M, N)
        z0_steps = common[:, 0]
        for m in range(M):
            x = states[:, m]
            t = nodes[m]
            mu = MeasureHandle(x)
            b = coeffs.drift(t, x, mu)
            s = coeffs.diffusion(t, x, mu)
            s0 = coeffs.common_diffusion(t, mu)
            noise_part = sqrt_h * (s * z_steps[m]) + (sqrt_h * s0) * z0_steps[m]
            x_next = x + h * b + noise_part
            if not np.all(np.isfinite(x_next)):
                bad = int(np.flatnonzero(~np.isfinite(x_next))[0])
                raise SimulationBlowupError(step=m + 1, particle=bad)
            states[:, m + 1] = x_next
            if coeffs.exchange_drift:
                mean_path[m + 1] = mean_path[m] + np.mean(noise_part)
            else:
                mean_path[m + 1] = np.mean(x_next)
        states = states[:, :, None]
        mean_path = mean_path[:, None]
    else:
        states = np.empty((n, M + 1, d))
        states[:, 0] = x0
        mean_path = np.empty((M + 1, d))
        mean_path[0] = np.mean(states[:, 0], axis=0)
        for m in range(M):
            x = states[:, m]
            t = nodes[m]
            mu = MeasureHandle(x)
            b = np.asarray(coeffs.drift(t, x, mu), dtype=float)
            s = np.asarray(coeffs.diffusion(t, x, mu), dtype=float)
            s0 = np.asarray(coeffs.common_diffusion(t, mu), dtype=float)
            if s.shape != (n, d, q):
                s = np.broadcast_to(s, (n, d, q))
            noise_part = sqrt_h * np.einsum("ndq,nq->nd", s, np.broadcast_to(idio[m], (n, q)))
            noise_part = noise_part + sqrt_h * (s0 @ common[m])
            x_next = x + h * b + noise_part
            if not np.all(np.isfinite(x_next)):
                bad = int(np.flatnonzero(~np.isfinite(x_next).all(axis=1))[0])
                raise SimulationBlowupError(step=m + 1, particle=bad)
            states[:, m + 1] = x_next
            if coeffs.exchange_drift:
                mean_path[m + 1] = mean_path[m] + np.mean(noise_part, axis=0)
            else:
                mean_path[m + 1] = np.mean(x_next, axis=0)

    return ParticleEnsemble(
        grid=grid,
        states=states,
        common_path=common_path,
        scheme=SCHEME_TRUNCATED if truncated else SCHEME_EULER,
        replication=int(replication),
        mean_path=mean_path,
    )


def solo_mkv_path(coeffs: CoefficientSet, grid: TimeGrid, init_sampler,
                  noise: NoisePlan, replication: int, proxy_n: int):
    """Discrete path of a single mean-field particle, plus the common path.

    The law argument of the dynamics is realized as the empirical measure
    of an auxiliary cloud of ``proxy_n`` particles sharing the common
    path (conditional propagation of chaos); the returned path is the
    cloud's first particle.  The proxy carries an O(proxy_n^{-1/2}) bias
    in the law argument, so it only converges to the mean-field path as
    proxy_n grows.
    """
    if proxy_n < 2:
        raise ValueError(f"proxy_n must be >= 2, got {proxy_n}")
    ens = simulate_particle_system(coeffs, grid, init_sampler, proxy_n, noise, replication)
    return ens.states[0].copy(), ens.common_path.copy()


# ---------------------------------------------------------------------------
# ensemble export
# ---------------------------------------------------------------------------

_BINARY_MAGIC = b"MKVENS01"
_SCHEME_CODES = {SCHEME_EULER: 0, SCHEME_TRUNCATED: 1}
_SCHEME_NAMES = {v: k for k, v in _SCHEME_CODES.items()}


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips the binary value."""
    return repr(float(x))


def write_ensemble_csv(path, ensembles) -> None:
    """Rows (replication, particle, step, time, state components)."""
    if isinstance(ensembles, ParticleEnsemble):
        ensembles = [ensembles]
    ensembles = list(ensembles)
    if not ensembles:
        raise ValueError("no ensembles to write")
    d = ensembles[0].dim_state
    header = ["replication", "particle", "step", "time"] + [f"x{j}" for j in range(d)]
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for ens in ensembles:
            nodes = ens.grid.nodes
            for i in range(ens.n_particles):
                for m in range(ens.grid.steps + 1):
                    vals = ens.states[i, m]
                    f.write(
                        f"{ens.replication},{i},{m},{format_float(nodes[m])},"
                        + ",".join(format_float(v) for v in vals)
                        + "\n"
                    )


def write_ensemble_binary(path, ensembles) -> None:
    """Columnar binary dump for large runs.

    Layout, all little-endian:
      8 bytes   magic "MKVENS01"
      6 uint64  R (replication count), N, M, d, q, scheme code (0 euler,
                1 truncated)
      1 float64 horizon T
      R uint64  replication indices
      R blocks  states, each N*(M+1)*d float64, C order
      R blocks  common paths, each (M+1)*q float64, C order
    """
    if isinstance(ensembles, ParticleEnsemble):
        ensembles = [ensembles]
    ensembles = list(ensembles)
    if not ensembles:
        raise ValueError("no ensembles to write")
    first = ensembles[0]
    n, m, d = first.n_particles, first.grid.steps, first.dim_state
    q = first.common_path.shape[1]
    scheme = _SCHEME_CODES[first.scheme]
    for ens in ensembles:
        if (ens.n_particles, ens.grid.steps, ens.dim_state) != (n, m, d):
            raise ValueError("all ensembles in one file must share (N, M, d)")
    with open(path, "wb") as f:
        f.write(_BINARY_MAGIC)
        np.asarray([len(ensembles), n, m, d, q, scheme], dtype="<u8").tofile(f)
        np.asarray([first.grid.horizon], dtype="<f8").tofile(f)
        np.asarray([e.replication for e in ensembles], dtype="<u8").tofile(f)
        for ens in ensembles:
            np.ascontiguousarray(ens.states, dtype="<f8").tofile(f)
        for ens in ensembles:
            np.ascontiguousarray(ens.common_path, dtype="<f8").tofile(f)


def read_ensemble_binary(path) -> list[ParticleEnsemble]:
    """Read a file written by :func:`write_ensemble_binary`.

    The empirical-mean path is recomputed as the plain cross-particle
    average (the exchange-drift flag is not stored).
    """
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _BINARY_MAGIC:
            raise ValueError(f"not an ensemble dump (bad magic {magic!r})")
        r, n, m, d, q, scheme = (int(v) for v in np.fromfile(f, dtype="<u8", count=6))
        horizon = float(np.fromfile(f, dtype="<f8", count=1)[0])
        reps = np.fromfile(f, dtype="<u8", count=r).astype(int)
        grid = TimeGrid(horizon, m)
        states = np.fromfile(f, dtype="<f8", count=r * n * (m + 1) * d)
        states = states.reshape(r, n, m + 1, d)
        commons = np.fromfile(f, dtype="<f8", count=r * (m + 1) * q)
        commons = commons.reshape(r, m + 1, q)
    out = []
    for k in range(r):
        out.append(
            ParticleEnsemble(
                grid=grid,
                states=states[k].copy(),
                common_path=commons[k].copy(),
                scheme=_SCHEME_NAMES[scheme],
                replication=reps[k],
                mean_path=np.mean(states[k], axis=0),
            )
        )
    return out
