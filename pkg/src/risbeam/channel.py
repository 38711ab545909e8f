"""Uniform planar array responses and sparse geometric THz channels.

The BS-RIS channel and every RIS-user channel are sums of ``L + 1`` rank-one
path terms ``gain * a_rx(angles) a_tx(angles)^H`` scaled by
``sqrt(rows * cols / (L + 1))``.  Path 0 is the LoS path when the gain model
has ``los`` set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import GainModel, SystemConfig
from .errors import InvalidArgument

__all__ = [
    "PathSpec",
    "ChannelSet",
    "upa_shape",
    "subarray_shape",
    "upa_response",
    "geometric_channel",
    "sample_channel_set",
]


def upa_shape(n: int) -> tuple[int, int]:
    """Split ``n`` elements into ``(Nx, Ny)``: square when possible, else a line."""
    if n < 1:
        raise InvalidArgument(f"array size must be >= 1, got {n}")
    root = math.isqrt(n)
    if root * root == n:
        return root, root
    return n, 1


def subarray_shape(n_total: int, n_sub: int) -> tuple[int, int]:
    """Shape of one block of ``n_sub`` consecutive elements of the full array.

    Elements are ordered x-major (``a_x kron a_y``), so a block spanning whole
    y-rows of an ``(Nx, Ny)`` array is itself an ``(n_sub / Ny, Ny)`` UPA.
    """
    nx, ny = upa_shape(n_total)
    if n_sub < 1 or n_total % n_sub:
        raise InvalidArgument(f"subarray size {n_sub} does not divide {n_total}")
    if n_sub % ny == 0:
        return n_sub // ny, ny
    return n_sub, 1


def upa_response(azimuth: float, elevation: float, nx: int, ny: int,
                 spacing_over_lambda: float = 0.5) -> np.ndarray:
    """Normalized UPA response ``a_x(azimuth) kron a_y(elevation)``.

    Each 1-D factor is ``exp(j 2 pi d n sin(angle)) / sqrt(N)`` for
    ``n = 0 .. N-1``, so the returned vector has unit norm.
    """
    if not (math.isfinite(azimuth) and math.isfinite(elevation)):
        raise InvalidArgument(f"non-finite angle ({azimuth}, {elevation})")
    if nx < 1 or ny < 1:
        raise InvalidArgument(f"array dimensions must be >= 1, got ({nx}, {ny})")
    ax = np.exp(2j * np.pi * spacing_over_lambda * np.arange(nx) * math.sin(azimuth))
    ay = np.exp(2j * np.pi * spacing_over_lambda * np.arange(ny) * math.sin(elevation))
    return np.kron(ax / math.sqrt(nx), ay / math.sqrt(ny))


@dataclass(frozen=True)
class PathSpec:
    gain: complex
    azimuth_dep: float
    elevation_dep: float
    azimuth_arr: float
    elevation_arr: float


def geometric_channel(paths: list[PathSpec], n_rx: int, n_tx: int,
                      spacing_over_lambda: float = 0.5) -> np.ndarray:
    """Build an ``n_rx x n_tx`` channel from its path list."""
    rx_shape, tx_shape = upa_shape(n_rx), upa_shape(n_tx)
    scale = math.sqrt(n_rx * n_tx / len(paths))
    H = np.zeros((n_rx, n_tx), dtype=np.complex128)
    for p in paths:
        a_rx = upa_response(p.azimuth_arr, p.elevation_arr, *rx_shape,
                            spacing_over_lambda)
        a_tx = upa_response(p.azimuth_dep, p.elevation_dep, *tx_shape,
                            spacing_over_lambda)
        H += p.gain * np.outer(a_rx, a_tx.conj())
    return scale * H


@dataclass(frozen=True)
class ChannelSet:
    """One realization of ``H_r`` (``Nr x M``) and ``H_k`` (``M x Nt``, one per user)."""

    H_r: np.ndarray
    H_k: tuple[np.ndarray, ...]
    paths_r: tuple[PathSpec, ...] = ()
    paths_k: tuple[tuple[PathSpec, ...], ...] = ()

    def __post_init__(self):
        self.H_r.setflags(write=False)
        for h in self.H_k:
            h.setflags(write=False)

    @property
    def K(self) -> int:
        return len(self.H_k)

    def user_stack(self) -> np.ndarray:
        """All user channels as one ``K x M x Nt`` array."""
        return np.stack(self.H_k)

    def check(self, cfg: SystemConfig) -> None:
        if self.H_r.shape != (cfg.Nr, cfg.M):
            raise InvalidArgument(f"H_r has shape {self.H_r.shape}, expected {(cfg.Nr, cfg.M)}")
        if len(self.H_k) != cfg.K:
            raise InvalidArgument(f"{len(self.H_k)} user channels, expected K={cfg.K}")
        for h in self.H_k:
            if h.shape != (cfg.M, cfg.Nt):
                raise InvalidArgument(f"H_k has shape {h.shape}, expected {(cfg.M, cfg.Nt)}")


def _uniform_angle(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, size=size)


def _draw_paths(rng: np.random.Generator, n_paths: int, distance: float,
                cfg: SystemConfig, gm: GainModel) -> list[PathSpec]:
    base = gm.los_magnitude(distance, cfg.carrier_freq_Hz)
    mags = np.full(n_paths, base * gm.reflection_coeff)
    if gm.los:
        mags[0] = base
    phases = _uniform_angle(rng, n_paths)
    gains = mags * np.exp(1j * phases)
    if gm.normalize:
        gains = gains * math.sqrt(n_paths / float(np.sum(np.abs(gains) ** 2)))
    angles = _uniform_angle(rng, 4 * n_paths).reshape(n_paths, 4)
    return [PathSpec(complex(g), *map(float, a)) for g, a in zip(gains, angles)]


def sample_channel_set(cfg: SystemConfig, gm: GainModel, L_B: int = 3, L_U: int = 3,
                       rng_seed: int | np.random.Generator | None = 0) -> ChannelSet:
    """Draw one BS-RIS channel and ``K`` RIS-user channels.

    Every angle is uniform on ``(-pi, pi)``.  User distances are uniform on
    ``(d_u / 4, d_u)``.  Equal seeds give bit-identical channel sets.
    """
    if L_B < 0 or L_U < 0:
        raise InvalidArgument(f"path counts must be >= 0, got L_B={L_B}, L_U={L_U}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    d = cfg.element_spacing_over_lambda

    paths_r = _draw_paths(rng, L_B + 1, gm.d0, cfg, gm)
    H_r = geometric_channel(paths_r, cfg.Nr, cfg.M, d)

    users, paths_k = [], []
    for _ in range(cfg.K):
        dist = rng.uniform(gm.user_region_diameter / 4, gm.user_region_diameter)
        paths = _draw_paths(rng, L_U + 1, dist, cfg, gm)
        paths_k.append(tuple(paths))
        users.append(geometric_channel(paths, cfg.M, cfg.Nt, d))
    return ChannelSet(H_r, tuple(users), tuple(paths_r), tuple(paths_k))
