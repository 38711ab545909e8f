"""Analog beam codebooks built from UPA responses on a uniform sine grid."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .channel import subarray_shape, upa_shape
from .config import SystemConfig
from .errors import ConfigError

MAX_CODEBOOK_SIZE = 2 ** 16


def sine_grid(size: int) -> np.ndarray:
    """``size`` points ``-1 + 2 i / size`` covering ``[-1, 1)``."""
    return -1.0 + 2.0 * np.arange(size) / size


def _grid_split(size: int, nx: int, ny: int) -> tuple[int, int]:
    """Factor ``size = gx * gy`` so grid density per element is as even as possible.

    Ties go to the larger azimuth factor.
    """
    if ny == 1:
        return size, 1
    best = None
    for gy in range(1, size + 1):
        if size % gy:
            continue
        gx = size // gy
        imbalance = abs(math.log(gx / nx) - math.log(gy / ny))
        key = (round(imbalance, 12), -gx)
        if best is None or key < best[0]:
            best = (key, (gx, gy))
    return best[1]


def array_codebook(n_elements: int, size: int, spacing_over_lambda: float = 0.5,
                   shape: tuple[int, int] | None = None) -> np.ndarray:
    """``size x n_elements`` matrix whose rows are unit-norm UPA responses.

    ``shape`` is the ``(Nx, Ny)`` element layout (default: :func:`upa_shape`).
    Rows follow grid order: azimuth sine index major, elevation minor.
    """
    if size < 1:
        raise ConfigError(f"codebook size must be >= 1, got {size}")
    if size > MAX_CODEBOOK_SIZE:
        raise ConfigError(f"codebook size {size} exceeds {MAX_CODEBOOK_SIZE}")
    nx, ny = shape or upa_shape(n_elements)
    if nx * ny != n_elements:
        raise ConfigError(f"layout {(nx, ny)} does not hold {n_elements} elements")
    gx, gy = _grid_split(size, nx, ny)
    phase = 2j * np.pi * spacing_over_lambda
    ax = np.exp(phase * np.outer(sine_grid(gx), np.arange(nx))) / math.sqrt(nx)
    if ny == 1:
        return ax
    ay = np.exp(phase * np.outer(sine_grid(gy), np.arange(ny))) / math.sqrt(ny)
    # row (ix, iy) = ax[ix] kron ay[iy]
    return np.einsum("ia,jb->ijab", ax, ay).reshape(gx * gy, nx * ny)


@dataclass(frozen=True)
class CodebookTriple:
    """User beams ``F`` (rows of length Nt), RIS phase vectors ``S`` (length MB,
    unit modulus) and BS subarray combiners ``W`` (length NB)."""

    F: np.ndarray
    S: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        for arr in (self.F, self.S, self.W):
            arr.setflags(write=False)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.F), len(self.S), len(self.W)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.F, self.S, self.W):
            a = np.ascontiguousarray(arr, dtype="<c16")
            h.update(np.asarray(a.shape, dtype="<u4").tobytes())
            h.update(a.tobytes())
        return h.hexdigest()


def build_codebooks(cfg: SystemConfig, sizes: tuple[int, int, int]) -> CodebookTriple:
    """Build ``(F, S, W)`` with ``sizes = (|F|, |S|, |W|)``.

    Subarray codebooks follow the physical layout of one block of the full
    array.  RIS codewords are stored with unit modulus; the reflecting amplitude is
    applied when the phase matrix is assembled.
    """
    n_f, n_s, n_w = sizes
    d = cfg.element_spacing_over_lambda
    F = array_codebook(cfg.Nt, n_f, d)
    W = array_codebook(cfg.NB, n_w, d, subarray_shape(cfg.Nr, cfg.NB))
    if cfg.MB == 1:
        # a lone element has a flat response; use the inter-element phase step instead
        S = np.exp(2j * np.pi * d * sine_grid(n_s))[:, None]
    else:
        S = array_codebook(cfg.MB, n_s, d, subarray_shape(cfg.M, cfg.MB)) * math.sqrt(cfg.MB)
    return CodebookTriple(F, S, W)
