"""Equivalent channel, zero-forcing combiner and sum-rate evaluation.

For a beam selection the equivalent channel has columns
``hbar_k = W_R H_r Phi H_k f_k`` (``Ns x K``).  With ZF detection user ``k``
sees ``gamma_k = P / (Nt NB N0 [(Hbar^H Hbar)^{-1}]_{kk})``.  The diagonal of
the inverse Gram matrix is obtained either by explicit inversion (``direct``)
or as the ratio of the Gram determinant with column ``k`` of ``Hbar`` removed
to the full Gram determinant (``det_ratio``, the default).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelSet
from .codebook import CodebookTriple
from .config import SystemConfig
from .errors import InvalidArgument, RankDeficiencyError

ZF_MAX_CONDITION = 1e12
MIN_GRAM_DET = 1e-300
# det(G) / prod(diag(G)) below this is treated as rank deficient
MIN_HADAMARD_RATIO = 1e-12

MODES = ("det_ratio", "direct")


@dataclass(frozen=True)
class BeamSelection:
    """Codebook indices: one per user, per RIS subarray and per BS subarray."""

    f_idx: tuple[int, ...]
    s_idx: tuple[int, ...]
    w_idx: tuple[int, ...]

    def __post_init__(self):
        for name in ("f_idx", "s_idx", "w_idx"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))

    def as_tuple(self) -> tuple[int, ...]:
        return self.f_idx + self.s_idx + self.w_idx

    @classmethod
    def from_flat(cls, flat: Sequence[int], cfg: SystemConfig) -> "BeamSelection":
        flat = [int(i) for i in flat]
        k, ms = cfg.K, cfg.Ms
        return cls(tuple(flat[:k]), tuple(flat[k:k + ms]), tuple(flat[k + ms:]))

    def validate(self, cb: CodebookTriple, cfg: SystemConfig) -> None:
        n_f, n_s, n_w = cb.sizes
        for name, idx, count, bound in (("f_idx", self.f_idx, cfg.K, n_f),
                                        ("s_idx", self.s_idx, cfg.Ms, n_s),
                                        ("w_idx", self.w_idx, cfg.Ns, n_w)):
            if len(idx) != count:
                raise InvalidArgument(f"{name} has {len(idx)} entries, expected {count}")
            for i in idx:
                if not 0 <= i < bound:
                    raise InvalidArgument(f"{name} index {i} outside [0, {bound})")


def assemble_phase_matrix(sel: BeamSelection, cb: CodebookTriple,
                          cfg: SystemConfig) -> np.ndarray:
    """Diagonal of ``Phi`` (length ``M``): selected RIS codewords times the amplitude."""
    sel.validate(cb, cfg)
    return cfg.reflect_amplitude * cb.S[list(sel.s_idx)].reshape(-1)


def assemble_block_combiner(sel: BeamSelection, cb: CodebookTriple,
                            cfg: SystemConfig) -> np.ndarray:
    """Nonzero blocks of ``W_R`` as an ``Ns x NB`` array; row ``n`` sits at
    columns ``n*NB .. (n+1)*NB`` of the dense matrix."""
    sel.validate(cb, cfg)
    return cb.W[list(sel.w_idx)]


def block_combiner_dense(blocks: np.ndarray) -> np.ndarray:
    ns, nb = blocks.shape
    dense = np.zeros((ns, ns * nb), dtype=blocks.dtype)
    for n in range(ns):
        dense[n, n * nb:(n + 1) * nb] = blocks[n]
    return dense


def equivalent_channel(ch: ChannelSet, sel: BeamSelection, cb: CodebookTriple,
                       cfg: SystemConfig) -> np.ndarray:
    """``Ns x K`` equivalent channel, using the block and diagonal structure."""
    ch.check(cfg)
    phi = assemble_phase_matrix(sel, cb, cfg)
    w_blocks = assemble_block_combiner(sel, cb, cfg)
    # row n of W_R H_r only touches the n-th block of BS antennas
    rows = np.einsum("nb,nbm->nm", w_blocks, ch.H_r.reshape(cfg.Ns, cfg.NB, cfg.M))
    user_beams = cb.F[list(sel.f_idx)]
    cols = np.einsum("kmt,kt->mk", ch.user_stack(), user_beams)
    return rows @ (phi[:, None] * cols)


def _check_hbar(hbar: np.ndarray) -> np.ndarray:
    hbar = np.asarray(hbar)
    if hbar.ndim != 2:
        raise InvalidArgument(f"equivalent channel must be 2-D, got shape {hbar.shape}")
    if hbar.shape[1] > hbar.shape[0]:
        raise InvalidArgument(f"equivalent channel {hbar.shape} has more users than rows")
    if not np.all(np.isfinite(hbar)):
        raise InvalidArgument("equivalent channel has non-finite entries")
    return hbar


def gram(hbar: np.ndarray) -> np.ndarray:
    return hbar.conj().swapaxes(-1, -2) @ hbar


def zf_combiner(hbar: np.ndarray) -> np.ndarray:
    """``(Hbar^H Hbar)^{-1} Hbar^H``; refuses ill-conditioned Gram matrices."""
    hbar = _check_hbar(hbar)
    g = gram(hbar)
    cond = float(np.linalg.cond(g))
    if not np.isfinite(cond) or cond >= ZF_MAX_CONDITION:
        raise RankDeficiencyError(f"Gram matrix condition number {cond:.3e}", cond)
    return np.linalg.solve(g, hbar.conj().T)


def _logdet_hermitian(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # LU-based slogdet; the sign of a Hermitian PSD matrix is real up to rounding
    sign, logabs = np.linalg.slogdet(mats)
    return np.real(sign), logabs


def diag_inverse_entry(hbar: np.ndarray, k: int) -> float:
    """``[(Hbar^H Hbar)^{-1}]_{kk}`` as a determinant ratio (``k`` is 0-based).

    The numerator is the Gram determinant of ``Hbar`` with column ``k``
    deleted, i.e. the ``(k, k)`` cofactor of the Gram matrix.
    """
    hbar = _check_hbar(hbar)
    K = hbar.shape[1]
    if not 0 <= k < K:
        raise InvalidArgument(f"user index {k} outside [0, {K})")
    sign, logdet = _logdet_hermitian(gram(hbar))
    if sign <= 0 or logdet < np.log(MIN_GRAM_DET):
        raise RankDeficiencyError("Gram determinant is below 1e-300")
    reduced = np.delete(hbar, k, axis=1)
    sign_k, logdet_k = _logdet_hermitian(gram(reduced))
    if sign_k <= 0:
        raise RankDeficiencyError("reduced Gram determinant is not positive")
    return float(np.exp(logdet_k - logdet))


def inverse_gram_diagonal(hbars: np.ndarray, mode: str = "det_ratio") -> np.ndarray:
    """Batched ``diag((Hbar^H Hbar)^{-1})`` for ``hbars`` of shape ``(..., Ns, K)``.

    Rank-deficient entries come back as ``+inf`` instead of raising, so that
    a beam sweep can score them as unusable.
    """
    hbars = np.asarray(hbars)
    K = hbars.shape[-1]
    g = gram(hbars)
    diag_g = np.real(np.diagonal(g, axis1=-2, axis2=-1))
    sign, logdet = _logdet_hermitian(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_hadamard = logdet - np.sum(np.log(diag_g), axis=-1)
    bad = (sign <= 0) | ~(log_hadamard >= np.log(MIN_HADAMARD_RATIO))
    if mode == "direct":
        g_safe = np.where(bad[..., None, None], np.eye(K), g)
        out = np.real(np.diagonal(np.linalg.inv(g_safe), axis1=-2, axis2=-1)).copy()
    elif mode == "det_ratio":
        out = np.empty(hbars.shape[:-2] + (K,))
        for k in range(K):
            keep = [j for j in range(K) if j != k]
            _, logdet_k = _logdet_hermitian(gram(hbars[..., keep]))
            with np.errstate(over="ignore", invalid="ignore"):
                out[..., k] = np.exp(logdet_k - logdet)
    else:
        raise InvalidArgument(f"unknown sum-rate mode {mode!r}; expected one of {MODES}")
    out[bad] = np.inf
    return out


def rates_from_hbar(hbars: np.ndarray, snr_scale: float, mode: str = "det_ratio") -> np.ndarray:
    """Batched sum-rate in bps/Hz; ``-inf`` marks rank-deficient channels."""
    inv_diag = inverse_gram_diagonal(hbars, mode)
    with np.errstate(divide="ignore"):
        sinr = snr_scale / inv_diag
    rates = np.sum(np.log2(1.0 + sinr), axis=-1)
    return np.where(np.isinf(inv_diag).any(axis=-1), -np.inf, rates)


def user_sinr(hbar: np.ndarray, snr_scale: float, mode: str = "det_ratio") -> np.ndarray:
    hbar = _check_hbar(hbar)
    inv_diag = inverse_gram_diagonal(hbar, mode)
    if np.isinf(inv_diag).any():
        raise RankDeficiencyError("equivalent channel is rank deficient; rate undefined")
    return snr_scale / inv_diag


def sum_rate(ch: ChannelSet, sel: BeamSelection, cb: CodebookTriple,
             cfg: SystemConfig, mode: str = "det_ratio") -> float:
    """``sum_k log2(1 + gamma_k)`` for one selection.

    Raises :class:`RankDeficiencyError` when the equivalent channel cannot be
    zero-forced.
    """
    hbar = equivalent_channel(ch, sel, cb, cfg)
    return float(np.sum(np.log2(1.0 + user_sinr(hbar, cfg.snr_scale, mode))))
