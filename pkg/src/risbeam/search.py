"""Combinatorial beam selection: exhaustive, iterative alternating and random.

All three searches score candidates through :class:`CandidateScorer`, which
precomputes the contribution of every (BS subarray beam, RIS subarray beam,
user beam) triple once per channel realization.  ``Hbar`` for any candidate
is then a sum of ``Ms`` table entries per element, so whole blocks of
candidates are scored in a single vectorized call.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import complexity
from .channel import ChannelSet
from .codebook import CodebookTriple
from .config import SystemConfig
from .errors import BudgetExceeded, InvalidArgument
from .metric import BeamSelection, rates_from_hbar

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10 ** 7
DEFAULT_T_MAX = 10
_CHUNK = 1 << 15


@dataclass
class SearchReport:
    best_selection: BeamSelection
    best_rate: float
    candidates_evaluated: int
    multiply_count: int
    iterations: int = 0
    converged: bool = False
    trace: list[float] = field(default_factory=list)


class CandidateScorer:
    """Vectorized sum-rate for many selections on one channel realization."""

    def __init__(self, ch: ChannelSet, cb: CodebookTriple, cfg: SystemConfig,
                 mode: str = "det_ratio"):
        ch.check(cfg)
        self.cfg, self.mode = cfg, mode
        self.sizes = cb.sizes
        Ns, NB, Ms, MB = cfg.Ns, cfg.NB, cfg.Ms, cfg.MB
        # rows[n, w, m, b]: codeword w on BS subarray n times its block of H_r
        rows = np.einsum("wb,nbx->nwx", cb.W, ch.H_r.reshape(Ns, NB, cfg.M))
        rows = rows.reshape(Ns, len(cb.W), Ms, MB)
        # cols[k, f, m, b]: H_k f for every user beam f
        cols = np.einsum("kxt,ft->kfx", ch.user_stack(), cb.F).reshape(cfg.K, len(cb.F), Ms, MB)
        phases = cfg.reflect_amplitude * cb.S
        # table[n, w, m, s, k, f] = sum_b rows * phases * cols
        self.table = np.einsum("nwmb,sb,kfmb->nwmskf", rows, phases, cols, optimize=True)

    def hbar(self, flat: np.ndarray) -> np.ndarray:
        """``Hbar`` for selections given as ``(C, K + Ms + Ns)`` index rows."""
        cfg = self.cfg
        K, Ms, Ns = cfg.K, cfg.Ms, cfg.Ns
        f = flat[:, :K]
        s = flat[:, K:K + Ms]
        w = flat[:, K + Ms:]
        n_ar = np.arange(Ns)[None, :, None, None]
        m_ar = np.arange(Ms)[None, None, :, None]
        k_ar = np.arange(K)[None, None, None, :]
        vals = self.table[n_ar, w[:, :, None, None], m_ar, s[:, None, :, None],
                          k_ar, f[:, None, None, :]]
        return vals.sum(axis=2)

    def rates(self, flat: np.ndarray) -> np.ndarray:
        return rates_from_hbar(self.hbar(np.asarray(flat, dtype=np.intp)),
                               self.cfg.snr_scale, self.mode)

    def rate(self, sel: BeamSelection) -> float:
        return float(self.rates(np.asarray([sel.as_tuple()]))[0])


def _product_shape(cfg: SystemConfig, sizes) -> tuple[int, ...]:
    n_f, n_s, n_w = sizes
    return (n_f,) * cfg.K + (n_s,) * cfg.Ms + (n_w,) * cfg.Ns


def exhaustive_search(ch: ChannelSet, cb: CodebookTriple, cfg: SystemConfig,
                      budget: int = DEFAULT_BUDGET, mode: str = "det_ratio") -> SearchReport:
    """Global maximizer over the full Cartesian product of codebooks.

    Candidates are visited in lexicographic order of ``(f..., s..., w...)``
    and only a strictly better rate replaces the incumbent, so ties resolve
    to the lexicographically smallest tuple.
    """
    total = complexity.es_candidates(cfg, cb.sizes)
    if total > budget:
        raise BudgetExceeded(total, budget)
    scorer = CandidateScorer(ch, cb, cfg, mode)
    shape = _product_shape(cfg, cb.sizes)
    best_rate, best_flat = -np.inf, None
    for start in range(0, total, _CHUNK):
        ids = np.arange(start, min(start + _CHUNK, total))
        flat = np.stack(np.unravel_index(ids, shape), axis=1)
        rates = scorer.rates(flat)
        j = int(np.argmax(rates))
        if best_flat is None or rates[j] > best_rate:
            best_rate, best_flat = float(rates[j]), flat[j]
    sel = BeamSelection.from_flat(best_flat, cfg)
    return SearchReport(sel, best_rate, total, total * complexity.o3_candidate(cfg),
                        iterations=1, converged=True, trace=[best_rate])


def random_selection(cfg: SystemConfig, sizes, rng: np.random.Generator) -> BeamSelection:
    n_f, n_s, n_w = sizes
    return BeamSelection(tuple(rng.integers(0, n_f, cfg.K)),
                         tuple(rng.integers(0, n_s, cfg.Ms)),
                         tuple(rng.integers(0, n_w, cfg.Ns)))


def _block_grid(size: int, width: int) -> np.ndarray:
    return np.array(list(itertools.product(range(size), repeat=width)), dtype=np.intp)


def ias_search(ch: ChannelSet, cb: CodebookTriple, cfg: SystemConfig,
               t_max: int = DEFAULT_T_MAX, init: BeamSelection | int | None = 0,
               budget: int = DEFAULT_BUDGET, mode: str = "det_ratio") -> SearchReport:
    """Iterative alternating search over the user, RIS and BS beam blocks.

    Each iteration enumerates all ``|F|^K`` user-beam tuples, then all
    ``|S|^Ms`` RIS tuples, then all ``|W|^Ns`` BS tuples, each with the other
    two blocks held fixed.  ``init`` is a selection or a seed for a random
    start.  The search stops after ``t_max`` iterations or after an
    iteration that changes nothing.
    """
    if t_max < 1:
        raise InvalidArgument(f"t_max must be >= 1, got {t_max}")
    n_f, n_s, n_w = cb.sizes
    K, Ms, Ns = cfg.K, cfg.Ms, cfg.Ns
    blocks = [(0, K, n_f), (K, K + Ms, n_s), (K + Ms, K + Ms + Ns, n_w)]
    for lo, hi, size in blocks:
        if size ** (hi - lo) > budget:
            raise BudgetExceeded(size ** (hi - lo), budget)
    if not isinstance(init, BeamSelection):
        init = random_selection(cfg, cb.sizes, np.random.default_rng(init))
    init.validate(cb, cfg)

    scorer = CandidateScorer(ch, cb, cfg, mode)
    candidates = [_block_grid(size, hi - lo) for lo, hi, size in blocks]
    current = np.asarray(init.as_tuple(), dtype=np.intp)
    rate = float(scorer.rates(current[None, :])[0])
    trace, evaluated, converged, it = [], 0, False, 0
    for it in range(1, t_max + 1):
        changed = False
        for (lo, hi, _), grid in zip(blocks, candidates):
            flat = np.repeat(current[None, :], len(grid), axis=0)
            flat[:, lo:hi] = grid
            rates = scorer.rates(flat)
            evaluated += len(grid)
            j = int(np.argmax(rates))
            if not np.array_equal(flat[j], current):
                changed = True
                current = flat[j]
            rate = float(rates[j])
            trace.append(rate)
        if not changed:
            converged = True
            break
    logger.debug("IAS finished after %d iterations (converged=%s)", it, converged)
    sel = BeamSelection.from_flat(current, cfg)
    return SearchReport(sel, rate, evaluated, evaluated * complexity.o3_candidate(cfg),
                        iterations=it, converged=converged, trace=trace)


def random_baseline(ch: ChannelSet, cb: CodebookTriple, cfg: SystemConfig,
                    seed: int = 0, mode: str = "det_ratio") -> SearchReport:
    sel = random_selection(cfg, cb.sizes, np.random.default_rng(seed))
    rate = CandidateScorer(ch, cb, cfg, mode).rate(sel)
    return SearchReport(sel, rate, 1, complexity.o3_candidate(cfg), iterations=1,
                        converged=True, trace=[rate])


def multiply_cost(cfg: SystemConfig, algorithm: str, codebook_sizes: tuple[int, int, int],
                  t_max: int = DEFAULT_T_MAX, arch=None) -> int:
    """Closed-form multiplication count for ``es``, ``ias`` or ``mtl``.

    ``o1``, ``o2`` and ``o3`` return the per-candidate components.  The
    ``mtl`` count needs the network architecture (defaults derived from
    ``cfg`` and ``codebook_sizes``).
    """
    algorithm = algorithm.lower()
    if algorithm == "o1":
        return complexity.o1_equivalent_channel(cfg)
    if algorithm == "o2":
        return complexity.o2_det_ratio(cfg)
    if algorithm == "o3":
        return complexity.o3_candidate(cfg)
    if algorithm == "es":
        return complexity.es_cost(cfg, codebook_sizes)
    if algorithm == "ias":
        return complexity.ias_cost(cfg, codebook_sizes, t_max)
    if algorithm == "mtl":
        from .mtlnet.model import ModelSpec

        spec = arch or ModelSpec.for_system(cfg, codebook_sizes)
        return complexity.o3_candidate(cfg) + spec.prediction_multiplies()
    raise InvalidArgument(f"unknown algorithm {algorithm!r}")
