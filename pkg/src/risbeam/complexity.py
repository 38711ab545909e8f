"""Complex-multiplication counts for beam search and network prediction."""

from __future__ import annotations

from .config import SystemConfig


def o1_equivalent_channel(cfg: SystemConfig) -> int:
    """Multiplies to form ``Hbar`` by left-to-right row-vector chains."""
    K, Ns, Nr, M, Nt = cfg.K, cfg.Ns, cfg.Nr, cfg.M, cfg.Nt
    return K * Ns * (Nr * M + M * M + M * Nt + Nt)


def o2_det_ratio(cfg: SystemConfig) -> int:
    """Multiplies for one determinant ratio given ``Hbar``."""
    K, Ns = cfg.K, cfg.Ns
    return K * K * Ns + (K - 1) ** 2 * Ns + K ** 3 + (K - 1) ** 3 + 1


def o3_candidate(cfg: SystemConfig) -> int:
    """Multiplies to score one beam candidate end to end."""
    K, Ns, Nr, M, Nt = cfg.K, cfg.Ns, cfg.Nr, cfg.M, cfg.Nt
    return (K * K * Ns * M * (Nr + M)
            + K * K * Ns * Nt * (M + 1)
            + 6 * K + K ** 3 * (Ns + K)
            + K * (K - 1) ** 2 * (Ns + K + 1))


def es_candidates(cfg: SystemConfig, sizes: tuple[int, int, int]) -> int:
    n_f, n_s, n_w = sizes
    return n_f ** cfg.K * n_s ** cfg.Ms * n_w ** cfg.Ns


def ias_candidates_per_iteration(cfg: SystemConfig, sizes: tuple[int, int, int]) -> int:
    n_f, n_s, n_w = sizes
    return n_f ** cfg.K + n_s ** cfg.Ms + n_w ** cfg.Ns


def es_cost(cfg: SystemConfig, sizes: tuple[int, int, int]) -> int:
    return es_candidates(cfg, sizes) * o3_candidate(cfg)


def ias_cost(cfg: SystemConfig, sizes: tuple[int, int, int], t_max: int) -> int:
    return t_max * ias_candidates_per_iteration(cfg, sizes) * o3_candidate(cfg)


class MultiplyCounter:
    """Scalar multiply with a running count."""

    def __init__(self):
        self.count = 0

    def mul(self, a, b):
        self.count += 1
        return a * b


def counted_equivalent_channel(H_r, phi_diag, H_k, user_beams, w_dense, counter: MultiplyCounter):
    """Structure-free ``Hbar`` where every scalar multiply goes through ``counter``.

    Entry ``(n, k)`` is evaluated as ``((((w_n H_r) Phi) H_k) f_k)`` with a
    dense ``Phi`` and a dense row ``w_n`` of ``W_R``; the count reproduces
    :func:`o1_equivalent_channel` exactly.
    """
    Ns, Nr = len(w_dense), len(w_dense[0])
    M = len(phi_diag)
    K = len(H_k)
    Nt = len(user_beams[0])
    phi = [[phi_diag[i] if i == j else 0j for j in range(M)] for i in range(M)]
    hbar = [[0j] * K for _ in range(Ns)]
    for k in range(K):
        for n in range(Ns):
            row = [sum(counter.mul(w_dense[n][a], H_r[a][m]) for a in range(Nr)) for m in range(M)]
            row = [sum(counter.mul(row[a], phi[a][m]) for a in range(M)) for m in range(M)]
            row = [sum(counter.mul(row[a], H_k[k][a][t]) for a in range(M)) for t in range(Nt)]
            hbar[n][k] = sum(counter.mul(row[t], user_beams[k][t]) for t in range(Nt))
    return hbar
