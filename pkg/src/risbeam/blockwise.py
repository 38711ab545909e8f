"""Alternating least squares for a linear shared-block / task-block model.

The model maps inputs ``X`` (V x r) to every task output through a shared
block ``G`` (r x n), a fixed shared map ``F_S`` (n x q), a task block ``Q_u``
(q x d_u) and a fixed task map ``F_u`` (d_u x p_u)::

    f(G, Q) = sum_u 1/2 ||X G F_S Q_u F_u - Y_u||_F^2
              + rho1/2 ||G||_F^2 + rho2/2 sum_u ||Q_u||_F^2

With ``Q`` fixed the problem is a ridge regression in ``G`` and vice versa.
Each half-step solves its Sylvester-type normal equation ``P G R + rho G = B``
exactly through the eigendecompositions of the two Hermitian factors, so the
``(rn) x (rn)`` Kronecker system is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument


def _h(a: np.ndarray) -> np.ndarray:
    return a.conj().T if np.iscomplexobj(a) else a.T


def _unit_spectral(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    a = rng.standard_normal(shape)
    if np.issubdtype(dtype, np.complexfloating):
        a = a + 1j * rng.standard_normal(shape)
    return a / np.linalg.norm(a, 2)


@dataclass(frozen=True, eq=False)
class BlockwiseProblem:
    X: np.ndarray
    Y: tuple[np.ndarray, ...]
    F_S: np.ndarray
    F: tuple[np.ndarray, ...]
    rho1: float
    rho2: float

    def __post_init__(self):
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise InvalidArgument(f"penalties must be positive, got {self.rho1}, {self.rho2}")
        if len(self.Y) != len(self.F) or not self.Y:
            raise InvalidArgument("need one target and one task map per task")
        V = self.X.shape[0]
        for u, (y, f) in enumerate(zip(self.Y, self.F)):
            if y.shape != (V, f.shape[1]):
                raise InvalidArgument(f"task {u}: target {y.shape} vs expected {(V, f.shape[1])}")

    @cached_property
    def gram_eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigendecomposition of ``X^H X`` (fixed for the whole run)."""
        d, U = np.linalg.eigh(_h(self.X) @ self.X)
        return np.clip(d, 0, None), U

    @cached_property
    def task_eigs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Eigendecompositions of every ``F_u F_u^H``."""
        out = []
        for f in self.F:
            d, V = np.linalg.eigh(f @ _h(f))
            out.append((np.clip(d, 0, None), V))
        return out

    @property
    def U(self) -> int:
        return len(self.Y)

    @property
    def dims(self) -> dict[str, int]:
        return {"V": self.X.shape[0], "r": self.X.shape[1], "n": self.F_S.shape[0],
                "q": self.F_S.shape[1]}

    @classmethod
    def random(cls, V=20, r=6, n=5, q=4, d=3, p=2, U=3, rho1=0.1, rho2=0.1, seed=0,
               maps: str = "random", complex_valued: bool = False) -> "BlockwiseProblem":
        """Gaussian data; ``F_S``/``F_u`` random with unit spectral norm or rectangular identities."""
        rng = np.random.default_rng(seed)
        dtype = np.complex128 if complex_valued else np.float64

        def gauss(shape):
            a = rng.standard_normal(shape)
            return a + 1j * rng.standard_normal(shape) if complex_valued else a

        X = gauss((V, r))
        Y = tuple(gauss((V, p)) for _ in range(U))
        if maps == "identity":
            F_S = np.eye(n, q, dtype=dtype)
            F = tuple(np.eye(d, p, dtype=dtype) for _ in range(U))
        elif maps == "random":
            F_S = _unit_spectral(rng, (n, q), dtype)
            F = tuple(_unit_spectral(rng, (d, p), dtype) for _ in range(U))
        else:
            raise InvalidArgument(f"maps must be 'random' or 'identity', got {maps!r}")
        return cls(X, Y, F_S, F, rho1, rho2)

    def initial_point(self, seed: int, scale: float = 0.1):
        rng = np.random.default_rng(seed)
        cplx = np.iscomplexobj(self.X)

        def gauss(shape):
            a = rng.standard_normal(shape)
            if cplx:
                a = a + 1j * rng.standard_normal(shape)
            return scale * a

        G = gauss((self.X.shape[1], self.F_S.shape[0]))
        Q = [gauss((self.F_S.shape[1], f.shape[0])) for f in self.F]
        return G, Q


def _check(prob: BlockwiseProblem, G=None, Q=None) -> None:
    if G is not None and G.shape != (prob.X.shape[1], prob.F_S.shape[0]):
        raise InvalidArgument(f"G has shape {G.shape}, expected {(prob.X.shape[1], prob.F_S.shape[0])}")
    if Q is not None:
        if len(Q) != prob.U:
            raise InvalidArgument(f"expected {prob.U} task blocks, got {len(Q)}")
        for u, (q, f) in enumerate(zip(Q, prob.F)):
            if q.shape != (prob.F_S.shape[1], f.shape[0]):
                raise InvalidArgument(f"Q[{u}] has shape {q.shape}, expected {(prob.F_S.shape[1], f.shape[0])}")


def task_maps(prob: BlockwiseProblem, Q) -> list[np.ndarray]:
    """``P_u = F_S Q_u F_u`` (n x p_u)."""
    return [prob.F_S @ q @ f for q, f in zip(Q, prob.F)]


def objective(prob: BlockwiseProblem, G: np.ndarray, Q) -> float:
    _check(prob, G, Q)
    XG = prob.X @ G
    fit = sum(np.linalg.norm(XG @ P - y) ** 2 for P, y in zip(task_maps(prob, Q), prob.Y))
    reg = prob.rho1 * np.linalg.norm(G) ** 2 + prob.rho2 * sum(np.linalg.norm(q) ** 2 for q in Q)
    return float(0.5 * (fit + reg))


def gradients(prob: BlockwiseProblem, G: np.ndarray, Q) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gradients with respect to ``G`` and each ``Q_u`` (conjugate gradients when complex)."""
    _check(prob, G, Q)
    X, F_S = prob.X, prob.F_S
    XG = X @ G
    gG = prob.rho1 * G
    gQ = []
    for q, f, y in zip(Q, prob.F, prob.Y):
        R = XG @ F_S @ q @ f - y
        gG = gG + _h(X) @ R @ _h(F_S @ q @ f)
        gQ.append(_h(XG @ F_S) @ R @ _h(f) + prob.rho2 * q)
    return gG, gQ


def gradient_norm(prob: BlockwiseProblem, G, Q) -> float:
    gG, gQ = gradients(prob, G, Q)
    return float(np.sqrt(np.linalg.norm(gG) ** 2 + sum(np.linalg.norm(g) ** 2 for g in gQ)))


def _eig_psd(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d, V = np.linalg.eigh(M)
    return np.maximum(d, 0.0), V


def solve_sylvester_psd(P, R, rho: float, B: np.ndarray) -> np.ndarray:
    """Solve ``P Z R + rho Z = B`` for Hermitian PSD ``P``, ``R`` and ``rho > 0``.

    ``P`` and ``R`` may be given as matrices or as ``(eigenvalues, eigenvectors)``.
    """
    dp, Up = P if isinstance(P, tuple) else _eig_psd(P)
    dr, Ur = R if isinstance(R, tuple) else _eig_psd(R)
    rotated = _h(Up) @ B @ Ur
    return Up @ (rotated / (np.outer(dp, dr) + rho)) @ _h(Ur)


def _g_system(prob: BlockwiseProblem, Q):
    maps = task_maps(prob, Q)
    XhX = _h(prob.X) @ prob.X
    A = sum(P @ _h(P) for P in maps)
    B = sum(_h(prob.X) @ y @ _h(P) for P, y in zip(maps, prob.Y))
    return XhX, A, B


def _q_system(prob: BlockwiseProblem, G, u: int):
    XGF = prob.X @ G @ prob.F_S
    C = _h(XGF) @ XGF
    f = prob.F[u]
    D = f @ _h(f)
    B = _h(XGF) @ prob.Y[u] @ _h(f)
    return C, D, B


def update_G(prob: BlockwiseProblem, Q) -> np.ndarray:
    """Exact minimizer over ``G`` with ``Q`` fixed."""
    _check(prob, Q=Q)
    _, A, B = _g_system(prob, Q)
    return solve_sylvester_psd(prob.gram_eig, A, prob.rho1, B)


def update_Q(prob: BlockwiseProblem, G: np.ndarray) -> list[np.ndarray]:
    """Exact minimizer over every ``Q_u`` with ``G`` fixed; the tasks decouple."""
    _check(prob, G=G)
    XGF = prob.X @ G @ prob.F_S
    C = _eig_psd(_h(XGF) @ XGF)
    return [solve_sylvester_psd(C, eig, prob.rho2, _h(XGF) @ y @ _h(f))
            for eig, y, f in zip(prob.task_eigs, prob.Y, prob.F)]


def _relative(residual: np.ndarray, *terms: np.ndarray) -> float:
    scale = max(max(np.linalg.norm(t) for t in terms), np.finfo(float).tiny)
    return float(np.linalg.norm(residual) / scale)


def g_residual(prob: BlockwiseProblem, G, Q) -> float:
    """Relative residual of the ``G`` normal equation at ``(G, Q)``."""
    XhX, A, B = _g_system(prob, Q)
    lhs1, lhs2 = XhX @ G @ A, prob.rho1 * G
    return _relative(lhs1 + lhs2 - B, lhs1, lhs2, B)


def q_residual(prob: BlockwiseProblem, G, Q) -> float:
    """Largest relative residual of the per-task ``Q_u`` normal equations."""
    worst = 0.0
    for u, q in enumerate(Q):
        C, D, B = _q_system(prob, G, u)
        lhs1, lhs2 = C @ q @ D, prob.rho2 * q
        worst = max(worst, _relative(lhs1 + lhs2 - B, lhs1, lhs2, B))
    return worst


def lipschitz_estimates(prob: BlockwiseProblem, G, Q) -> tuple[float, float]:
    """Frobenius-norm bounds on the Lipschitz constants of the data-term gradients.

    ``L_G = ||A^T kron X^H X||_F`` with ``A = sum_u P_u P_u^H``, and
    ``L_Q = ||[D_1^T kron C, ..., D_U^T kron C]||_F``.  Both Kronecker norms
    factor into products of Frobenius norms.
    """
    _check(prob, G, Q)
    XhX, A, _ = _g_system(prob, Q)
    L_G = float(np.linalg.norm(A) * np.linalg.norm(XhX))
    XGF = prob.X @ G @ prob.F_S
    c = np.linalg.norm(_h(XGF) @ XGF)
    L_Q = float(np.sqrt(sum((np.linalg.norm(f @ _h(f)) * c) ** 2 for f in prob.F)))
    return L_G, L_Q


def q_step_decrease(prob: BlockwiseProblem, G, Q_old, Q_new) -> float:
    """Objective decrease of an exact ``Q`` step, ``1/2 <dQ, H dQ>``, free of cancellation."""
    XGF = prob.X @ G @ prob.F_S
    return 0.5 * sum(np.linalg.norm(XGF @ (a - b) @ f) ** 2 + prob.rho2 * np.linalg.norm(a - b) ** 2
                     for a, b, f in zip(Q_old, Q_new, prob.F))


def g_step_decrease(prob: BlockwiseProblem, Q, G_old, G_new) -> float:
    """Objective decrease of an exact ``G`` step, ``1/2 <dG, H dG>``."""
    dG = G_old - G_new
    XdG = prob.X @ dG
    return 0.5 * (sum(np.linalg.norm(XdG @ P) ** 2 for P in task_maps(prob, Q))
                  + prob.rho1 * np.linalg.norm(dG) ** 2)


@dataclass
class AoState:
    G: np.ndarray
    Q: list[np.ndarray]
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)
    grad_norm_trace: list[float] = field(default_factory=list)
    decrease_trace: list[float] = field(default_factory=list)
    L_G: float = 0.0
    L_Q: float = 0.0
    converged: bool = False

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def grad_norm(self) -> float:
        return self.grad_norm_trace[-1]


class _StackedTasks:
    """All tasks at once, zero-padded to common ``(d, p)``, in Gram form.

    Padding is exact: padded rows/columns of ``F_u`` and ``Y_u`` are zero, so
    the matching entries of ``Q_u`` see only the ridge term and stay zero.
    Every quantity is built from ``X^H X`` and ``X^H Y_u``, so an iteration
    costs the same for any number of samples ``V``.
    """

    def __init__(self, prob: BlockwiseProblem):
        self.prob = prob
        U = prob.U
        self.d_u = [f.shape[0] for f in prob.F]
        self.p_u = [f.shape[1] for f in prob.F]
        d, p = max(self.d_u), max(self.p_u)
        dtype = np.result_type(prob.X, prob.F_S, *prob.F, *prob.Y)
        Xh = _h(prob.X)
        self.XhX = Xh @ prob.X
        self.F = np.zeros((U, d, p), dtype)
        self.XhY = np.zeros((U, prob.X.shape[1], p), dtype)
        for u, (f, y) in enumerate(zip(prob.F, prob.Y)):
            self.F[u, :f.shape[0], :f.shape[1]] = f
            self.XhY[u, :, :f.shape[1]] = Xh @ y
        self.yy = float(sum(np.linalg.norm(y) ** 2 for y in prob.Y))
        self.Fh = np.conj(np.swapaxes(self.F, 1, 2))
        dD, VD = np.linalg.eigh(self.F @ self.Fh)
        self.dD, self.VD = np.maximum(dD, 0.0), VD
        self.VDh = np.conj(np.swapaxes(VD, 1, 2))
        self.D = self.F @ self.Fh
        self.dX, self.UX = prob.gram_eig
        self.UXh = _h(self.UX)
        self.dtype = dtype

    def pad(self, Q) -> np.ndarray:
        out = np.zeros((len(Q), self.prob.F_S.shape[1], self.F.shape[1]), self.dtype)
        for u, q in enumerate(Q):
            out[u, :, :q.shape[1]] = q
        return out

    def unpad(self, Qs: np.ndarray) -> list[np.ndarray]:
        return [Qs[u, :, :d].copy() for u, d in enumerate(self.d_u)]

    def q_system(self, G):
        """``C = (G F_S)^H X^H X (G F_S)`` and the stacked right-hand sides."""
        GF = G @ self.prob.F_S
        C = _h(GF) @ self.XhX @ GF
        return C, _h(GF) @ self.XhY @ self.Fh

    def solve_Q(self, C, B) -> np.ndarray:
        dC, UC = _eig_psd(C)
        rot = _h(UC) @ B @ self.VD
        return UC @ (rot / (dC[None, :, None] * self.dD[:, None, :] + self.prob.rho2)) @ self.VDh

    def g_system(self, Qs):
        """``A = sum_u P_u P_u^H`` and ``B = sum_u X^H Y_u P_u^H``."""
        P = self.prob.F_S @ Qs @ self.F
        Ph = np.conj(np.swapaxes(P, 1, 2))
        return (P @ Ph).sum(axis=0), (self.XhY @ Ph).sum(axis=0)

    def solve_G(self, A, B) -> np.ndarray:
        dA, VA = _eig_psd(A)
        rot = self.UXh @ B @ VA
        return self.UX @ (rot / (self.dX[:, None] * dA + self.prob.rho1)) @ _h(VA)

    def q_decrease(self, C, dQ) -> float:
        quad = np.vdot(dQ, C @ dQ @ self.D).real
        return 0.5 * float(quad + self.prob.rho2 * np.vdot(dQ, dQ).real)

    def g_decrease(self, A, dG) -> float:
        quad = np.vdot(dG, self.XhX @ dG @ A).real
        return 0.5 * float(quad + self.prob.rho1 * np.vdot(dG, dG).real)

    def evaluate(self, G, Qs, A, BG, C, BQ) -> tuple[float, float]:
        """Objective and joint gradient norm from the two cached systems."""
        rho1, rho2 = self.prob.rho1, self.prob.rho2
        XhXGA = self.XhX @ G @ A
        fit = np.vdot(G, XhXGA).real - 2 * np.vdot(G, BG).real + self.yy
        f = 0.5 * (fit + rho1 * np.vdot(G, G).real + rho2 * np.vdot(Qs, Qs).real)
        gG = XhXGA - BG + rho1 * G
        gQ = C @ Qs @ self.D - BQ + rho2 * Qs
        return float(f), float(np.sqrt(np.vdot(gG, gG).real + np.vdot(gQ, gQ).real))


def alternate(prob: BlockwiseProblem, init_seed: int | None = 0, max_iter: int = 500,
              tol: float = 1e-10, init: tuple | None = None) -> AoState:
    """Alternate exact ``Q`` then ``G`` updates until the objective stalls.

    Stops when one iteration lowers the objective by less than ``tol``.  The
    decrease is evaluated from the exact quadratic decrement of each
    half-step rather than as a difference of two objective values, so it
    stays accurate far below the rounding level of the objective itself.
    ``init`` overrides the seeded Gaussian starting point.
    """
    if max_iter < 1:
        raise InvalidArgument(f"max_iter must be >= 1, got {max_iter}")
    if tol <= 0:
        raise InvalidArgument(f"tol must be positive, got {tol}")
    G, Q = init if init is not None else prob.initial_point(init_seed)
    G, Q = np.array(G), [np.array(q) for q in Q]
    _check(prob, G, Q)
    eng = _StackedTasks(prob)
    G = G.astype(eng.dtype)
    Qs = eng.pad(Q)
    state = AoState(G, Q)
    C, BQ = eng.q_system(G)
    for it in range(1, max_iter + 1):
        Qs_new = eng.solve_Q(C, BQ)
        dec = eng.q_decrease(C, Qs - Qs_new)
        Qs = Qs_new
        A, BG = eng.g_system(Qs)
        G_new = eng.solve_G(A, BG)
        dec += eng.g_decrease(A, G - G_new)
        G = G_new
        C, BQ = eng.q_system(G)
        f, gnorm = eng.evaluate(G, Qs, A, BG, C, BQ)
        state.objective_trace.append(f)
        state.decrease_trace.append(dec)
        state.grad_norm_trace.append(gnorm)
        state.iterations = it
        if dec < tol:
            state.converged = True
            break
    state.G, state.Q = G, eng.unpad(Qs)
    state.L_G, state.L_Q = lipschitz_estimates(prob, state.G, state.Q)
    return state
