"""Multi-task beam classifier: shared residual blocks, per-task heads and
self-attention for the BS beam task.

Data flow for one sample::

    H_r (2 x Nr x M), H_k (2 x M x Nt)  --two residual blocks-->  same shapes
    flatten + per-link projection                                 -> e_r, e_k  (width E)
    task 1: concat_k(e_r + e_k)          -> FC -> ReLU -> dropout -> FC -> K  x |F|
    task 2: concat(e_r, e_1 .. e_K)      -> FC -> ReLU -> dropout -> FC -> Ms x |S|
    attention over tokens (e_r, e_1..e_K) -> h_W (width K*E)
    task 3: h_W + concat_k(e_r + e_k)    -> FC -> ReLU -> dropout -> FC -> Ns x |W|
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..config import SystemConfig
from ..errors import ConfigError, InvalidArgument
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ModelSpec:
    """Architecture dimensions.  Everything the checkpoint needs to rebuild a model."""

    Nr: int
    M: int
    Nt: int
    K: int
    Ms: int
    Ns: int
    n_f: int
    n_s: int
    n_w: int
    conv_channels: int = 8
    kernel: int = 3
    n_blocks: int = 2
    embed: int = 128
    hidden: int = 256
    d_k: int = 64
    dropout: float = 0.3
    share_blocks: bool = True
    phase_align: bool = True

    def __post_init__(self):
        for f in fields(self):
            if f.type in ("int", int) and getattr(self, f.name) < 1:
                raise ConfigError(f"model {f.name} must be >= 1, got {getattr(self, f.name)}")
        if self.kernel % 2 == 0:
            raise ConfigError(f"model kernel must be odd, got {self.kernel}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"model dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def for_system(cls, cfg: SystemConfig, sizes: tuple[int, int, int], **kw) -> "ModelSpec":
        n_f, n_s, n_w = sizes
        return cls(Nr=cfg.Nr, M=cfg.M, Nt=cfg.Nt, K=cfg.K, Ms=cfg.Ms, Ns=cfg.Ns,
                   n_f=n_f, n_s=n_s, n_w=n_w, **kw)

    def to_dict(self) -> dict[str, str]:
        return {k: (str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v))
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "ModelSpec":
        kwargs = {}
        for f in fields(cls):
            raw = values[f.name]
            if f.type in ("bool", bool):
                kwargs[f.name] = raw == "true"
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)

    @property
    def n_tokens(self) -> int:
        return self.K + 1

    def prediction_multiplies(self) -> int:
        """Multiplications for one forward pass (convolutions plus FC layers)."""
        c, k2 = self.conv_channels, self.kernel ** 2
        per_pixel = self.n_blocks * (2 * c * k2 + c * 2 * k2)
        resnet = per_pixel * (self.Nr * self.M + self.K * self.M * self.Nt)
        E, H, K, t = self.embed, self.hidden, self.K, self.n_tokens
        projections = 2 * self.Nr * self.M * E + K * 2 * self.M * self.Nt * E
        task1 = K * E * H + H * K * self.n_f
        task2 = t * E * H + H * self.Ms * self.n_s
        attention = 3 * t * E * self.d_k + 2 * t * t * self.d_k + t * self.d_k * K * E
        task3 = K * E * H + H * self.Ns * self.n_w
        return resnet + projections + task1 + task2 + attention + task3


def align_phase(planes: np.ndarray) -> np.ndarray:
    """Rotate each complex matrix so its ``[0, 0]`` entry is real and non-negative.

    ``planes`` is ``(..., 2, rows, cols)``.  The sum rate is unchanged by a
    common phase on any one link, so this removes a nuisance variable from
    the input without losing label information.
    """
    re, im = planes[..., 0, :, :], planes[..., 1, :, :]
    ref_re, ref_im = re[..., :1, :1], im[..., :1, :1]
    mag = np.sqrt(ref_re * ref_re + ref_im * ref_im)
    safe = np.where(mag > 0, mag, 1)
    c = np.where(mag > 0, ref_re / safe, 1)
    s = np.where(mag > 0, ref_im / safe, 0)
    # multiply by exp(-j angle(ref))
    return np.stack([re * c + im * s, im * c - re * s], axis=-3).astype(planes.dtype)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return T.parameter(rng.uniform(-bound, bound, size=shape))


class MtlModel:
    """Parameters are held in ``self.params`` (name -> Tensor) in declaration order."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        c, k = spec.conv_channels, spec.kernel
        groups = ["shared"] if spec.share_blocks else ["link_r", "link_u"]
        for g in groups:
            for b in range(spec.n_blocks):
                p[f"{g}.block{b}.conv1.w"] = _uniform(rng, (c, 2, k, k), 2 * k * k)
                p[f"{g}.block{b}.conv1.b"] = _uniform(rng, (c,), 2 * k * k)
                p[f"{g}.block{b}.conv2.w"] = _uniform(rng, (2, c, k, k), c * k * k)
                p[f"{g}.block{b}.conv2.b"] = _uniform(rng, (2,), c * k * k)
        E, H, K = spec.embed, spec.hidden, spec.K
        self._fc(p, rng, "proj_r", 2 * spec.Nr * spec.M, E)
        self._fc(p, rng, "proj_u", 2 * spec.M * spec.Nt, E)
        self._fc(p, rng, "task1.fc1", K * E, H)
        self._fc(p, rng, "task1.fc2", H, K * spec.n_f)
        self._fc(p, rng, "task2.fc1", spec.n_tokens * E, H)
        self._fc(p, rng, "task2.fc2", H, spec.Ms * spec.n_s)
        self._fc(p, rng, "attn.q", E, spec.d_k)
        self._fc(p, rng, "attn.k", E, spec.d_k)
        self._fc(p, rng, "attn.v", E, spec.d_k)
        self._fc(p, rng, "attn.out", spec.n_tokens * spec.d_k, K * E)
        self._fc(p, rng, "task3.fc1", K * E, H)
        self._fc(p, rng, "task3.fc2", H, spec.Ns * spec.n_w)
        self.params = p

    @staticmethod
    def _fc(p, rng, name, n_in, n_out):
        p[f"{name}.w"] = _uniform(rng, (n_in, n_out), n_in)
        p[f"{name}.b"] = _uniform(rng, (n_out,), n_in)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def _layer(self, name: str, x: Tensor) -> Tensor:
        return T.linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def residual_block(self, group: str, b: int, x: Tensor) -> Tensor:
        p = self.params
        h = T.conv2d(x, p[f"{group}.block{b}.conv1.w"], p[f"{group}.block{b}.conv1.b"])
        h = T.conv2d(T.relu(h), p[f"{group}.block{b}.conv2.w"], p[f"{group}.block{b}.conv2.b"])
        return T.residual_add(h, x)

    def _blocks(self, group: str, x: Tensor) -> Tensor:
        for b in range(self.spec.n_blocks):
            x = self.residual_block(group, b, x)
        return x

    def shared_forward(self, hr: Tensor, hk: Tensor) -> tuple[Tensor, Tensor]:
        """Residual features for ``hr`` ``(B, 2, Nr, M)`` and ``hk`` ``(B, K, 2, M, Nt)``.

        Both outputs keep their input shapes.
        """
        s = self.spec
        if hr.shape[1:] != (2, s.Nr, s.M) or hk.shape[1:] != (s.K, 2, s.M, s.Nt):
            raise InvalidArgument(f"batch shapes {hr.shape}, {hk.shape} do not match the model")
        g_r, g_u = ("shared", "shared") if s.share_blocks else ("link_r", "link_u")
        B = hr.shape[0]
        feat_r = self._blocks(g_r, hr)
        feat_u = self._blocks(g_u, T.reshape(hk, (B * s.K, 2, s.M, s.Nt)))
        return feat_r, T.reshape(feat_u, hk.shape)

    def embed(self, feat_r: Tensor, feat_u: Tensor) -> tuple[Tensor, Tensor]:
        """Project each link to the common width: ``(B, E)`` and ``(B, K, E)``."""
        B = feat_r.shape[0]
        e_r = self._layer("proj_r", T.reshape(feat_r, (B, -1)))
        e_u = self._layer("proj_u", T.reshape(feat_u, (B, self.spec.K, -1)))
        return e_r, e_u

    def _head(self, name: str, x: Tensor, groups: int, training: bool, rng) -> Tensor:
        h = T.relu(self._layer(f"{name}.fc1", x))
        h = T.dropout(h, self.spec.dropout, training, rng)
        out = self._layer(f"{name}.fc2", h)
        return T.reshape(out, (x.shape[0], groups, -1))

    def user_inputs(self, e_r: Tensor, e_u: Tensor) -> Tensor:
        """Stacked ``e_r + e_k`` for every user, flattened to ``(B, K*E)``."""
        B, K, E = e_u.shape
        summed = T.add(T.reshape(e_r, (B, 1, E)), e_u)
        return T.reshape(summed, (B, K * E))

    def task1_forward(self, e_r, e_u, training=False, rng=None) -> Tensor:
        return self._head("task1", self.user_inputs(e_r, e_u), self.spec.K, training, rng)

    def task2_forward(self, e_r, e_u, training=False, rng=None) -> Tensor:
        B = e_r.shape[0]
        x = T.concat([e_r, T.reshape(e_u, (B, -1))], axis=1)
        return self._head("task2", x, self.spec.Ms, training, rng)

    def tokens(self, e_r: Tensor, e_u: Tensor) -> Tensor:
        B, K, E = e_u.shape
        return T.concat([T.reshape(e_r, (B, 1, E)), e_u], axis=1)

    def attention(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        p = self.params
        pair = lambda name: (p[f"attn.{name}.w"], p[f"attn.{name}.b"])  # noqa: E731
        return self_attention(tokens, pair("q"), pair("k"), pair("v"), pair("out"), self.spec.d_k)

    def task3_forward(self, e_r, e_u, training=False, rng=None) -> Tensor:
        h_w, _ = self.attention(self.tokens(e_r, e_u))
        x = T.add(h_w, self.user_inputs(e_r, e_u))
        return self._head("task3", x, self.spec.Ns, training, rng)

    def forward(self, hr, hk, training: bool = False, rng=None):
        """Logits ``(B, K, |F|)``, ``(B, Ms, |S|)``, ``(B, Ns, |W|)``."""
        if isinstance(hr, Tensor):
            hr, hk = hr.data, hk.data
        if self.spec.phase_align:
            hr, hk = align_phase(np.asarray(hr)), align_phase(np.asarray(hk))
        hr, hk = T.constant(hr), T.constant(hk)
        e_r, e_u = self.embed(*self.shared_forward(hr, hk))
        return (self.task1_forward(e_r, e_u, training, rng),
                self.task2_forward(e_r, e_u, training, rng),
                self.task3_forward(e_r, e_u, training, rng))


def self_attention(tokens: Tensor, q: tuple, k: tuple, v: tuple, out: tuple,
                   d_k: int | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product self-attention over ``tokens`` of shape ``(B, T, E)``.

    ``q``, ``k``, ``v`` and ``out`` are ``(weight, bias)`` pairs.  Returns
    ``relu(linear(softmax(Z_Q Z_K^T / sqrt(d_k)) Z_V))`` with the attended
    tokens flattened before the output map, plus the attention weights.
    """
    B, n_tok, _ = tokens.shape
    zq = T.linear(tokens, *q)
    zk = T.linear(tokens, *k)
    zv = T.linear(tokens, *v)
    d_k = d_k or zk.shape[-1]
    scores = T.scale(T.matmul(zq, T.swapaxes(zk, 1, 2)), 1.0 / math.sqrt(d_k))
    weights = T.softmax_rows(scores)
    mixed = T.reshape(T.matmul(weights, zv), (B, n_tok * zv.shape[-1]))
    return T.relu(T.linear(mixed, *out)), weights


def total_loss(model: MtlModel, hr, hk, labels: tuple[np.ndarray, np.ndarray, np.ndarray],
               training: bool = False, rng=None) -> tuple[Tensor, list[float]]:
    """Mean of the three task cross-entropies and the per-task values."""
    logits = model.forward(hr, hk, training, rng)
    losses = [T.cross_entropy(lg, lb) for lg, lb in zip(logits, labels)]
    total = T.scale(T.add(T.add(losses[0], losses[1]), losses[2]), 1.0 / 3.0)
    return total, [float(l.data) for l in losses]
