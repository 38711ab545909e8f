"""Supervised beam-selection datasets.

Each sample is one channel realization stored as real/imaginary float32
planes plus the searched beam labels.  Sample ``t`` is fully determined by a
per-sample seed derived from ``(seed, t)``, so generation is order
independent and any label can be re-derived by re-running the labeler.

File layout (little-endian)::

    b"RBL1"
    u32 header length, header text (sorted ``key=value`` lines, UTF-8)
    codebooks F, S, W        float64 (real, imag) interleaved
    sample seeds             u64   [n]
    H_r planes               f32   [n, 2, Nr, M]
    H_k planes               f32   [n, K, 2, M, Nt]
    labels                   u32   [n, K + Ms + Ns]
    train indices            u32   [n_train]
    validation indices       u32   [n_val]
"""

from __future__ import annotations

import io
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .channel import ChannelSet, sample_channel_set
from .codebook import CodebookTriple
from .config import GainModel, SystemConfig
from .errors import BudgetExceeded, FormatError, InvalidArgument, RisBeamError
from .metric import BeamSelection
from .search import DEFAULT_BUDGET, DEFAULT_T_MAX, exhaustive_search, ias_search

logger = logging.getLogger(__name__)

MAGIC = b"RBL1"
LABELERS = ("ias", "es")


class LabelingError(RisBeamError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"labeling sample {index} failed: {cause}")
        self.index = index


def derive_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def to_planes(H: np.ndarray) -> np.ndarray:
    """Complex matrix -> ``(2, rows, cols)`` float32 (real, imaginary)."""
    return np.stack([H.real, H.imag]).astype(np.float32)


def from_planes(planes: np.ndarray) -> np.ndarray:
    return planes[0].astype(np.float64) + 1j * planes[1].astype(np.float64)


@dataclass
class BeamDataset:
    cfg: SystemConfig
    gm: GainModel
    codebooks: CodebookTriple
    seed: int
    labeler: str
    L_B: int
    L_U: int
    t_max: int
    sample_seeds: np.ndarray
    hr: np.ndarray
    hk: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint32))
    val_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint32))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def label_slices(self) -> tuple[slice, slice, slice]:
        K, Ms = self.cfg.K, self.cfg.Ms
        return slice(0, K), slice(K, K + Ms), slice(K + Ms, None)

    def task_labels(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = self.labels[idx]
        return tuple(rows[..., s].astype(np.intp) for s in self.label_slices)

    def channel(self, i: int) -> ChannelSet:
        """The stored (float32-rounded) channel of sample ``i``."""
        users = tuple(from_planes(p) for p in self.hk[i])
        return ChannelSet(from_planes(self.hr[i]), users)

    def selection(self, i: int) -> BeamSelection:
        return BeamSelection.from_flat(self.labels[i], self.cfg)

    def indices(self, split: str) -> np.ndarray:
        if split == "train":
            return self.train_idx
        if split in ("val", "validation"):
            return self.val_idx
        if split == "all":
            return np.arange(len(self), dtype=np.uint32)
        raise InvalidArgument(f"unknown split {split!r}")

    # -- persistence -----------------------------------------------------

    def header(self) -> dict[str, str]:
        h = {f"cfg.{k}": v for k, v in self.cfg.to_dict().items()}
        h.update({f"gain.{k}": v for k, v in self.gm.to_dict().items()})
        h.update({
            "format": "RBL1",
            "codebook.sizes": ",".join(map(str, self.codebooks.sizes)),
            "codebook.sha256": self.codebooks.digest(),
            "seed": str(self.seed),
            "labeler": self.labeler,
            "L_B": str(self.L_B),
            "L_U": str(self.L_U),
            "t_max": str(self.t_max),
            "n_samples": str(len(self)),
            "n_train": str(len(self.train_idx)),
            "n_val": str(len(self.val_idx)),
        })
        return h

    def to_bytes(self) -> bytes:
        text = "".join(f"{k}={v}\n" for k, v in sorted(self.header().items())).encode()
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", len(text)))
        out.write(text)
        for book in (self.codebooks.F, self.codebooks.S, self.codebooks.W):
            out.write(np.ascontiguousarray(book, dtype="<c16").tobytes())
        out.write(np.asarray(self.sample_seeds, dtype="<u8").tobytes())
        out.write(np.ascontiguousarray(self.hr, dtype="<f4").tobytes())
        out.write(np.ascontiguousarray(self.hk, dtype="<f4").tobytes())
        out.write(np.ascontiguousarray(self.labels, dtype="<u4").tobytes())
        out.write(np.asarray(self.train_idx, dtype="<u4").tobytes())
        out.write(np.asarray(self.val_idx, dtype="<u4").tobytes())
        return out.getvalue()

    def write(self, path: str | Path, sidecar: bool = True) -> None:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        if sidecar:
            meta = dict(self.header())
            meta["label_agreement_note"] = "labels index F, S, W in stored order"
            Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "BeamDataset":
        if blob[:4] != MAGIC:
            raise FormatError("not an RBL1 dataset (bad magic)")
        (hlen,) = struct.unpack_from("<I", blob, 4)
        pos = 8 + hlen
        try:
            lines = blob[8:pos].decode().splitlines()
            header = dict(line.split("=", 1) for line in lines if line)
        except (UnicodeDecodeError, ValueError) as exc:
            raise FormatError(f"corrupt dataset header: {exc}") from None
        cfg = SystemConfig.from_dict({k[4:]: v for k, v in header.items() if k.startswith("cfg.")})
        gm = GainModel.from_dict({k[5:]: v for k, v in header.items() if k.startswith("gain.")})
        n_f, n_s, n_w = (int(x) for x in header["codebook.sizes"].split(","))
        n = int(header["n_samples"])
        n_train, n_val = int(header["n_train"]), int(header["n_val"])
        n_labels = cfg.K + cfg.Ms + cfg.Ns

        def take(dtype, count, shape):
            nonlocal pos
            size = np.dtype(dtype).itemsize * count
            if pos + size > len(blob):
                raise FormatError("dataset file is truncated")
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).reshape(shape)
            pos += size
            return arr.copy()

        F = take("<c16", n_f * cfg.Nt, (n_f, cfg.Nt)).astype(np.complex128)
        S = take("<c16", n_s * cfg.MB, (n_s, cfg.MB)).astype(np.complex128)
        W = take("<c16", n_w * cfg.NB, (n_w, cfg.NB)).astype(np.complex128)
        cb = CodebookTriple(F, S, W)
        if cb.digest() != header["codebook.sha256"]:
            raise FormatError("codebook hash does not match the embedded codebooks")
        seeds = take("<u8", n, (n,)).astype(np.uint64)
        hr = take("<f4", n * 2 * cfg.Nr * cfg.M, (n, 2, cfg.Nr, cfg.M)).astype(np.float32)
        hk = take("<f4", n * cfg.K * 2 * cfg.M * cfg.Nt,
                  (n, cfg.K, 2, cfg.M, cfg.Nt)).astype(np.float32)
        labels = take("<u4", n * n_labels, (n, n_labels)).astype(np.uint32)
        train = take("<u4", n_train, (n_train,)).astype(np.uint32)
        val = take("<u4", n_val, (n_val,)).astype(np.uint32)
        if pos != len(blob):
            raise FormatError(f"{len(blob) - pos} trailing bytes after dataset payload")
        ds = cls(cfg, gm, cb, int(header["seed"]), header["labeler"], int(header["L_B"]),
                 int(header["L_U"]), int(header["t_max"]), seeds, hr, hk, labels, train, val)
        ds.validate()
        return ds

    @classmethod
    def read(cls, path: str | Path) -> "BeamDataset":
        return cls.from_bytes(Path(path).read_bytes())

    def validate(self) -> None:
        bounds = np.array([len(self.codebooks.F)] * self.cfg.K
                          + [len(self.codebooks.S)] * self.cfg.Ms
                          + [len(self.codebooks.W)] * self.cfg.Ns)
        if len(self) and np.any(self.labels >= bounds):
            raise FormatError("label outside its codebook")
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise FormatError("train and validation splits overlap")
        for idx in (self.train_idx, self.val_idx):
            if idx.size and idx.max() >= len(self):
                raise FormatError("split index out of range")


def _label_one(args):
    cfg, gm, cb, L_B, L_U, t_max, labeler, budget, sample_seed = args
    ch = sample_channel_set(cfg, gm, L_B, L_U, sample_seed)
    if labeler == "es":
        report = exhaustive_search(ch, cb, cfg, budget=budget)
    else:
        # fixed start: labels depend on the channel alone
        start = BeamSelection((0,) * cfg.K, (0,) * cfg.Ms, (0,) * cfg.Ns)
        report = ias_search(ch, cb, cfg, t_max=t_max, init=start, budget=budget)
    users = np.stack([to_planes(h) for h in ch.H_k])
    return to_planes(ch.H_r), users, np.asarray(report.best_selection.as_tuple(), np.uint32)


def generate_dataset(cfg: SystemConfig, gm: GainModel, cb: CodebookTriple, n_samples: int,
                     seed: int = 0, labeler: str = "ias", L_B: int = 3, L_U: int = 3,
                     t_max: int = DEFAULT_T_MAX, budget: int = DEFAULT_BUDGET,
                     workers: int = 1) -> BeamDataset:
    """Draw ``n_samples`` channels and label each with the chosen search."""
    if n_samples < 1:
        raise InvalidArgument(f"n_samples must be >= 1, got {n_samples}")
    if labeler not in LABELERS:
        raise InvalidArgument(f"labeler must be one of {LABELERS}, got {labeler!r}")
    seeds = np.array([derive_seed(seed, t) for t in range(n_samples)], dtype=np.uint64)
    jobs = [(cfg, gm, cb, L_B, L_U, t_max, labeler, budget, int(s)) for s in seeds]

    results = []
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            it = pool.map(_label_one, jobs, chunksize=max(1, n_samples // (8 * workers)))
            for t in range(n_samples):
                try:
                    results.append(next(it))
                except BudgetExceeded as exc:
                    raise LabelingError(t, exc) from exc
    else:
        for t, job in enumerate(jobs):
            try:
                results.append(_label_one(job))
            except BudgetExceeded as exc:
                raise LabelingError(t, exc) from exc
            if (t + 1) % 1000 == 0:
                logger.info("labeled %d / %d samples", t + 1, n_samples)

    hr = np.stack([r[0] for r in results])
    hk = np.stack([r[1] for r in results])
    labels = np.stack([r[2] for r in results])
    return BeamDataset(cfg, gm, cb, seed, labeler, L_B, L_U, t_max, seeds, hr, hk, labels)


def split_dataset(ds: BeamDataset, train_fraction: float, seed: int = 0) -> BeamDataset:
    """Shuffled train/validation partition; ``5/6`` gives the 5:1 ratio."""
    if not 0 < train_fraction < 1:
        raise InvalidArgument(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(ds)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise InvalidArgument(f"fraction {train_fraction} leaves an empty split for {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    ds.train_idx = np.sort(perm[:n_train]).astype(np.uint32)
    ds.val_idx = np.sort(perm[n_train:]).astype(np.uint32)
    return ds


@dataclass
class Batch:
    hr: np.ndarray
    hk: np.ndarray
    labels: tuple[np.ndarray, np.ndarray, np.ndarray]
    indices: np.ndarray

    @property
    def batch_size(self) -> int:
        return len(self.indices)


def iterate_batches(ds: BeamDataset, split: str = "train", batch_size: int = 16,
                    shuffle_seed: int | None = None) -> Iterator[Batch]:
    """One pass over ``split``; the last batch may be short."""
    if batch_size < 1:
        raise InvalidArgument(f"batch_size must be >= 1, got {batch_size}")
    idx = np.asarray(ds.indices(split), dtype=np.intp)
    if shuffle_seed is not None:
        idx = idx[np.random.default_rng(shuffle_seed).permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        yield Batch(ds.hr[chunk], ds.hk[chunk], ds.task_labels(chunk), chunk)
