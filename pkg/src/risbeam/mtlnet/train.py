"""Training loop, validation, prediction and checkpoint I/O for :class:`MtlModel`."""

from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..channel import ChannelSet
from ..config import SystemConfig, TrainConfig
from ..dataset import BeamDataset, iterate_batches, to_planes
from ..errors import FormatError, InvalidArgument, RisBeamError
from ..metric import BeamSelection
from . import tensor as T
from .model import ModelSpec, MtlModel, total_loss

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RBLM"
TASKS = ("user", "ris", "bs")


class TrainingDiverged(RisBeamError):
    pass


class Adam:
    """Adam with bias correction.  ``lr`` is set by the caller each epoch."""

    def __init__(self, params: list[T.Tensor], lr: float, betas=(0.8, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1 ** t
        c2 = 1.0 - self.b2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class Accuracy:
    per_task: tuple[float, float, float]

    @property
    def overall(self) -> float:
        return float(np.mean(self.per_task))


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    lr: float
    losses: tuple[float, float, float]
    total: float
    running: float


@dataclass
class TrainReport:
    batches: list[BatchRecord] = field(default_factory=list)
    epoch_losses: list[tuple[float, float, float]] = field(default_factory=list)
    epoch_totals: list[float] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)
    accuracies: list[Accuracy] = field(default_factory=list)

    def to_csv(self, comments: dict[str, str] | None = None) -> str:
        out = io.StringIO()
        for k, v in sorted((comments or {}).items()):
            out.write(f"# {k}={v}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["kind", "epoch", "batch", "lr", "loss_user", "loss_ris", "loss_bs",
                    "loss_total", "loss_running", "acc_user", "acc_ris", "acc_bs", "acc_overall"])
        for r in self.batches:
            w.writerow(["batch", r.epoch, r.batch, repr(r.lr), *map(repr, r.losses),
                        repr(r.total), repr(r.running), "", "", "", ""])
        for e, (losses, total, lr) in enumerate(zip(self.epoch_losses, self.epoch_totals, self.lr_trace)):
            acc = self.accuracies[e] if e < len(self.accuracies) else None
            acc_cols = [*map(repr, acc.per_task), repr(acc.overall)] if acc else [""] * 4
            w.writerow(["epoch", e + 1, "", repr(lr), *map(repr, losses), repr(total), "", *acc_cols])
        return out.getvalue()


def train(model: MtlModel, ds: BeamDataset, tc: TrainConfig, validate_each_epoch: bool = True,
          report_path: str | Path | None = None) -> TrainReport:
    """Mini-batch training with Adam and a step-decay learning rate.

    Batches are reshuffled every epoch from a seed derived from
    ``(tc.seed, epoch)``; dropout masks come from a generator seeded by
    ``tc.seed``.  A fixed seed gives a bitwise-reproducible loss trace.
    """
    _check_compatible(model, ds)
    if len(ds.train_idx) == 0:
        raise InvalidArgument("dataset has no training split")
    spec = model.spec
    if spec.dropout != tc.dropout:
        logger.warning("model dropout %.3g differs from TrainConfig dropout %.3g; using the model's",
                       spec.dropout, tc.dropout)
    opt = Adam(model.parameters(), tc.lr, tc.betas, tc.eps)
    rng = np.random.default_rng(tc.seed)
    report = TrainReport()
    running, seen = 0.0, 0
    for epoch in range(tc.epochs):
        opt.lr = tc.lr_at(epoch)
        report.lr_trace.append(opt.lr)
        sums, count = np.zeros(3), 0
        for b, batch in enumerate(iterate_batches(ds, "train", tc.batch_size,
                                                  shuffle_seed=tc.seed * 1000003 + epoch)):
            model.zero_grad()
            loss, parts = total_loss(model, batch.hr, batch.hk, batch.labels, training=True, rng=rng)
            total = float(loss.data)
            if not np.isfinite(total):
                raise TrainingDiverged(f"non-finite loss {total} at epoch {epoch + 1}, batch {b} "
                                       f"(task losses {parts}, lr {opt.lr})")
            loss.backward()
            opt.step()
            seen += 1
            running += (total - running) / seen
            n = batch.batch_size
            sums += np.asarray(parts) * n
            count += n
            report.batches.append(BatchRecord(epoch + 1, b, opt.lr, tuple(parts), total, running))
        means = tuple(float(x) for x in sums / count)
        report.epoch_losses.append(means)
        report.epoch_totals.append(float(np.mean(means)))
        if validate_each_epoch and len(ds.val_idx):
            report.accuracies.append(validate(model, ds))
        logger.info("epoch %d: loss %.4f lr %.1e", epoch + 1, report.epoch_totals[-1], opt.lr)
    if report_path is not None:
        Path(report_path).write_text(report.to_csv({"train." + k: v for k, v in tc.to_dict().items()}))
    return report


def predict_labels(model: MtlModel, hr: np.ndarray, hk: np.ndarray) -> tuple[np.ndarray, ...]:
    """Argmax per softmax group in evaluation mode."""
    logits = model.forward(hr, hk, training=False)
    return tuple(np.argmax(lg.data, axis=-1) for lg in logits)


def accuracy_from_labels(pred: tuple[np.ndarray, ...], truth: tuple[np.ndarray, ...]) -> Accuracy:
    """Fraction of matching outputs per task, averaged over samples and groups."""
    return Accuracy(tuple(float(np.mean(np.asarray(p) == np.asarray(t))) for p, t in zip(pred, truth)))


def validate(model: MtlModel, ds: BeamDataset, split: str = "val") -> Accuracy:
    """Per-task accuracy with one sample per forward pass and dropout off."""
    preds: list[list[np.ndarray]] = [[], [], []]
    truth: list[list[np.ndarray]] = [[], [], []]
    for batch in iterate_batches(ds, split, batch_size=1):
        for u, (p, t) in enumerate(zip(predict_labels(model, batch.hr, batch.hk), batch.labels)):
            preds[u].append(p)
            truth[u].append(t)
    if not preds[0]:
        raise InvalidArgument(f"split {split!r} is empty")
    return accuracy_from_labels(tuple(np.concatenate(p) for p in preds),
                                tuple(np.concatenate(t) for t in truth))


def predict_selection(model: MtlModel, ch: ChannelSet, cfg: SystemConfig) -> BeamSelection:
    ch.check(cfg)
    hr = to_planes(ch.H_r)[None]
    hk = np.stack([to_planes(h) for h in ch.H_k])[None]
    f, s, w = predict_labels(model, hr, hk)
    return BeamSelection(tuple(int(x) for x in f[0]), tuple(int(x) for x in s[0]),
                         tuple(int(x) for x in w[0]))


def _check_compatible(model: MtlModel, ds: BeamDataset) -> None:
    expected = ModelSpec.for_system(ds.cfg, ds.codebooks.sizes)
    s = model.spec
    for name in ("Nr", "M", "Nt", "K", "Ms", "Ns", "n_f", "n_s", "n_w"):
        if getattr(s, name) != getattr(expected, name):
            raise InvalidArgument(f"model {name}={getattr(s, name)} but dataset needs {getattr(expected, name)}")


# -- checkpoints -------------------------------------------------------------

def checkpoint_bytes(model: MtlModel, epoch: int = 0) -> bytes:
    header = {f"spec.{k}": v for k, v in model.spec.to_dict().items()}
    header.update({"format": "RBLM", "seed": str(model.seed), "epoch": str(epoch),
                   "params": ";".join(f"{n}:{'x'.join(map(str, t.shape))}"
                                      for n, t in model.params.items())})
    text = "".join(f"{k}={v}\n" for k, v in sorted(header.items())).encode()
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<I", len(text)))
    out.write(text)
    for t in model.params.values():
        out.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return out.getvalue()


def save_checkpoint(model: MtlModel, path: str | Path, epoch: int = 0) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, epoch))


def checkpoint_from_bytes(blob: bytes) -> tuple[MtlModel, int]:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not an RBLM checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", blob, 4)
    try:
        header = dict(line.split("=", 1) for line in blob[8:8 + hlen].decode().splitlines() if line)
        spec = ModelSpec.from_dict({k[5:]: v for k, v in header.items() if k.startswith("spec.")})
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    model = MtlModel(spec, int(header["seed"]))
    listed = [item.split(":")[0] for item in header["params"].split(";")]
    if listed != list(model.params):
        raise FormatError("checkpoint parameter list does not match the architecture")
    pos = 8 + hlen
    for t in model.params.values():
        size = t.data.size * 4
        if pos + size > len(blob):
            raise FormatError("checkpoint is truncated")
        t.data = np.frombuffer(blob, "<f4", t.data.size, pos).reshape(t.shape).astype(np.float32)
        pos += size
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after checkpoint payload")
    return model, int(header["epoch"])


def load_checkpoint(path: str | Path) -> tuple[MtlModel, int]:
    return checkpoint_from_bytes(Path(path).read_bytes())
