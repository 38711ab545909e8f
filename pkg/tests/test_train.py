import numpy as np
import pytest

from risbeam.codebook import build_codebooks
from risbeam.config import GainModel, SystemConfig, TrainConfig
from risbeam.dataset import generate_dataset, split_dataset
from risbeam.errors import FormatError, InvalidArgument
from risbeam.metric import BeamSelection
from risbeam.mtlnet.model import ModelSpec, MtlModel
from risbeam.mtlnet.train import (Accuracy, TrainingDiverged, accuracy_from_labels,
                                  checkpoint_bytes, checkpoint_from_bytes, load_checkpoint,
                                  predict_selection, save_checkpoint, train, validate)
from risbeam.search import CandidateScorer, exhaustive_search

CFG = SystemConfig(Ns=2, NB=2, Ms=2, MB=2, Nt=2, K=2)
SIZES = (3, 3, 3)


def small_spec(**kw):
    return ModelSpec.for_system(CFG, SIZES, conv_channels=4, embed=16, hidden=24, d_k=8, **kw)


@pytest.fixture(scope="module")
def ds():
    d = generate_dataset(CFG, GainModel(), build_codebooks(CFG, SIZES), 60, seed=2)
    return split_dataset(d, 5 / 6, seed=0)


def test_lr_schedule_closed_form():
    tc = TrainConfig()
    assert [tc.lr_at(e) for e in range(10)] == [1e-3] * 5 + [1e-3 * 0.1] * 5


def test_lr_trace_and_report(ds, tmp_path):
    model = MtlModel(small_spec(), seed=0)
    report = train(model, ds, TrainConfig(epochs=10), report_path=tmp_path / "r.csv")
    assert report.lr_trace == [1e-3] * 5 + [1e-3 * 0.1] * 5
    assert len(report.epoch_losses) == 10 and len(report.accuracies) == 10
    assert len(report.batches) == 10 * 4  # 50 training samples in batches of 16
    running = np.cumsum([b.total for b in report.batches]) / np.arange(1, 41)
    np.testing.assert_allclose([b.running for b in report.batches], running, rtol=1e-12)
    text = (tmp_path / "r.csv").read_text()
    assert text.startswith("# train.")
    assert sum(line.startswith("epoch,") for line in text.splitlines()) == 10
    assert report.epoch_totals[-1] < report.epoch_totals[0]


def test_single_sample_overfit_desk_scale():
    cfg = SystemConfig()
    d = generate_dataset(cfg, GainModel(), build_codebooks(cfg, (8, 8, 8)), 2, seed=0)
    d.train_idx, d.val_idx = np.array([0], np.uint32), np.array([1], np.uint32)
    model = MtlModel(ModelSpec.for_system(cfg, (8, 8, 8)), seed=0)
    report = train(model, d, TrainConfig(epochs=100, batch_size=1, lr_step=1000),
                   validate_each_epoch=False)
    losses = [b.total for b in report.batches]
    first = next(i for i, x in enumerate(losses) if x < 0.01)
    assert first < 500
    assert losses[-1] < 0.01


def test_bitwise_reproducible(ds):
    runs = []
    for _ in range(2):
        model = MtlModel(small_spec(), seed=3)
        rep = train(model, ds, TrainConfig(epochs=2, seed=5))
        runs.append(([b.total for b in rep.batches], checkpoint_bytes(model)))
    assert runs[0] == runs[1]
    model = MtlModel(small_spec(), seed=3)
    other = [b.total for b in train(model, ds, TrainConfig(epochs=2, seed=6)).batches]
    assert other != runs[0][0]


def test_divergence_detected(ds):
    bad = split_dataset(generate_dataset(CFG, GainModel(), ds.codebooks, 6, seed=1), 0.5)
    bad.hr = bad.hr.copy()
    bad.hr[:, 0, 1, 1] = np.nan
    with pytest.raises(TrainingDiverged, match="non-finite"):
        train(MtlModel(small_spec()), bad, TrainConfig(epochs=1))


def test_incompatible_model_rejected(ds):
    spec = ModelSpec.for_system(CFG, (4, 3, 3), embed=8, hidden=8, d_k=4)
    with pytest.raises(InvalidArgument):
        train(MtlModel(spec), ds, TrainConfig(epochs=1))


# -- accuracy -------------------------------------------------------------------

def test_accuracy_perfect_copy(ds):
    truth = ds.task_labels(ds.val_idx)
    acc = accuracy_from_labels(truth, truth)
    assert acc.per_task == (1.0, 1.0, 1.0) and acc.overall == 1.0


def test_accuracy_half_on_one_wrong_output():
    acc = accuracy_from_labels((np.array([[1, 0]]),), (np.array([[1, 1]]),))
    assert acc.per_task == (0.5,)


def test_accuracy_random_predictions_binomial():
    rng = np.random.default_rng(0)
    n, C = 4000, 8
    acc = accuracy_from_labels((rng.integers(0, C, n),), (rng.integers(0, C, n),)).per_task[0]
    sigma = np.sqrt((1 / C) * (1 - 1 / C) / n)
    assert abs(acc - 1 / C) <= 3 * sigma


def test_validate_runs_in_eval_mode(ds):
    model = MtlModel(small_spec(), seed=1)
    a, b = validate(model, ds), validate(model, ds)
    assert a == b and isinstance(a, Accuracy)
    assert all(0 <= x <= 1 for x in a.per_task)
    assert a.overall == pytest.approx(np.mean(a.per_task))


def test_predict_selection_valid_and_dominated(ds):
    model = MtlModel(small_spec(), seed=2)
    train(model, ds, TrainConfig(epochs=2), validate_each_epoch=False)
    for i in map(int, ds.val_idx):
        ch = ds.channel(i)
        sel = predict_selection(model, ch, CFG)
        assert isinstance(sel, BeamSelection)
        sel.validate(ds.codebooks, CFG)
        assert predict_selection(model, ch, CFG) == sel
        es = exhaustive_search(ch, ds.codebooks, CFG)
        assert CandidateScorer(ch, ds.codebooks, CFG).rate(sel) <= es.best_rate


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(ds, tmp_path):
    model = MtlModel(small_spec(), seed=4)
    train(model, ds, TrainConfig(epochs=1), validate_each_epoch=False)
    save_checkpoint(model, tmp_path / "m.rblm", epoch=1)
    back, epoch = load_checkpoint(tmp_path / "m.rblm")
    assert epoch == 1 and back.spec == model.spec
    assert checkpoint_bytes(back, 1) == (tmp_path / "m.rblm").read_bytes()
    hr, hk = ds.hr[:3], ds.hk[:3]
    for x, y in zip(model.forward(hr, hk), back.forward(hr, hk)):
        assert np.array_equal(x.data, y.data)


def test_checkpoint_corruption(ds):
    blob = checkpoint_bytes(MtlModel(small_spec()))
    assert blob[:4] == b"RBLM"
    with pytest.raises(FormatError):
        checkpoint_from_bytes(b"RBLX" + blob[4:])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(blob[:-4])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(blob + b"\0")
