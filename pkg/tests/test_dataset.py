import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from risbeam.channel import sample_channel_set
from risbeam.codebook import build_codebooks
from risbeam.config import GainModel, SystemConfig
from risbeam.dataset import (BeamDataset, LabelingError, derive_seed, from_planes,
                             generate_dataset, iterate_batches, split_dataset, to_planes)
from risbeam.errors import FormatError, InvalidArgument
from risbeam.metric import sum_rate
from risbeam.search import exhaustive_search, ias_search
from risbeam.metric import BeamSelection

CFG = SystemConfig(Ns=2, NB=2, Ms=2, MB=2, Nt=2, K=2)
SIZES = (3, 3, 3)


@pytest.fixture(scope="module")
def ds():
    d = generate_dataset(CFG, GainModel(), build_codebooks(CFG, SIZES), 12, seed=5)
    return split_dataset(d, 5 / 6, seed=1)


def test_singleton_codebooks_label_zero():
    d = generate_dataset(CFG, GainModel(), build_codebooks(CFG, (1, 1, 1)), 1, seed=0)
    assert d.labels.tolist() == [[0] * 6]


def test_regenerate_byte_identical(ds):
    again = split_dataset(generate_dataset(CFG, GainModel(), ds.codebooks, 12, seed=5), 5 / 6, seed=1)
    assert again.to_bytes() == ds.to_bytes()


def test_parallel_generation_matches_serial(ds):
    par = generate_dataset(CFG, GainModel(), ds.codebooks, 12, seed=5, workers=2)
    split_dataset(par, 5 / 6, seed=1)
    assert par.to_bytes() == ds.to_bytes()


def test_round_trip_bytes(ds, tmp_path):
    path = tmp_path / "d.rbl"
    ds.write(path)
    back = BeamDataset.read(path)
    assert back.to_bytes() == ds.to_bytes()
    back.write(tmp_path / "e.rbl", sidecar=False)
    assert (tmp_path / "e.rbl").read_bytes() == path.read_bytes()
    meta = json.loads((tmp_path / "d.rbl.meta.json").read_text())
    assert meta["n_samples"] in (12, "12")


def test_file_layout(ds):
    blob = ds.to_bytes()
    assert blob[:4] == b"RBL1"
    hlen = int.from_bytes(blob[4:8], "little")
    lines = blob[8:8 + hlen].decode().splitlines()
    assert lines == sorted(lines)
    assert "codebook.sha256=" + ds.codebooks.digest() in lines


def test_corrupt_files_rejected(ds):
    blob = ds.to_bytes()
    with pytest.raises(FormatError):
        BeamDataset.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        BeamDataset.from_bytes(blob[:-3])
    hlen = int.from_bytes(blob[4:8], "little")
    # flip one codebook byte so the embedded digest no longer matches
    pos = 8 + hlen + 3
    bad = blob[:pos] + bytes([blob[pos] ^ 0xFF]) + blob[pos + 1:]
    with pytest.raises(FormatError):
        BeamDataset.from_bytes(bad)


def test_labels_valid_and_reproducible(ds):
    ds.validate()
    for t in range(len(ds)):
        assert ds.sample_seeds[t] == derive_seed(5, t)
        ch = sample_channel_set(CFG, GainModel(), ds.L_B, ds.L_U, int(ds.sample_seeds[t]))
        rep = ias_search(ch, ds.codebooks, CFG, t_max=ds.t_max,
                         init=BeamSelection((0, 0), (0, 0), (0, 0)))
        assert rep.best_selection == ds.selection(t)


def test_planes_reassemble_exactly(ds):
    ch = sample_channel_set(CFG, GainModel(), 3, 3, int(ds.sample_seeds[0]))
    assert np.array_equal(ds.hr[0], to_planes(ch.H_r))
    H = ch.H_r.astype(np.complex64)
    assert np.array_equal(from_planes(to_planes(H)), H.astype(np.complex128))
    assert np.array_equal(ds.channel(0).H_r, from_planes(ds.hr[0]))


def test_es_labels_dominate_on_disagreement():
    cb = build_codebooks(CFG, SIZES)
    ias = generate_dataset(CFG, GainModel(), cb, 50, seed=3, labeler="ias")
    es = generate_dataset(CFG, GainModel(), cb, 50, seed=3, labeler="es")
    assert np.array_equal(ias.hr, es.hr)
    agree = np.all(ias.labels == es.labels, axis=1)
    print(f"ES/IAS label agreement {agree.mean():.2f}")
    for t in np.flatnonzero(~agree):
        ch = sample_channel_set(CFG, GainModel(), 3, 3, int(es.sample_seeds[t]))
        assert sum_rate(ch, es.selection(t), cb, CFG) >= sum_rate(ch, ias.selection(t), cb, CFG)


def test_labeling_error_carries_index():
    with pytest.raises(LabelingError) as info:
        generate_dataset(CFG, GainModel(), build_codebooks(CFG, SIZES), 2, labeler="es", budget=10)
    assert info.value.index == 0


def test_generate_argument_checks():
    cb = build_codebooks(CFG, SIZES)
    with pytest.raises(InvalidArgument):
        generate_dataset(CFG, GainModel(), cb, 0)
    with pytest.raises(InvalidArgument):
        generate_dataset(CFG, GainModel(), cb, 1, labeler="random")


def test_split_five_to_one():
    d = generate_dataset(CFG, GainModel(), build_codebooks(CFG, (1, 1, 1)), 6, seed=0)
    split_dataset(d, 5 / 6, seed=4)
    assert len(d.train_idx) == 5 and len(d.val_idx) == 1


def test_split_partition_and_determinism(ds):
    train, val = set(ds.train_idx.tolist()), set(ds.val_idx.tolist())
    assert not train & val and train | val == set(range(len(ds)))
    a = split_dataset(generate_dataset(CFG, GainModel(), ds.codebooks, 12, seed=5), 0.5, seed=9)
    b = split_dataset(generate_dataset(CFG, GainModel(), ds.codebooks, 12, seed=5), 0.5, seed=9)
    assert np.array_equal(a.train_idx, b.train_idx)


@pytest.mark.parametrize("frac", [0.0, 1.0, 0.01, 0.99])
def test_split_rejects_empty_side(ds, frac):
    with pytest.raises(InvalidArgument):
        split_dataset(ds, frac)


def _batches_for(n, batch_size, seed=None):
    d = generate_dataset(CFG, GainModel(), build_codebooks(CFG, (1, 1, 1)), n, seed=0)
    return list(iterate_batches(d, "all", batch_size, shuffle_seed=seed))


def test_batch_sizes():
    assert [b.batch_size for b in _batches_for(10, 16)] == [10]
    assert [b.batch_size for b in _batches_for(33, 16)] == [16, 16, 1]


@given(st.integers(1, 40), st.integers(1, 20), st.integers(0, 1000))
def test_shuffled_batches_cover_split(n, bs, seed):
    plain = np.concatenate([b.indices for b in _batches_for(n, bs)])
    shuffled = np.concatenate([b.indices for b in _batches_for(n, bs, seed)])
    assert sorted(shuffled.tolist()) == plain.tolist() == list(range(n))


def test_batch_tensor_layout(ds):
    b = next(iterate_batches(ds, "train", 4))
    assert b.hr.shape == (4, 2, CFG.Nr, CFG.M) and b.hr.dtype == np.float32
    assert b.hk.shape == (4, CFG.K, 2, CFG.M, CFG.Nt)
    assert [l.shape for l in b.labels] == [(4, 2), (4, 2), (4, 2)]
    with pytest.raises(InvalidArgument):
        next(iterate_batches(ds, "train", 0))
    with pytest.raises(InvalidArgument):
        ds.indices("test")
