import csv
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwshm.cnn import PARAM_NAMES, CnnModel, forward
from gwshm.errors import MissingArtifact, ValidationError
from gwshm.storage import (decode_model, decode_record, encode_model, encode_record,
                           load_dataset, load_features, load_model, save_dataset, save_features,
                           save_model)
from gwshm.synth import Waveform


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, width=32), min_size=1, max_size=64),
       st.sampled_from([None, 2.0, 4.5]), st.integers(0, 2**63), st.integers(0, 3))
def test_record_roundtrip(samples, snr, seed, cls):
    w = Waveform(np.array(samples), path=(2, 5), temperature=40.0, snr_db=snr, seed=seed,
                 class_label=tuple(int(i == cls) for i in range(4)))
    back = decode_record(encode_record(w))
    np.testing.assert_array_equal(back.samples, w.samples)
    assert (back.path, back.temperature, back.snr_db, back.seed, back.class_label) == (
        w.path, w.temperature, w.snr_db, w.seed, w.class_label)


def test_record_is_little_endian_float32():
    buf = encode_record(Waveform(np.array([1.0, -2.0])))
    assert buf[:4] == b"GWSR"
    assert buf[-8:] == struct.pack("<2f", 1.0, -2.0)


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-4], lambda b: b[:10]])
def test_corrupt_records_rejected(mutate):
    with pytest.raises(ValidationError):
        decode_record(mutate(encode_record(Waveform(np.ones(8)))))


def test_dataset_directory(tmp_path, synth, healthy, notch):
    recs = [synth.reference((1, 5), healthy), synth.reference((1, 2), notch)]
    save_dataset(recs, tmp_path)
    with open(tmp_path / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["path"] for r in rows] == ["P15", "P12"]
    assert [r["class"] for r in rows] == ["baseline", "notch"]
    assert set(rows[0]) == {"file", "path", "class", "T", "snr", "seed"}
    assert len(load_dataset(tmp_path)) == 2
    only = load_dataset(tmp_path, "P12")
    assert len(only) == 1 and only[0].class_label == (0, 0, 0, 1)
    np.testing.assert_allclose(only[0].samples, recs[1].samples, rtol=1e-6, atol=1e-7)


def test_missing_dataset(tmp_path):
    with pytest.raises(MissingArtifact):
        load_dataset(tmp_path)


def test_model_roundtrip(tmp_path, rng):
    m = CnnModel.initialize(100, 4, seed=3, dtype=np.float32)
    m.input_scale = 2.5
    save_model(m, tmp_path / "m.gwcn")
    assert "Total trainable parameters" in (tmp_path / "m.gwcn.txt").read_text()
    back = load_model(tmp_path / "m.gwcn")
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(back.params[k], m.params[k])
    assert back.input_scale == 2.5
    x = rng.normal(size=100)
    np.testing.assert_array_equal(forward(back, x)[1], forward(m, x)[1])


def test_model_errors(tmp_path):
    with pytest.raises(MissingArtifact):
        load_model(tmp_path / "nope.gwcn")
    buf = encode_model(CnnModel.initialize(50, 4, dtype=np.float32))
    with pytest.raises(ValidationError):
        decode_model(b"ABCD" + buf[4:])


def test_features_csv(tmp_path, rng):
    f = rng.normal(size=(5, 16))
    save_features(f, tmp_path / "f.csv", [f"r{i}" for i in range(5)])
    np.testing.assert_array_equal(load_features(tmp_path / "f.csv"), f)
    save_features(f, tmp_path / "g.csv")
    np.testing.assert_array_equal(load_features(tmp_path / "g.csv"), f)
