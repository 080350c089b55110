import json
import os
import stat

import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hbae.io import (jsonable, read_csv, read_json, read_matrix, read_vector, sha256_file, write_csv, write_json,
                     write_matrix, write_vector)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_vector_round_trip_bitwise(tmp_path_factory, v):
    path = tmp_path_factory.mktemp("v") / "v.csv"
    write_vector(path, v)
    assert read_vector(path).tobytes() == v.tobytes()


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_matrix_round_trip_bitwise(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("m") / "m.csv"
    write_matrix(path, m)
    assert read_matrix(path).tobytes() == m.tobytes()


def test_bare_column_vector(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("1.5\n-2\n\n3e-3\n")
    np.testing.assert_array_equal(read_vector(path), [1.5, -2.0, 3e-3])


def test_csv_crlf_and_quoting(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["name", "value"], [("a,b", 1.0), ("plain", True), ("none", None)])
    raw = path.read_bytes()
    assert raw.count(b"\r\n") == 4 and b'"a,b"' in raw
    header, rows = read_csv(path)
    assert header == ["name", "value"] and rows == [["a,b", "1.0"], ["plain", "1"], ["none", ""]]


def test_json_canonical_and_nonfinite(tmp_path):
    path = tmp_path / "x.json"
    write_json(path, {"b": np.float32(1.5), "a": [np.int64(2), float("nan")], "c": np.array([True])})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert read_json(path) == {"a": [2, None], "b": 1.5, "c": [True]}
    json.loads(text)


def test_jsonable_nested():
    assert jsonable({1: (np.float64(np.inf), {"x": np.arange(2)})}) == {"1": [None, {"x": [0, 1]}]}


def test_checksum_and_mode(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_vector(a, [1.0, 2.0])
    write_vector(b, [1.0, 2.0])
    assert sha256_file(a) == sha256_file(b)
    write_vector(b, [1.0, 2.0000000000000004])
    assert sha256_file(a) != sha256_file(b)
    mask = os.umask(0)
    os.umask(mask)
    assert stat.S_IMODE(a.stat().st_mode) == 0o666 & ~mask
    assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]
