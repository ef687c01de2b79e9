"""CSV parsing, replicate covariance estimation, artifact writing."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sisimex.data import Dataset
from sisimex.errors import DataError, MissingColumn, ParseError
from sisimex.io import (
    error_spec_from_replicates,
    jsonable,
    load_dataset,
    save_dataset,
    write_csv,
    write_json,
)


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    data = Dataset(y=rng.normal(size=12), w=rng.normal(size=(12, 3)))
    path = tmp_path / "data.csv"
    save_dataset(data, path)
    back = load_dataset(path)
    assert np.array_equal(back.y, data.y)
    assert np.array_equal(back.w, data.w)


def test_load_dataset_ignores_extras_and_order(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("w2,junk,y,w1\n0.5,xyz,1.0,-0.25\n1.5,abc,2.0,0.75\n"
                    "0.0,zz,0.5,0.5\n2.0,q,1.5,1.0\n")
    data = load_dataset(path)
    assert data.p == 2
    assert_allclose(data.y, [1.0, 2.0, 0.5, 1.5])
    assert_allclose(data.w[:, 0], [-0.25, 0.75, 0.5, 1.0])
    assert_allclose(data.w[:, 1], [0.5, 1.5, 0.0, 2.0])


def test_load_dataset_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("w1,w2\n1.0,2.0\n")
    with pytest.raises(MissingColumn) as info:
        load_dataset(path)
    assert info.value.column == "y"
    path.write_text("y\n1.0\n")
    with pytest.raises(MissingColumn) as info:
        load_dataset(path)
    assert info.value.column == "w1"
    # a gap in the w sequence names the missing member
    path.write_text("y,w1,w3\n1.0,2.0,3.0\n")
    with pytest.raises(MissingColumn) as info:
        load_dataset(path)
    assert info.value.column == "w2"


def test_load_dataset_parse_errors(tmp_path):
    path = tmp_path / "bad.csv"
    rows = ["1.0,%f" % v for v in np.linspace(0.0, 1.0, 6)]
    rows.append("oops,0.5")
    rows.append("1.0,0.5")
    path.write_text("y,w1\n" + "\n".join(rows) + "\n")
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.row == 7
    assert info.value.column == "y"
    path.write_text("y,w1\n1.0,nan\n")
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.row == 1
    assert info.value.column == "w1"
    path.write_text("y,w1\n1.0\n")
    with pytest.raises(ParseError):
        load_dataset(path)


def test_load_dataset_file_problems(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError):
        load_dataset(empty)
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nonexistent.csv")


def test_error_spec_from_replicates(tmp_path):
    path = tmp_path / "reps.csv"
    # constant replicate gap d gives variance d^2 / 2
    lines = ["w1_rep1,w1_rep2"]
    for base in (0.0, 1.0, -2.0, 0.5):
        lines.append(f"{base + 0.1},{base - 0.1}")
    path.write_text("\n".join(lines) + "\n")
    me = error_spec_from_replicates(path)
    assert me.p == 1
    assert_allclose(me.covariance[0, 0], 0.2 ** 2 / 2.0, rtol=1e-12)
    # extra coordinates without replicates are error-free
    me = error_spec_from_replicates(path, n_coords=3)
    assert me.p == 3
    assert_allclose(np.diag(me.covariance), [0.02, 0.0, 0.0], rtol=1e-12)
    # identical replicates mean zero measurement error
    path.write_text("w1_rep1,w1_rep2\n1.0,1.0\n2.0,2.0\n")
    assert error_spec_from_replicates(path).is_zero


def test_error_spec_from_replicates_errors(tmp_path):
    path = tmp_path / "reps.csv"
    path.write_text("w1_rep1\n1.0\n")
    with pytest.raises(MissingColumn) as info:
        error_spec_from_replicates(path)
    assert info.value.column == "w1_rep2"
    path.write_text("a,b\n1.0,2.0\n")
    with pytest.raises(MissingColumn):
        error_spec_from_replicates(path)
    path.write_text("w2_rep1,w2_rep2\n1.0,2.0\n")
    with pytest.raises(DataError):
        error_spec_from_replicates(path, n_coords=1)
    path.write_text("w1_rep1,w1_rep2\n")
    with pytest.raises(DataError):
        error_spec_from_replicates(path)


def test_write_csv_artifact(tmp_path):
    path = tmp_path / "out.csv"
    config = {"seed": 3, "h": 0.25}
    write_csv(path, ("a", "b"), [(1, 2.5), (3, 0.1)], config)
    raw = path.read_bytes()
    text = raw.decode()
    first, rest = text.split("\r\n", 1)
    assert first.startswith("# config: ")
    assert json.loads(first[len("# config: "):]) == config
    assert "a,b" in rest
    # rewriting the same artifact produces identical bytes
    write_csv(path, ("a", "b"), [(1, 2.5), (3, 0.1)], config)
    assert path.read_bytes() == raw


def test_write_json_artifact(tmp_path):
    path = tmp_path / "out.json"
    write_json(path, {"b": 1, "a": [1.5, 2]})
    text = path.read_text()
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"b": 1, "a": [1.5, 2]}


def test_jsonable():
    out = jsonable({
        "arr": np.array([1.0, np.nan, np.inf]),
        "int": np.int64(4),
        "flag": np.bool_(True),
        "nested": [np.float64(0.5), (1, 2)],
    })
    assert out["arr"] == [1.0, None, None]
    assert out["int"] == 4 and isinstance(out["int"], int)
    assert out["flag"] is True
    assert out["nested"] == [0.5, [1, 2]]
    assert json.dumps(out)  # round-trips through the encoder
