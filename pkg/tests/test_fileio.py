"""Config dialect, Matrix Market round-trips, run-record schema."""

import numpy as np
import pytest

from wbipm.errors import ValidationError
from wbipm.fileio import (
    DEFAULT_GENERATE_CONFIG,
    format_config,
    parse_config,
    read_matrix_mm,
    read_vector_mm,
    resolve_generate_config,
    write_matrix_mm,
    write_vector_mm,
)


def test_parse_config_basic(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\nfoo = 1\nbar = hello world  # trailing\n\n")
    cfg = parse_config(path)
    assert cfg == {"foo": "1", "bar": "hello world"}


def test_parse_config_include(tmp_path):
    base = tmp_path / "base.cfg"
    base.write_text("x = 1\ny = 2\n")
    top = tmp_path / "top.cfg"
    top.write_text("include base.cfg\ny = 3\n")
    assert parse_config(top) == {"x": "1", "y": "3"}


def test_parse_config_rejects_malformed(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("just some text\n")
    with pytest.raises(ValidationError):
        parse_config(path)
    with pytest.raises(ValidationError):
        parse_config(tmp_path / "missing.cfg")


def test_resolve_generate_config_lists_unknown_keys():
    with pytest.raises(ValidationError, match="grid.nw, phantom.count"):
        resolve_generate_config({"grid.nw": "3", "phantom.count": "2"})
    cfg = resolve_generate_config({"grid.nx": "12"})
    assert cfg["grid.nx"] == "12"
    assert cfg["grid.ny"] == DEFAULT_GENERATE_CONFIG["grid.ny"]


def test_format_config_is_sorted_and_stable():
    text = format_config({"b": "2", "a": "1"})
    assert text == "a = 1\nb = 2\n"


def test_matrix_market_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.standard_normal(17)
    write_vector_mm(tmp_path / "v.mtx", v)
    assert np.array_equal(read_vector_mm(tmp_path / "v.mtx"), v)

    a = rng.standard_normal((5, 7))
    write_matrix_mm(tmp_path / "a.mtx", a)
    assert np.array_equal(read_matrix_mm(tmp_path / "a.mtx"), a)


def test_matrix_market_coordinate_import(tmp_path):
    # sparse coordinate files must load as dense operators too
    import scipy.sparse

    a = scipy.sparse.random(6, 4, density=0.5, random_state=1)
    import scipy.io

    scipy.io.mmwrite(str(tmp_path / "coo.mtx"), a)
    dense = read_matrix_mm(tmp_path / "coo.mtx")
    assert np.allclose(dense, a.toarray())
