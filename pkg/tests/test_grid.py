import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cat, cont
from lulcc.grid import (GridError, GridHeader, class_frequencies, read_ascii_grid, reclass_group,
                        validate_alignment, write_ascii_grid)

HEADER_2x2 = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 30\nNODATA_value -9999\n"


def test_read_literal_file(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text(HEADER_2x2 + "1 2\n3 1\n")
    g = read_ascii_grid(p, "categorical")
    assert g.cells.tolist() == [[1, 2], [3, 1]]
    assert g.header == GridHeader(2, 2, 0.0, 0.0, 30.0, -9999.0)


def test_header_keys_case_insensitive(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text(HEADER_2x2.upper().replace("NODATA_VALUE", "nodata_value") + "1 2\n3 1\n")
    assert read_ascii_grid(p).cells.shape == (2, 2)


def test_cell_count_mismatch(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text(HEADER_2x2.replace("ncols 2", "ncols 3") + "1 2\n3 1\n")
    with pytest.raises(GridError, match="cell count mismatch"):
        read_ascii_grid(p)


@pytest.mark.parametrize("header", [
    HEADER_2x2.replace("cellsize 30\n", ""),
    HEADER_2x2 + "cellsize 30\n",
])
def test_malformed_header(tmp_path, header):
    p = tmp_path / "g.asc"
    p.write_text(header + "1 2\n3 1\n")
    with pytest.raises(GridError, match="malformed header"):
        read_ascii_grid(p)


def test_categorical_rejects_fraction(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text(HEADER_2x2 + "1 2.5\n3 1\n")
    with pytest.raises(GridError, match="non-integer"):
        read_ascii_grid(p)
    assert read_ascii_grid(p, "continuous").cells[0, 1] == 2.5


def test_unreadable(tmp_path):
    with pytest.raises(GridError, match="unreadable"):
        read_ascii_grid(tmp_path / "missing.asc")


def test_single_cell_body(tmp_path):
    g = cont([[5.0]])
    p = tmp_path / "one.asc"
    write_ascii_grid(g, p)
    assert p.read_text().splitlines()[-1] == "5"


def test_nodata_token(tmp_path):
    g = cont([[1.5, -9999.0]])
    p = tmp_path / "nd.asc"
    write_ascii_grid(g, p)
    assert p.read_text().splitlines()[-1].split() == ["1.5", "-9999"]


def test_categorical_roundtrip_with_legend(tmp_path):
    legend = {1: "Forest", 2: "Residential", 7: "BrightSoil"}
    g = cat([[1, 2, 7], [-9999, 1, 1]], legend=legend)
    p = tmp_path / "lc.asc"
    write_ascii_grid(g, p)
    assert json.loads((tmp_path / "lc.legend.json").read_text()) == {"1": "Forest", "2": "Residential",
                                                                      "7": "BrightSoil"}
    assert read_ascii_grid(p) == g


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_continuous_roundtrip_exact(tmp_path_factory, nr, nc, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(scale=10.0 ** rng.integers(-8, 8), size=(nr, nc))
    g = cont(vals)
    p = tmp_path_factory.mktemp("rt") / "g.asc"
    write_ascii_grid(g, p)
    back = read_ascii_grid(p, "continuous")
    assert back == g


def test_class_frequencies():
    g = cat([[1, 1, 2, 3]])
    np.testing.assert_array_equal(class_frequencies(g, [1, 2, 3]), [0.5, 0.25, 0.25])
    np.testing.assert_array_equal(class_frequencies(cat([[1, 1], [1, 1]]), [1, 2, 3]), [1, 0, 0])
    with pytest.raises(GridError, match="no countable cells"):
        class_frequencies(cat([[-9999, -9999]]), [1, 2, 3])


def test_class_frequencies_mask_excludes_water():
    g = cat([[1, 2, 4, 4]])
    mask = cat([[1, 1, 4, 4]])
    np.testing.assert_array_equal(class_frequencies(g, [1, 2, 3], mask), [0.5, 0.5, 0.0])
    with pytest.raises(GridError, match="not aligned"):
        class_frequencies(g, [1, 2, 3], cat([[1, 1, 4, 4]], cellsize=31))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=40))
def test_class_frequencies_is_probability_vector(codes):
    g = cat([codes])
    if not any(c in (1, 2, 3) for c in codes):
        with pytest.raises(GridError):
            class_frequencies(g, [1, 2, 3])
        return
    f = class_frequencies(g, [1, 2, 3])
    assert np.all(f >= 0) and abs(f.sum() - 1) < 1e-12


SEVEN = {1: "Forest", 2: "Agriculture", 3: "Residential", 4: "Industrial", 5: "OpenArea",
         6: "BurntGrass", 7: "BrightSoil"}
GROUPING = {1: 1, 2: 1, 3: 2, 4: 2, 5: 3, 6: 3, 7: 3}


def test_reclass_seven_to_three():
    g = cat([[1, 2, 3, 4], [5, 6, 7, -9999]], legend=SEVEN)
    out = reclass_group(g, GROUPING)
    assert out.cells.tolist() == [[1, 1, 2, 2], [3, 3, 3, -9999]]
    assert out.header == g.header
    # code 1 maps to itself, so its original name survives
    assert out.legend == {1: "Forest", 2: "I", 3: "S"}
    named = reclass_group(g, GROUPING, legend={1: "V", 2: "I", 3: "S"})
    assert named.legend == {1: "V", 2: "I", 3: "S"}


def test_reclass_identity_and_unmapped():
    g = cat([[1, 2], [3, 1]])
    out = reclass_group(g, {1: 1, 2: 2, 3: 3})
    np.testing.assert_array_equal(out.cells, g.cells)
    assert out.legend == {1: "V", 2: "I", 3: "S"}
    bad = cat([[1, 99]], legend={1: "V", 99: "x"})
    with pytest.raises(GridError, match="unmapped"):
        reclass_group(bad, {1: 1})


def test_validate_alignment():
    a = cat([[1, 2]])
    validate_alignment([a])
    validate_alignment([a, cat([[3, 3]])])
    with pytest.raises(GridError, match="cellsize"):
        validate_alignment([a, cat([[1, 2]], cellsize=31)])


def test_grid_rejects_unknown_code_and_nan():
    with pytest.raises(GridError, match="legend"):
        cat([[1, 9]])
    with pytest.raises(GridError, match="NaN"):
        cont([[np.nan]])
