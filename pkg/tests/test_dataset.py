import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from frfsurrogate.dataset import (
    CSV_COLUMNS,
    SelectionMatrix,
    TableFormatError,
    load,
    persist,
    select_rows,
    split_half,
)


class TestSplitHalf:
    def test_even(self, small_table):
        train, test = split_half(small_table, 0)
        assert (len(train), len(test)) == (288, 288)

    def test_odd_uses_ceiling(self, medium_table):
        t = medium_table.take(np.arange(577))
        train, test = split_half(t, 0)
        assert (len(train), len(test)) == (289, 288)

    def test_disjoint_and_complete(self, small_table):
        train, test = split_half(small_table, 5)
        k_train = {tuple(k) for k in train.keys()}
        k_test = {tuple(k) for k in test.keys()}
        assert not k_train & k_test
        assert k_train | k_test == {tuple(k) for k in small_table.keys()}

    def test_deterministic(self, small_table):
        a = split_half(small_table, 9)
        b = split_half(small_table, 9)
        assert a[0] == b[0] and a[1] == b[1]
        c = split_half(small_table, 10)
        assert not c[0] == a[0]

    def test_too_small(self, small_table):
        with pytest.raises(ValueError):
            split_half(small_table.take([0]), 0)


class TestSelectionMatrix:
    def test_popcount_cached(self):
        rng = np.random.default_rng(0)
        bits = rng.random((8, 8)) < 0.3
        s = SelectionMatrix(bits)
        assert s.q == int(bits.sum())
        bits[:] = True  # the matrix keeps its own copy
        assert s.q == int(s.bits.sum())

    def test_immutable(self):
        s = SelectionMatrix.zeros(3)
        with pytest.raises(ValueError):
            s.bits[0, 0] = True

    def test_and_and_bounds(self):
        a = SelectionMatrix(np.eye(4, dtype=bool))
        assert (a & SelectionMatrix.ones(4)) == a
        assert SelectionMatrix.ones(5).q == 25
        with pytest.raises(ValueError):
            a & SelectionMatrix.ones(3)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            SelectionMatrix(np.ones((2, 3), dtype=bool))


class TestSelectRows:
    def test_all_ones_is_identity(self, small_table):
        assert select_rows(small_table, SelectionMatrix.ones(8)) == small_table

    def test_all_zeros_is_empty(self, small_table):
        assert len(select_rows(small_table, SelectionMatrix.zeros(8))) == 0

    def test_q20_gives_180_rows(self, small_table):
        bits = np.zeros(64, dtype=bool)
        bits[np.random.default_rng(1).choice(64, 20, replace=False)] = True
        s = SelectionMatrix(bits.reshape(8, 8))
        out = select_rows(small_table, s)
        assert len(out) == 180
        assert np.all(s.bits[out.i, out.j])

    def test_dimension_mismatch(self, small_table):
        with pytest.raises(ValueError, match="dimension mismatch"):
            select_rows(small_table, SelectionMatrix.ones(7))

    @settings(max_examples=50, deadline=None)
    @given(bits=arrays(bool, (8, 8)))
    def test_nine_rows_per_selected_pair(self, small_table, bits):
        s = SelectionMatrix(bits)
        out = select_rows(small_table, s)
        assert len(out) == 9 * s.q
        pairs, counts = np.unique(np.column_stack([out.i, out.j]), axis=0, return_counts=True)
        assert np.all(counts == 9)
        assert len(pairs) == s.q


class TestPersistence:
    def test_round_trip(self, small_table, tmp_path):
        path = tmp_path / "t.csv"
        persist(small_table, path)
        back = load(path, n_nodes=8)
        assert back == small_table

    def test_round_trip_infers_node_count(self, small_table, tmp_path):
        path = tmp_path / "t.csv"
        persist(small_table, path)
        assert load(path).n_nodes == 8

    def test_header(self, small_table, tmp_path):
        path = tmp_path / "t.csv"
        persist(small_table, path)
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_bad_direction_names_row(self, small_table, tmp_path):
        path = tmp_path / "t.csv"
        persist(small_table.take(np.arange(5)), path)
        lines = path.read_text().splitlines()
        fields = lines[3].split(",")
        fields[3] = "4"
        lines[3] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TableFormatError, match="row 3"):
            load(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(TableFormatError, match="header"):
            load(path)

    def test_mixed_frequencies_rejected(self, small_table, tmp_path):
        path = tmp_path / "t.csv"
        persist(small_table.take(np.arange(3)), path)
        lines = path.read_text().splitlines()
        lines[2] = "50" + lines[2][lines[2].index(","):]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TableFormatError, match="frequencies"):
            load(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text(",".join(CSV_COLUMNS) + "\n")
        assert len(load(path)) == 0
