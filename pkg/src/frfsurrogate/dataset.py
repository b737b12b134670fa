"""FRF sample tables, node-pair selection matrices and CSV persistence."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_NAMES = ("force_dir", "resp_dir", "x_F", "y_F", "z_F", "x_R", "y_R", "z_R")
CSV_COLUMNS = (
    "freq", "i", "j", "force_dir", "resp_dir",
    "x_F", "y_F", "z_F", "x_R", "y_R", "z_R", "target_db",
)


class TableFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrfTable:
    """Rows of (8 features, dB target) at a single frequency.

    ``i`` is the response node and ``j`` the force node of each row.  The
    feature columns follow ``FEATURE_NAMES``; directions are stored as the
    numerals 1-3 so trees treat them as ordinary ordinal variables.
    """

    frequency: float
    n_nodes: int
    i: np.ndarray
    j: np.ndarray
    features: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.i)
        if not (len(self.j) == n == self.features.shape[0] == len(self.target)):
            raise ValueError("column lengths differ")
        if self.features.ndim != 2 or self.features.shape[1] != 8:
            raise ValueError("features must have shape (rows, 8)")
        for a in (self.i, self.j, self.features, self.target):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.target)

    @property
    def force_dir(self) -> np.ndarray:
        return self.features[:, 0].astype(np.int64)

    @property
    def resp_dir(self) -> np.ndarray:
        return self.features[:, 1].astype(np.int64)

    def keys(self) -> np.ndarray:
        """(i, j, resp_dir, force_dir) per row, shape (rows, 4)."""
        return np.column_stack([self.i, self.j, self.resp_dir, self.force_dir])

    def take(self, rows) -> FrfTable:
        rows = np.asarray(rows)
        return FrfTable(
            frequency=self.frequency,
            n_nodes=self.n_nodes,
            i=self.i[rows],
            j=self.j[rows],
            features=self.features[rows],
            target=self.target[rows],
        )

    def __eq__(self, other):
        if not isinstance(other, FrfTable):
            return NotImplemented
        same_freq = self.frequency == other.frequency or (
            math.isnan(self.frequency) and math.isnan(other.frequency)
        )
        return (
            same_freq
            and self.n_nodes == other.n_nodes
            and np.array_equal(self.i, other.i)
            and np.array_equal(self.j, other.j)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.target, other.target)
        )


@dataclass(frozen=True, eq=False)
class SelectionMatrix:
    """N x N bit matrix; bit (i, j) selects all 9 direction pairs of that node pair."""

    bits: np.ndarray
    q: int = field(init=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError("selection matrix must be square")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "q", int(np.count_nonzero(bits)))

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def ones(cls, n: int) -> SelectionMatrix:
        return cls(np.ones((n, n), dtype=bool))

    @classmethod
    def zeros(cls, n: int) -> SelectionMatrix:
        return cls(np.zeros((n, n), dtype=bool))

    def __and__(self, other: SelectionMatrix) -> SelectionMatrix:
        if self.n != other.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")
        return SelectionMatrix(self.bits & other.bits)

    def __eq__(self, other):
        if not isinstance(other, SelectionMatrix):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.n, np.packbits(self.bits).tobytes()))


def split_half(table: FrfTable, seed: int) -> tuple[FrfTable, FrfTable]:
    """Seeded shuffle into halves of ceil(n/2) and floor(n/2) rows.

    Each half keeps the source row order.
    """
    n = len(table)
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, got {n}")
    perm = np.random.default_rng([seed, 0x73706C74]).permutation(n)
    n_train = (n + 1) // 2
    return table.take(np.sort(perm[:n_train])), table.take(np.sort(perm[n_train:]))


def select_rows(table: FrfTable, selection: SelectionMatrix) -> FrfTable:
    if selection.n != table.n_nodes:
        raise ValueError(
            f"dimension mismatch: selection is {selection.n}x{selection.n}, table has N={table.n_nodes}"
        )
    mask = selection.bits[table.i, table.j]
    return table.take(np.flatnonzero(mask))


def persist(table: FrfTable, path) -> None:
    path = Path(path)
    cols = [
        np.full(len(table), table.frequency),
        table.i,
        table.j,
        table.force_dir,
        table.resp_dir,
        *table.features[:, 2:].T,
        table.target,
    ]
    fmt = ["%.17g", "%d", "%d", "%d", "%d"] + ["%.17g"] * 7
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        if len(table):
            np.savetxt(fh, np.column_stack(cols), fmt=fmt, delimiter=",")


def load(path, n_nodes: int | None = None) -> FrfTable:
    """Read a table written by :func:`persist`.

    The node count is not stored in the file; unless given it is taken as
    one more than the largest node index present.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if tuple(h.strip() for h in header.split(",")) != CSV_COLUMNS:
            raise TableFormatError(f"{path}: malformed header {header!r}")
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]

    if not lines:
        return FrfTable(
            frequency=float("nan"),
            n_nodes=n_nodes or 0,
            i=np.zeros(0, dtype=np.int64),
            j=np.zeros(0, dtype=np.int64),
            features=np.zeros((0, 8)),
            target=np.zeros(0),
        )

    try:
        raw = np.loadtxt(lines, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise TableFormatError(f"{path}: {exc}") from exc
    if raw.shape[1] != len(CSV_COLUMNS):
        raise TableFormatError(f"{path}: expected {len(CSV_COLUMNS)} columns, got {raw.shape[1]}")

    for col in (3, 4):
        bad = np.flatnonzero(~np.isin(raw[:, col], (1.0, 2.0, 3.0)))
        if bad.size:
            r = int(bad[0])
            raise TableFormatError(
                f"{path}: row {r + 1} has {CSV_COLUMNS[col]}={raw[r, col]:g}, expected 1, 2 or 3"
            )
    freqs = np.unique(raw[:, 0])
    if freqs.size != 1:
        raise TableFormatError(f"{path}: rows carry {freqs.size} different frequencies")
    if not np.all(np.isfinite(raw[:, 11])):
        raise TableFormatError(f"{path}: non-finite target")

    i = raw[:, 1].astype(np.int64)
    j = raw[:, 2].astype(np.int64)
    if n_nodes is None:
        n_nodes = int(max(i.max(), j.max())) + 1
    features = np.column_stack([raw[:, 3], raw[:, 4], raw[:, 5:11]])
    return FrfTable(
        frequency=float(freqs[0]),
        n_nodes=n_nodes,
        i=i,
        j=j,
        features=features,
        target=raw[:, 11].copy(),
    )
