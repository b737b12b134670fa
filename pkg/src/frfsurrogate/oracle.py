"""Synthetic Green's function generator based on modal superposition.

The structure is a rectangular box sampled on a regular grid of nodes.  Each
mode has a separable sine/cosine shape and a direction weight vector, so the
transfer function between any two nodes and directions is

    H(i, d; j, e) = sum_n phi_nd(x_i) * phi_ne(x_j) / (w_n^2 - w^2 + 2j zeta_n w w_n)

with unit modal mass.  It stands in for an FE model and is cheap enough to
produce the full 9 N^2 table at any frequency.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# First four FE natural frequencies of the reference transformer (Hz).
REFERENCE_FREQUENCIES = (24.5, 32.8, 51.5, 128.9)
EXTRA_MODE_BAND = (130.0, 300.0)
MAGNITUDE_FLOOR = 1e-30


@dataclass(frozen=True)
class OracleConfig:
    nx: int = 8
    ny: int = 5
    nz: int = 2
    lx: float = 0.5
    ly: float = 0.25
    lz: float = 0.05
    n_modes: int = 12
    damping: float = 0.02
    seed: int = 42

    def validate(self) -> None:
        for name in ("nx", "ny", "nz"):
            if getattr(self, name) < 2:
                raise ValueError(f"degenerate axis: {name}={getattr(self, name)} (need >= 2)")
        for name in ("lx", "ly", "lz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"box dimension {name} must be positive")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class Mode:
    frequency: float
    damping: float
    p: int
    q: int
    s: int
    weights: tuple[float, float, float]

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise ValueError("modal damping must lie in (0, 1)")
        if not any(self.weights):
            raise ValueError("direction weights must not all vanish")


@dataclass(frozen=True)
class FrfQuery:
    """One transfer value: response at (i, d) due to a unit force at (j, e)."""

    i: int
    d: int
    j: int
    e: int
    frequency: float


@dataclass(frozen=True, eq=False)
class StructureModel:
    lx: float
    ly: float
    lz: float
    shape: tuple[int, int, int]
    nodes: np.ndarray = field(repr=False)
    modes: tuple[Mode, ...]
    seed: int

    def __post_init__(self):
        self.nodes.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def mode_shapes(self) -> np.ndarray:
        """Modal amplitudes, shape (M, N, 3): phi[n, node, direction]."""
        x, y, z = self.nodes.T
        out = np.empty((len(self.modes), self.n_nodes, 3))
        for k, m in enumerate(self.modes):
            spatial = (
                np.sin((m.p + 1) * np.pi * x / self.lx)
                * np.sin((m.q + 1) * np.pi * y / self.ly)
                * np.cos(m.s * np.pi * z / self.lz)
            )
            out[k] = spatial[:, None] * np.asarray(m.weights)[None, :]
        return out

    def mode_shape_at(self, mode: Mode, node: int, direction: int) -> float:
        x, y, z = self.nodes[node]
        spatial = (
            np.sin((mode.p + 1) * np.pi * x / self.lx)
            * np.sin((mode.q + 1) * np.pi * y / self.ly)
            * np.cos(mode.s * np.pi * z / self.lz)
        )
        return float(spatial * mode.weights[direction - 1])

    def __eq__(self, other):
        if not isinstance(other, StructureModel):
            return NotImplemented
        return (
            (self.lx, self.ly, self.lz, self.shape, self.modes, self.seed)
            == (other.lx, other.ly, other.lz, other.shape, other.modes, other.seed)
            and np.array_equal(self.nodes, other.nodes)
        )


def grid_nodes(cfg: OracleConfig) -> np.ndarray:
    # Cell-centred grid: keeps every node strictly inside the box, away from
    # the sin() zeros on the faces.
    xs = (np.arange(cfg.nx) + 0.5) * cfg.lx / cfg.nx
    ys = (np.arange(cfg.ny) + 0.5) * cfg.ly / cfg.ny
    zs = (np.arange(cfg.nz) + 0.5) * cfg.lz / cfg.nz
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def build_structure(cfg: OracleConfig) -> StructureModel:
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0x6D6F6461])

    n_ref = min(cfg.n_modes, len(REFERENCE_FREQUENCIES))
    n_extra = cfg.n_modes - n_ref
    lo, hi = EXTRA_MODE_BAND
    # uniform on (lo, hi]
    extra = np.sort(hi - rng.random(n_extra) * (hi - lo))
    freqs = list(REFERENCE_FREQUENCIES[:n_ref]) + extra.tolist()

    pq = rng.integers(0, 4, size=(cfg.n_modes, 2))
    s = rng.integers(0, 2, size=cfg.n_modes)
    modes = []
    for k, f in enumerate(freqs):
        c = rng.uniform(-1.0, 1.0, size=3)
        while not np.any(c):
            c = rng.uniform(-1.0, 1.0, size=3)
        c = c / np.linalg.norm(c)
        modes.append(
            Mode(
                frequency=float(f),
                damping=cfg.damping,
                p=int(pq[k, 0]),
                q=int(pq[k, 1]),
                s=int(s[k]),
                weights=tuple(float(v) for v in c),
            )
        )

    return StructureModel(
        lx=cfg.lx,
        ly=cfg.ly,
        lz=cfg.lz,
        shape=(cfg.nx, cfg.ny, cfg.nz),
        nodes=grid_nodes(cfg),
        modes=tuple(modes),
        seed=cfg.seed,
    )


def _modal_denominator(mode: Mode, omega: float) -> complex:
    wn = 2.0 * np.pi * mode.frequency
    return complex(wn * wn - omega * omega, 2.0 * mode.damping * omega * wn)


def _check_query(model: StructureModel, q: FrfQuery) -> None:
    n = model.n_nodes
    if not (0 <= q.i < n and 0 <= q.j < n):
        raise ValueError(f"node index out of range for N={n}: i={q.i}, j={q.j}")
    if q.d not in (1, 2, 3) or q.e not in (1, 2, 3):
        raise ValueError(f"direction must be 1, 2 or 3: d={q.d}, e={q.e}")
    if not q.frequency > 0:
        raise ValueError("frequency must be positive")


def frf_complex(model: StructureModel, q: FrfQuery) -> complex:
    """Receptance between two node/direction pairs at one frequency.

    Modes are summed in model order and each term is formed as
    ``(phi_a * phi_b) / D`` so that swapping the two ends gives the same
    floating-point result.
    """
    _check_query(model, q)
    omega = 2.0 * np.pi * q.frequency
    total = 0j
    for mode in model.modes:
        a = model.mode_shape_at(mode, q.i, q.d)
        b = model.mode_shape_at(mode, q.j, q.e)
        total += (a * b) / _modal_denominator(mode, omega)
    return total


def static_receptance(model: StructureModel, i: int, d: int, j: int, e: int) -> float:
    total = 0.0
    for mode in model.modes:
        wn = 2.0 * np.pi * mode.frequency
        a = model.mode_shape_at(mode, i, d)
        b = model.mode_shape_at(mode, j, e)
        total += a * b / (wn * wn)
    return total


def receptance_matrix(model: StructureModel, frequency: float) -> np.ndarray:
    """All transfer values at once, shape (N, 3, N, 3) indexed [i, d-1, j, e-1].

    Same per-term arithmetic as :func:`frf_complex`, so the result is
    symmetric under (i, d) <-> (j, e) bit for bit.
    """
    if not frequency > 0:
        raise ValueError("frequency must be positive")
    omega = 2.0 * np.pi * frequency
    phi = model.mode_shapes().reshape(len(model.modes), -1)
    n3 = phi.shape[1]
    out = np.zeros((n3, n3), dtype=complex)
    for k, mode in enumerate(model.modes):
        prod = np.multiply.outer(phi[k], phi[k])
        out += prod / _modal_denominator(mode, omega)
    n = model.n_nodes
    return out.reshape(n, 3, n, 3)


def magnitude_db(h) -> np.ndarray:
    return 20.0 * np.log10(np.abs(h) + MAGNITUDE_FLOOR)


def dataset_at_frequency(model: StructureModel, frequency: float):
    """Full 9 N^2 table at one frequency in canonical (i, j, d, e) row order.

    ``i``/``d`` are the response node and direction, ``j``/``e`` the force
    node and direction.
    """
    from .dataset import FrfTable

    h = receptance_matrix(model, frequency)  # [i, d, j, e]
    n = model.n_nodes
    h = h.transpose(0, 2, 1, 3)  # [i, j, d, e]
    ii, jj, dd, ee = (a.ravel() for a in np.indices((n, n, 3, 3)))
    nodes = model.nodes
    features = np.column_stack(
        [ee + 1.0, dd + 1.0, nodes[jj], nodes[ii]]
    ).astype(np.float64)
    return FrfTable(
        frequency=float(frequency),
        n_nodes=n,
        i=ii.astype(np.int64),
        j=jj.astype(np.int64),
        features=features,
        target=magnitude_db(h.ravel()),
    )
