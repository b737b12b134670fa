"""Genetic search for a small node-pair subset that still trains an accurate forest.

Genomes are :class:`SelectionMatrix` bit matrices.  Fitness is
``1 / (r_err * q)`` gated by ``r_err <= rt``, where ``r_err`` is the relative
RMS error of a forest trained on the selected rows and ``q`` the number of
selected node pairs.
"""
from __future__ import annotations

import csv
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import FrfTable, SelectionMatrix, select_rows
from .metrics import rmse_rel
from .trees import ForestParams, fit_forest

PER_GENOME = "per_genome"
PER_BIT = "per_bit"
GENOME_MAGIC = "frfsurrogate-genome"
GENOME_VERSION = 1


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class GaParams:
    population: int = 24
    generations: int = 40
    keep_ratio: float = 0.4
    random_ratio: float = 0.1
    mutation: float = 0.02
    mutation_mode: str = PER_GENOME
    rt: float = 0.3
    density: float = 0.5
    holdout: int = 5000
    fitness_forest: ForestParams = ForestParams(n_trees=20)
    seed: int = 0

    def validate(self) -> None:
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.keep_ratio < 0 or self.random_ratio < 0:
            raise ValueError("survivor ratios must be non-negative")
        if not self.keep_ratio + self.random_ratio < 1:
            raise ValueError("keep_ratio + random_ratio must be < 1")
        if not 0.0 <= self.mutation <= 1.0:
            raise ValueError("mutation must lie in [0, 1]")
        if self.mutation_mode not in (PER_GENOME, PER_BIT):
            raise ValueError(f"unknown mutation_mode {self.mutation_mode!r}")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        if not self.rt > 0:
            raise ValueError("rt must be positive")
        if self.holdout < 1:
            raise ValueError("holdout must be >= 1")
        self.fitness_forest.validate()

    @property
    def n_elite(self) -> int:
        return math.ceil(self.population * self.keep_ratio)

    @property
    def n_random(self) -> int:
        return math.ceil(self.population * self.random_ratio)


@dataclass
class Individual:
    genome: SelectionMatrix
    created: int
    r_err: float | None = None
    fitness: float | None = None

    @property
    def q(self) -> int:
        return self.genome.q

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None

    def sort_key(self):
        # fitness descending; then lower error, fewer pairs, older individual
        return (-self.fitness, self.r_err, self.q, self.created)


@dataclass
class GaHistory:
    generation: list[int] = field(default_factory=list)
    best_f: list[float] = field(default_factory=list)
    best_q: list[int] = field(default_factory=list)
    best_r: list[float] = field(default_factory=list)

    def record(self, g: int, ind: Individual) -> None:
        self.generation.append(g)
        self.best_f.append(ind.fitness)
        self.best_q.append(ind.q)
        self.best_r.append(ind.r_err)

    def rows(self):
        return list(zip(self.generation, self.best_f, self.best_q, self.best_r))

    def to_dict(self) -> dict:
        return {
            "generation": list(self.generation),
            "best_f": list(self.best_f),
            "best_q": list(self.best_q),
            "best_r": list(self.best_r),
        }


def fitness_value(r_err: float, q: int, rt: float) -> float:
    """``H[rt - r_err] / (r_err * q)`` with ``H[0] = 1``; zero for empty genomes."""
    if q == 0 or not r_err <= rt:
        return 0.0
    if r_err == 0.0:
        return math.inf
    return 1.0 / (r_err * q)


def init_population(params: GaParams, n: int, rng: np.random.Generator | None = None) -> list[Individual]:
    rng = rng or np.random.default_rng([params.seed, 0x696E6974])
    pop = []
    for k in range(params.population):
        bits = rng.random((n, n)) < params.density
        pop.append(Individual(SelectionMatrix(bits), created=k))
    return pop


def sample_holdout(table: FrfTable, size: int, seed: int) -> FrfTable:
    if size >= len(table):
        return table
    rows = np.random.default_rng([seed, 0x686F6C64]).choice(len(table), size=size, replace=False)
    return table.take(np.sort(rows))


def evaluate_fitness(
    genome: SelectionMatrix,
    seed_table: FrfTable,
    holdout: FrfTable,
    params: GaParams,
    forest_seed: int = 0,
) -> tuple[float, int, float]:
    """Train the fitness forest on the selected rows; return (r_err, q, f)."""
    if len(holdout) == 0:
        raise ValueError("holdout is empty")
    q = genome.q
    if q == 0:
        return math.inf, 0, 0.0
    train = select_rows(seed_table, genome)
    model = fit_forest(train, replace(params.fitness_forest, seed=forest_seed))
    r_err = rmse_rel(holdout.target, model.predict(holdout.features))
    return r_err, q, fitness_value(r_err, q, params.rt)


def crossover_and(a: SelectionMatrix, b: SelectionMatrix) -> SelectionMatrix:
    return a & b


def mutate(
    genome: SelectionMatrix,
    m: float,
    rng: np.random.Generator,
    mode: str = PER_GENOME,
) -> SelectionMatrix:
    """Flip bits independently.

    ``per_genome``: per-bit probability m / N, about m * N flips per genome.
    ``per_bit``: per-bit probability m.
    """
    if not 0.0 <= m <= 1.0:
        raise ValueError("mutation rate must lie in [0, 1]")
    n = genome.n
    rate = m / n if mode == PER_GENOME else m
    if rate == 0.0:
        return genome
    flips = rng.random((n, n)) < rate
    if not flips.any():
        return genome
    return SelectionMatrix(genome.bits ^ flips)


class FitnessCache:
    """Holdout errors keyed by (forest seed, genome).

    The error does not depend on r_t, so GA runs that share a seed and
    holdout but differ in r_t can reuse each other's evaluations.
    """

    def __init__(self):
        self._store: dict[tuple[int, bytes], float] = {}

    @staticmethod
    def key(forest_seed: int, genome: SelectionMatrix) -> tuple[int, bytes]:
        return forest_seed, np.packbits(genome.bits).tobytes()

    def get(self, key):
        return self._store.get(key)

    def put(self, key, r_err: float) -> None:
        self._store[key] = r_err

    def __len__(self):
        return len(self._store)


class _Evaluator:
    def __init__(self, seed_table, holdout, params, threads, cache=None, error_fn=None):
        self.seed_table = seed_table
        self.holdout = holdout
        self.params = params
        self.threads = threads
        self.cache = cache
        self.error_fn = error_fn

    def __call__(self, population: list[Individual], generation: int) -> None:
        todo = []
        for slot, ind in enumerate(population):
            if ind.evaluated:
                continue
            fs = derive_seed(self.params.seed, generation, slot)
            key = FitnessCache.key(fs, ind.genome) if self.cache is not None else None
            hit = self.cache.get(key) if key is not None else None
            if hit is not None:
                ind.r_err = hit
                ind.fitness = fitness_value(hit, ind.q, self.params.rt)
            else:
                todo.append((fs, key, ind))

        def run(item):
            fs, _, ind = item
            if self.error_fn is None:
                return evaluate_fitness(ind.genome, self.seed_table, self.holdout, self.params, fs)
            r_err = math.inf if ind.q == 0 else float(self.error_fn(ind.genome, fs))
            return r_err, ind.q, fitness_value(r_err, ind.q, self.params.rt)

        if self.threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(run, todo))
        else:
            results = [run(item) for item in todo]
        for (_, key, ind), (r_err, _, f) in zip(todo, results):
            ind.r_err = r_err
            ind.fitness = f
            if key is not None:
                self.cache.put(key, r_err)


def next_generation(
    population: list[Individual],
    params: GaParams,
    rng: np.random.Generator,
    counter: int,
) -> tuple[list[Individual], int]:
    """Elites, random survivors and AND-crossover children; mutation on non-elites.

    ``population`` must be evaluated and sorted best first.
    """
    P = params.population
    n_elite = min(params.n_elite, len(population))
    n_rand = min(params.n_random, len(population) - n_elite)
    elites = population[:n_elite]
    rest = population[n_elite:]
    picks = sorted(rng.choice(len(rest), size=n_rand, replace=False).tolist()) if n_rand else []
    randoms = [rest[k] for k in picks]
    survivors = elites + randoms
    n_children = P - n_elite - n_rand
    if n_children > 0 and len(survivors) < 2:
        raise ValueError("fewer than 2 survivors available for crossover")

    children = []
    for _ in range(n_children):
        a, b = rng.choice(len(survivors), size=2, replace=False)
        child = crossover_and(survivors[a].genome, survivors[b].genome)
        children.append(Individual(child, created=counter))
        counter += 1

    out = list(elites)
    for ind in randoms + children:
        g = mutate(ind.genome, params.mutation, rng, params.mutation_mode)
        if g is ind.genome:
            out.append(ind)
        else:
            out.append(Individual(g, created=counter))
            counter += 1
    return out, counter


def evolve(
    seed_table: FrfTable,
    holdout: FrfTable,
    params: GaParams,
    *,
    threads: int = 1,
    population: list[Individual] | None = None,
    cache: FitnessCache | None = None,
    error_fn: Callable[[SelectionMatrix, int], float] | None = None,
) -> tuple[Individual, GaHistory]:
    """Run ``params.generations`` generations; return the best individual ever seen.

    Generation 1 is the initial population.  The history holds the best
    individual so far after each generation.  ``cache`` must only be
    shared between runs on the same seed table and holdout.  ``error_fn``
    replaces the forest-based holdout error (arguments: genome, forest seed).
    """
    params.validate()
    evaluate = _Evaluator(seed_table, holdout, params, threads, cache, error_fn)
    pop = population if population is not None else init_population(params, seed_table.n_nodes)
    counter = max(ind.created for ind in pop) + 1
    history = GaHistory()
    best = None

    for g in range(1, params.generations + 1):
        evaluate(pop, g)
        pop.sort(key=Individual.sort_key)
        if best is None or pop[0].sort_key() < best.sort_key():
            best = pop[0]
        history.record(g, best)
        if g == params.generations:
            break
        rng = np.random.default_rng([params.seed, 0x65766F6C, g])
        pop, counter = next_generation(pop, params, rng, counter)
    return best, history


# --------------------------------------------------------------------------
# files


def _runs(flat: np.ndarray) -> list[int]:
    """Alternating run lengths, starting with a (possibly empty) run of zeros."""
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    lengths = np.diff(bounds).tolist()
    return ([0] + lengths) if flat[0] else lengths


def write_genome(path, genome: SelectionMatrix, rt: float, seed_freq: float) -> None:
    lines = [
        f"{GENOME_MAGIC} {GENOME_VERSION}",
        f"N {genome.n}",
        f"q {genome.q}",
        f"rt {rt!r}",
        f"seed_freq {seed_freq!r}",
        "runs " + " ".join(str(v) for v in _runs(genome.bits.ravel())),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_genome(path) -> tuple[SelectionMatrix, dict]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].split() != [GENOME_MAGIC, str(GENOME_VERSION)]:
        raise ValueError(f"{path}: not a genome file")
    meta = {}
    for line in text[1:]:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        meta[key] = rest.strip()
    try:
        n = int(meta["N"])
        q = int(meta["q"])
        runs = [int(v) for v in meta["runs"].split()] if meta.get("runs") else []
        rt = float(meta["rt"])
        seed_freq = float(meta["seed_freq"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed genome header ({exc})") from exc
    if sum(runs) != n * n:
        raise ValueError(f"{path}: run lengths sum to {sum(runs)}, expected {n * n}")
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, runs)
    genome = SelectionMatrix(flat.reshape(n, n))
    if genome.q != q:
        raise ValueError(f"{path}: header q={q} but {genome.q} bits are set")
    return genome, {"N": n, "q": q, "rt": rt, "seed_freq": seed_freq}


def write_history(path, history: GaHistory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best_f", "best_q", "best_r"])
        for g, f, q, r in history.rows():
            w.writerow([g, repr(float(f)), q, repr(float(r))])
