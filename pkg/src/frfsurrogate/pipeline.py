"""Seed stage, GA subset selection, transfer to other frequencies, report.

Ground truth at every target frequency is computed by the oracle only to
score the transferred models; the models only ever see the rows of the
selected node pairs.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BenchmarkRow, run_benchmark
from .config import PipelineConfig
from .dataset import FEATURE_NAMES, FrfTable, SelectionMatrix, select_rows
from .ga import FitnessCache, GaHistory, derive_seed, evolve, sample_holdout, write_genome, write_history
from .metrics import evaluate, rmse_rel
from .oracle import StructureModel, build_structure, dataset_at_frequency
from .trees import fit_forest

log = logging.getLogger(__name__)

# Keys whose values depend on wall-clock time; excluded from reproducibility checks.
TIMING_KEYS = frozenset({"wall_time_s", "elapsed_s", "generated_at"})

_TAG_BENCH = 1
_TAG_GA = 2
_TAG_TRANSFER = 3
_TAG_RANDOM = 4
_TAG_HOLDOUT = 5


@dataclass
class FrequencyResult:
    f_c: float
    rt: float
    rt_effective: float
    q: int
    reduction: float
    rmse_r: float
    r: float | None
    rmse_r_estimated: float
    random_mean: float
    random_std: float
    random_trials: int

    @property
    def gain_vs_random(self) -> float:
        return (self.random_mean - self.rmse_r) / self.random_mean


@dataclass
class SeedStage:
    structure: StructureModel
    table: FrfTable
    benchmark: list[BenchmarkRow]
    rt_scale: float
    genomes: dict[float, SelectionMatrix]
    ga_errors: dict[float, float]
    histories: dict[float, GaHistory]
    elapsed_s: float = 0.0


class TruthCache:
    """Full oracle tables per frequency, computed once and shared.

    Also memoizes scored subset models: identical (frequency, forest
    params, genome) triples always give identical results.
    """

    def __init__(self, structure: StructureModel):
        self.structure = structure
        self._tables: dict[float, FrfTable] = {}
        self.scores: dict[tuple, tuple] = {}

    def __call__(self, f: float) -> FrfTable:
        f = float(f)
        if f not in self._tables:
            self._tables[f] = dataset_at_frequency(self.structure, f)
        return self._tables[f]


def estimate_error(seed_error: float, f_c: float, f_s: float) -> float:
    """Error extrapolated linearly in frequency from the seed frequency."""
    if not f_s > 0:
        raise ValueError("seed frequency must be positive")
    return seed_error * f_c / f_s


def no_skill_error(table: FrfTable) -> float:
    """RMSE-r of predicting the table mean everywhere."""
    return rmse_rel(table.target, np.full(len(table), table.target.mean()))


def resolve_rt_scale(config: PipelineConfig, seed_table: FrfTable) -> float:
    if config.rt_scale == "auto":
        return no_skill_error(seed_table)
    return float(config.rt_scale)


def seed_benchmark(config: PipelineConfig, table: FrfTable, *, threads: int = 1) -> list[BenchmarkRow]:
    return run_benchmark(
        table, derive_seed(config.seed, _TAG_BENCH),
        knn_k=config.knn_k, forest=config.forest_params(), threads=threads,
    )


def ga_holdout(config: PipelineConfig, table: FrfTable) -> FrfTable:
    return sample_holdout(table, config.ga_holdout, derive_seed(config.seed, _TAG_HOLDOUT))


def run_ga(
    config: PipelineConfig,
    table: FrfTable,
    holdout: FrfTable,
    rt_effective: float,
    *,
    threads: int = 1,
    cache: FitnessCache | None = None,
):
    """One GA at an already-scaled tolerance.

    Every tolerance shares the same seed, so runs differ only through the
    feasibility gate.
    """
    params = config.ga_params(rt=rt_effective, seed=derive_seed(config.seed, _TAG_GA))
    return evolve(table, holdout, params, threads=threads, cache=cache)


def run_seed_stage(config: PipelineConfig, *, threads: int = 1, truth: TruthCache | None = None) -> SeedStage:
    t0 = time.perf_counter()
    structure = truth.structure if truth else build_structure(config.oracle())
    truth = truth or TruthCache(structure)
    table = truth(config.seed_freq)
    log.info("seed table: %d rows at %g Hz", len(table), config.seed_freq)

    bench = seed_benchmark(config, table, threads=threads)
    scale = resolve_rt_scale(config, table)
    holdout = ga_holdout(config, table)

    genomes, errors, histories = {}, {}, {}
    cache = FitnessCache()
    for rt in config.rt_list:
        best, hist = run_ga(config, table, holdout, rt * scale, threads=threads, cache=cache)
        log.info("GA rt=%g (effective %.4g): q=%d r_err=%.4g", rt, rt * scale, best.q, best.r_err)
        genomes[rt] = best.genome
        errors[rt] = best.r_err
        histories[rt] = hist

    qs = [genomes[rt].q for rt in sorted(genomes, reverse=True)]
    if any(a > b for a, b in zip(qs, qs[1:])):
        log.warning("selected subset size not monotone in rt: %s", qs)

    return SeedStage(
        structure=structure,
        table=table,
        benchmark=bench,
        rt_scale=scale,
        genomes=genomes,
        ga_errors=errors,
        histories=histories,
        elapsed_s=time.perf_counter() - t0,
    )


def _train_and_score(genome, f_c, config, seed, threads, truth, keep_pred=False):
    params = config.forest_params(seed=seed)
    key = (float(f_c), params, genome.n, np.packbits(genome.bits).tobytes())
    hit = truth.scores.get(key)
    if hit is not None and (hit[1] is not None or not keep_pred):
        return hit
    table = truth(f_c)
    train = select_rows(table, genome)
    if len(train) == 0:
        raise ValueError("genome selects no node pairs")
    model = fit_forest(train, params, threads=threads)
    pred = model.predict(table.features)
    ev = evaluate(table.target, pred)
    truth.scores[key] = (ev, pred if keep_pred else None)
    return ev, pred


def random_genome(n: int, q: int, rng: np.random.Generator) -> SelectionMatrix:
    bits = np.zeros(n * n, dtype=bool)
    bits[rng.choice(n * n, size=q, replace=False)] = True
    return SelectionMatrix(bits.reshape(n, n))


def compare_random(
    genome: SelectionMatrix,
    f_c: float,
    trials: int,
    config: PipelineConfig,
    *,
    truth: TruthCache,
    seed: int = 0,
    threads: int = 1,
) -> tuple[float, float]:
    """Mean and standard deviation of RMSE-r over random subsets of equal size."""
    if trials < 3:
        raise ValueError("need at least 3 random trials")
    errs = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        g = random_genome(genome.n, genome.q, rng)
        ev, _ = _train_and_score(g, f_c, config, derive_seed(seed, t), threads, truth)
        errs.append(ev.rmse_r)
    return float(np.mean(errs)), float(np.std(errs))


def run_transfer(
    genome: SelectionMatrix,
    f_c: float,
    config: PipelineConfig,
    *,
    truth: TruthCache,
    seed_error: float,
    rt: float = float("nan"),
    rt_effective: float = float("nan"),
    seed: int = 0,
    threads: int = 1,
    with_random: bool = True,
) -> tuple[FrequencyResult, np.ndarray]:
    """Train on the selected rows at ``f_c`` and score on the full table there.

    Returns the result and the full prediction vector.
    """
    if genome.q == 0:
        raise ValueError("genome selects no node pairs")
    ev, pred = _train_and_score(genome, f_c, config, derive_seed(seed, 0), threads, truth, keep_pred=True)
    if with_random:
        rmean, rstd = compare_random(
            genome, f_c, config.random_trials, config,
            truth=truth, seed=derive_seed(seed, 1), threads=threads,
        )
        trials = config.random_trials
    else:
        rmean, rstd, trials = float("nan"), float("nan"), 0
    n = genome.n
    result = FrequencyResult(
        f_c=float(f_c),
        rt=rt,
        rt_effective=rt_effective,
        q=genome.q,
        reduction=n * n / genome.q,
        rmse_r=ev.rmse_r,
        r=ev.r,
        rmse_r_estimated=estimate_error(seed_error, f_c, config.seed_freq),
        random_mean=rmean,
        random_std=rstd,
        random_trials=trials,
    )
    return result, pred


@dataclass
class Report:
    config: dict
    rt_scale: float
    benchmark: list[BenchmarkRow]
    histories: dict[float, GaHistory]
    seed_errors: dict[float, dict]
    results: list[FrequencyResult]
    elapsed_s: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def gain_vs_random(self) -> float:
        """Mean over all (rt, f_c) of (random_mean - ga) / random_mean."""
        gains = [r.gain_vs_random for r in self.results if r.random_trials]
        return float(np.mean(gains)) if gains else float("nan")

    def gain_vs_random_below_seed(self, f_s: float) -> float:
        gains = [r.gain_vs_random for r in self.results if r.random_trials and r.f_c <= f_s]
        return float(np.mean(gains)) if gains else float("nan")

    def to_dict(self) -> dict:
        f_s = self.config["seed_freq"]
        return {
            "format": "frfsurrogate-report",
            "version": __version__,
            "config": self.config,
            "rt_scale": self.rt_scale,
            "benchmark": [row.to_dict() for row in self.benchmark],
            "ga": [
                {"rt": rt, **self.seed_errors[rt], "history": self.histories[rt].to_dict()}
                for rt in self.histories
            ],
            "results": [
                {**asdict(r), "gain_vs_random": r.gain_vs_random} for r in self.results
            ],
            "summary": {
                "gain_vs_random_mean": self.gain_vs_random,
                "gain_vs_random_mean_below_seed": self.gain_vs_random_below_seed(f_s),
            },
            "elapsed_s": self.elapsed_s,
            **self.meta,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def report_json(report: Report) -> str:
    return json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=False)


def strip_timing(doc):
    """Drop wall-clock fields recursively so reports can be compared."""
    if isinstance(doc, dict):
        return {k: strip_timing(v) for k, v in doc.items() if k not in TIMING_KEYS}
    if isinstance(doc, list):
        return [strip_timing(v) for v in doc]
    return doc


def write_predictions(path, table: FrfTable, pred: np.ndarray) -> None:
    cols = np.column_stack([table.i, table.j, table.features[:, 0], table.features[:, 1], table.target, pred])
    header = "i,j,force_dir,resp_dir,truth_db,pred_db"
    np.savetxt(path, cols, fmt=["%d"] * 4 + ["%.17g"] * 2, delimiter=",", header=header, comments="")


def run_pipeline(config: PipelineConfig, out_dir=None, *, threads: int = 1) -> Report:
    """Full run; writes report.json, genomes, histories and prediction CSVs when ``out_dir`` is given."""
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    structure = build_structure(config.oracle())
    truth = TruthCache(structure)
    stage = run_seed_stage(config, threads=threads, truth=truth)
    f_s = config.seed_freq

    # transfer seeds depend on the frequency only: tolerances that select the
    # same genome get identical (memoized) transfers
    seed_errors = {}
    results = []
    for k, rt in enumerate(config.rt_list):
        genome = stage.genomes[rt]
        # error of the transferred model at the seed frequency itself
        self_result, _ = run_transfer(
            genome, f_s, config, truth=truth, seed_error=float("nan"),
            seed=derive_seed(config.seed, _TAG_TRANSFER, 0), threads=threads, with_random=False,
        )
        seed_err = self_result.rmse_r
        seed_errors[rt] = {
            "rt_effective": rt * stage.rt_scale,
            "q": genome.q,
            "reduction": genome.n ** 2 / genome.q,
            "ga_holdout_rmse_r": stage.ga_errors[rt],
            "seed_rmse_r": seed_err,
        }
        if out is not None:
            write_genome(out / f"genome_rt{k}.txt", genome, rt * stage.rt_scale, f_s)
            write_history(out / f"history_rt{k}.csv", stage.histories[rt])

        for m, f_c in enumerate(config.target_freqs):
            res, pred = run_transfer(
                genome, f_c, config, truth=truth, seed_error=seed_err,
                rt=rt, rt_effective=rt * stage.rt_scale,
                seed=derive_seed(config.seed, _TAG_TRANSFER, m + 1),
                threads=threads,
            )
            log.info(
                "rt=%g f_c=%g: rmse_r=%.4g est=%.4g random=%.4g",
                rt, f_c, res.rmse_r, res.rmse_r_estimated, res.random_mean,
            )
            results.append(res)
            if out is not None and config.write_predictions:
                write_predictions(out / f"pred_rt{k}_f{m}.csv", truth(f_c), pred)

    report = Report(
        config=config.to_dict(),
        rt_scale=stage.rt_scale,
        benchmark=stage.benchmark,
        histories=stage.histories,
        seed_errors=seed_errors,
        results=results,
        elapsed_s=time.perf_counter() - t0,
    )
    if out is not None:
        (out / "report.json").write_text(report_json(report) + "\n", encoding="utf-8")
    return report


def render_text(doc: dict) -> str:
    """Human-readable summary of a report document."""
    lines = []
    cfg = doc["config"]
    lines.append(f"seed frequency {cfg['seed_freq']:g} Hz, master seed {cfg['seed']}")
    lines.append(f"grid {cfg['grid_nx']}x{cfg['grid_ny']}x{cfg['grid_nz']}, {cfg['n_modes']} modes")
    lines.append(f"rt scale {doc['rt_scale']:.4g}")
    lines.append("")
    lines.append("benchmark (half split at the seed frequency)")
    lines.append(f"  {'model':<14}{'R':>10}{'RMSE-r':>12}{'time s':>10}")
    for row in doc["benchmark"]:
        r = "undef" if row["r"] is None else f"{row['r']:.4f}"
        t = row.get("wall_time_s")
        t = "-" if t is None else f"{t:.2f}"
        lines.append(f"  {row['model']:<14}{r:>10}{row['rmse_r']:>12.4g}{t:>10}")
    for row in doc["benchmark"]:
        if row["model"] == "ExtraTree" and row.get("importance"):
            pairs = ", ".join(f"{n} {v:.3f}" for n, v in zip(FEATURE_NAMES, row["importance"]))
            lines.append(f"  ExtraTree importances: {pairs}")
    lines.append("")
    lines.append("GA subsets")
    lines.append(f"  {'rt':>6}{'rt eff':>10}{'q':>7}{'reduction':>11}{'seed RMSE-r':>13}")
    for g in doc["ga"]:
        lines.append(
            f"  {g['rt']:>6g}{g['rt_effective']:>10.4g}{g['q']:>7d}"
            f"{g['reduction']:>11.2f}{g['seed_rmse_r']:>13.4g}"
        )
    lines.append("")
    lines.append("transfer")
    lines.append(f"  {'rt':>6}{'f_c':>7}{'RMSE-r':>10}{'est.':>10}{'random':>10}{'gain':>8}")
    for r in doc["results"]:
        rm = r["random_mean"]
        gain = r["gain_vs_random"]
        lines.append(
            f"  {r['rt']:>6g}{r['f_c']:>7g}{r['rmse_r']:>10.4g}{r['rmse_r_estimated']:>10.4g}"
            f"{(rm if rm is not None else float('nan')):>10.4g}"
            f"{(100 * gain if gain is not None else float('nan')):>7.1f}%"
        )
    s = doc["summary"]
    lines.append("")
    mean_gain = s["gain_vs_random_mean"]
    below = s["gain_vs_random_mean_below_seed"]
    if mean_gain is not None:
        lines.append(f"mean RMSE-r reduction vs random subsets: {100 * mean_gain:.1f}%")
    if below is not None:
        lines.append(f"  at f_c <= f_s: {100 * below:.1f}%")
    return "\n".join(lines) + "\n"
