"""Elitist genetic algorithm over real-valued, box-bounded chromosomes.

A chromosome for a window of ``W`` weeks and ``R`` regions is a flat vector of
length ``W * R`` laid out week-major: gene ``k`` belongs to week offset
``k // R`` and region ``k % R``.

Randomness comes from a single integer seed.  Genetic operators draw from one
stream derived from it; fitness evaluations receive their own seeds derived
from ``(seed, generation, individual)`` so a worker pool cannot change any
result.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .model import MU_MAX, MU_MIN

EvalFn = Callable[[np.ndarray, int], float]

SCALING_EPSILON = 0.1
SCALING_DELTA = 1e-12
_OPERATOR_STREAM = 0x6A


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


class EvaluationError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"fitness evaluation failed for individual {index}: {cause}")
        self.index = index


@dataclass(eq=False)
class BoundsTable:
    """Per-region search interval for the transmission coefficient."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self) -> None:
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        if self.lb.shape != self.ub.shape or self.lb.size == 0:
            raise ValueError("lb and ub must be non-empty vectors of equal length")
        if np.any(self.lb < MU_MIN) or np.any(self.ub > MU_MAX) or np.any(self.lb > self.ub):
            raise ValueError(f"bounds must satisfy {MU_MIN} <= lb <= ub <= {MU_MAX}")

    @classmethod
    def uniform(cls, num_regions: int, lb: float = MU_MIN, ub: float = MU_MAX) -> "BoundsTable":
        return cls(np.full(num_regions, lb), np.full(num_regions, ub))

    @property
    def num_regions(self) -> int:
        return self.lb.size

    def gene_bounds(self, window_weeks: int) -> tuple[np.ndarray, np.ndarray]:
        return np.tile(self.lb, window_weeks), np.tile(self.ub, window_weeks)

    def copy(self) -> "BoundsTable":
        return BoundsTable(self.lb.copy(), self.ub.copy())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoundsTable):
            return NotImplemented
        return np.array_equal(self.lb, other.lb) and np.array_equal(self.ub, other.ub)


@dataclass(frozen=True)
class GaConfig:
    pop_size: int = 80
    max_generations: int = 10
    p_crossover: float = 0.8
    p_mutation: float = 0.1
    elite_count: int = 5
    convergence_epsilon: float = 1e-3
    convergence_patience: int = 3

    def __post_init__(self) -> None:
        if self.pop_size < 1:
            raise ValueError("pop_size must be >= 1")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if not (0.0 <= self.p_crossover <= 1.0 and 0.0 <= self.p_mutation <= 1.0):
            raise ValueError("crossover and mutation probabilities must lie in [0, 1]")
        if not 0 <= self.elite_count < self.pop_size:
            raise ValueError("elite_count must satisfy 0 <= elite_count < pop_size")
        if self.convergence_epsilon < 0:
            raise ValueError("convergence_epsilon must be non-negative")
        if self.convergence_patience < 1:
            raise ValueError("convergence_patience must be >= 1")


@dataclass
class Population:
    """``members`` is ``(pop_size, L)``.  NaN fitness marks an unevaluated member."""

    members: np.ndarray
    fitnesses: np.ndarray | None = None

    def __len__(self) -> int:
        return self.members.shape[0]

    def best_index(self) -> int:
        if self.fitnesses is None:
            raise ValueError("population has not been evaluated")
        return int(np.argmax(self.fitnesses))


def init_population(
    bounds: BoundsTable, window_weeks: int, cfg: GaConfig, rng: np.random.Generator
) -> Population:
    lo, hi = bounds.gene_bounds(window_weeks)
    u = rng.random((cfg.pop_size, lo.size))
    members = lo + (hi - lo) * u
    # lo + (hi - lo) * u can round past hi
    np.clip(members, lo, hi, out=members)
    return Population(members)


def evaluate(
    pop: Population,
    eval_fn: EvalFn,
    seeds: Sequence[int],
    *,
    indices: Sequence[int] | None = None,
    executor: ThreadPoolExecutor | None = None,
) -> np.ndarray:
    """Fitness of each listed member; results are gathered by index.

    ``eval_fn(genes, seed)`` must not mutate ``genes``.  When ``executor`` is
    given the calls are dispatched to it.
    """
    if indices is None:
        indices = range(len(pop))
    indices = list(indices)
    if len(seeds) != len(indices):
        raise ValueError("need one seed per evaluated member")

    def run(k: int) -> float:
        i = indices[k]
        try:
            return float(eval_fn(pop.members[i], int(seeds[k])))
        except Exception as exc:
            raise EvaluationError(i, exc) from exc

    if executor is None:
        values = [run(k) for k in range(len(indices))]
    else:
        values = list(executor.map(run, range(len(indices))))
    return np.asarray(values, dtype=float)


def selection_probabilities(
    fitnesses: np.ndarray,
    epsilon: float = SCALING_EPSILON,
    delta: float = SCALING_DELTA,
) -> np.ndarray:
    """Roulette-wheel probabilities from linearly scaled fitness.

    ``f' = f - min(f) + epsilon * (max(f) - min(f) + delta)`` keeps every
    weight positive so even the worst member stays selectable.
    """
    f = np.asarray(fitnesses, dtype=float)
    lo, hi = f.min(), f.max()
    scaled = f - lo + epsilon * (hi - lo + delta)
    return scaled / scaled.sum()


def select_parents(pop: Population, rng: np.random.Generator) -> tuple[int, int]:
    if pop.fitnesses is None:
        raise ValueError("population has not been evaluated")
    probs = selection_probabilities(pop.fitnesses)
    i, j = rng.choice(len(pop), size=2, p=probs)
    return int(i), int(j)


def crossover(
    a: np.ndarray, b: np.ndarray, rng: np.random.Generator, lam: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Whole arithmetic crossover with one mixing weight per mating."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"parent length mismatch: {a.shape} vs {b.shape}")
    if lam is None:
        lam = rng.random()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c1 = np.clip(lam * a + (1.0 - lam) * b, lo, hi)
    c2 = np.clip(lam * b + (1.0 - lam) * a, lo, hi)
    return c1, c2


def mutate(c: np.ndarray, bounds: BoundsTable, rng: np.random.Generator) -> np.ndarray:
    """Resample exactly one uniformly chosen gene within its region's bounds."""
    out = np.array(c, dtype=float, copy=True)
    k = int(rng.integers(out.size))
    region = k % bounds.num_regions
    lo, hi = bounds.lb[region], bounds.ub[region]
    out[k] = min(lo + (hi - lo) * rng.random(), hi)
    return out


def elite_indices(fitnesses: np.ndarray, count: int) -> np.ndarray:
    """Top ``count`` members by fitness; ties go to the lower index."""
    return np.argsort(-np.asarray(fitnesses), kind="stable")[:count]


def next_generation(
    pop: Population, bounds: BoundsTable, cfg: GaConfig, rng: np.random.Generator
) -> Population:
    """Breed a new population.

    Elites are copied verbatim together with their fitness, so they are not
    re-evaluated; every other member gets NaN fitness.
    """
    if pop.fitnesses is None:
        raise ValueError("population has not been evaluated")
    elites = elite_indices(pop.fitnesses, cfg.elite_count)
    members = [pop.members[i].copy() for i in elites]
    fit = [float(pop.fitnesses[i]) for i in elites]

    while len(members) < cfg.pop_size:
        i, j = select_parents(pop, rng)
        if rng.random() < cfg.p_crossover:
            children = crossover(pop.members[i], pop.members[j], rng)
        else:
            children = (pop.members[i].copy(), pop.members[j].copy())
        for child in children:
            if rng.random() < cfg.p_mutation:
                child = mutate(child, bounds, rng)
            members.append(child)
            fit.append(np.nan)
    return Population(np.asarray(members[: cfg.pop_size]), np.asarray(fit[: cfg.pop_size]))


class GaResult(NamedTuple):
    best: np.ndarray
    best_fitness: float
    history: list[float]


def run_ga(
    bounds: BoundsTable,
    window_weeks: int,
    cfg: GaConfig,
    eval_fn: EvalFn,
    seed: int,
    *,
    executor: ThreadPoolExecutor | None = None,
    callback: Callable[[int, Population], None] | None = None,
) -> GaResult:
    """Evolve until ``max_generations`` or until the best fitness stalls.

    The run stalls when the relative improvement of the best fitness stays
    below ``convergence_epsilon`` for ``convergence_patience`` consecutive
    generations.  ``history[g]`` is the best fitness seen up to generation
    ``g`` (generation 0 is the initial population).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _OPERATOR_STREAM]))
    pop = init_population(bounds, window_weeks, cfg, rng)
    seeds = [derive_seed(seed, 0, i) for i in range(len(pop))]
    pop.fitnesses = evaluate(pop, eval_fn, seeds, executor=executor)
    if callback is not None:
        callback(0, pop)

    k = pop.best_index()
    best, best_fit = pop.members[k].copy(), float(pop.fitnesses[k])
    history = [best_fit]
    stall = 0
    for gen in range(1, cfg.max_generations):
        pop = next_generation(pop, bounds, cfg, rng)
        todo = np.flatnonzero(np.isnan(pop.fitnesses))
        seeds = [derive_seed(seed, gen, int(i)) for i in todo]
        pop.fitnesses[todo] = evaluate(pop, eval_fn, seeds, indices=todo, executor=executor)
        if callback is not None:
            callback(gen, pop)

        k = pop.best_index()
        prev = best_fit
        if pop.fitnesses[k] > best_fit:
            best, best_fit = pop.members[k].copy(), float(pop.fitnesses[k])
        history.append(best_fit)

        gain = (best_fit - prev) / max(abs(prev), 1e-12)
        stall = stall + 1 if gain < cfg.convergence_epsilon else 0
        if stall >= cfg.convergence_patience:
            break
    return GaResult(best, best_fit, history)
