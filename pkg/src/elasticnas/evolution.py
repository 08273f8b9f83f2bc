"""Latency-constrained evolutionary search with aging replacement.

Conventions (parent fraction, mutation probability, 50/50 operator split,
oldest-out replacement) follow regularized evolution's usual defaults; the
iteration/population presets are N=500 with |P|=100, with reduced presets
N=300 (compound elastic spaces) and N=50 (compound fixed spaces).
"""

from __future__ import annotations

import random
import time
from collections import deque
from dataclasses import dataclass, field

from .errors import InfeasibleTarget, RetriesExhausted, SpaceTooLarge
from .latency import LatencyCache, cached_estimate
from .space import (
    ArchSpec,
    SearchSpaceDef,
    cardinality,
    crossover,
    enumerate_space,
    min_arch,
    mutate,
    sample_uniform,
)

ITERATIONS_DEFAULT = 500
ITERATIONS_COMPOUND_ELASTIC = 300
ITERATIONS_COMPOUND_FIXED = 50


@dataclass(frozen=True)
class EvoConfig:
    target_ms: float
    iterations: int = ITERATIONS_DEFAULT
    population: int = 100
    parent_fraction: float = 0.25
    p_mut: float = 0.1
    mutation_fraction: float = 0.5
    max_retries: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.population < 2:
            raise ValueError("need iterations >= 1 and population >= 2")
        if not (0 < self.parent_fraction <= 1 and 0 < self.mutation_fraction <= 1):
            raise ValueError("fractions must lie in (0, 1]")
        if self.target_ms <= 0:
            raise ValueError("latency target must be positive")


@dataclass(frozen=True)
class Candidate:
    arch: ArchSpec
    fitness: float
    latency_ms: float


@dataclass
class SearchResult:
    best: Candidate
    history: list[float] = field(default_factory=list)  # best-so-far per iter
    model_invocations: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "arch": self.best.arch.to_json(),
            "fitness": self.best.fitness,
            "latency_ms": self.best.latency_ms,
            "history": list(self.history),
            "model_invocations": self.model_invocations,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "wall_time_s": self.wall_time_s,
        }


class _CountingModel:
    def __init__(self, model):
        self.model = model
        self.calls = 0

    def __call__(self, arch):
        self.calls += 1
        return self.model(arch)


def run_search(space: SearchSpaceDef, fitness, lat_model,
               cache: LatencyCache | None, cfg: EvoConfig) -> SearchResult:
    """Maximize fitness subject to latency <= target.

    Population is initialized by rejection sampling; each iteration breeds
    one feasible child from the top parent fraction (mutation or crossover
    per the configured split) and retires the oldest member. Candidates
    already evaluated are retried (within the retry budget) so iterations
    favor distinct archs. All latency queries are memoized through
    ``cache`` when one is given.
    """
    start = time.perf_counter()
    rng = random.Random(cfg.seed)
    counting = _CountingModel(lat_model)

    def latency(arch):
        return cached_estimate(cache, counting, arch)

    if latency(min_arch(space)) > cfg.target_ms:
        raise InfeasibleTarget(
            f"min arch exceeds target {cfg.target_ms} ms"
        )

    evaluated: set[ArchSpec] = set()

    def feasible_sample(make):
        # Prefer candidates not evaluated before so the fixed iteration
        # budget covers distinct archs; fall back to a feasible duplicate
        # rather than fail when the neighborhood is exhausted.
        fallback = None
        for _ in range(cfg.max_retries):
            arch = make()
            ms = latency(arch)
            if ms <= cfg.target_ms:
                if arch not in evaluated:
                    return arch, ms
                fallback = (arch, ms)
        if fallback is not None:
            return fallback
        raise RetriesExhausted(
            f"no feasible candidate in {cfg.max_retries} tries"
        )

    population: deque[Candidate] = deque()
    for _ in range(cfg.population):
        arch, ms = feasible_sample(lambda: sample_uniform(space, rng))
        evaluated.add(arch)
        population.append(Candidate(arch, float(fitness(arch)), ms))

    best = max(population, key=lambda c: c.fitness)
    history = []
    n_parents = max(1, round(cfg.parent_fraction * cfg.population))
    for _ in range(cfg.iterations):
        parents = sorted(population, key=lambda c: -c.fitness)[:n_parents]
        if rng.random() < cfg.mutation_fraction:
            parent = parents[rng.randrange(len(parents))]
            make = lambda: mutate(space, parent.arch, cfg.p_mut, rng)
        else:
            a = parents[rng.randrange(len(parents))]
            b = parents[rng.randrange(len(parents))]
            make = lambda: crossover(space, a.arch, b.arch, rng)
        arch, ms = feasible_sample(make)
        evaluated.add(arch)
        child = Candidate(arch, float(fitness(arch)), ms)
        population.append(child)
        population.popleft()
        if child.fitness > best.fitness:
            best = child
        history.append(best.fitness)

    return SearchResult(
        best=best,
        history=history,
        model_invocations=counting.calls,
        cache_hits=cache.hits if cache is not None else 0,
        cache_misses=cache.misses if cache is not None else 0,
        wall_time_s=time.perf_counter() - start,
    )


def exhaustive_best(space: SearchSpaceDef, fitness, lat_model,
                    target_ms: float, limit: int = 10**5) -> Candidate:
    """Ground-truth argmax over enumerable spaces.

    Ties break toward lower latency, then earlier enumeration order.
    """
    if cardinality(space) > limit:
        raise SpaceTooLarge(
            f"cardinality {cardinality(space)} exceeds limit {limit}"
        )
    best = None
    any_feasible = False
    for arch in enumerate_space(space, limit):
        ms = lat_model(arch)
        if ms > target_ms:
            continue
        any_feasible = True
        fit = float(fitness(arch))
        if best is None or fit > best.fitness or (
            fit == best.fitness and ms < best.latency_ms
        ):
            best = Candidate(arch, fit, ms)
    if not any_feasible:
        raise InfeasibleTarget(f"no arch meets target {target_ms} ms")
    return best
