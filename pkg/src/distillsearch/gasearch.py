"""Genetic search for a student architecture under a size budget.

A chromosome is the five searched hyperparameters in fixed gene order
(layers, hidden, heads, ffn, vocab). Fitness rewards forward-pass
GFLOPs (a capacity proxy) and penalizes the absolute gap between the
estimated model size and the target, both taken at face value:

    fitness = gflops(seq_len) - |size_mb - target_mb|

Each iteration produces ``child_size`` children: with probability
``crossover_rate`` a single-cut crossover of two distinct parents,
otherwise a tail mutation of one parent; parents are drawn uniformly.
The merged pool is cut back to ``population_size`` by fitness
(elitist), so the best fitness never decreases.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators
from .archspace import SEARCHED_FIELDS, ArchConfig, SearchSpace, validate

GENE_ORDER = SEARCHED_FIELDS  # cut-off positions are 1-based over this order


@dataclass(frozen=True)
class Chromosome:
    layers: int
    hidden: int
    heads: int
    ffn: int
    vocab: int

    def genes(self) -> tuple[int, ...]:
        return tuple(getattr(self, f) for f in GENE_ORDER)

    def to_config(self, max_seq_len: int = 512, num_classes: int = 2) -> ArchConfig:
        return ArchConfig(layers=self.layers, hidden=self.hidden, heads=self.heads,
                          ffn=self.ffn, vocab=self.vocab,
                          max_seq_len=max_seq_len, num_classes=num_classes)

    @classmethod
    def from_genes(cls, genes) -> "Chromosome":
        return cls(**dict(zip(GENE_ORDER, (int(g) for g in genes))))


@dataclass(frozen=True)
class GaParams:
    population_size: int = 50
    crossover_rate: float = 0.6
    max_iter: int = 100
    child_size: int = 50
    target_size_mb: float = 3.0
    fitness_seq_len: int = 400
    rng_seed: int = 0
    max_seq_len: int = 512
    num_classes: int = 2

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must be in [0, 1]")
        if self.max_iter < 1 or self.child_size < 1:
            raise ValueError("max_iter and child_size must be >= 1")
        if self.target_size_mb <= 0:
            raise ValueError("target_size_mb must be positive")


@dataclass
class GaResult:
    best: Chromosome
    best_fitness: float
    history: list[float]
    elapsed_seconds: float
    n_evaluations: int = 0
    params: GaParams | None = None

    def to_dict(self) -> dict:
        cfg = self.best.to_config(self.params.max_seq_len if self.params else 512,
                                  self.params.num_classes if self.params else 2)
        size = estimators.model_size(cfg)
        seq = self.params.fitness_seq_len if self.params else 400
        flops = estimators.forward_flops(cfg, min(seq, cfg.max_seq_len))
        return {
            "best": cfg.to_dict(),
            "best_fitness": self.best_fitness,
            "size_mb": size.megabytes,
            "gflops": flops.gflops,
            "history": self.history,
            "elapsed_seconds": self.elapsed_seconds,
            "n_evaluations": self.n_evaluations,
            "seed": self.params.rng_seed if self.params else None,
        }


def fitness(s: Chromosome, params: GaParams) -> float:
    cfg = s.to_config(params.max_seq_len, params.num_classes)
    gflops = estimators.forward_flops(cfg, params.fitness_seq_len).gflops
    size_mb = estimators.model_size(cfg).megabytes
    return gflops - abs(size_mb - params.target_size_mb)


def random_chromosome(space: SearchSpace, rng: np.random.Generator) -> Chromosome:
    genes = []
    for f in GENE_ORDER:
        values = space.grid_values(f)
        genes.append(values[rng.integers(len(values))])
    return Chromosome.from_genes(genes)


def random_initialization(space: SearchSpace, params: GaParams,
                          rng: np.random.Generator) -> list[Chromosome]:
    return [random_chromosome(space, rng) for _ in range(params.population_size)]


def crossover(c1: Chromosome, c2: Chromosome, rng: np.random.Generator) -> Chromosome:
    """Keep c1's genes up to a random cut, take c2's after it."""
    h = int(rng.integers(1, len(GENE_ORDER)))  # 1..4; h=5 would copy c1
    g1, g2 = c1.genes(), c2.genes()
    return Chromosome.from_genes(g1[:h] + g2[h:])


def mutation(c1: Chromosome, space: SearchSpace, rng: np.random.Generator) -> Chromosome:
    """Keep genes up to a random cut, resample the tail uniformly."""
    h = int(rng.integers(1, len(GENE_ORDER)))
    genes = list(c1.genes())
    for i in range(h, len(GENE_ORDER)):
        values = space.grid_values(GENE_ORDER[i])
        genes[i] = values[rng.integers(len(values))]
    return Chromosome.from_genes(genes)


def _sort_key(item, params: GaParams):
    chrom, fit = item
    size_mb = estimators.model_size(
        chrom.to_config(params.max_seq_len, params.num_classes)).megabytes
    return (-fit, abs(size_mb - params.target_size_mb), chrom.genes())


def selection(merged: list[tuple[Chromosome, float]],
              params: GaParams) -> list[tuple[Chromosome, float]]:
    """Top population_size by fitness; ties by size gap, then gene order."""
    if len(merged) < params.population_size:
        raise ValueError("merged pool smaller than population_size")
    ranked = sorted(merged, key=lambda it: _sort_key(it, params))
    return ranked[: params.population_size]


def search(space: SearchSpace, params: GaParams) -> GaResult:
    """Run the full evolutionary loop; deterministic given the seed."""
    rng = np.random.default_rng(params.rng_seed)
    start = time.perf_counter()

    population = random_initialization(space, params, rng)
    scored = [(c, fitness(c, params)) for c in population]
    n_evals = len(scored)
    scored = selection(scored, params)  # establish deterministic order
    history: list[float] = []

    for _ in range(params.max_iter):
        children = []
        while len(children) < params.child_size:
            if rng.random() < params.crossover_rate:
                i = int(rng.integers(params.population_size))
                j = int(rng.integers(params.population_size - 1))
                if j >= i:
                    j += 1  # two distinct parents
                child = crossover(scored[i][0], scored[j][0], rng)
            else:
                i = int(rng.integers(params.population_size))
                child = mutation(scored[i][0], space, rng)
            children.append(child)
        scored_children = [(c, fitness(c, params)) for c in children]
        n_evals += len(scored_children)
        scored = selection(scored + scored_children, params)
        history.append(scored[0][1])

    best, best_fit = scored[0]
    assert validate(best.to_config(params.max_seq_len, params.num_classes), space).ok
    elapsed = time.perf_counter() - start
    return GaResult(best=best, best_fitness=best_fit, history=history,
                    elapsed_seconds=elapsed, n_evaluations=n_evals, params=params)
