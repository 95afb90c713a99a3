"""Genetic search for sampling laws and full-space elaboration.

Randomness derivation (all via :func:`narrowspace.seeding.mix`):

* a search with seed ``s`` drives selection, mutation and the initial
  population from ``Random(mix(s, 0))``; fitness evaluation ``j`` (initial
  members first, then one per step) uses ``mix(mix(s, 1), j)`` as the
  statistics seed;
* an elaboration with seed ``s`` runs window ``i`` with seed ``mix(s, i)``;
  law ``j`` of that window draws sample ``k`` with
  ``mix(mix(mix(mix(s, i), 2), j), k)``.
"""

from __future__ import annotations

import csv
import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from . import core
from .laws import SamplingLaw, check_law, draw_assignment, estimate_statistics, law_cost
from .seeding import mix
from .seeding import rng as make_rng
from .space import SearchSpace, materialize


@dataclass(frozen=True)
class GeneticConfig:
    n_init: int = 100
    n_steps: int = 900
    n_eval: int = 10
    tournament_size: int = 3
    mutation_prob: float = 0.3
    mutation_shift: float = 0.25
    seed: int = 0
    # elaboration settings
    n_clusters: int = 10
    n_val: int = 100

    def __post_init__(self):
        for name in ("n_init", "n_eval", "tournament_size", "n_clusters", "n_val"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")

    @property
    def networks_per_search(self) -> int:
        return (self.n_init + self.n_steps) * self.n_eval


@dataclass(frozen=True)
class LogRow:
    step: int
    best_cost: float
    offspring_cost: float
    replaced: bool


@dataclass
class SearchResult:
    window: tuple[float, float]
    population: list[tuple[SamplingLaw, float]]
    log: list[LogRow]
    initial_best: float
    networks_evaluated: int

    def best(self) -> tuple[SamplingLaw, float]:
        i = min(range(len(self.population)), key=lambda j: (self.population[j][1], j))
        return self.population[i]


def random_law(space: SearchSpace, r: random.Random) -> SamplingLaw:
    ranges = []
    for spec in space.variables:
        a, b = spec.draw(r), spec.draw(r)
        ranges.append((spec.name, min(a, b), max(a, b)))
    return SamplingLaw(space.id, tuple(ranges))


def mutate(space: SearchSpace, law: SamplingLaw, config: GeneticConfig,
           r: random.Random) -> SamplingLaw:
    """Shift both bounds of each selected variable by up to ``mutation_shift * span``."""
    ranges = []
    for spec, (name, lo, hi) in zip(space.variables, law.ranges):
        if r.random() < config.mutation_prob:
            reach = config.mutation_shift * spec.span
            lo = spec.clip(lo + r.uniform(-reach, reach))
            hi = spec.clip(hi + r.uniform(-reach, reach))
            lo, hi = min(lo, hi), max(lo, hi)
        ranges.append((name, lo, hi))
    return SamplingLaw(law.space_id, tuple(ranges))


def tournament_select(costs: Sequence[float], size: int, r: random.Random) -> int:
    if not costs:
        raise ValueError("empty population")
    drawn = [r.randrange(len(costs)) for _ in range(size)]
    return min(drawn, key=lambda i: (costs[i], i))


def _check_window(window) -> tuple[float, float]:
    tau1, tau2 = float(window[0]), float(window[1])
    if not tau1 < tau2:
        raise ValueError(f"window needs tau1 < tau2, got {window!r}")
    return tau1, tau2


def run_genetic_search(space: SearchSpace, metric: str, window, config: GeneticConfig) -> SearchResult:
    window = _check_window(window)
    r = make_rng(mix(config.seed, 0))
    eval_base = mix(config.seed, 1)
    evals = 0

    def fitness(law: SamplingLaw) -> float:
        nonlocal evals
        st = estimate_statistics(space, law, metric, config.n_eval, mix(eval_base, evals))
        evals += 1
        return law_cost(st, window)

    laws = [random_law(space, r) for _ in range(config.n_init)]
    costs = [fitness(law) for law in laws]
    best = initial_best = min(costs)
    log = []
    for step in range(config.n_steps):
        parent = tournament_select(costs, config.tournament_size, r)
        child = mutate(space, laws[parent], config, r)
        cost = fitness(child)
        worst = max(range(len(costs)), key=lambda i: (costs[i], i))
        replaced = cost < costs[worst]
        if replaced:
            laws[worst], costs[worst] = child, cost
            best = min(best, cost)
        log.append(LogRow(step, best, cost, replaced))
    return SearchResult(window, list(zip(laws, costs)), log, initial_best,
                        evals * config.n_eval)


def law_embedding(space: SearchSpace, laws: Sequence[SamplingLaw]) -> np.ndarray:
    """Bounds of every variable, normalized by the variable's rating span."""
    rows = []
    for law in laws:
        row = []
        for spec, (_, lo, hi) in zip(space.variables, law.ranges):
            span = spec.span or 1
            row += [(lo - spec.low) / span, (hi - spec.low) / span]
        rows.append(row)
    return np.asarray(rows, dtype=np.float64)


def spectral_embedding(x: np.ndarray, k: int) -> np.ndarray:
    """Row-normalized eigenvectors of the ``k`` smallest eigenvalues of the
    symmetric normalized Laplacian of an RBF affinity (bandwidth: median
    pairwise distance)."""
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    off = d[np.triu_indices(len(x), 1)]
    positive = off[off > 0]
    bandwidth = float(np.median(positive)) if positive.size else 1.0
    a = np.exp(-(d ** 2) / (2.0 * bandwidth ** 2))
    np.fill_diagonal(a, 0.0)
    deg = a.sum(1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-300))
    lap = np.eye(len(x)) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(lap)
    u = vecs[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    return u / np.where(norms > 0, norms, 1.0)


def cluster_laws(space: SearchSpace, population: Sequence[tuple[SamplingLaw, float]], k: int,
                 seed: int = 0) -> list[tuple[SamplingLaw, float]]:
    """Best-cost law from each of ``k`` spectral clusters, sorted by cost."""
    if len(population) < k:
        raise ValueError(f"population of {len(population)} is smaller than k={k}")
    order = sorted(range(len(population)), key=lambda i: (population[i][1], i))
    seen: set[SamplingLaw] = set()
    distinct = []
    for i in order:
        if population[i][0] not in seen:
            seen.add(population[i][0])
            distinct.append(population[i])
    if len(distinct) < k:
        raise ValueError(f"only {len(distinct)} distinct laws for k={k}")
    if len(distinct) == k:
        return distinct
    emb = spectral_embedding(law_embedding(space, [law for law, _ in distinct]), k)
    labels = KMeans(n_clusters=k, n_init=10, random_state=seed % (2 ** 32)).fit_predict(emb)
    chosen: dict[int, int] = {}
    for i, lab in enumerate(labels):
        chosen.setdefault(int(lab), i)  # distinct is cost-ordered
    picked = sorted(chosen.values())
    # degenerate embeddings can leave clusters empty; top up with the next best laws
    for i in range(len(distinct)):
        if len(picked) >= k:
            break
        if i not in picked:
            picked.append(i)
    return [distinct[i] for i in sorted(picked)]


def constraint_grid(low: int = 10 ** 3, high: int = 10 ** 6) -> list[int]:
    """``{t, 2t, 5t}`` for every decade ``t`` from ``low`` to ``high``, closed by ``10*high``."""
    if low < 1 or high < low:
        raise ValueError("need 1 <= low <= high")
    decades = []
    t = low
    while t <= high:
        decades.append(t)
        t *= 10
    if decades[-1] != high:
        raise ValueError("high must be low times a power of ten")
    points = {m * t for t in decades for m in (1, 2, 5)} | {10 * high}
    return sorted(points)


def sliding_windows(grid: Sequence[int]) -> list[tuple[int, int]]:
    return list(zip(grid[:-1], grid[1:]))


@dataclass(frozen=True)
class LawEntry:
    law_id: str
    window: tuple[float, float]
    cost: float
    law: SamplingLaw


@dataclass(frozen=True)
class CandidateRow:
    candidate_id: str
    space_id: str
    law_id: str
    parameter_count: int
    flops: int


@dataclass
class Elaboration:
    searches: list[SearchResult] = field(default_factory=list)
    library: list[LawEntry] = field(default_factory=list)
    archive: list[CandidateRow] = field(default_factory=list)


def _elaborate_window(args) -> tuple[SearchResult, list[LawEntry], list[CandidateRow]]:
    space, metric, index, window, config = args
    wseed = mix(config.seed, index)
    result = run_genetic_search(space, metric, window, replace(config, seed=wseed))
    reps = cluster_laws(space, result.population, config.n_clusters, seed=wseed)
    sample_base = mix(wseed, 2)
    entries, rows = [], []
    for j, (law, cost) in enumerate(reps):
        law_id = f"{space.id}-w{index:02d}-l{j:02d}"
        entries.append(LawEntry(law_id, result.window, cost, law))
        law_base = mix(sample_base, j)
        for s in range(config.n_val):
            arch = materialize(space, draw_assignment(space, law, mix(law_base, s)))
            m = core.analyze(arch)
            rows.append(CandidateRow(f"{law_id}-s{s:03d}", space.id, law_id,
                                     m.parameter_count, m.flops))
    return result, entries, rows


def elaborate_space(space: SearchSpace, config: GeneticConfig = GeneticConfig(),
                    grid: Sequence[int] | None = None, metric: str = "parameter_count",
                    threads: int = 1) -> Elaboration:
    """One search per sliding window over ``grid``; cluster; sample each law."""
    grid = constraint_grid() if grid is None else list(grid)
    jobs = [(space, metric, i, w, config) for i, w in enumerate(sliding_windows(grid))]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_elaborate_window, jobs))
    else:
        parts = [_elaborate_window(job) for job in jobs]
    out = Elaboration()
    for result, entries, rows in parts:
        out.searches.append(result)
        out.library.extend(entries)
        out.archive.extend(rows)
    return out


# -- file formats --------------------------------------------------------------

LOG_HEADER = ("step", "best_cost", "offspring_cost", "replaced")
ARCHIVE_HEADER = ("candidate_id", "space_id", "law_id", "parameter_count", "flops")


def write_search_log(path, log: Sequence[LogRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for row in log:
            w.writerow((row.step, repr(row.best_cost), repr(row.offspring_cost), int(row.replaced)))


def write_archive(path, rows: Sequence[CandidateRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ARCHIVE_HEADER)
        for r in rows:
            w.writerow((r.candidate_id, r.space_id, r.law_id, r.parameter_count, r.flops))


def read_archive(path) -> list[CandidateRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [CandidateRow(d["candidate_id"], d["space_id"], d["law_id"],
                             int(d["parameter_count"]), int(d["flops"])) for d in reader]


def library_json(entries: Sequence[LawEntry]) -> str:
    doc = [
        {"law_id": e.law_id, "window": list(e.window), "cost": e.cost, "law": e.law.to_list()}
        for e in entries
    ]
    return json.dumps(doc, indent=2) + "\n"


def check_population(space: SearchSpace, population) -> None:
    for law, _ in population:
        check_law(space, law)
