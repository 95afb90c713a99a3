"""Restricted sampling laws and the statistics that drive the law search.

A law narrows every variable of a space to a sub-interval ``[low, high]``
of its absolute ratings; each variable is then drawn uniformly from the
legal options inside that interval.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import core
from .core import Architecture
from .seeding import mix
from .seeding import rng as make_rng
from .space import SearchSpace, materialize

METRICS = ("parameter_count", "flops")


class LawMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SamplingLaw:
    space_id: str
    ranges: tuple[tuple[str, int, int], ...]

    def bounds(self, name: str) -> tuple[int, int]:
        for var, lo, hi in self.ranges:
            if var == name:
                return lo, hi
        raise KeyError(name)

    def to_list(self) -> list[dict]:
        return [{"variable": v, "low": lo, "high": hi} for v, lo, hi in self.ranges]

    def dumps(self) -> str:
        return json.dumps(self.to_list(), indent=2) + "\n"


@dataclass(frozen=True)
class LawStatistics:
    metric: str
    mu: float
    sigma: float
    n: int
    samples: tuple[int, ...] = field(default=(), repr=False, compare=False)


def full_law(space: SearchSpace) -> SamplingLaw:
    return SamplingLaw(space.id, tuple((v.name, v.low, v.high) for v in space.variables))


def point_law(space: SearchSpace, assignment) -> SamplingLaw:
    return SamplingLaw(space.id, tuple((v.name, assignment[v.name], assignment[v.name])
                                       for v in space.variables))


def law_from_list(space: SearchSpace, items: Sequence[dict]) -> SamplingLaw:
    ranges = []
    for item in items:
        unknown = set(item) - {"variable", "low", "high"}
        if unknown:
            raise ValueError(f"law entry: unknown fields {sorted(unknown)}")
        ranges.append((str(item["variable"]), int(item["low"]), int(item["high"])))
    law = SamplingLaw(space.id, tuple(ranges))
    check_law(space, law)
    return law


def load_law(path, space: SearchSpace) -> SamplingLaw:
    with open(path) as fh:
        return law_from_list(space, json.load(fh))


def check_law(space: SearchSpace, law: SamplingLaw) -> None:
    if law.space_id != space.id:
        raise LawMismatch(f"law belongs to space {law.space_id!r}, not {space.id!r}")
    if tuple(v for v, _, _ in law.ranges) != space.names:
        raise LawMismatch("law variables do not match the space variables")
    for spec, (name, lo, hi) in zip(space.variables, law.ranges):
        if lo > hi:
            raise LawMismatch(f"law for {name!r} has low > high")
        if lo < spec.low or hi > spec.high:
            raise LawMismatch(f"law for {name!r} exceeds the absolute ratings")
        if not spec.options(lo, hi):
            raise LawMismatch(f"law for {name!r} admits no legal value")


def draw_assignment(space: SearchSpace, law: SamplingLaw, seed: int) -> dict[str, int]:
    r = make_rng(seed)
    return {spec.name: spec.draw(r, lo, hi) for spec, (_, lo, hi) in zip(space.variables, law.ranges)}


def sample_with_law(space: SearchSpace, law: SamplingLaw, seed: int) -> Architecture:
    check_law(space, law)
    return materialize(space, draw_assignment(space, law, seed))


def metric_value(arch: Architecture, metric: str) -> int:
    if metric == "parameter_count":
        return core.count_parameters(arch)
    if metric == "flops":
        return core.count_flops(arch)
    raise ValueError(f"unknown metric {metric!r}")


def summarize(values: Iterable[int], metric: str) -> LawStatistics:
    """Mean and population standard deviation, computed exactly on integers.

    The variance is an exact rational ``(n*S2 - S1**2) / n**2`` so the only
    roundings are the final float conversion and the square root.
    """
    xs = tuple(int(x) for x in values)
    n = len(xs)
    if n < 1:
        raise ValueError("need at least one sample")
    s1 = sum(xs)
    s2 = sum(x * x for x in xs)
    mu = s1 / n
    sigma = math.sqrt((n * s2 - s1 * s1) / (n * n))
    return LawStatistics(metric, mu, sigma, n, xs)


def estimate_statistics(space: SearchSpace, law: SamplingLaw, metric: str = "parameter_count",
                        n: int = 10, seed: int = 0) -> LawStatistics:
    """Sample ``n`` architectures (draw ``i`` seeded with ``mix(seed, i)``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    check_law(space, law)
    values = [
        metric_value(materialize(space, draw_assignment(space, law, mix(seed, i))), metric)
        for i in range(n)
    ]
    return summarize(values, metric)


def law_cost(stats: LawStatistics, window: tuple[float, float]) -> float:
    tau1, tau2 = window
    if not tau1 < tau2:
        raise ValueError("window needs tau1 < tau2")
    return abs(stats.mu - stats.sigma - tau1) + abs(stats.mu + stats.sigma - tau2)


STATS_HEADER = ("law_id", "metric", "mu", "sigma", "n", "seed")


def write_statistics_csv(path, rows: Iterable[tuple[str, LawStatistics, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_HEADER)
        for law_id, st, seed in rows:
            w.writerow((law_id, st.metric, repr(st.mu), repr(st.sigma), st.n, seed))
