"""Narrow search spaces: templates, variables with absolute ratings, sampling.

A space pairs a template (``plain``, ``residual`` or ``concat``) with an
ordered list of integer variables.  Templates read variables by name:

``plain``
    ``c{i}`` channels of stage ``i``; kernel ``k{i}`` (square) or
    ``k{i}_h``/``k{i}_w``; optional ``depth`` selects how many stages are
    used.
``residual``
    ``stem_c``, ``stem_k``, optional ``depth``; per stage ``c{i}``, ``k{i}``.
    Each stage holds one bypass block and exactly one ``add`` layer.
``concat``
    ``stem_c``, optional ``depth``; per module ``b{i}_1`` (1x1 branch),
    ``b{i}_2`` with ``b{i}_k`` (kxk branch), ``b{i}_3`` (pool branch).

Variables for stages beyond ``depth`` are still drawn and still count
toward the cardinality; they simply do not appear in the materialized
architecture.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping

from . import core
from .core import Architecture, LayerDescriptor
from .seeding import rng as make_rng

TEMPLATES = ("plain", "residual", "concat")


class RatingViolation(ValueError):
    def __init__(self, name: str, detail: str = ""):
        msg = f"rating violation: {name}"
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.variable = name


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    choices: tuple[int, ...] | None = None
    min: int | None = None
    max: int | None = None

    def __post_init__(self):
        if self.kind == "choice":
            if not self.choices:
                raise ValueError(f"variable {self.name!r}: empty choice set")
            object.__setattr__(self, "choices", tuple(sorted(set(int(c) for c in self.choices))))
        elif self.kind == "int_range":
            if self.min is None or self.max is None or self.min > self.max:
                raise ValueError(f"variable {self.name!r}: need min <= max")
        else:
            raise ValueError(f"variable {self.name!r}: unknown kind {self.kind!r}")

    @property
    def low(self) -> int:
        return self.choices[0] if self.kind == "choice" else self.min

    @property
    def high(self) -> int:
        return self.choices[-1] if self.kind == "choice" else self.max

    @property
    def span(self) -> int:
        return self.high - self.low

    def count(self) -> int:
        return len(self.choices) if self.kind == "choice" else self.max - self.min + 1

    def clip(self, value: float) -> int:
        """Nearest legal value to ``value``; ties go to the lower option."""
        if self.kind == "choice":
            return min(self.choices, key=lambda c: (abs(c - value), c))
        return int(min(max(round(value), self.min), self.max))

    def contains(self, value: int) -> bool:
        if self.kind == "choice":
            return value in self.choices
        return self.min <= value <= self.max

    def options(self, lo: int | None = None, hi: int | None = None):
        """Legal values inside ``[lo, hi]`` (defaults: the full rating)."""
        lo = self.low if lo is None else lo
        hi = self.high if hi is None else hi
        if self.kind == "choice":
            return tuple(c for c in self.choices if lo <= c <= hi)
        return range(max(lo, self.min), min(hi, self.max) + 1)

    def draw(self, r: random.Random, lo: int | None = None, hi: int | None = None) -> int:
        if self.kind == "choice":
            if lo is None and hi is None:
                return r.choice(self.choices)
            return r.choice(self.options(lo, hi))
        return r.randint(self.min if lo is None else lo, self.max if hi is None else hi)

    def to_dict(self) -> dict:
        if self.kind == "choice":
            return {"name": self.name, "kind": "choice", "choices": list(self.choices)}
        return {"name": self.name, "kind": "int_range", "min": self.min, "max": self.max}

    @classmethod
    def from_dict(cls, d: Mapping) -> "VariableSpec":
        kind = d.get("kind")
        allowed = {"name", "kind", "choices"} if kind == "choice" else {"name", "kind", "min", "max"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"variable {d.get('name')!r}: unknown fields {sorted(unknown)}")
        if kind == "choice":
            return cls(str(d["name"]), kind, choices=tuple(d["choices"]))
        return cls(str(d["name"]), str(kind), min=int(d["min"]), max=int(d["max"]))


@dataclass(frozen=True)
class SearchSpace:
    id: str
    template: str
    variables: tuple[VariableSpec, ...]
    options: Mapping = field(default_factory=dict)
    reference_assignment: Mapping | None = None

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.options.get("input_shape", (3, 32, 32)))

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "template": self.template,
            "variables": [v.to_dict() for v in self.variables],
            "options": dict(self.options),
        }
        if self.reference_assignment is not None:
            d["reference_assignment"] = dict(self.reference_assignment)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchSpace":
        unknown = set(d) - {"id", "template", "variables", "options", "reference_assignment"}
        if unknown:
            raise ValueError(f"space: unknown fields {sorted(unknown)}")
        ref = d.get("reference_assignment")
        return cls(
            id=str(d["id"]),
            template=str(d["template"]),
            variables=tuple(VariableSpec.from_dict(v) for v in d["variables"]),
            options=dict(d.get("options", {})),
            reference_assignment=None if ref is None else {k: int(v) for k, v in ref.items()},
        )


def load_space(path) -> SearchSpace:
    with open(path) as fh:
        return SearchSpace.from_dict(json.load(fh))


BUILTIN_SPACES = ("example3", "vgg_narrow", "resnet_narrow", "inception_narrow")


def builtin_space(name: str) -> SearchSpace:
    text = resources.files("narrowspace.data").joinpath(f"spaces/{name}.json").read_text()
    return SearchSpace.from_dict(json.loads(text))


def builtin_reference(name: str) -> str:
    """Stored canonical serialization of a built-in space's reference model."""
    return resources.files("narrowspace.data").joinpath(f"references/{name}.json").read_text()


def cardinality(space: SearchSpace) -> int:
    return math.prod(v.count() for v in space.variables)


# -- templates ---------------------------------------------------------------

class _Builder:
    def __init__(self):
        self.layers: list[LayerDescriptor] = []
        self._counts: dict[str, int] = {}

    def add(self, kind: str, inputs, **kw) -> str:
        n = self._counts.get(kind, 0) + 1
        self._counts[kind] = n
        lid = f"{kind}_{n}"
        if isinstance(inputs, str):
            inputs = (inputs,)
        self.layers.append(LayerDescriptor(lid, kind, tuple(inputs), **kw))
        return lid

    def conv(self, src: str, channels: int, kh: int, kw: int | None = None,
             stride: int = 1, padding: int = 0) -> str:
        kw = kh if kw is None else kw
        return self.add("conv2d", src, kernel=(kh, kw), stride=stride,
                        padding=padding, out_channels=channels)

    def conv_relu(self, src: str, channels: int, kh: int, kw: int | None = None,
                  stride: int = 1, padding: int = 0) -> str:
        return self.add("relu", self.conv(src, channels, kh, kw, stride, padding))

    def pool(self, src: str, kind: str = "max_pool", k: int = 2, stride: int = 2,
             padding: int = 0) -> str:
        return self.add(kind, src, kernel=(k, k), stride=stride, padding=padding)

    def head(self, src: str, num_classes: int | None) -> str:
        if not num_classes:
            return src
        x = self.add("global_avg_pool", src)
        x = self.add("flatten", x)
        return self.add("dense", x, out_channels=int(num_classes))


def _stage_count(a: Mapping[str, int], prefix: str) -> int:
    n = 0
    while f"{prefix}{n + 1}" in a:
        n += 1
    return n


def _depth(a: Mapping[str, int], available: int) -> int:
    return min(a.get("depth", available), available)


def _build_plain(a: Mapping[str, int], opts: Mapping) -> list[LayerDescriptor]:
    b = _Builder()
    x = core.INPUT_ID
    stages = _depth(a, _stage_count(a, "c"))
    same = opts.get("padding", "valid") == "same"
    for i in range(1, stages + 1):
        if f"k{i}" in a:
            kh = kw = a[f"k{i}"]
        else:
            kh, kw = a[f"k{i}_h"], a[f"k{i}_w"]
        pad = max(kh, kw) // 2 if same else 0
        for _ in range(int(opts.get("convs_per_stage", 1))):
            x = b.conv_relu(x, a[f"c{i}"], kh, kw, padding=pad)
        if opts.get("pool", False):
            x = b.pool(x)
    b.head(x, opts.get("num_classes"))
    return b.layers


def _build_residual(a: Mapping[str, int], opts: Mapping) -> list[LayerDescriptor]:
    b = _Builder()
    k = a["stem_k"]
    x = b.conv_relu(core.INPUT_ID, a["stem_c"], k, padding=k // 2)
    for i in range(1, _depth(a, _stage_count(a, "c")) + 1):
        c, k = a[f"c{i}"], a[f"k{i}"]
        t = b.conv_relu(x, c, k, stride=1 if i == 1 else 2, padding=k // 2)
        r = b.conv_relu(t, c, k, padding=k // 2)
        r = b.conv(r, c, k, padding=k // 2)
        x = b.add("relu", b.add("add", (t, r)))
    b.head(x, opts.get("num_classes", 10))
    return b.layers


def _build_concat(a: Mapping[str, int], opts: Mapping) -> list[LayerDescriptor]:
    b = _Builder()
    x = b.conv_relu(core.INPUT_ID, a["stem_c"], 3, padding=1)
    modules = _depth(a, _count_modules(a))
    for i in range(1, modules + 1):
        if i > 1:
            x = b.pool(x)
        k = a[f"b{i}_k"]
        br1 = b.conv_relu(x, a[f"b{i}_1"], 1)
        br2 = b.conv_relu(x, a[f"b{i}_2"], k, padding=k // 2)
        br3 = b.conv_relu(b.pool(x, k=3, stride=1, padding=1), a[f"b{i}_3"], 1)
        x = b.add("concat", (br1, br2, br3))
    b.head(x, opts.get("num_classes", 10))
    return b.layers


def _count_modules(a: Mapping[str, int]) -> int:
    n = 0
    while f"b{n + 1}_1" in a:
        n += 1
    return n


_BUILDERS: dict[str, Callable[[Mapping[str, int], Mapping], list[LayerDescriptor]]] = {
    "plain": _build_plain,
    "residual": _build_residual,
    "concat": _build_concat,
}


def check_assignment(space: SearchSpace, assignment: Mapping[str, int]) -> None:
    extra = set(assignment) - set(space.names)
    if extra:
        raise RatingViolation(sorted(extra)[0], "not a variable of this space")
    for v in space.variables:
        if v.name not in assignment:
            raise RatingViolation(v.name, "missing")
        if not v.contains(assignment[v.name]):
            raise RatingViolation(v.name, f"{assignment[v.name]} outside ratings")


def materialize(space: SearchSpace, assignment: Mapping[str, int]) -> Architecture:
    check_assignment(space, assignment)
    layers = tuple(_BUILDERS[space.template](assignment, space.options))
    shape = space.input_shape
    return Architecture(f"{space.id}-{core.structure_digest(shape, layers)}", layers, shape)


def draw_assignment(space: SearchSpace, seed: int) -> dict[str, int]:
    r = make_rng(seed)
    return {v.name: v.draw(r) for v in space.variables}


def sample_uniform(space: SearchSpace, seed: int) -> Architecture:
    return materialize(space, draw_assignment(space, seed))
