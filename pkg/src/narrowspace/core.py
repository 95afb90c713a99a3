"""Architecture representation and analytical properties.

An :class:`Architecture` is a topologically ordered list of layer
descriptors.  Layers reference their predecessors by id; the reserved id
``"input"`` denotes the network input tensor.  All shapes are ``(C, H, W)``;
dense, flatten and global pooling layers produce ``(N, 1, 1)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

INPUT_ID = "input"

KINDS = (
    "conv2d",
    "dense",
    "relu",
    "max_pool",
    "avg_pool",
    "global_avg_pool",
    "add",
    "concat",
    "flatten",
    "softmax",
)
WINDOWED_KINDS = ("conv2d", "max_pool", "avg_pool")
TRAINABLE_KINDS = ("conv2d", "dense")
ELEMENTWISE_KINDS = ("relu", "max_pool", "avg_pool", "global_avg_pool", "softmax")

Shape = tuple[int, int, int]


class ShapeError(ValueError):
    """Raised when a layer produces a non-positive output dimension."""

    def __init__(self, layer_id: str, message: str = "degenerate shape"):
        super().__init__(f"{message} at layer {layer_id!r}")
        self.layer_id = layer_id


class InvalidArchitecture(ValueError):
    def __init__(self, violations: Sequence[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class LayerDescriptor:
    id: str
    kind: str
    inputs: tuple[str, ...]
    kernel: tuple[int, int] | None = None
    stride: int | None = None
    padding: int | None = None
    out_channels: int | None = None

    @property
    def kernel_h(self) -> int | None:
        return None if self.kernel is None else self.kernel[0]

    @property
    def kernel_w(self) -> int | None:
        return None if self.kernel is None else self.kernel[1]

    def field_violations(self) -> list[str]:
        """Check per-layer field invariants, independent of the graph."""
        out = []
        if self.kind not in KINDS:
            return [f"unknown kind {self.kind!r} at layer {self.id!r}"]
        windowed = self.kind in WINDOWED_KINDS
        has_window = (self.kernel, self.stride, self.padding) != (None, None, None)
        if windowed:
            if self.kernel is None or self.stride is None or self.padding is None:
                out.append(f"missing kernel/stride/padding at layer {self.id!r}")
            else:
                if len(self.kernel) != 2 or min(self.kernel) < 1:
                    out.append(f"kernel must be two positive integers at layer {self.id!r}")
                if self.stride < 1:
                    out.append(f"stride must be positive at layer {self.id!r}")
                if self.padding < 0:
                    out.append(f"padding must be non-negative at layer {self.id!r}")
        elif has_window:
            out.append(f"kernel/stride/padding not allowed for {self.kind} at layer {self.id!r}")
        if self.kind in TRAINABLE_KINDS:
            if self.out_channels is None or self.out_channels < 1:
                out.append(f"out_channels must be positive at layer {self.id!r}")
        elif self.out_channels is not None:
            out.append(f"out_channels not allowed for {self.kind} at layer {self.id!r}")
        if self.kind in ("add", "concat"):
            if len(self.inputs) < 2:
                out.append(f"{self.kind} needs at least two inputs at layer {self.id!r}")
        elif len(self.inputs) != 1:
            out.append(f"{self.kind} takes exactly one input at layer {self.id!r}")
        return out


@dataclass(frozen=True)
class Architecture:
    id: str
    layers: tuple[LayerDescriptor, ...]
    input_shape: Shape

    @property
    def output_id(self) -> str:
        return self.layers[-1].id if self.layers else INPUT_ID

    def layer(self, layer_id: str) -> LayerDescriptor:
        for lay in self.layers:
            if lay.id == layer_id:
                return lay
        raise KeyError(layer_id)


@dataclass(frozen=True)
class AnalyticalMetrics:
    parameter_count: int
    flops: int


@dataclass
class ValidityReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _window_dim(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def output_shape(layer: LayerDescriptor, in_shapes: Sequence[Shape]) -> Shape:
    """Shape produced by ``layer`` given the shapes of its inputs."""
    kind = layer.kind
    if kind in WINDOWED_KINDS:
        (c, h, w), = in_shapes
        kh, kw = layer.kernel
        ho = _window_dim(h, kh, layer.stride, layer.padding)
        wo = _window_dim(w, kw, layer.stride, layer.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(layer.id)
        return (layer.out_channels if kind == "conv2d" else c, ho, wo)
    if kind in ("relu", "softmax"):
        return tuple(in_shapes[0])
    if kind == "global_avg_pool":
        return (in_shapes[0][0], 1, 1)
    if kind == "flatten":
        c, h, w = in_shapes[0]
        return (c * h * w, 1, 1)
    if kind == "dense":
        return (layer.out_channels, 1, 1)
    if kind == "add":
        first = tuple(in_shapes[0])
        if any(tuple(s) != first for s in in_shapes[1:]):
            raise ShapeError(layer.id, "shape mismatch at add")
        return first
    if kind == "concat":
        spatial = tuple(in_shapes[0][1:])
        if any(tuple(s[1:]) != spatial for s in in_shapes[1:]):
            raise ShapeError(layer.id, "spatial mismatch at concat")
        return (sum(s[0] for s in in_shapes),) + spatial
    raise ValueError(f"unknown kind {kind!r}")


def _find_cycle(layers: Sequence[LayerDescriptor]) -> bool:
    ids = {lay.id for lay in layers}
    indeg = {lay.id: 0 for lay in layers}
    succ: dict[str, list[str]] = {lay.id: [] for lay in layers}
    for lay in layers:
        for src in lay.inputs:
            if src in ids:
                indeg[lay.id] += 1
                succ[src].append(lay.id)
    ready = [i for i, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        node = ready.pop()
        seen += 1
        for nxt in succ[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    return seen != len(indeg)


def infer_shapes(arch: Architecture) -> dict[str, Shape]:
    """Propagate shapes through a well-ordered architecture.

    Raises :class:`ShapeError` on degenerate or mismatched shapes.  Graph
    structure is assumed valid; use :func:`validate` for a full report.
    """
    shapes: dict[str, Shape] = {INPUT_ID: tuple(arch.input_shape)}
    for lay in arch.layers:
        shapes[lay.id] = output_shape(lay, [shapes[i] for i in lay.inputs])
    return shapes


def validate(arch: Architecture) -> ValidityReport:
    report = ValidityReport()
    v = report.violations
    if len(arch.input_shape) != 3 or min(arch.input_shape) < 1:
        v.append("input_shape must be three positive integers")
        return report
    ids: set[str] = set()
    for lay in arch.layers:
        if lay.id == INPUT_ID or lay.id in ids:
            v.append(f"duplicate or reserved layer id {lay.id!r}")
        ids.add(lay.id)
        v.extend(lay.field_violations())
    for lay in arch.layers:
        for src in lay.inputs:
            if src != INPUT_ID and src not in ids:
                v.append(f"unknown predecessor {src!r} at layer {lay.id!r}")
    if v:
        return report
    if _find_cycle(arch.layers):
        v.append("cycle detected")
        return report
    defined = {INPUT_ID}
    for lay in arch.layers:
        if any(src not in defined for src in lay.inputs):
            v.append(f"layer {lay.id!r} precedes one of its inputs (not topologically ordered)")
        defined.add(lay.id)
    consumed = {src for lay in arch.layers for src in lay.inputs}
    terminals = [lay.id for lay in arch.layers if lay.id not in consumed]
    if arch.layers and len(terminals) != 1:
        v.append(f"expected exactly one output layer, found {terminals}")
    elif arch.layers and terminals[0] != arch.layers[-1].id:
        v.append(f"output layer {terminals[0]!r} is not last")
    if v:
        return report
    try:
        infer_shapes(arch)
    except ShapeError as exc:
        v.append(str(exc))
    return report


def _require_valid(arch: Architecture) -> dict[str, Shape]:
    report = validate(arch)
    if not report.ok:
        raise InvalidArchitecture(report.violations)
    return infer_shapes(arch)


def layer_parameters(layer: LayerDescriptor, in_shape: Shape) -> int:
    if layer.kind == "conv2d":
        kh, kw = layer.kernel
        return kh * kw * in_shape[0] * layer.out_channels + layer.out_channels
    if layer.kind == "dense":
        fan_in = in_shape[0] * in_shape[1] * in_shape[2]
        return fan_in * layer.out_channels + layer.out_channels
    return 0


def layer_flops(layer: LayerDescriptor, in_shapes: Sequence[Shape], out: Shape) -> int:
    """Operations for one layer; one multiply-accumulate counts as two."""
    kind = layer.kind
    if kind == "conv2d":
        kh, kw = layer.kernel
        return 2 * kh * kw * in_shapes[0][0] * out[0] * out[1] * out[2]
    if kind == "dense":
        c, h, w = in_shapes[0]
        return 2 * c * h * w * layer.out_channels
    if kind == "add":
        return (len(in_shapes) - 1) * out[0] * out[1] * out[2]
    if kind in ELEMENTWISE_KINDS:
        return out[0] * out[1] * out[2]
    return 0


def count_parameters(arch: Architecture) -> int:
    shapes = _require_valid(arch)
    return sum(layer_parameters(lay, shapes[lay.inputs[0]]) for lay in arch.layers)


def count_flops(arch: Architecture) -> int:
    shapes = _require_valid(arch)
    return sum(
        layer_flops(lay, [shapes[i] for i in lay.inputs], shapes[lay.id])
        for lay in arch.layers
    )


def analyze(arch: Architecture) -> AnalyticalMetrics:
    """Both metrics with a single validation pass."""
    shapes = _require_valid(arch)
    params = flops = 0
    for lay in arch.layers:
        ins = [shapes[i] for i in lay.inputs]
        params += layer_parameters(lay, ins[0])
        flops += layer_flops(lay, ins, shapes[lay.id])
    return AnalyticalMetrics(params, flops)


# -- serialization ---------------------------------------------------------

_LAYER_FIELDS = {"id", "kind", "inputs", "kernel", "stride", "padding", "out_channels"}
_ARCH_FIELDS = {"id", "input_shape", "layers"}


def layer_to_dict(layer: LayerDescriptor) -> dict:
    d: dict = {"id": layer.id, "kind": layer.kind, "inputs": list(layer.inputs)}
    if layer.kernel is not None:
        d["kernel"] = list(layer.kernel)
    if layer.stride is not None:
        d["stride"] = layer.stride
    if layer.padding is not None:
        d["padding"] = layer.padding
    if layer.out_channels is not None:
        d["out_channels"] = layer.out_channels
    return d


def to_dict(arch: Architecture) -> dict:
    return {
        "id": arch.id,
        "input_shape": list(arch.input_shape),
        "layers": [layer_to_dict(lay) for lay in arch.layers],
    }


def _check_fields(obj: dict, allowed: set[str], required: Iterable[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"{where}: unknown fields {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ValueError(f"{where}: missing fields {missing}")


def layer_from_dict(d: dict) -> LayerDescriptor:
    _check_fields(d, _LAYER_FIELDS, ("id", "kind", "inputs"), f"layer {d.get('id')!r}")
    kernel = d.get("kernel")
    return LayerDescriptor(
        id=str(d["id"]),
        kind=str(d["kind"]),
        inputs=tuple(str(i) for i in d["inputs"]),
        kernel=None if kernel is None else (int(kernel[0]), int(kernel[1])),
        stride=d.get("stride"),
        padding=d.get("padding"),
        out_channels=d.get("out_channels"),
    )


def from_dict(d: dict) -> Architecture:
    _check_fields(d, _ARCH_FIELDS, _ARCH_FIELDS, "architecture")
    shape = tuple(int(x) for x in d["input_shape"])
    if len(shape) != 3:
        raise ValueError("architecture: input_shape must have three entries")
    return Architecture(
        id=str(d["id"]),
        layers=tuple(layer_from_dict(x) for x in d["layers"]),
        input_shape=shape,
    )


def dumps(arch: Architecture, indent: int | None = None) -> str:
    """Canonical JSON text: sorted keys, fixed separators."""
    if indent is None:
        return json.dumps(to_dict(arch), sort_keys=True, separators=(",", ":"))
    return json.dumps(to_dict(arch), sort_keys=True, indent=indent) + "\n"


def loads(text: str) -> Architecture:
    return from_dict(json.loads(text))


def structure_digest(input_shape: Sequence[int], layers: Sequence[LayerDescriptor]) -> str:
    """Content hash of the structure, independent of the architecture id."""
    body = json.dumps(
        {"input_shape": list(input_shape), "layers": [layer_to_dict(x) for x in layers]},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha1(body.encode()).hexdigest()[:16]
