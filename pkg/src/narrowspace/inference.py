"""Forward-only evaluation of architectures with extrinsic quantization.

Every operator computes in binary32.  When a :class:`ReducedFloatType` hook
is given, weights and biases are projected onto that type once at load,
and every activation map (the network input and each layer output) is
projected before it is consumed.
"""

from __future__ import annotations

import json
import struct
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import core
from .core import Architecture
from .precision import ReducedFloatType, quantize_tensor, type_grid

WEIGHTS_MAGIC = b"NSWB0001"
DATASET_MAGIC = b"NSDS0001"


class WeightMismatch(ValueError):
    pass


@dataclass
class OpCounter:
    """Operation tally filled in by :meth:`Engine.forward`."""

    total: int = 0
    per_layer: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def add(self, layer_id: str, n: int) -> None:
        self.total += int(n)
        self.per_layer[layer_id] += int(n)


@dataclass
class WeightBundle:
    """Per-layer ``(weight, bias)`` arrays.

    Conv weights are ``(C_out, C_in, kh, kw)``, dense weights ``(out, in)``.
    """

    arch_id: str
    tensors: dict[str, tuple[np.ndarray, np.ndarray]]

    def element_count(self) -> int:
        return sum(w.size + b.size for w, b in self.tensors.values())

    def manifest(self) -> dict:
        entries, offset = [], 0
        for layer_id, pair in self.tensors.items():
            for name, arr in zip(("weight", "bias"), pair):
                entries.append({"layer": layer_id, "name": name, "shape": list(arr.shape),
                                "offset": offset, "count": int(arr.size)})
                offset += 4 * arr.size
        return {"arch_id": self.arch_id, "tensors": entries}

    def to_bytes(self) -> bytes:
        head = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":")).encode()
        body = b"".join(
            np.ascontiguousarray(arr, dtype="<f4").tobytes()
            for pair in self.tensors.values() for arr in pair
        )
        return WEIGHTS_MAGIC + struct.pack("<I", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WeightBundle":
        if blob[:8] != WEIGHTS_MAGIC:
            raise ValueError("not a weight bundle (bad magic)")
        (n,) = struct.unpack("<I", blob[8:12])
        manifest = json.loads(blob[12:12 + n])
        data = blob[12 + n:]
        pending: dict[str, dict[str, np.ndarray]] = {}
        for e in manifest["tensors"]:
            end = e["offset"] + 4 * e["count"]
            if end > len(data):
                raise ValueError("weight bundle truncated")
            arr = np.frombuffer(data[e["offset"]:end], dtype="<f4").astype(np.float32)
            pending.setdefault(e["layer"], {})[e["name"]] = arr.reshape(e["shape"])
        tensors = {k: (v["weight"], v["bias"]) for k, v in pending.items()}
        return cls(manifest["arch_id"], tensors)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightBundle":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def weight_shapes(arch: Architecture) -> dict[str, tuple[tuple[int, ...], tuple[int, ...]]]:
    shapes = core.infer_shapes(arch)
    out = {}
    for lay in arch.layers:
        c, h, w = shapes[lay.inputs[0]]
        if lay.kind == "conv2d":
            out[lay.id] = ((lay.out_channels, c, *lay.kernel), (lay.out_channels,))
        elif lay.kind == "dense":
            out[lay.id] = ((lay.out_channels, c * h * w), (lay.out_channels,))
    return out


def init_weights(arch: Architecture, seed: int = 0) -> WeightBundle:
    """He-normal weights and small uniform biases."""
    if not core.validate(arch).ok:
        raise core.InvalidArchitecture(core.validate(arch).violations)
    gen = np.random.default_rng(seed)
    tensors = {}
    for lid, (wshape, bshape) in weight_shapes(arch).items():
        fan_in = int(np.prod(wshape[1:]))
        w = gen.standard_normal(wshape) * np.sqrt(2.0 / fan_in)
        b = gen.uniform(-0.05, 0.05, bshape)
        tensors[lid] = (w.astype(np.float32), b.astype(np.float32))
    return WeightBundle(arch.id, tensors)


# -- kernels -------------------------------------------------------------------

def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, fill: float) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)), constant_values=fill)
    v = sliding_window_view(x, (kh, kw), axis=(1, 2))
    return v[:, ::stride, ::stride]  # (C, Ho, Wo, kh, kw)


def _conv2d(x, weight, bias, stride, padding, counter, lid):
    c_out, c_in, kh, kw = weight.shape
    v = _windows(x, kh, kw, stride, padding, 0.0)
    ho, wo = v.shape[1], v.shape[2]
    cols = np.ascontiguousarray(v.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c_in * kh * kw)
    kmat = weight.reshape(c_out, -1)
    if counter is not None:
        counter.add(lid, 2 * cols.shape[0] * cols.shape[1] * kmat.shape[0])
    out = cols @ kmat.T + bias
    return np.ascontiguousarray(out.T).reshape(c_out, ho, wo)


def _pool(x, kind, kh, kw, stride, padding):
    if kind == "max_pool":
        return _windows(x, kh, kw, stride, padding, -np.inf).max(axis=(3, 4))
    v = _windows(x, kh, kw, stride, padding, 0.0)
    return v.sum(axis=(3, 4), dtype=np.float32) / np.float32(kh * kw)


def _softmax(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1)
    e = np.exp(flat - flat.max())
    return (e / e.sum(dtype=np.float32)).reshape(x.shape).astype(np.float32)


class Engine:
    """An architecture bound to (optionally quantized) weights."""

    def __init__(self, arch: Architecture, weights: WeightBundle,
                 hook: ReducedFloatType | None = None):
        report = core.validate(arch)
        if not report.ok:
            raise core.InvalidArchitecture(report.violations)
        expected = weight_shapes(arch)
        if set(expected) != set(weights.tensors):
            raise WeightMismatch("weight bundle layers do not match the architecture")
        for lid, (wshape, bshape) in expected.items():
            w, b = weights.tensors[lid]
            if tuple(w.shape) != wshape or tuple(b.shape) != bshape:
                raise WeightMismatch(f"weight shape mismatch at layer {lid!r}")
        if weights.element_count() != core.count_parameters(arch):
            raise WeightMismatch("weight element count differs from the parameter count")
        self.arch = arch
        self.hook = hook
        self.params = {
            lid: (self._q(np.asarray(w, np.float32)), self._q(np.asarray(b, np.float32)))
            for lid, (w, b) in weights.tensors.items()
        }

    def _q(self, a: np.ndarray) -> np.ndarray:
        return a if self.hook is None else quantize_tensor(a, self.hook)

    def forward(self, x, counter: OpCounter | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if tuple(x.shape) != tuple(self.arch.input_shape):
            raise ValueError(f"input shape {x.shape} != {self.arch.input_shape}")
        acts = {core.INPUT_ID: self._q(x)}
        # overflow to inf and inf - inf = NaN are legitimate under narrow types
        with np.errstate(over="ignore", invalid="ignore"):
            for lay in self.arch.layers:
                ins = [acts[i] for i in lay.inputs]
                out = self._apply(lay, ins, counter)
                acts[lay.id] = self._q(out.astype(np.float32, copy=False))
        return acts[self.arch.output_id]

    def _apply(self, lay, ins, counter):
        kind, lid = lay.kind, lay.id
        if kind == "conv2d":
            w, b = self.params[lid]
            return _conv2d(ins[0], w, b, lay.stride, lay.padding, counter, lid)
        if kind == "dense":
            w, b = self.params[lid]
            flat = ins[0].reshape(-1)
            if counter is not None:
                counter.add(lid, 2 * flat.size * w.shape[0])
            return (w @ flat + b).reshape(-1, 1, 1)
        if kind == "add":
            out = ins[0]
            for other in ins[1:]:
                out = out + other
                if counter is not None:
                    counter.add(lid, out.size)
            return out
        if kind == "concat":
            return np.concatenate(ins, axis=0)
        if kind == "flatten":
            return ins[0].reshape(-1, 1, 1)
        if kind == "relu":
            out = np.maximum(ins[0], np.float32(0))
        elif kind in ("max_pool", "avg_pool"):
            out = _pool(ins[0], kind, *lay.kernel, lay.stride, lay.padding)
        elif kind == "global_avg_pool":
            c = ins[0].shape[0]
            out = ins[0].reshape(c, -1).mean(axis=1, dtype=np.float32).reshape(c, 1, 1)
        elif kind == "softmax":
            out = _softmax(ins[0])
        else:
            raise ValueError(f"unknown kind {kind!r}")
        if counter is not None:
            counter.add(lid, out.size)
        return out


def forward(arch: Architecture, weights: WeightBundle, x, hook: ReducedFloatType | None = None,
            counter: OpCounter | None = None) -> np.ndarray:
    return Engine(arch, weights, hook).forward(x, counter)


# -- datasets and accuracy -----------------------------------------------------

@dataclass
class Dataset:
    inputs: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) integer

    def __len__(self) -> int:
        return len(self.labels)

    def to_bytes(self) -> bytes:
        n, c, h, w = self.inputs.shape
        return (DATASET_MAGIC + struct.pack("<IIII", n, c, h, w)
                + np.ascontiguousarray(self.inputs, dtype="<f4").tobytes()
                + np.ascontiguousarray(self.labels, dtype="<u2").tobytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Dataset":
        if blob[:8] != DATASET_MAGIC:
            raise ValueError("not a dataset file (bad magic)")
        n, c, h, w = struct.unpack("<IIII", blob[8:24])
        size = n * c * h * w * 4
        if len(blob) != 24 + size + 2 * n:
            raise ValueError("dataset file has the wrong length")
        inputs = np.frombuffer(blob[24:24 + size], dtype="<f4").astype(np.float32)
        labels = np.frombuffer(blob[24 + size:], dtype="<u2").astype(np.int64)
        return cls(inputs.reshape(n, c, h, w), labels)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def predicted_class(logits: np.ndarray) -> int:
    """Argmax of the softmax, taken on the logits directly (softmax is monotone
    and exp would round near-equal logits into ties); ties and NaN resolve to
    the lowest index."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    return int(np.argmax(np.where(np.isnan(z), -np.inf, z)))


def classify_accuracy(arch: Architecture, weights: WeightBundle, dataset: Dataset,
                      hook: ReducedFloatType | None = None) -> float:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    engine = Engine(arch, weights, hook)
    hits = sum(
        predicted_class(engine.forward(x)) == int(y)
        for x, y in zip(dataset.inputs, dataset.labels)
    )
    return hits / len(dataset)


@dataclass(frozen=True)
class SweepRow:
    type_name: str
    storage_width: int
    accuracy: float


def _sweep_one(args):
    arch, weights, dataset, ty = args
    return classify_accuracy(arch, weights, dataset, ty)


def precision_sweep(arch: Architecture, weights: WeightBundle, dataset: Dataset,
                    types: Sequence[ReducedFloatType] | None = None,
                    threads: int = 1) -> list[SweepRow]:
    """Binary32 baseline row (named ``fp32``) followed by one row per type."""
    types = type_grid() if types is None else list(types)
    jobs = [(arch, weights, dataset, ty) for ty in [None, *types]]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            accs = list(pool.map(_sweep_one, jobs))
    else:
        accs = [_sweep_one(job) for job in jobs]
    rows = [SweepRow("fp32", 32, accs[0])]
    rows += [SweepRow(ty.name, ty.storage_width, acc) for ty, acc in zip(types, accs[1:])]
    return rows


SWEEP_HEADER = ("type", "storage_width", "accuracy")
