"""Latency calibration: power-law fit of measured latency against workload.

Measurements arrive as CSV with the header::

    candidate_id,parameter_count,flops,latency_ms_mean,latency_ms_std,repetitions,batch_size

produced on the device by a runner that times each model 10 times at
batch size 1 (see README, "Device-side measurement").
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

MEASUREMENT_HEADER = (
    "candidate_id", "parameter_count", "flops", "latency_ms_mean",
    "latency_ms_std", "repetitions", "batch_size",
)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    candidate_id: str
    parameter_count: int
    flops: int
    latency_ms_mean: float
    latency_ms_std: float = 0.0
    repetitions: int = 10
    batch_size: int = 1

    def __post_init__(self):
        if self.latency_ms_mean <= 0:
            raise CalibrationError(f"{self.candidate_id}: latency must be positive")
        if self.repetitions < 1:
            raise CalibrationError(f"{self.candidate_id}: repetitions must be >= 1")
        if self.flops <= 0:
            raise CalibrationError(f"{self.candidate_id}: flops must be positive")


@dataclass(frozen=True)
class LatencyModel:
    """``log10(latency_ms) = intercept + slope * log10(flops)``."""

    intercept: float
    slope: float
    residual_std: float
    n: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LatencyModel":
        d = json.loads(text)
        return cls(float(d["intercept"]), float(d["slope"]), float(d["residual_std"]), int(d["n"]))


def read_measurements(path) -> list[MeasurementRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MEASUREMENT_HEADER:
            raise CalibrationError(f"measurement header must be {','.join(MEASUREMENT_HEADER)}")
        return [
            MeasurementRecord(
                d["candidate_id"], int(d["parameter_count"]), int(d["flops"]),
                float(d["latency_ms_mean"]), float(d["latency_ms_std"]),
                int(d["repetitions"]), int(d["batch_size"]),
            )
            for d in reader
        ]


def write_measurements(path, records: Iterable[MeasurementRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_HEADER)
        for r in records:
            w.writerow((r.candidate_id, r.parameter_count, r.flops, repr(r.latency_ms_mean),
                        repr(r.latency_ms_std), r.repetitions, r.batch_size))


def fit_latency_model(records: Sequence[MeasurementRecord]) -> LatencyModel:
    # sort so the fit does not depend on record order
    pts = sorted((r.flops, r.latency_ms_mean) for r in records)
    if len({f for f, _ in pts}) < 2:
        raise CalibrationError("need at least two distinct flops values")
    x = np.log10([f for f, _ in pts])
    y = np.log10([lat for _, lat in pts])
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    return LatencyModel(float(res.intercept), float(res.slope),
                        float(np.sqrt(np.mean(resid ** 2))), len(pts))


def predict_latency(model: LatencyModel, flops: float) -> float:
    if flops <= 0:
        raise CalibrationError("flops must be positive")
    return 10.0 ** (model.intercept + model.slope * math.log10(flops))


@dataclass(frozen=True)
class Correlations:
    spearman_params: float
    spearman_flops: float
    pearson_log_params: float
    pearson_log_flops: float


def correlations(records: Sequence[MeasurementRecord]) -> Correlations:
    if len(records) < 3:
        raise CalibrationError("need at least three records")
    p = np.array([r.parameter_count for r in records], dtype=np.float64)
    f = np.array([r.flops for r in records], dtype=np.float64)
    lat = np.array([r.latency_ms_mean for r in records], dtype=np.float64)
    if np.ptp(lat) == 0 or np.ptp(f) == 0 or np.ptp(p) == 0 or (p <= 0).any():
        raise CalibrationError("degenerate records: constant or non-positive columns")
    return Correlations(
        float(stats.spearmanr(p, lat).statistic),
        float(stats.spearmanr(f, lat).statistic),
        float(stats.pearsonr(np.log10(p), np.log10(lat)).statistic),
        float(stats.pearsonr(np.log10(f), np.log10(lat)).statistic),
    )
