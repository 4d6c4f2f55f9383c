"""Evaluation metrics for depth and surface normals.

Reports serialize to flat JSON objects tagged with ``"task"``.
"""

from __future__ import annotations

import json
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter

from transdepth.errors import DimensionError, DomainError
from transdepth.losses import ANGLE_CLAMP

DELTA_BASE = 1.25


class DepthMetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: Literal["depth"] = "depth"
    abs_rel: float
    sq_rel: float
    rms: float
    log10_rms: float
    delta1: float = Field(ge=0.0, le=1.0)
    delta2: float = Field(ge=0.0, le=1.0)
    delta3: float = Field(ge=0.0, le=1.0)
    n_pixels: int = Field(ge=1)


class NormalMetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: Literal["normals"] = "normals"
    mean_deg: float
    median_deg: float
    pct_11_25: float = Field(ge=0.0, le=1.0)
    pct_22_5: float = Field(ge=0.0, le=1.0)
    pct_30: float = Field(ge=0.0, le=1.0)
    n_pixels: int = Field(ge=1)


MetricsReport = Union[DepthMetricsReport, NormalMetricsReport]
_report_adapter = TypeAdapter(MetricsReport)


def report_to_json(report: MetricsReport) -> str:
    return report.model_dump_json()


def report_from_json(text: str) -> MetricsReport:
    payload = json.loads(text)
    if payload.get("task") == "depth":
        return DepthMetricsReport.model_validate(payload)
    if payload.get("task") == "normals":
        return NormalMetricsReport.model_validate(payload)
    return _report_adapter.validate_python(payload)


def _valid(pred, gt, mask) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if mask is None:
        return pred.reshape(-1), gt.reshape(-1)
    mask = np.asarray(mask, dtype=bool)
    return pred[mask], gt[mask]


def depth_metrics_from_values(pred: np.ndarray, gt: np.ndarray) -> DepthMetricsReport:
    """Metrics over flat arrays of valid predicted and ground-truth depths."""
    if pred.size < 1:
        raise DomainError("depth metrics need at least one valid pixel")
    if np.any(pred <= 0) or np.any(gt <= 0):
        raise DomainError("depths must be strictly positive")
    diff = pred - gt
    ratio = np.maximum(gt / pred, pred / gt)
    log_diff = np.log10(pred) - np.log10(gt)
    return DepthMetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / gt)),
        sq_rel=float(np.mean(diff * diff / gt)),
        rms=float(np.sqrt(np.mean(diff * diff))),
        log10_rms=float(np.sqrt(np.mean(log_diff * log_diff))),
        delta1=float(np.mean(ratio < DELTA_BASE)),
        delta2=float(np.mean(ratio < DELTA_BASE**2)),
        delta3=float(np.mean(ratio < DELTA_BASE**3)),
        n_pixels=int(pred.size),
    )


def depth_metrics(pred, gt=None, mask=None) -> DepthMetricsReport:
    """Depth metrics over valid pixels; ``pred`` may be a Tensor, an array, or a DepthPair."""
    if hasattr(pred, "valid_mask") and hasattr(pred, "gt"):
        pair = pred
        return depth_metrics_from_values(*_valid(pair.pred, pair.gt, pair.valid_mask))
    if gt is None:
        raise DimensionError("depth_metrics needs ground truth unless given a DepthPair")
    return depth_metrics_from_values(*_valid(pred, gt, mask))


def angles_deg(pred, gt, mask=None) -> np.ndarray:
    """Per-pixel angle in degrees between ``N x 3 x H x W`` normal fields, valid pixels only."""
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 4 or pred.shape[1] != 3:
        raise DimensionError(f"normal fields must be N x 3 x H x W and match, got {pred.shape}, {gt.shape}")
    cos = np.clip((pred * gt).sum(axis=1), -ANGLE_CLAMP, ANGLE_CLAMP)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(cos.shape)
        cos = cos[mask]
    return np.degrees(np.arccos(cos.reshape(-1)))


def normal_metrics_from_angles(angles: np.ndarray) -> NormalMetricsReport:
    if angles.size < 1:
        raise DomainError("normal metrics need at least one valid pixel")
    ordered = np.sort(angles)
    return NormalMetricsReport(
        mean_deg=float(np.mean(angles)),
        median_deg=float(ordered[(ordered.size - 1) // 2]),
        pct_11_25=float(np.mean(angles < 11.25)),
        pct_22_5=float(np.mean(angles < 22.5)),
        pct_30=float(np.mean(angles < 30.0)),
        n_pixels=int(angles.size),
    )


def normal_metrics(pred, gt, mask=None) -> NormalMetricsReport:
    return normal_metrics_from_angles(angles_deg(pred, gt, mask))
