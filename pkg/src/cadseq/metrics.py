"""Reconstruction and generation metrics.

Reconstruction: command-type accuracy, parameter accuracy (exact level
match where the type is right), median Chamfer distance, invalid ratio
(sequences that fail to evaluate to a point cloud) and an explicitly
labelled success-rate proxy (validation + geometry build; no B-rep kernel
is involved). Generation: coverage / minimum matching distance under
Chamfer, Jensen-Shannon divergence between aggregated voxel occupancy
distributions, plus uniqueness and novelty over canonical records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import geom
from . import seqmodel as sm

JSD_GRID = 28


class LengthMismatchError(ValueError):
    pass


class EmptySetError(ValueError):
    pass


@dataclass
class ReconReport:
    acc_c: float
    acc_p: float
    mcd_x1000: float      # median Chamfer distance, reported x 10^3
    ir: float
    sr_proxy: float
    n_pairs: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class GenReport:
    cov: float
    mmd: float
    jsd: float
    unique: float
    novel: float
    sr_proxy: float
    n_generated: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _content_key(seq: sm.CadSequence) -> str:
    """Canonical record with the id stripped, for duplicate detection."""
    return sm.serialize_sequence(sm.CadSequence(seq.commands, ""))


def sequence_accuracy(pred: list[sm.CadSequence], gt: list[sm.CadSequence]) -> tuple[float, float]:
    """Pooled type accuracy and used-slot parameter accuracy.

    Positions are compared up to each ground-truth sequence's true length
    (the terminating EOS included); a parameter counts only where the
    type is right, and only on exact level equality.
    """
    if len(pred) != len(gt):
        raise LengthMismatchError(f"{len(pred)} predictions vs {len(gt)} references")
    type_hits = type_total = 0
    par_hits = par_total = 0
    for ps, gs in zip(pred, gt):
        tl = gs.true_length
        pt, gt_t = ps.type_indices()[:tl], gs.type_indices()[:tl]
        pp, gp = ps.param_levels()[:tl], gs.param_levels()[:tl]
        match = pt == gt_t
        type_hits += int(match.sum())
        type_total += tl
        used = (gp >= 0) & match[:, None]
        par_hits += int(((pp == gp) & used).sum())
        par_total += int(used.sum())
    acc_c = type_hits / type_total if type_total else 0.0
    acc_p = par_hits / par_total if par_total else 1.0
    return acc_c, acc_p


def reconstruction_metrics(pred: list[sm.CadSequence], gt: list[sm.CadSequence],
                           n_points: int = geom.DEFAULT_POINTS,
                           resolution: int = geom.DEFAULT_RESOLUTION,
                           squared: bool = True, seed: int = 0) -> ReconReport:
    """Full reconstruction report over paired prediction/reference lists."""
    if len(pred) != len(gt):
        raise LengthMismatchError(f"{len(pred)} predictions vs {len(gt)} references")
    acc_c, acc_p = sequence_accuracy(pred, gt)
    chamfers = []
    invalid = 0
    sr = 0
    for k, (ps, gs) in enumerate(zip(pred, gt)):
        valid = bool(sm.validate_sequence(ps))
        try:
            # Same sampling seed on both sides: an exact reconstruction
            # yields the identical cloud and a Chamfer distance of zero.
            pc = geom.sequence_to_pointcloud(ps, n_points, resolution, seed=seed + k)
        except geom.InvalidModelError:
            invalid += 1
            continue
        if valid:
            sr += 1
        gc = geom.sequence_to_pointcloud(gs, n_points, resolution, seed=seed + k)
        chamfers.append(geom.chamfer_distance(pc, gc, squared=squared))
    n = len(pred)
    mcd = float(np.median(chamfers)) if chamfers else float("nan")
    return ReconReport(acc_c, acc_p, 1000.0 * mcd, invalid / n, sr / n, n)


# -- generation ------------------------------------------------------------------


def coverage_mmd(gen: list[geom.PointCloud], ref: list[geom.PointCloud],
                 squared: bool = True) -> tuple[float, float]:
    """COV: fraction of references that are someone's nearest reference.
    MMD: mean over references of the Chamfer distance to the closest sample."""
    if not gen or not ref:
        raise EmptySetError("coverage/MMD need non-empty sets")
    d = np.empty((len(gen), len(ref)))
    for i, g in enumerate(gen):
        for j, r in enumerate(ref):
            d[i, j] = geom.chamfer_distance(g, r, squared=squared)
    covered = np.unique(np.argmin(d, axis=1))
    cov = covered.size / len(ref)
    mmd = float(d.min(axis=0).mean())
    return cov, mmd


def _occupancy_distribution(clouds: list[geom.PointCloud], grid: int) -> np.ndarray:
    """Aggregate per-cloud binary voxel occupancy, normalized to sum 1."""
    counts = np.zeros(grid ** 3, dtype=np.float64)
    for c in clouds:
        ijk = np.clip(((c.points + 1.0) / 2.0 * grid).astype(np.int64), 0, grid - 1)
        flat = np.unique(ijk[:, 0] * grid * grid + ijk[:, 1] * grid + ijk[:, 2])
        counts[flat] += 1.0
    total = counts.sum()
    if total == 0:
        raise EmptySetError("no occupied voxels")
    return counts / total


def jsd_occupancy(gen: list[geom.PointCloud], ref: list[geom.PointCloud],
                  grid: int = JSD_GRID) -> float:
    """Base-2 Jensen-Shannon divergence between occupancy distributions."""
    if not gen or not ref:
        raise EmptySetError("JSD needs non-empty sets")
    p = _occupancy_distribution(gen, grid)
    q = _occupancy_distribution(ref, grid)
    m = (p + q) / 2.0

    def kl(a, b):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / b[nz])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def generation_metrics(gen: list[geom.PointCloud], ref: list[geom.PointCloud],
                       squared: bool = True) -> tuple[float, float, float]:
    """(COV, MMD, JSD) for generated vs reference point-cloud sets."""
    cov, mmd = coverage_mmd(gen, ref, squared)
    return cov, mmd, jsd_occupancy(gen, ref)


def unique_novel(gen: list[sm.CadSequence], train: list[sm.CadSequence]) -> tuple[float, float]:
    """Distinct fraction within gen, and fraction of gen not found in train.

    Equality is byte equality of canonical records with ids stripped.
    """
    if not gen:
        return 1.0, 1.0
    keys = [_content_key(s) for s in gen]
    train_keys = {_content_key(s) for s in train}
    unique = len(set(keys)) / len(keys)
    novel = sum(1 for k in keys if k not in train_keys) / len(keys)
    return unique, novel


def format_table(report) -> str:
    """Aligned plain-text rendering of a report dataclass."""
    rows = asdict(report)
    width = max(len(k) for k in rows)
    lines = [f"{k.ljust(width)}  {v:.6g}" if isinstance(v, float) else
             f"{k.ljust(width)}  {v}" for k, v in rows.items()]
    return "\n".join(lines)
