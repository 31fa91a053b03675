"""Per-segment linear ranking kernels summarizing short-term AU dynamics.

Each window of frames is summarized by the weight vector ``d`` of a linear
scorer trained so later frames score higher than earlier ones by at least a
margin: minimize

    0.5 * ||d||^2 + reg_c * sum_{a > b} max(0, margin - <d, v_a - v_b>)

over all ordered frame pairs, where ``v_a`` is the running mean of the first
``a`` frames (running-mean smoothing stabilizes the ordering signal and is
on by default). The minimizer encodes the segment's temporal evolution and
becomes its 17-dimensional dynamic descriptor.

The solver is deterministic full-batch subgradient descent on a diminishing
step schedule ``step_size / (1 + epoch)`` (normalized by the subgradient
norm), with step halving until the objective does not increase, so the
objective trace is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import AU_COUNT, AUClip, Segment, segment_clip


class SegmentTooShort(ValueError):
    """Ranking needs at least two frames."""


@dataclass(frozen=True)
class RankPoolConfig:
    margin: float = 1.0  # required score gap between consecutive ranks
    reg_c: float = 1.0  # hinge-vs-regularizer trade-off
    max_epochs: int = 200
    step_size: float = 1.0
    seed: int = 0  # reserved; the subgradient solver is deterministic
    smooth: bool = True  # running-mean smoothing before pair construction

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.reg_c <= 0:
            raise ValueError("reg_c must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass(frozen=True, eq=False)
class DynamicDescriptor:
    """Learned ranking-kernel weights for one segment."""

    d: np.ndarray  # (17,)
    source_id: str
    start_index: int

    def __post_init__(self):
        d = np.array(self.d, dtype=np.float64)
        if d.ndim != 1:
            raise ValueError("descriptor weights must be a vector")
        if not np.isfinite(d).all():
            raise ValueError("descriptor weights must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)


def smooth_frames(frames: np.ndarray) -> np.ndarray:
    """Running mean over time: row a becomes the mean of rows 0..a."""
    frames = np.asarray(frames, dtype=np.float64)
    counts = np.arange(1, frames.shape[0] + 1, dtype=np.float64)
    return np.cumsum(frames, axis=0) / counts[:, None]


def _objective(d: np.ndarray, scores: np.ndarray, margin: float, reg_c: float) -> float:
    gaps = margin - (scores[:, None] - scores[None, :])  # gaps[a, b]
    lower = np.tril(gaps, k=-1)  # pairs with a > b only
    return 0.5 * float(d @ d) + reg_c * float(lower[lower > 0].sum())


def solve_rank_kernel(
    frames: np.ndarray, config: RankPoolConfig
) -> tuple[np.ndarray, list[float]]:
    """Minimize the pairwise hinge objective over already-smoothed frames.

    Returns the kernel and the per-epoch objective trace (starting at the
    zero kernel). The trace is non-increasing.
    """
    v = np.asarray(frames, dtype=np.float64)
    n = v.shape[0]
    if n < 2:
        raise SegmentTooShort("need at least two frames to rank")

    d = np.zeros(v.shape[1])
    scores = v @ d
    f_curr = _objective(d, scores, config.margin, config.reg_c)
    trace = [f_curr]
    strict_lower = np.tril(np.ones((n, n), dtype=bool), k=-1)

    for epoch in range(config.max_epochs):
        active = strict_lower & (scores[:, None] - scores[None, :] < config.margin)
        coef = active.sum(axis=1) - active.sum(axis=0)
        grad = d - config.reg_c * (v.T @ coef.astype(np.float64))
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < 1e-12:
            break
        eta = config.step_size / ((1.0 + epoch) * grad_norm)
        accepted = False
        for _ in range(60):
            d_try = d - eta * grad
            scores_try = v @ d_try
            f_try = _objective(d_try, scores_try, config.margin, config.reg_c)
            if f_try <= f_curr:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        improvement = f_curr - f_try
        d, scores, f_curr = d_try, scores_try, f_try
        trace.append(f_curr)
        if improvement <= 1e-12 * (1.0 + abs(f_curr)):
            break
    return d, trace


def rank_pool(segment: Segment, config: RankPoolConfig) -> DynamicDescriptor:
    """Learn the segment's ranking kernel and wrap it as a descriptor."""
    if segment.length < 2:
        raise SegmentTooShort(
            f"segment at {segment.start_index} of {segment.source_id!r} has "
            f"{segment.length} frame(s)"
        )
    frames = smooth_frames(segment.frames) if config.smooth else segment.frames
    d, _ = solve_rank_kernel(frames, config)
    return DynamicDescriptor(d=d, source_id=segment.source_id, start_index=segment.start_index)


def order_agreement(
    d: DynamicDescriptor | np.ndarray, segment: Segment, smooth: bool = True
) -> float:
    """Fraction of ordered frame pairs (a > b) scored in the right order.

    Scores are taken over the smoothed frames; only strict inequalities
    count, so the zero kernel scores 0.
    """
    weights = d.d if isinstance(d, DynamicDescriptor) else np.asarray(d, dtype=np.float64)
    frames = smooth_frames(segment.frames) if smooth else segment.frames
    n = frames.shape[0]
    if n < 2:
        raise SegmentTooShort("need at least two frames")
    scores = frames @ weights
    satisfied = (scores[:, None] - scores[None, :] > 0) & np.tril(
        np.ones((n, n), dtype=bool), k=-1
    )
    return float(satisfied.sum()) / (n * (n - 1) / 2)


def pool_clip(
    clip: AUClip, window: int, stride: int, config: RankPoolConfig
) -> list[DynamicDescriptor]:
    """One descriptor per window, in segment order."""
    return [rank_pool(seg, config) for seg in segment_clip(clip, window, stride)]


def write_descriptors(descriptors: list[DynamicDescriptor], path: str | Path):
    """Tab-separated dump: source_id, start_index, 17 weights per row."""
    lines = ["source_id\tstart_index\t" + "\t".join(f"d{i:02d}" for i in range(AU_COUNT))]
    for desc in descriptors:
        lines.append(
            f"{desc.source_id}\t{desc.start_index}\t"
            + "\t".join(repr(float(x)) for x in desc.d)
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_descriptors(path: str | Path) -> list[DynamicDescriptor]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    out = []
    for line in lines[1:]:
        parts = line.split("\t")
        out.append(
            DynamicDescriptor(
                d=np.array([float(x) for x in parts[2:]]),
                source_id=parts[0],
                start_index=int(parts[1]),
            )
        )
    return out
