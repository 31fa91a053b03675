"""Combine the clip likelihood gap with per-segment votes into one decision.

The fused score is

    P = gap + omega * sum(votes),    gap = ll_dep - ll_ndep,

and the clip is called depressed when P strictly exceeds a threshold tau.
By default tau = omega * N / 2 for N segments, which recenters the one-sided
vote sum so an evenly split vote contributes nothing, and the likelihood gap
is divided by the clip's frame count so both terms stay on comparable scales
across clip lengths. Setting ``normalize_ll=False`` and an explicit ``tau``
recovers the raw score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .ingest import Label


class EmptyVotes(ValueError):
    """Fusion needs at least one segment vote."""


@dataclass(frozen=True)
class FusionConfig:
    omega: float = 1.0
    tau: float | None = None  # None: omega * n_segments / 2
    normalize_ll: bool = True  # divide the likelihood gap by the frame count

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")


@dataclass(frozen=True)
class FusionResult:
    score: float
    decision: Label
    tau: float
    ll_dep: float
    ll_ndep: float
    n_segments: int
    n_dep_votes: int

    def __post_init__(self):
        if not 0 <= self.n_dep_votes <= self.n_segments:
            raise ValueError("vote count out of range")


def fuse(
    ll_dep: float,
    ll_ndep: float,
    votes: Sequence[int],
    config: FusionConfig,
    n_frames: int | None = None,
) -> FusionResult:
    """Fuse one clip's likelihood pair and segment votes.

    ``n_frames`` is required when ``config.normalize_ll`` is set. Ties
    (score equal to the threshold) resolve non-depressed, matching the
    likelihood-ratio tie rule.
    """
    if len(votes) == 0:
        raise EmptyVotes("need at least one segment vote")
    if any(v not in (0, 1) for v in votes):
        raise ValueError("votes must be binary")
    gap = ll_dep - ll_ndep
    if config.normalize_ll:
        if n_frames is None or n_frames < 1:
            raise ValueError("normalize_ll requires the clip frame count")
        gap /= n_frames
    n = len(votes)
    n_dep = int(sum(votes))
    score = gap + config.omega * n_dep
    tau = config.omega * n / 2.0 if config.tau is None else config.tau
    decision = Label.DEPRESSED if score > tau else Label.NONDEPRESSED
    return FusionResult(
        score=score,
        decision=decision,
        tau=tau,
        ll_dep=ll_dep,
        ll_ndep=ll_ndep,
        n_segments=n,
        n_dep_votes=n_dep,
    )


# Keys every cached per-clip record must provide for re-fusion.
RECORD_KEYS = ("label", "ll_dep", "ll_ndep", "n_segments", "n_dep_votes", "n_frames")


def refuse_record(record: Mapping, omega: float, base: FusionConfig) -> FusionResult:
    """Re-run fusion on one cached record at a different vote weight."""
    config = FusionConfig(omega=omega, tau=base.tau, normalize_ll=base.normalize_ll)
    votes = [1] * int(record["n_dep_votes"]) + [0] * (
        int(record["n_segments"]) - int(record["n_dep_votes"])
    )
    return fuse(
        float(record["ll_dep"]),
        float(record["ll_ndep"]),
        votes,
        config,
        n_frames=int(record["n_frames"]),
    )


def sweep_omega(
    records: Sequence[Mapping],
    omegas: Sequence[float],
    base: FusionConfig = FusionConfig(),
) -> list[tuple[float, float]]:
    """Accuracy of re-fused decisions per vote weight, without retraining.

    ``records`` are cached per-clip intermediates carrying ``RECORD_KEYS``
    (labels as ``Label`` values or their string names).
    """
    if not records:
        raise ValueError("need at least one cached record")
    if not omegas:
        raise ValueError("need at least one omega value")
    for record in records:
        missing = [k for k in RECORD_KEYS if k not in record]
        if missing:
            raise ValueError(f"cached record is missing {missing}")
    table = []
    for omega in omegas:
        correct = 0
        for record in records:
            label = record["label"]
            if not isinstance(label, Label):
                label = Label(label)
            if refuse_record(record, omega, base).decision == label:
                correct += 1
        table.append((float(omega), correct / len(records)))
    return table
