"""Leave-one-out cross-validation harness and per-participant reporting.

Each fold holds one participant out, refits both class mixtures on the
remaining clips' pooled frames, retrains the vote classifier on their
descriptors (normalization statistics included), and scores the held-out
clip through the likelihood-ratio, majority-vote, and fused systems. The
held-out clip contributes nothing to any fold's training.

Folds are independent; ``jobs`` > 1 runs them in worker processes without
affecting results, since every fold derives its own seeds from the root
seed and its participant id.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import fusion as fusion_mod
from .fusion import FusionConfig, FusionResult, fuse
from .gmm import EmConfig, GmmModel, fit_em, likelihood_ratio_decision, score_pair
from .ingest import (
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    AUClip,
    Corpus,
    Label,
    pooled_class_frames,
)
from .mlp import MlpModel, TrainConfig, predict_probs, train_mlp
from .rankpool import DynamicDescriptor, RankPoolConfig, pool_clip

REPORT_VERSION = 1

SYSTEMS = ("gmm", "rankpool", "combined")

_DISPLAY = {Label.DEPRESSED: "Depressed", Label.NONDEPRESSED: "Non-depressed"}
_FROM_DISPLAY = {v: k for k, v in _DISPLAY.items()}


class InsufficientClass(ValueError):
    """A fold's training set is missing one of the two classes."""


class ConfigIncomplete(ValueError):
    """A report is missing configuration needed to reproduce it."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one evaluation run needs, bundled for provenance."""

    window: int = DEFAULT_WINDOW
    stride: int = DEFAULT_STRIDE
    em: EmConfig = EmConfig()
    rankpool: RankPoolConfig = RankPoolConfig()
    mlp: TrainConfig = TrainConfig()
    fusion: FusionConfig = FusionConfig()
    seed: int = 7
    # Optional cap on pooled frames per class for mixture fitting; frames are
    # taken at an even stride, deterministically. None fits on everything.
    gmm_fit_frames: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FoldRow:
    participant_id: str
    label: Label
    gmm_decision: Label
    rankpool_decision: Label
    combined_decision: Label
    ll_dep: float
    ll_ndep: float
    n_frames: int
    n_segments: int
    n_dep_votes: int
    fused_score: float
    tau: float
    gmm_dep_hash: str
    gmm_ndep_hash: str
    mlp_hash: str

    def as_record(self) -> dict:
        rec = asdict(self)
        for key, value in rec.items():
            if isinstance(value, Label):
                rec[key] = value.value
        return rec


@dataclass(frozen=True)
class LoocvReport:
    rows: list[FoldRow]
    configs: dict
    seed: int


def accuracy(rows: list[FoldRow], system: str) -> float:
    """Exact correct/total for one system's decision column."""
    if not rows:
        raise ValueError("need at least one row")
    attr = {
        "gmm": "gmm_decision",
        "rankpool": "rankpool_decision",
        "combined": "combined_decision",
    }.get(system)
    if attr is None:
        raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    correct = sum(1 for row in rows if getattr(row, attr) == row.label)
    return correct / len(rows)


def correct_count(rows: list[FoldRow], system: str) -> int:
    return round(accuracy(rows, system) * len(rows))


def fold_seed(root_seed: int, participant_id: str) -> int:
    """Stable per-fold seed; independent of process, run, and fold order."""
    digest = hashlib.sha256(f"{root_seed}:{participant_id}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def hash_gmm(model: GmmModel) -> str:
    payload = json.dumps(
        {
            "weights": model.weights.tolist(),
            "means": model.means.tolist(),
            "variances": model.variances.tolist(),
        }
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def hash_mlp(model: MlpModel) -> str:
    payload = json.dumps(
        {
            "params": {k: v.tolist() for k, v in model.params().items()},
            "mean": model.input_mean.tolist(),
            "std": model.input_std.tolist(),
        }
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _subsample(frames: np.ndarray, cap: int | None) -> np.ndarray:
    if cap is None or frames.shape[0] <= cap:
        return frames
    idx = np.round(np.linspace(0, frames.shape[0] - 1, num=cap)).astype(int)
    return frames[idx]


def majority_vote(votes) -> Label:
    """Depressed only on a strict majority; ties go non-depressed."""
    n_dep = int(sum(votes))
    return Label.DEPRESSED if 2 * n_dep > len(votes) else Label.NONDEPRESSED


def segment_votes(model: MlpModel, descriptors: list[DynamicDescriptor]) -> list[int]:
    probs = predict_probs(model, np.array([desc.d for desc in descriptors]))
    return [int(p > 0.5) for p in probs]


def train_fold_models(
    corpus: Corpus,
    held_out_id: str,
    pipeline: PipelineConfig,
    descriptors: dict[str, list[DynamicDescriptor]],
) -> tuple[GmmModel, GmmModel, MlpModel]:
    """Fit both mixtures and the vote classifier on everything except the
    held-out participant. Never touches the held-out clip's contents."""
    train_clips = [c for c in corpus.clips if c.participant_id != held_out_id]
    labels = {c.label for c in train_clips}
    if labels != {Label.DEPRESSED, Label.NONDEPRESSED}:
        raise InsufficientClass(
            f"training set for fold {held_out_id!r} is missing a class"
        )
    seed = fold_seed(pipeline.seed, held_out_id)

    pooled = pooled_class_frames(train_clips)
    dep_model = fit_em(
        _subsample(pooled[Label.DEPRESSED], pipeline.gmm_fit_frames),
        replace(pipeline.em, seed=seed),
    )
    ndep_model = fit_em(
        _subsample(pooled[Label.NONDEPRESSED], pipeline.gmm_fit_frames),
        replace(pipeline.em, seed=seed + 1),
    )

    xs, ys = [], []
    for clip in train_clips:
        for desc in descriptors[clip.participant_id]:
            xs.append(desc.d)
            ys.append(1 if clip.label is Label.DEPRESSED else 0)
    mlp_model = train_mlp(np.array(xs), np.array(ys), replace(pipeline.mlp, seed=seed + 2))
    return dep_model, ndep_model, mlp_model


def run_fold(
    corpus: Corpus,
    held_out_id: str,
    pipeline: PipelineConfig,
    descriptors: dict[str, list[DynamicDescriptor]] | None = None,
) -> FoldRow:
    """Train on all other clips and score the held-out one."""
    if descriptors is None:
        descriptors = {
            c.participant_id: pool_clip(c, pipeline.window, pipeline.stride, pipeline.rankpool)
            for c in corpus.clips
        }
    dep_model, ndep_model, mlp_model = train_fold_models(
        corpus, held_out_id, pipeline, descriptors
    )

    held_out = corpus.by_id(held_out_id)
    ll_dep, ll_ndep = score_pair(dep_model, ndep_model, held_out)
    votes = segment_votes(mlp_model, descriptors[held_out_id])
    fused: FusionResult = fuse(
        ll_dep, ll_ndep, votes, pipeline.fusion, n_frames=held_out.n_frames
    )
    return FoldRow(
        participant_id=held_out_id,
        label=held_out.label,
        gmm_decision=likelihood_ratio_decision(ll_dep, ll_ndep),
        rankpool_decision=majority_vote(votes),
        combined_decision=fused.decision,
        ll_dep=ll_dep,
        ll_ndep=ll_ndep,
        n_frames=held_out.n_frames,
        n_segments=fused.n_segments,
        n_dep_votes=fused.n_dep_votes,
        fused_score=fused.score,
        tau=fused.tau,
        gmm_dep_hash=hash_gmm(dep_model),
        gmm_ndep_hash=hash_gmm(ndep_model),
        mlp_hash=hash_mlp(mlp_model),
    )


# Worker-process state for parallel pooling and folds. Populated once per
# worker through the executor initializer; read-only afterwards.
_WORKER: dict = {}


def _init_worker(corpus, pipeline, descriptors):
    _WORKER["corpus"] = corpus
    _WORKER["pipeline"] = pipeline
    _WORKER["descriptors"] = descriptors


def _pool_task(participant_id: str):
    corpus: Corpus = _WORKER["corpus"]
    pipeline: PipelineConfig = _WORKER["pipeline"]
    clip = corpus.by_id(participant_id)
    return participant_id, pool_clip(clip, pipeline.window, pipeline.stride, pipeline.rankpool)


def _fold_task(participant_id: str) -> FoldRow:
    return _named_fold(
        _WORKER["corpus"], participant_id, _WORKER["pipeline"], _WORKER["descriptors"]
    )


def _named_fold(corpus, participant_id, pipeline, descriptors) -> FoldRow:
    try:
        return run_fold(corpus, participant_id, pipeline, descriptors)
    except Exception as exc:
        raise RuntimeError(f"fold {participant_id!r} failed: {exc}") from exc


def pool_corpus(
    corpus: Corpus, pipeline: PipelineConfig, jobs: int = 1
) -> dict[str, list[DynamicDescriptor]]:
    """Descriptors for every clip, keyed by participant id."""
    ids = [c.participant_id for c in corpus.clips]
    if jobs <= 1:
        return dict(_pool_task_inline(corpus, pipeline, pid) for pid in ids)
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(corpus, pipeline, None)
    ) as pool:
        return dict(pool.map(_pool_task, ids))


def _pool_task_inline(corpus, pipeline, participant_id):
    clip = corpus.by_id(participant_id)
    return participant_id, pool_clip(clip, pipeline.window, pipeline.stride, pipeline.rankpool)


def loocv(corpus: Corpus, pipeline: PipelineConfig, jobs: int | None = None) -> LoocvReport:
    """Run every fold and assemble rows in corpus order.

    One fold per participant; 30 clips give exactly 30 folds. Deterministic
    given corpus, pipeline, and seed, regardless of ``jobs``.
    """
    corpus.require_labels()
    for label in (Label.DEPRESSED, Label.NONDEPRESSED):
        if sum(1 for c in corpus.clips if c.label is label) < 2:
            raise ValueError("need at least two clips per class for leave-one-out")
    if jobs is None:
        jobs = os.cpu_count() or 1

    ids = [c.participant_id for c in corpus.clips]
    descriptors = pool_corpus(corpus, pipeline, jobs=jobs)
    if jobs <= 1:
        rows = [_named_fold(corpus, pid, pipeline, descriptors) for pid in ids]
    else:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(corpus, pipeline, descriptors),
        ) as pool:
            rows = list(pool.map(_fold_task, ids))
    return LoocvReport(rows=rows, configs=pipeline.to_dict(), seed=pipeline.seed)


_REQUIRED_CONFIG_KEYS = ("window", "stride", "em", "rankpool", "mlp", "fusion", "seed")


def _check_configs(report: LoocvReport):
    for key in _REQUIRED_CONFIG_KEYS:
        value = report.configs.get(key)
        if value is None or value == {} or value == "":
            raise ConfigIncomplete(f"report config field {key!r} is missing or empty")


def render_report(report: LoocvReport) -> str:
    """Per-participant decision table plus a per-system accuracy summary."""
    _check_configs(report)
    lines = ["# leave-one-out report"]
    lines.append(f"# seed: {report.seed}")
    for key in _REQUIRED_CONFIG_KEYS:
        if key == "seed":
            continue
        lines.append(f"# {key}: {json.dumps(report.configs[key])}")
    if report.configs.get("gmm_fit_frames") is not None:
        lines.append(f"# gmm_fit_frames: {report.configs['gmm_fit_frames']}")
    lines.append("")
    lines.append("participant_id\tlabel\tgmm\trank_pooling\tcombined")
    for row in report.rows:
        lines.append(
            "\t".join(
                [
                    row.participant_id,
                    _DISPLAY[row.label],
                    _DISPLAY[row.gmm_decision],
                    _DISPLAY[row.rankpool_decision],
                    _DISPLAY[row.combined_decision],
                ]
            )
        )
    lines.append("")
    lines.append("system\tcorrect\taccuracy")
    n = len(report.rows)
    for system in SYSTEMS:
        correct = correct_count(report.rows, system)
        lines.append(f"{system}\t{correct}/{n}\t{accuracy(report.rows, system):.4f}")
    lines.append("")
    lines.append("# external baseline systems are not part of this artifact")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> list[dict]:
    """Recover the per-participant decisions from a rendered report."""
    lines = text.splitlines()
    try:
        start = lines.index("participant_id\tlabel\tgmm\trank_pooling\tcombined") + 1
    except ValueError:
        raise ValueError("not a rendered leave-one-out report") from None
    rows = []
    for line in lines[start:]:
        if not line.strip():
            break
        pid, label, gmm_d, rp_d, comb_d = line.split("\t")
        rows.append(
            {
                "participant_id": pid,
                "label": _FROM_DISPLAY[label],
                "gmm_decision": _FROM_DISPLAY[gmm_d],
                "rankpool_decision": _FROM_DISPLAY[rp_d],
                "combined_decision": _FROM_DISPLAY[comb_d],
            }
        )
    return rows


def report_to_sidecar(report: LoocvReport) -> dict:
    _check_configs(report)
    return {
        "version": REPORT_VERSION,
        "seed": report.seed,
        "configs": report.configs,
        "rows": [row.as_record() for row in report.rows],
        "accuracies": {
            system: {
                "correct": correct_count(report.rows, system),
                "total": len(report.rows),
                "fraction": accuracy(report.rows, system),
            }
            for system in SYSTEMS
        },
    }


def write_report_files(report: LoocvReport, outdir: str | Path) -> tuple[Path, Path]:
    """Write the human table and the machine-readable sidecar; returns both
    paths. The sidecar carries everything sweep re-fusion needs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    table_path = outdir / "report.txt"
    sidecar_path = outdir / "report.json"
    table_path.write_text(render_report(report), encoding="utf-8")
    sidecar_path.write_text(
        json.dumps(report_to_sidecar(report), indent=1) + "\n", encoding="utf-8"
    )
    return table_path, sidecar_path


def report_from_sidecar(payload: dict) -> LoocvReport:
    """Rebuild a report object from its machine-readable sidecar."""
    rows = []
    for rec in payload["rows"]:
        kwargs = dict(rec)
        for key in ("label", "gmm_decision", "rankpool_decision", "combined_decision"):
            kwargs[key] = Label(kwargs[key])
        rows.append(FoldRow(**kwargs))
    return LoocvReport(rows=rows, configs=payload["configs"], seed=payload["seed"])


def load_sidecar(path: str | Path) -> dict:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version: {payload.get('version')}")
    return payload


def sweep_from_sidecar(payload: dict, omegas) -> list[tuple[float, float]]:
    """Re-fuse a cached run's rows per omega; no model retraining."""
    fusion_cfg = payload["configs"]["fusion"]
    base = FusionConfig(
        omega=fusion_cfg["omega"],
        tau=fusion_cfg["tau"],
        normalize_ll=fusion_cfg["normalize_ll"],
    )
    return fusion_mod.sweep_omega(payload["rows"], omegas, base)
