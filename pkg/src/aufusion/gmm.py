"""Class-conditional diagonal-covariance Gaussian mixtures fitted by EM.

One mixture is trained per class on the pooled frames of that class's
training clips. A test clip is scored by its log-likelihood under each
mixture; the clip-level decision is the sign of the likelihood gap
(ties go to non-depressed). All per-frame mixture densities are evaluated
through log-sum-exp, so long clips never underflow.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .ingest import AUClip, Label

_LOG_2PI = math.log(2.0 * math.pi)

FORMAT_VERSION = 1


class DegenerateData(ValueError):
    """A feature column is constant and no variance floor is in effect."""


@dataclass(frozen=True)
class EmConfig:
    n_components: int = 32
    max_iters: int = 200
    tol: float = 1e-4  # relative log-likelihood improvement threshold
    variance_floor: float = 1e-4
    seed: int = 0
    n_init: int = 3

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.variance_floor < 0:
            raise ValueError("variance_floor must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Mixing weights plus per-component means and diagonal variances."""

    weights: np.ndarray  # (n,)
    means: np.ndarray  # (n, dim)
    variances: np.ndarray  # (n, dim)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        means = np.array(self.means, dtype=np.float64)
        variances = np.array(self.variances, dtype=np.float64)
        if weights.ndim != 1 or means.ndim != 2 or variances.shape != means.shape:
            raise ValueError("inconsistent parameter shapes")
        if len(weights) != means.shape[0]:
            raise ValueError("weights and means disagree on component count")
        if not (weights > 0).all():
            raise ValueError("all mixing weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixing weights must sum to 1 within 1e-9")
        if not (variances > 0).all():
            raise ValueError("all variances must be positive")
        for a in (weights, means, variances):
            if not np.isfinite(a).all():
                raise ValueError("parameters must be finite")
            a.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _component_log_densities(model: GmmModel, frames: np.ndarray) -> np.ndarray:
    """Per-frame, per-component log of (weight * normal density); (m, n)."""
    inv_var = 1.0 / model.variances  # (n, dim)
    # log w_k - 0.5 * [dim*log(2pi) + sum(log var_k) + (x - mu_k)^2 / var_k]
    const = (
        np.log(model.weights)
        - 0.5 * (model.dim * _LOG_2PI + np.log(model.variances).sum(axis=1))
        - 0.5 * np.einsum("nd,nd,nd->n", model.means, model.means, inv_var)
    )
    quad = frames**2 @ (0.5 * inv_var).T - frames @ (model.means * inv_var).T
    return const - quad


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))).ravel()


def log_density(model: GmmModel, frame: np.ndarray) -> float:
    """Log of the mixture density at one point."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (model.dim,):
        raise ValueError(f"expected a {model.dim}-vector, got shape {frame.shape}")
    if not np.isfinite(frame).all():
        raise ValueError("frame must be finite")
    return float(_logsumexp_rows(_component_log_densities(model, frame[None, :]))[0])


def density(model: GmmModel, frame: np.ndarray) -> float:
    """Mixture density sum_k w_k N(frame | mu_k, diag var_k)."""
    return math.exp(log_density(model, frame))


def log_likelihood(model: GmmModel, frames: np.ndarray) -> float:
    """Sum over frames of the log mixture density.

    Per-frame terms go through log-sum-exp; the sum over frames uses exact
    compensated summation, so the result is additive over row-wise
    concatenation up to the final rounding.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.dim:
        raise ValueError(f"expected an (m, {model.dim}) matrix, got {frames.shape}")
    if frames.shape[0] < 1:
        raise ValueError("need at least one frame")
    return math.fsum(_logsumexp_rows(_component_log_densities(model, frames)))


def _kmeanspp_means(frames: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seed component means from data points by distance-squared sampling."""
    m = frames.shape[0]
    means = np.empty((k, frames.shape[1]))
    means[0] = frames[rng.integers(m)]
    closest = ((frames - means[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:  # all points coincide with chosen centers
            means[i] = frames[rng.integers(m)]
            continue
        idx = rng.choice(m, p=closest / total)
        means[i] = frames[idx]
        closest = np.minimum(closest, ((frames - means[i]) ** 2).sum(axis=1))
    return means


def _em_single_run(
    frames: np.ndarray, config: EmConfig, run_index: int
) -> tuple[GmmModel, list[float]]:
    m, _ = frames.shape
    k = config.n_components
    floor = config.variance_floor
    rng = np.random.default_rng([config.seed, run_index])

    weights = np.full(k, 1.0 / k)
    means = _kmeanspp_means(frames, k, rng)
    data_var = np.maximum(frames.var(axis=0), floor if floor > 0 else 1e-12)
    variances = np.tile(data_var, (k, 1))

    def evaluate():
        joint = _component_log_densities(GmmModel(weights, means, variances), frames)
        row_ll = _logsumexp_rows(joint)
        return float(row_ll.sum()), np.exp(joint - row_ll[:, None])

    ll, resp = evaluate()
    trace = [ll]
    for _ in range(config.max_iters):
        nk = resp.sum(axis=0)
        alive = nk > 0
        if alive.any():
            new_means = means.copy()
            new_vars = variances.copy()
            new_means[alive] = (resp.T[alive] @ frames) / nk[alive, None]
            second = (resp.T[alive] @ frames**2) / nk[alive, None]
            new_vars[alive] = np.maximum(second - new_means[alive] ** 2, floor)
            means, variances = new_means, new_vars
        # Components with zero responsibility mass keep their parameters and
        # are pinned at a tiny weight so the weight vector stays positive.
        weights = np.where(alive, nk / m, np.finfo(np.float64).tiny)
        weights = weights / weights.sum()
        if floor <= 0 and not (variances > 0).all():
            raise DegenerateData(
                "component variance collapsed to zero with variance_floor=0"
            )
        new_ll, resp = evaluate()
        trace.append(new_ll)
        converged = new_ll - ll < config.tol * abs(ll)
        ll = new_ll
        if converged:
            break
    return GmmModel(weights, means, variances), trace


def fit_em(
    frames: np.ndarray, config: EmConfig, return_trace: bool = False
) -> GmmModel | tuple[GmmModel, list[list[float]]]:
    """Fit a mixture by EM, best of ``config.n_init`` restarts.

    Each restart alternates responsibility computation and weight / mean /
    variance re-estimation until the relative log-likelihood improvement
    drops below ``tol`` or ``max_iters`` is hit; the run with the highest
    final training log-likelihood wins. Deterministic given the config seed.

    With ``return_trace=True`` also returns every restart's per-iteration
    log-likelihood sequence.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-d matrix")
    if frames.shape[0] < config.n_components:
        raise ValueError(
            f"need at least {config.n_components} frames, got {frames.shape[0]}"
        )
    if not np.isfinite(frames).all():
        raise ValueError("frames must be finite")
    if (
        config.variance_floor == 0
        and config.n_components > 1
        and (frames.var(axis=0) == 0).any()
    ):
        raise DegenerateData(
            "a feature column is constant; set a positive variance_floor"
        )

    best: tuple[GmmModel, float] | None = None
    traces: list[list[float]] = []
    for run_index in range(config.n_init):
        model, trace = _em_single_run(frames, config, run_index)
        traces.append(trace)
        final_ll = trace[-1]
        if best is None or final_ll > best[1]:
            best = (model, final_ll)
    assert best is not None
    if return_trace:
        return best[0], traces
    return best[0]


def score_pair(dep: GmmModel, ndep: GmmModel, clip: AUClip) -> tuple[float, float]:
    """Clip log-likelihood under the depressed and non-depressed mixtures."""
    if dep.dim != clip.frames.shape[1] or ndep.dim != clip.frames.shape[1]:
        raise ValueError("model dimensionality does not match the clip")
    return log_likelihood(dep, clip.frames), log_likelihood(ndep, clip.frames)


def likelihood_ratio_decision(ll_dep: float, ll_ndep: float) -> Label:
    """Depressed iff the depressed likelihood is strictly larger."""
    return Label.DEPRESSED if ll_dep > ll_ndep else Label.NONDEPRESSED


def save_gmm(model: GmmModel, path: str | Path, config: EmConfig | None = None):
    """Write the model as JSON; floats keep shortest round-trip precision so
    reloading is bit-stable."""
    payload = {
        "format_version": FORMAT_VERSION,
        "n": model.n,
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
        "em_config": asdict(config) if config is not None else None,
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_gmm(path: str | Path) -> tuple[GmmModel, EmConfig | None]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {payload.get('format_version')}")
    model = GmmModel(
        np.array(payload["weights"]),
        np.array(payload["means"]),
        np.array(payload["variances"]),
    )
    config = EmConfig(**payload["em_config"]) if payload["em_config"] else None
    return model, config
