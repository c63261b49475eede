"""Metrics, baseline predictors, sampling-based evaluation and the latency
benchmark.

ADE/FDE are averaged per pedestrian-step / per pedestrian and pooled across
samples; the best-of-n protocol draws full trajectories from the Gaussian
field and keeps the per-pedestrian minima (ADE and FDE minimized
independently).  The benchmark times graph construction separately from the
network forward pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import sample_bivariate
from .errors import ShapeError
from .graph import build_graph_sequence
from .model import (
    parameter_census,
    predict_deterministic,
    predict_probabilistic,
    relative_to_absolute,
)

EVAL_MODES = ("deterministic", "most_likely", "best_of_n")


@dataclass
class MetricsReport:
    ade: float
    fde: float
    n_samples_used: int
    mode: str
    bon_n: int | None = None
    per_scene: dict = field(default_factory=dict)  # scene_id -> dict of metrics

    def rows(self):
        """Flat records for delimited output: per-scene rows then aggregate."""
        out = []
        for scene_id in sorted(self.per_scene):
            m = self.per_scene[scene_id]
            out.append({"scene": scene_id or "(unnamed)", "mode": self.mode,
                        "ade": m["ade"], "fde": m["fde"], "n_samples": m["n_samples"]})
        out.append({"scene": "ALL", "mode": self.mode, "ade": self.ade,
                    "fde": self.fde, "n_samples": self.n_samples_used})
        return out


@dataclass
class BenchReport:
    forward_ms: float
    graph_build_ms: float
    param_count: int
    mode: str
    n_samples: int
    n_graphs: int
    repetitions: int

    def as_dict(self):
        return {
            "forward_ms": self.forward_ms,
            "graph_build_ms": self.graph_build_ms,
            "param_count": self.param_count,
            "mode": self.mode,
            "n_samples": self.n_samples,
            "n_graphs": self.n_graphs,
            "repetitions": self.repetitions,
        }


def ade(pred_abs, gt_abs):
    """Mean Euclidean distance over all pedestrians and predicted steps."""
    pred, gt = _check_pair(pred_abs, gt_abs)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred_abs, gt_abs):
    """Mean Euclidean distance at the final predicted step."""
    pred, gt = _check_pair(pred_abs, gt_abs)
    return float(np.linalg.norm(pred[:, -1] - gt[:, -1], axis=-1).mean())


def _check_pair(pred_abs, gt_abs):
    pred = np.asarray(pred_abs, dtype=np.float64)
    gt = np.asarray(gt_abs, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} disagree")
    return pred, gt


def sample_trajectories(field_params, origin, n, rng):
    """Draw n absolute trajectories per pedestrian from a GaussianField.

    Returns n x N x T_pred x 2.
    """
    mu, sigma, rho = field_params.arrays()
    draws = np.empty((n,) + mu.shape)
    for s in range(n):
        disp = sample_bivariate(mu, sigma, rho, rng)
        draws[s] = relative_to_absolute(disp, origin)
    return draws


def best_of_n(field_params, gt_abs, origin, n, rng):
    """Best-of-n metrics: per-pedestrian minima over n sampled trajectories."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gt = np.asarray(gt_abs, dtype=np.float64)
    draws = sample_trajectories(field_params, origin, n, rng)
    dists = np.linalg.norm(draws - gt[None], axis=-1)   # n x N x T
    ade_per_draw = dists.mean(axis=-1)                  # n x N
    fde_per_draw = dists[:, :, -1]                      # n x N
    best_ade = ade_per_draw.min(axis=0)
    best_fde = fde_per_draw.min(axis=0)
    return float(best_ade.mean()), float(best_fde.mean())


def most_likely(field_params, origin):
    """The mean trajectory in absolute coordinates (a Gaussian's mode)."""
    mu = field_params.mu.data
    return relative_to_absolute(mu, np.asarray(origin, dtype=np.float64))


def cvm_predict(abs_obs, t_pred):
    """Constant-velocity extrapolation from the last observed displacement."""
    obs = np.asarray(abs_obs, dtype=np.float64)
    if obs.shape[1] < 2:
        raise ValueError("cvm_predict needs at least 2 observed steps")
    step = obs[:, -1] - obs[:, -2]
    return _extrapolate(obs[:, -1], step, t_pred)


def linear_predict(abs_obs, t_pred):
    """Least-squares line fit per coordinate over time, extrapolated.

    With exactly two observed points the fit passes through them, so the
    prediction coincides with cvm_predict (same arithmetic path).
    """
    obs = np.asarray(abs_obs, dtype=np.float64)
    n, t_obs = obs.shape[0], obs.shape[1]
    if t_obs < 2:
        raise ValueError("linear_predict needs at least 2 observed steps")
    if t_obs == 2:
        return _extrapolate(obs[:, -1], obs[:, 1] - obs[:, 0], t_pred)
    t = np.arange(t_obs, dtype=np.float64)
    t_centered = t - t.mean()
    denom = (t_centered * t_centered).sum()
    mean_pos = obs.mean(axis=1)                                     # N x 2
    slope = (t_centered[None, :, None] * (obs - mean_pos[:, None, :])).sum(axis=1) / denom
    anchor = mean_pos + slope * (t_obs - 1 - t.mean())              # fitted value at last step
    return _extrapolate(anchor, slope, t_pred)


def _extrapolate(start, step, t_pred):
    out = np.empty((start.shape[0], t_pred, 2))
    current = start.copy()
    for k in range(t_pred):
        current = current + step
        out[:, k] = current
    return out


def evaluate_model(params, samples, mode="most_likely", bon_n=20, rng=None,
                   sign_mode="negated", graphs=None):
    """MetricsReport for a trained model over a list of samples."""
    if mode not in EVAL_MODES:
        raise ValueError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    if mode == "best_of_n" and rng is None:
        rng = np.random.default_rng(0)
    if graphs is None:
        graphs = [build_graph_sequence(s, sign_mode) for s in samples]

    pooled = _Pool()
    per_scene = {}
    for sample, graph in zip(samples, graphs):
        origin = sample.abs_obs[:, -1, :]
        if mode == "deterministic":
            pred = relative_to_absolute(predict_deterministic(graph, params).data, origin)
            sample_ade, sample_fde = ade(pred, sample.abs_fut), fde(pred, sample.abs_fut)
        elif mode == "most_likely":
            pred = most_likely(predict_probabilistic(graph, params), origin)
            sample_ade, sample_fde = ade(pred, sample.abs_fut), fde(pred, sample.abs_fut)
        else:
            field_params = predict_probabilistic(graph, params)
            sample_ade, sample_fde = best_of_n(field_params, sample.abs_fut, origin, bon_n, rng)
        pooled.add(sample_ade, sample_fde, sample.n_peds, sample.t_pred)
        per_scene.setdefault(sample.scene_id, _Pool()).add(
            sample_ade, sample_fde, sample.n_peds, sample.t_pred)

    return MetricsReport(
        ade=pooled.ade, fde=pooled.fde, n_samples_used=len(samples),
        mode=mode, bon_n=bon_n if mode == "best_of_n" else None,
        per_scene={k: {"ade": p.ade, "fde": p.fde, "n_samples": p.count} for k, p in per_scene.items()},
    )


def evaluate_baseline(predict_fn, samples):
    """MetricsReport for a baseline that maps abs_obs to future positions."""
    pooled = _Pool()
    per_scene = {}
    for sample in samples:
        pred = predict_fn(sample.abs_obs, sample.t_pred)
        a, f = ade(pred, sample.abs_fut), fde(pred, sample.abs_fut)
        pooled.add(a, f, sample.n_peds, sample.t_pred)
        per_scene.setdefault(sample.scene_id, _Pool()).add(a, f, sample.n_peds, sample.t_pred)
    return MetricsReport(
        ade=pooled.ade, fde=pooled.fde, n_samples_used=len(samples),
        mode="deterministic",
        per_scene={k: {"ade": p.ade, "fde": p.fde, "n_samples": p.count} for k, p in per_scene.items()},
    )


class _Pool:
    """Pools per-sample metrics weighted by pedestrian(-step) counts."""

    def __init__(self):
        self.ade_num = self.fde_num = 0.0
        self.ade_den = self.fde_den = 0
        self.count = 0

    def add(self, sample_ade, sample_fde, n_peds, t_pred):
        self.ade_num += sample_ade * n_peds * t_pred
        self.ade_den += n_peds * t_pred
        self.fde_num += sample_fde * n_peds
        self.fde_den += n_peds
        self.count += 1

    @property
    def ade(self):
        return self.ade_num / self.ade_den if self.ade_den else 0.0

    @property
    def fde(self):
        return self.fde_num / self.fde_den if self.fde_den else 0.0


def benchmark_inference(params, samples, n_samples=20, repetitions=50,
                        sign_mode="negated", rng_seed=0):
    """Median per-window latency; graph construction timed separately.

    Probabilistic timing includes drawing `n_samples` trajectories per
    window on top of the forward pass.
    """
    if not samples:
        raise ValueError("benchmark_inference needs at least one sample")
    build_times = []
    for _ in range(max(3, repetitions // 10)):
        t0 = time.perf_counter()
        graphs = [build_graph_sequence(s, sign_mode) for s in samples]
        build_times.append((time.perf_counter() - t0) / len(samples))

    probabilistic = params.mode == "probabilistic"
    # Warm-up pass so allocation and code paths are hot before timing.
    for graph in graphs:
        if probabilistic:
            predict_probabilistic(graph, params)
        else:
            predict_deterministic(graph, params)

    rng = np.random.default_rng(rng_seed)
    forward_times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for sample, graph in zip(samples, graphs):
            if probabilistic:
                field_params = predict_probabilistic(graph, params)
                sample_trajectories(field_params, sample.abs_obs[:, -1, :], n_samples, rng)
            else:
                predict_deterministic(graph, params)
        forward_times.append((time.perf_counter() - t0) / len(samples))

    return BenchReport(
        forward_ms=float(np.median(forward_times) * 1000.0),
        graph_build_ms=float(np.median(build_times) * 1000.0),
        param_count=parameter_census(params),
        mode=params.mode,
        n_samples=n_samples if probabilistic else 1,
        n_graphs=len(samples),
        repetitions=repetitions,
    )
