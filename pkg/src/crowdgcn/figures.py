"""Figure rendering for the report paths: trajectory overlays with sampled
distributions, training curves, metric comparisons and latency breakdowns.

Uses the Agg backend so reports render identically in headless runs; every
function writes a PNG next to the delimited output it illustrates.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Ellipse

OBS_STYLE = dict(color="tab:blue", lw=1.8)
GT_STYLE = dict(color="tab:green", lw=1.8, ls="--")
PRED_STYLE = dict(color="tab:red", lw=1.8)
SAMPLE_STYLE = dict(color="tab:red", lw=0.6, alpha=0.18)


def save_prediction_figure(path, sample, pred_abs=None, sampled_abs=None, field=None,
                           title=None):
    """Observed/ground-truth/predicted trajectories for one window.

    pred_abs: N x T_pred x 2 headline prediction (drawn solid).
    sampled_abs: S x N x T_pred x 2 drawn as a translucent cloud.
    field: optional (mu, sigma, rho) arrays; when given, 1-sigma ellipses
    are drawn at the final predicted step.
    """
    fig, ax = plt.subplots(figsize=(6, 6))
    for i in range(sample.n_peds):
        obs = sample.abs_obs[i]
        fut = np.vstack([obs[-1:], sample.abs_fut[i]])
        ax.plot(obs[:, 0], obs[:, 1], **OBS_STYLE,
                label="observed" if i == 0 else None)
        ax.plot(fut[:, 0], fut[:, 1], **GT_STYLE,
                label="ground truth" if i == 0 else None)
        if sampled_abs is not None:
            for s in range(sampled_abs.shape[0]):
                traj = np.vstack([obs[-1:], sampled_abs[s, i]])
                ax.plot(traj[:, 0], traj[:, 1], **SAMPLE_STYLE)
        if pred_abs is not None:
            traj = np.vstack([obs[-1:], pred_abs[i]])
            ax.plot(traj[:, 0], traj[:, 1], **PRED_STYLE,
                    label="prediction" if i == 0 else None)
    if field is not None and pred_abs is not None:
        _draw_final_step_ellipses(ax, pred_abs, field)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _draw_final_step_ellipses(ax, pred_abs, field):
    mu, sigma, rho = field
    for i in range(pred_abs.shape[0]):
        sx, sy = sigma[i, -1]
        r = rho[i, -1]
        cov = np.array([[sx * sx, r * sx * sy], [r * sx * sy, sy * sy]])
        vals, vecs = np.linalg.eigh(cov)
        angle = float(np.degrees(np.arctan2(vecs[1, 1], vecs[0, 1])))
        ell = Ellipse(xy=pred_abs[i, -1], width=2 * np.sqrt(max(vals[1], 0.0)),
                      height=2 * np.sqrt(max(vals[0], 0.0)), angle=angle,
                      facecolor="tab:red", alpha=0.15, edgecolor="tab:red")
        ax.add_patch(ell)


def save_scene_figure(path, samples, title=None):
    """Overview of windowed trajectories (observed solid, future dashed)."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for sample in samples:
        for i in range(sample.n_peds):
            full = np.vstack([sample.abs_obs[i], sample.abs_fut[i]])
            ax.plot(full[:, 0], full[:, 1], lw=0.9, alpha=0.7)
            ax.plot(sample.abs_obs[i, 0, 0], sample.abs_obs[i, 0, 1], "k.", ms=3)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_loss_curve(path, log_records, title="training"):
    """Per-epoch loss (and validation ADE when present) from the train log."""
    epochs = [r["epoch"] for r in log_records]
    losses = [r["train_loss"] for r in log_records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, losses, color="tab:blue", label="train loss (per point)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if any("val_ade" in r for r in log_records):
        ax2 = ax.twinx()
        ax2.plot(epochs, [r.get("val_ade") for r in log_records],
                 color="tab:orange", label="val ADE")
        ax2.set_ylabel("val ADE (m)")
        ax2.legend(loc="upper right", fontsize=8)
    ax.legend(loc="upper left", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_metrics_figure(path, reports, title="ADE / FDE"):
    """Grouped bar chart over named MetricsReports: {label: report}."""
    labels = list(reports)
    ades = [reports[k].ade for k in labels]
    fdes = [reports[k].fde for k in labels]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(labels), 4))
    ax.bar(x - 0.2, ades, width=0.4, label="ADE", color="tab:blue")
    ax.bar(x + 0.2, fdes, width=0.4, label="FDE", color="tab:orange")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("metres")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_bench_figure(path, reports, title="inference latency"):
    """Stacked bars separating graph construction from forward time."""
    labels = list(reports)
    fwd = [reports[k].forward_ms for k in labels]
    build = [reports[k].graph_build_ms for k in labels]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(labels), 4))
    ax.bar(x, fwd, width=0.5, label="forward", color="tab:blue")
    ax.bar(x, build, width=0.5, bottom=fwd, label="graph build", color="tab:gray")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("ms per window")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
