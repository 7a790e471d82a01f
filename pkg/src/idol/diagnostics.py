"""Distribution-shift and identity-adequacy analytics.

Histogram Jensen-Shannon divergence (natural log, bounded by ln 2), Gaussian
kernel density estimation with Scott's-rule bandwidth, binned mutual
information with first-principal-component reduction for vector inputs, and
cross-domain variance of identity tokens.  ``shift_report`` orchestrates all
of them over a trained checkpoint and dataset.
"""

from __future__ import annotations

import csv
import json
import math
import os
from typing import Dict, Sequence

import numpy as np

LN2 = math.log(2.0)
_SMOOTH = 1e-12


def _hist_density(samples: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(samples, bins=edges)
    p = counts.astype(np.float64) + _SMOOTH
    return p / p.sum()


def jsd(p_samples: Sequence[float], q_samples: Sequence[float], bins: int = 64) -> float:
    """Jensen-Shannon divergence (nats) between two sample sets, estimated on
    a shared histogram over the joint range.  Returns 0 for a degenerate
    range (all samples identical across both sets)."""
    p_samples = np.asarray(p_samples, dtype=np.float64)
    q_samples = np.asarray(q_samples, dtype=np.float64)
    if p_samples.size < 2 or q_samples.size < 2:
        raise ValueError("need at least 2 samples per set")
    lo = min(p_samples.min(), q_samples.min())
    hi = max(p_samples.max(), q_samples.max())
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    p = _hist_density(p_samples, edges)
    q = _hist_density(q_samples, edges)
    m = 0.5 * (p + q)
    kl_pm = float(np.sum(p * np.log(p / m)))
    kl_qm = float(np.sum(q * np.log(q / m)))
    return 0.5 * kl_pm + 0.5 * kl_qm


def kde(samples: Sequence[float], grid: Sequence[float]) -> np.ndarray:
    """Gaussian-kernel density estimate on ``grid`` with Scott's-rule
    bandwidth (floored for zero-variance samples)."""
    samples = np.asarray(samples, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    n = samples.size
    if n < 2:
        raise ValueError("need at least 2 samples")
    std = samples.std()
    span = grid.max() - grid.min() if grid.size > 1 else 1.0
    bw = std * n ** (-1.0 / 5.0)
    bw = max(bw, 1e-3 * max(span, 1e-12))
    z = (grid[:, None] - samples[None, :]) / bw
    dens = np.exp(-0.5 * z**2).sum(axis=1) / (n * bw * math.sqrt(2 * math.pi))
    return dens


def _first_pc(x: np.ndarray) -> np.ndarray:
    """Project multi-dimensional samples onto their first principal component."""
    if x.ndim == 1:
        return x
    if x.shape[1] == 1:
        return x[:, 0]
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[0]


def mutual_information(
    x_samples: np.ndarray, y_samples: np.ndarray, bins: int = 32
) -> float:
    """Binned mutual information (nats) between paired samples.

    Vector inputs are reduced to their first principal component; both axes
    are standardized before binning on a fixed bins x bins grid.
    """
    x = _first_pc(np.asarray(x_samples, dtype=np.float64))
    y = _first_pc(np.asarray(y_samples, dtype=np.float64))
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y must be paired")
    if x.shape[0] < 32:
        raise ValueError("need at least 32 samples for a stable estimate")
    x = (x - x.mean()) / (x.std() + 1e-12)
    y = (y - y.mean()) / (y.std() + 1e-12)
    joint, _, _ = np.histogram2d(x, y, bins=bins)
    pxy = joint + _SMOOTH
    pxy /= pxy.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    mi = float(np.sum(pxy * np.log(pxy / (px * py))))
    return max(mi, 0.0)


def binned_entropy(samples: np.ndarray, bins: int = 32) -> float:
    """Entropy (nats) of the standardized samples on the MI binning."""
    x = _first_pc(np.asarray(samples, dtype=np.float64))
    x = (x - x.mean()) / (x.std() + 1e-12)
    counts, _ = np.histogram(x, bins=bins)
    p = counts.astype(np.float64) + _SMOOTH
    p /= p.sum()
    return float(-np.sum(p * np.log(p)))


def identity_variance(tokens_by_domain: Dict[str, np.ndarray]) -> dict:
    """Per-dimension variance of token means across domains.

    ``tokens_by_domain`` maps a domain label to a (samples, dim) array.
    Returns the per-dimension variances plus their mean and max.
    """
    if len(tokens_by_domain) < 2:
        raise ValueError("need at least 2 domains")
    means = np.stack(
        [np.asarray(t, dtype=np.float64).mean(axis=0) for t in tokens_by_domain.values()]
    )
    per_dim = means.var(axis=0)
    return {
        "per_dim": per_dim,
        "mean": float(per_dim.mean()),
        "max": float(per_dim.max()),
    }


REPORT_SCHEMA_NAME = "shift_report.schema.json"


def _schema_path() -> str:
    return os.path.join(os.path.dirname(__file__), "schemas", REPORT_SCHEMA_NAME)


def load_report_schema() -> dict:
    with open(_schema_path()) as fh:
        return json.load(fh)


def shift_report(
    labels_train: np.ndarray,
    labels_test: np.ndarray,
    preds_test: np.ndarray,
    tokens_by_domain: Dict[str, Dict[str, np.ndarray]],
    feature_by_domain: Dict[str, np.ndarray],
    task_names: Sequence[str] = ("v", "p", "ri", "ro"),
    kde_points: int = 128,
) -> dict:
    """Assemble the full diagnostic report from arrays.

    ``tokens_by_domain`` maps identity names to {domain: (samples, dim)};
    ``feature_by_domain`` maps domains to raw backbone features for the
    variance comparison.
    """
    report: dict = {"tasks": {}, "mi": {}, "variance": {}}
    for i, task in enumerate(task_names):
        lt = labels_train[:, i]
        le = labels_test[:, i]
        pe = preds_test[:, i]
        lo = float(min(lt.min(), le.min(), pe.min()))
        hi = float(max(lt.max(), le.max(), pe.max()))
        grid = np.linspace(lo, hi, kde_points)
        report["tasks"][task] = {
            "jsd_train_test": jsd(lt, le),
            "jsd_pred_truth": jsd(pe, le),
            "kde_grid": grid.tolist(),
            "kde_truth": kde(le, grid).tolist(),
            "kde_pred": kde(pe, grid).tolist(),
        }
    for name, domains in tokens_by_domain.items():
        stacked = np.concatenate(list(domains.values()))
        report["variance"][f"id_{name}"] = {
            k: v
            for k, v in identity_variance(domains).items()
            if k in ("mean", "max")
        }
        del stacked
    report["variance"]["raw_features"] = {
        k: v
        for k, v in identity_variance(feature_by_domain).items()
        if k in ("mean", "max")
    }
    # MI between each task's identity tokens (test domain) and its labels.
    for i, task in enumerate(task_names):
        domains = tokens_by_domain.get(task)
        if domains and "test" in domains and labels_test.shape[0] >= 32:
            report["mi"][task] = mutual_information(
                domains["test"], labels_test[:, i]
            )
    return report


def write_report(report: dict, out_dir: str) -> None:
    """Write ``report.json`` plus plot-ready CSV series under ``series/``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    series_dir = os.path.join(out_dir, "series")
    os.makedirs(series_dir, exist_ok=True)
    for task, entry in report["tasks"].items():
        for which in ("truth", "pred"):
            path = os.path.join(series_dir, f"kde_{task}_{which}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x", "y"])
                for x, y in zip(entry["kde_grid"], entry[f"kde_{which}"]):
                    writer.writerow([x, y])
