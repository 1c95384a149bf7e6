"""Figures written next to the CSV/JSON outputs of the command-line tool."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_run", "plot_adjust", "plot_compare"]

_META = {"Software": None}  # keep the files byte-stable across matplotlib builds


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_run(trace, out_dir, reference: float | None = None, prefix: str = "run") -> list[Path]:
    """Objective, prices and power-limit residual against the iteration count."""
    out_dir = Path(out_dir)
    k = np.asarray(trace.k)
    duals = trace.dual_array()
    n_mu = len(trace.node_ids)

    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(k, trace.objective, lw=1.2, label="protocol")
    if reference is not None:
        ax.axhline(reference, color="k", ls="--", lw=0.8, label="centralized optimum")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("total spectral efficiency (bits/s/Hz)")
    ax.legend(loc="best")
    paths = [_save(fig, out_dir / f"{prefix}_objective.png")]

    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 5.2), sharex=True)
    for i, nid in enumerate(trace.node_ids):
        if np.any(duals[:, i] > 0):
            a1.plot(k, duals[:, i], lw=1.0, label=f"mu_{nid}")
    for j, rid in enumerate(trace.relay_ids):
        a1.plot(k, duals[:, n_mu + j], lw=1.0, ls="--", label=f"nu_{rid}")
    a1.set_ylabel("power price")
    if a1.get_legend_handles_labels()[0]:
        a1.legend(loc="best", fontsize=8, ncol=2)
    res = np.abs(np.asarray(trace.max_power_residual))
    a2.semilogy(k, np.maximum(res, 1e-16), lw=1.0)
    a2.set_ylabel("|max power-limit residual|")
    a2.set_xlabel("iteration k")
    paths.append(_save(fig, out_dir / f"{prefix}_duals.png"))
    return paths


def plot_adjust(outer_trace, out_dir, prefix: str = "adjust") -> list[Path]:
    """Budget trajectories and objective of the outer loop."""
    out_dir = Path(out_dir)
    q = np.asarray(outer_trace.q)
    beta = np.array(outer_trace.beta)
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 5.2), sharex=True)
    for t in range(beta.shape[1]):
        a1.plot(q, beta[:, t], lw=1.2, label=f"beta_{outer_trace.control_ids[t]}")
    a1.set_ylabel("channel budget")
    a1.legend(loc="best", fontsize=8)
    a2.plot(q, outer_trace.objective, lw=1.2)
    a2.set_ylabel("total spectral efficiency")
    a2.set_xlabel("budget update q")
    for ax in (a1, a2):
        if len(q) > 50:
            ax.set_xscale("log")
    return [_save(fig, out_dir / f"{prefix}_beta.png")]


def plot_compare(protocol_powers, oracle_powers, labels, out_dir,
                 prefix: str = "compare") -> list[Path]:
    """Side-by-side power allocation of the protocol and the centralized optimum."""
    out_dir = Path(out_dir)
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(labels)), 3.6))
    ax.bar(x - 0.2, protocol_powers, width=0.4, label="protocol")
    ax.bar(x + 0.2, oracle_powers, width=0.4, label="centralized")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("power")
    ax.legend(loc="best")
    return [_save(fig, out_dir / f"{prefix}_powers.png")]
