"""Figure rendering for CLI reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def trajectory_panels(times, pair_occupations, measurement_pops, hamiltonian_pops, emergent_pops, path, k_labels=None):
    """Four stacked panels for one trajectory: <O_k>, measurement eigenspace
    populations, H0 eigenspace populations, emergent-subspace populations."""
    fig, axes = plt.subplots(4, 1, figsize=(7, 9), sharex=True)
    ok = np.asarray(pair_occupations)
    for i in range(ok.shape[1]):
        lab = f"k a/pi = {k_labels[i]:.2f}" if k_labels is not None else f"k{i}"
        axes[0].plot(times, ok[:, i], label=lab)
    axes[0].set_ylabel(r"$\langle O_k \rangle$")
    axes[0].legend(fontsize=7, ncol=2)
    for ax, pops, name in (
        (axes[1], measurement_pops, "measurement eigenspaces"),
        (axes[2], hamiltonian_pops, r"$H_0$ eigenspaces"),
        (axes[3], emergent_pops, "emergent subspaces"),
    ):
        pops = np.asarray(pops)
        for i in range(pops.shape[1]):
            ax.plot(times, pops[:, i], lw=0.8)
        ax.set_ylabel("population")
        ax.set_title(name, fontsize=9)
        ax.set_ylim(-0.02, 1.02)
    axes[-1].set_xlabel("J t")
    return _save(fig, path)


def ensemble_purity(times, fraction, path, threshold=0.99):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(times, fraction)
    ax.set_xlabel("J t")
    ax.set_ylabel(f"fraction with max population > {threshold}")
    ax.set_ylim(-0.02, 1.02)
    return _save(fig, path)


def block_decay(times, relative_norm, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(times, np.maximum(relative_norm, 1e-300))
    ax.set_xlabel("J t")
    ax.set_ylabel("max off-diagonal block norm / initial")
    return _save(fig, path)


def trace_distance_series(times, distances, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(times, distances, marker="o")
    ax.set_xlabel("J t")
    ax.set_ylabel("trace distance")
    return _save(fig, path)


def qnd_strata(records, path):
    """Empirical vs predicted eigenvalue distributions, one bar group per stratum."""
    n = max(len(records), 1)
    fig, axes = plt.subplots(n, 1, figsize=(6, 1.8 * n), squeeze=False)
    for ax, r in zip(axes[:, 0], records):
        x = np.arange(len(r["predicted"]))
        ax.bar(x - 0.2, r["empirical"], width=0.4, label="empirical")
        ax.bar(x + 0.2, r["predicted"], width=0.4, label="oracle")
        ax.set_title(f"t={r['time']:g}  n={r['photocount']}  samples={r['samples']}", fontsize=8)
    axes[0, 0].legend(fontsize=7)
    return _save(fig, path)
