"""Photocount oracles and ensemble statistics over trajectory records."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import Trajectory
from .subspace import IncompleteProjectorSet, ProjectorSet


@dataclass(frozen=True)
class EigenspaceDistribution:
    values: np.ndarray
    probabilities: np.ndarray
    time: float = 0.0
    photocount: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probabilities, dtype=float)
        if v.shape != p.shape:
            raise ValueError("values and probabilities differ in length")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-10:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probabilities", p)


def qnd_distribution(p0: EigenspaceDistribution, n: int, t: float, kappa_c2: float) -> EigenspaceDistribution:
    """Eigenvalue distribution after n photocounts in time t for a QND probe.

    ``p(B) ~ B^(2n) exp(-2 kappa |C|^2 B^2 t) p0(B)``, evaluated in log space on
    the discrete support of p0.
    """
    if n < 0 or t < 0:
        raise ValueError("photocount and time must be non-negative")
    B = p0.values
    p = p0.probabilities
    with np.errstate(divide="ignore"):
        logw = np.log(p) - 2 * kappa_c2 * B**2 * t
        if n > 0:
            logw = logw + 2 * n * np.log(np.abs(B))
    finite = np.isfinite(logw)
    if not finite.any():
        raise ValueError("no support left: p0 lives only on B = 0 but photons were counted")
    w = np.zeros_like(p)
    w[finite] = np.exp(logw[finite] - logw[finite].max())
    return EigenspaceDistribution(B, w / w.sum(), t, n)


def qnd_peak(n: int, t: float, kappa_c2: float) -> float:
    """|B| at which the continuum envelope B^(2n) exp(-2 kappa |C|^2 B^2 t) peaks."""
    return float(np.sqrt(n / (2 * kappa_c2 * t)))


def eigenspace_populations(state: np.ndarray, projectors: ProjectorSet) -> np.ndarray:
    if sum(projectors.dims) != len(state):
        raise IncompleteProjectorSet("projector set does not cover the state space")
    return projectors.populations(np.asarray(state))


@dataclass
class QNDCheck:
    """Compare eigenspace populations within (n, t) strata against the oracle.

    ``series`` names the per-snapshot population vector stored on the
    trajectories; ``values`` are the matching eigenvalues.
    """

    p0: EigenspaceDistribution
    kappa_c2: float
    series: str
    min_samples: int = 100
    snapshots: list[int] | None = None


@dataclass
class EnsembleSummary:
    times: np.ndarray
    n_trajectories: int
    means: dict[str, np.ndarray] = field(default_factory=dict)
    stds: dict[str, np.ndarray] = field(default_factory=dict)
    purity_fraction: np.ndarray | None = None
    purity_histogram: np.ndarray | None = None
    purity_bins: tuple[float, ...] = (0.0, 0.5, 0.9, 0.99, 1.0 + 1e-12)
    qnd: list[dict] = field(default_factory=list)

    def rows(self):
        """(time, observable-id, mean, std, trajectory-count) rows."""
        for name in sorted(self.means):
            mean, std = self.means[name], self.stds[name]
            flat_m = mean.reshape(len(self.times), -1)
            flat_s = std.reshape(len(self.times), -1)
            scalar = mean.ndim == 1
            for ti, t in enumerate(self.times):
                for c in range(flat_m.shape[1]):
                    obs = name if scalar else f"{name}[{c}]"
                    yield t, obs, flat_m[ti, c], flat_s[ti, c], self.n_trajectories

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "observable", "mean", "std", "trajectory_count"])
        for t, obs, m, s, n in self.rows():
            w.writerow([f"{t:.12g}", obs, repr(float(m)), repr(float(s)), n])
        return buf.getvalue()

    def to_json(self) -> dict:
        out = {
            "n_trajectories": self.n_trajectories,
            "n_snapshots": len(self.times),
            "final_time": float(self.times[-1]) if len(self.times) else 0.0,
            "final_means": {k: np.asarray(v[-1]).tolist() for k, v in self.means.items()},
        }
        if self.purity_fraction is not None:
            out["purity_fraction_above_0.99"] = self.purity_fraction.tolist()
            out["purity_bins"] = list(self.purity_bins)
            out["final_purity_histogram"] = self.purity_histogram[-1].tolist()
        if self.qnd:
            out["qnd_comparison"] = self.qnd
        return out


def _series(tr: Trajectory, name: str, fn: Callable | None):
    if name in tr.series:
        return np.asarray(tr.series[name])
    if fn is None or tr.states is None:
        raise KeyError(f"trajectory {tr.index} has no series {name!r} and no stored states")
    return np.array([fn(s) for s in tr.states])


def ensemble_statistics(
    trajectories: list[Trajectory],
    observables: dict[str, Callable] | None = None,
    projector_sets: dict[str, ProjectorSet] | None = None,
    purity_set: str | None = None,
    qnd: QNDCheck | None = None,
) -> EnsembleSummary:
    """Aggregate trajectories on a shared snapshot grid.

    Every series recorded on all trajectories is summarised; additional
    observables and projector sets are computed from stored states.  Trajectories are processed in index order
    so the result does not depend on how they were scheduled.
    """
    if not trajectories:
        raise ValueError("no trajectories")
    trs = sorted(trajectories, key=lambda t: t.index)
    times = trs[0].times
    for tr in trs[1:]:
        if tr.times.shape != times.shape or np.abs(tr.times - times).max() > 1e-9:
            raise ValueError(f"trajectory {tr.index} uses a different snapshot grid")
    fns: dict[str, Callable | None] = dict(observables or {})
    for name, ps in (projector_sets or {}).items():
        fns[name] = ps.populations
    names = set(fns) | set.intersection(*(set(tr.series) for tr in trs))
    if qnd is not None:
        names.add(qnd.series)
    data = {name: np.stack([_series(tr, name, fns.get(name)) for tr in trs]) for name in sorted(names)}
    summary = EnsembleSummary(times=times, n_trajectories=len(trs))
    for name, arr in data.items():
        summary.means[name] = arr.real.mean(axis=0) if np.isrealobj(arr) or np.allclose(arr.imag, 0) else arr.mean(axis=0)
        summary.stds[name] = arr.real.std(axis=0)

    if purity_set is not None:
        best = data[purity_set].max(axis=2)
        summary.purity_fraction = (best > 0.99).mean(axis=0)
        summary.purity_histogram = np.stack(
            [np.histogram(best[:, i], bins=summary.purity_bins)[0] for i in range(len(times))]
        )

    if qnd is not None:
        counts = np.stack([tr.counts for tr in trs])
        pops = data[qnd.series]
        snaps = qnd.snapshots if qnd.snapshots is not None else range(len(times))
        for i in snaps:
            t = float(times[i])
            for n in np.unique(counts[:, i]):
                sel = counts[:, i] == n
                if sel.sum() < qnd.min_samples:
                    continue
                empirical = pops[sel, i].mean(axis=0)
                predicted = qnd_distribution(qnd.p0, int(n), t, qnd.kappa_c2).probabilities
                summary.qnd.append(
                    {
                        "time": t,
                        "photocount": int(n),
                        "samples": int(sel.sum()),
                        "l1": float(np.abs(empirical - predicted).sum()),
                        "empirical": empirical.tolist(),
                        "predicted": predicted.tolist(),
                    }
                )
    return summary


@dataclass
class ProjectionRecord:
    index: int
    first_time: float | None  # first snapshot with max population > threshold
    selected: int | None
    held: bool  # selected population stays > threshold from first_time to the end
    min_after: float | None  # lowest selected population after first_time
    spread_ok: bool | None  # >= 2 eigenspaces of each reference set occupied after projection


def projection_statistics(
    trajectories: list[Trajectory],
    series: str,
    threshold: float = 0.99,
    spread_series: tuple[str, ...] = (),
    spread_floor: float = 0.01,
) -> list[ProjectionRecord]:
    """Per-trajectory confinement to a single emergent subspace.

    ``series`` holds emergent-subspace populations.  After the first snapshot
    where one population exceeds ``threshold``, ``held`` records whether that
    same population stays above it for the rest of the record, and
    ``spread_ok`` whether at every later snapshot each of ``spread_series``
    still has at least two entries above ``spread_floor``.
    """
    out = []
    for tr in sorted(trajectories, key=lambda t: t.index):
        pops = np.asarray(tr.series[series])
        hit = np.nonzero(pops.max(axis=1) > threshold)[0]
        if hit.size == 0:
            out.append(ProjectionRecord(tr.index, None, None, False, None, None))
            continue
        i0 = int(hit[0])
        sel = int(np.argmax(pops[i0]))
        after = pops[i0:, sel]
        spread = True
        for name in spread_series:
            occupied = (np.asarray(tr.series[name])[i0:] > spread_floor).sum(axis=1)
            spread = spread and bool((occupied >= 2).all())
        out.append(
            ProjectionRecord(
                tr.index, float(tr.times[i0]), sel, bool((after > threshold).all()), float(after.min()), spread
            )
        )
    return out


def piecewise_constant_defect(trajectories: list[Trajectory], series: str) -> float:
    """Largest change of ``series`` between consecutive snapshots with no jump in between."""
    worst = 0.0
    for tr in trajectories:
        pops = np.asarray(tr.series[series])
        same = np.diff(tr.counts) == 0
        if same.any():
            worst = max(worst, float(np.abs(np.diff(pops, axis=0)[same]).max()))
    return worst


def no_jump_update_defect(trajectories: list[Trajectory], series: str, values, kappa_c2: float) -> float:
    """Largest deviation of ``series`` from the no-click reweighting
    ``p(B) -> p(B) exp(-2 kappa |C|^2 B^2 dt)`` (renormalised) between
    consecutive snapshots without a jump."""
    b2 = np.asarray(values, dtype=float) ** 2
    worst = 0.0
    for tr in trajectories:
        pops = np.asarray(tr.series[series])
        dts = np.diff(tr.times)
        for i in np.nonzero(np.diff(tr.counts) == 0)[0]:
            w = pops[i] * np.exp(-2 * kappa_c2 * b2 * dts[i])
            worst = max(worst, float(np.abs(pops[i + 1] - w / w.sum()).max()))
    return worst
