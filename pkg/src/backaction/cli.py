"""Command-line entry point.

Subcommands write their artifacts into ``--out`` together with
``manifest.json`` (sha256 of every file, config hash, seed) and the resolved
``config.yaml``, which reproduces the run bit for bit.

Exit codes: 0 success, 2 configuration error, 3 numerical tolerance failure,
1 anything else.  Failures print a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, experiments, plotting
from .config import ConfigError, RunConfig, load
from .dynamics import (
    DarkStateEdge,
    DensityMatrix,
    ToleranceError,
    TrajectoryConfig,
    block_decompose,
    ensemble_density,
    run_ensemble,
    run_master,
    trace_distance,
)
from .fock import DimensionError
from .subspace import CommutatorCheckFailed, IncompleteProjectorSet, eigenspace_projectors, same_projectors

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_TOLERANCE = 0, 1, 2, 3
MANIFEST_SCHEMA = 1


class ArtifactWriter:
    """Sole writer of output files; records each file for the manifest."""

    def __init__(self, directory):
        self.root = Path(directory)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def register(self, name: str):
        if name not in self.files:
            self.files.append(name)

    def text(self, name: str, content: str):
        self.path(name).write_text(content)
        self.register(name)

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def figure(self, name: str, render, *args, **kwargs):
        render(*args, path=self.path(name), **kwargs)
        self.register(name)

    def table(self, stem: str, header: list[str], rows, fmt: str):
        if fmt == "json":
            self.json(f"{stem}.json", [dict(zip(header, r)) for r in rows])
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.text(f"{stem}.csv", buf.getvalue())

    def manifest(self, command: str, cfg: RunConfig, extra: dict | None = None):
        entries = []
        for name in self.files:
            data = (self.root / name).read_bytes()
            entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        body = {
            "schema_version": MANIFEST_SCHEMA,
            "package_version": __version__,
            "command": command,
            "seed": cfg.dynamics.seed,
            "config_hash": cfg.content_hash(),
            "config": cfg.to_dict(),
            "files": entries,
        }
        body.update(extra or {})
        (self.root / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _f(x) -> str:
    return repr(float(x))


# ---- subcommands -----------------------------------------------------------


def cmd_trajectories(cfg: RunConfig, out: ArtifactWriter, args) -> int:
    dyn = cfg.dynamics
    system = experiments.build_system(cfg)
    observables = {"measurement": None, "hamiltonian": None}
    sets = {"measurement": eigenspace_projectors(system.B), "hamiltonian": eigenspace_projectors(system.H0)}
    report = None
    if "emergent" in cfg.analysis.subspaces:
        report = experiments.subspace_report(system)
        sets["emergent"] = report.emergent
    for name, ps in sets.items():
        observables[name] = ps.populations
    k_labels = None
    if system.basis.n_sites % 2 == 0 and system.basis.n_sites > 2:
        observables["O_k"], k_labels = experiments.pair_occupation_observable(system.basis)

    tcfg = TrajectoryConfig(dyn.kappa, dyn.total_time, dyn.max_dt, dyn.seed, record_interval=dyn.record_interval)
    trs = run_ensemble(system.psi0, system.H0, system.a, tcfg, dyn.n_trajectories, args.threads, observables)

    summary = analysis.ensemble_statistics(trs, purity_set="emergent" if report else None)
    counts = np.stack([tr.counts for tr in trs]).astype(float)
    summary.means["photocount"] = counts.mean(axis=0)
    summary.stds["photocount"] = counts.std(axis=0)
    out.table("ensemble", ["time", "observable", "mean", "std", "trajectory_count"],
              [[f"{t:.12g}", o, _f(m), _f(s), n] for t, o, m, s, n in summary.rows()], args.format)

    stats = None
    if report is not None:
        stats = analysis.projection_statistics(trs, "emergent", spread_series=("measurement", "hamiltonian"))
    if cfg.outputs.event_logs:
        lines = []
        for i, tr in enumerate(sorted(trs, key=lambda t: t.index)):
            rec = {"index": tr.index, "seed": tr.seed, "photocount": tr.photocount,
                   "jump_times": [float(t) for t in tr.jump_times]}
            if stats is not None:
                s = stats[i]
                rec.update(projection_time=s.first_time, selected_subspace=s.selected, held=s.held)
            lines.append(json.dumps(rec, sort_keys=True))
        out.text("events.jsonl", "\n".join(lines) + "\n")

    result = {"summary": summary.to_json(), "dt": trs[0].dt, "subspace_dims": {k: v.dims for k, v in sets.items()}}
    if stats is not None:
        reached = [s for s in stats if s.first_time is not None and s.first_time <= 20.0]
        result["projection"] = {
            "threshold": 0.99,
            "reached_by_jt20": len(reached) / len(stats),
            "reached_by_jt20_and_held": sum(s.held for s in reached) / len(stats),
            "spread_after_projection": sum(bool(s.spread_ok) for s in reached) / max(len(reached), 1),
            "projection_times": [s.first_time for s in stats],
        }
    out.json("summary.json", result)

    if cfg.outputs.plots:
        first = min(trs, key=lambda t: t.index)
        if report is not None and k_labels is not None:
            out.figure("trajectory_first.png", plotting.trajectory_panels, first.times, first.series["O_k"],
                       first.series["measurement"], first.series["hamiltonian"], first.series["emergent"],
                       k_labels=k_labels)
        if summary.purity_fraction is not None:
            out.figure("purity.png", plotting.ensemble_purity, summary.times, summary.purity_fraction)
    return EXIT_OK


def cmd_master(cfg: RunConfig, out: ArtifactWriter, args) -> int:
    dyn = cfg.dynamics
    system = experiments.build_system(cfg)
    report = experiments.subspace_report(system)
    blocks = report.emergent
    rho0 = DensityMatrix.pure(system.psi0, system.basis)
    n_cmp = args.compare_trajectories if args.compare_trajectories is not None else cfg.analysis.compare_trajectories
    record_times = np.arange(0, dyn.total_time + 1e-9, dyn.master_record_interval)
    rows, snaps = [], {}
    n = len(blocks)
    iu = np.triu_indices(n, 1)
    initial = []

    def on_snapshot(t, rho):
        norms = block_decompose(rho, blocks)
        off = norms[iu].max() if n > 1 else 0.0
        if not initial:
            initial.append(off)
        rel = off / initial[0] if initial[0] > 0 else 0.0
        herm = float(np.abs(rho - rho.conj().T).max())
        rows.append([f"{t:.12g}", _f(abs(np.trace(rho) - 1)), _f(herm), _f(off), _f(rel)]
                    + [_f(v) for v in norms[iu]])
        if n_cmp:
            snaps[round(t, 9)] = rho

    res = run_master(rho0, system.H0, system.a, system.kappa, dyn.total_time, dyn.master_dt,
                     record_times=record_times, sectors=report.conserved, on_snapshot=on_snapshot, store=False)
    header = ["time", "trace_drift", "hermiticity_defect", "max_offdiag", "max_offdiag_relative"] + [
        f"block_{i}_{j}" for i, j in zip(*iu)]
    out.table("master", header, rows, args.format)
    result = {
        "dt": res.dt,
        "trace_drift": res.trace_drift,
        "hermiticity_defect": res.hermiticity_defect,
        "blocks": blocks.to_json(),
        "initial_max_offdiag": initial[0] if initial else 0.0,
        "final_max_offdiag_relative": float(rows[-1][4]) if rows else 0.0,
    }
    if n_cmp:
        tcfg = TrajectoryConfig(dyn.kappa, dyn.total_time, dyn.max_dt, dyn.seed,
                                record_interval=dyn.master_record_interval)
        trs = run_ensemble(system.psi0, system.H0, system.a, tcfg, n_cmp, args.threads, store_states=True)
        cmp_rows = []
        for i, t in enumerate(trs[0].times):
            rho = snaps.get(round(float(t), 9))
            if rho is not None:
                cmp_rows.append([f"{t:.12g}", _f(trace_distance(ensemble_density(trs, i), rho)), n_cmp])
        out.table("comparison", ["time", "trace_distance", "trajectory_count"], cmp_rows, args.format)
        result["max_trace_distance"] = max(float(r[1]) for r in cmp_rows)
        if cfg.outputs.plots:
            out.figure("trace_distance.png", plotting.trace_distance_series,
                       [float(r[0]) for r in cmp_rows], [float(r[1]) for r in cmp_rows])
    out.json("summary.json", result)
    if cfg.outputs.plots and rows:
        out.figure("block_decay.png", plotting.block_decay,
                   [float(r[0]) for r in rows], [float(r[4]) for r in rows])
    return EXIT_OK


def cmd_subspaces(cfg: RunConfig, out: ArtifactWriter, args) -> int:
    system = experiments.build_system(cfg)
    report = experiments.subspace_report(system)
    sets = {"measurement": report.measurement, "emergent": report.emergent, "finest": report.finest}
    if report.conserved is not None:
        sets["conserved"] = report.conserved
    if report.parity is not None:
        sets["parity"] = report.parity
    result = {name: ps.to_json() for name, ps in sets.items()}
    defects = {name: ps.defects() for name, ps in sets.items()}
    result["defects"] = defects
    if report.parity is not None:
        result["graph_vs_parity_max_difference"] = same_projectors(report.emergent, report.parity)
    lat = cfg.lattice
    if (lat.n_atoms, lat.n_sites) == (2, 8) and cfg.geometry.preset == "alternating-B2":
        rows = experiments.table_s1(2, 8, cfg.geometry.J2)
        result["table_s1"] = {"rows": rows, "max_deviation": experiments.compare_table_s1(rows)}
    out.json("subspaces.json", result)
    worst = max(max(d.values()) for d in defects.values())
    if worst > 1e-10:
        raise ToleranceError(f"projector set defect {worst:.3e}")
    return EXIT_OK


def cmd_table_s1(cfg: RunConfig, out: ArtifactWriter, args) -> int:
    rows = experiments.table_s1(cfg.lattice.n_atoms, cfg.lattice.n_sites, cfg.geometry.J2)
    dev = experiments.compare_table_s1(rows)
    out.table("table_s1", ["name", "occupations", "dimension", "eigenvalues_2J2"],
              [[r["name"], " ".join(map(str, r["occupations"])), r["dimension"],
                " ".join(_f(v) for v in r["eigenvalues_2J2"])] for r in rows], args.format)
    out.json("summary.json", {"max_deviation": dev, "matches_reference": dev < 1e-9})
    if (cfg.lattice.n_atoms, cfg.lattice.n_sites) == (2, 8) and not dev < 1e-9:
        raise ToleranceError(f"table deviates from the reference by {dev:.3e}")
    return EXIT_OK


def cmd_qnd_check(cfg: RunConfig, out: ArtifactWriter, args) -> int:
    dyn = cfg.dynamics
    system = experiments.build_system(cfg)
    P = eigenspace_projectors(system.B)
    comm = abs(system.B.matrix @ system.H0.matrix - system.H0.matrix @ system.B.matrix).max()
    if comm > 1e-10:
        raise ConfigError("qnd-check needs a measurement commuting with H0 (uniform-B1 at U=0)")
    values = np.array([lab["eigenvalue"] for lab in P.labels])
    p0 = analysis.EigenspaceDistribution(values, P.populations(system.psi0))
    tcfg = TrajectoryConfig(dyn.kappa, dyn.total_time, dyn.max_dt, dyn.seed, record_interval=dyn.record_interval)
    trs = run_ensemble(system.psi0, system.H0, system.a, tcfg, dyn.n_trajectories, args.threads,
                       {"populations": P.populations})
    times = trs[0].times
    snaps = [int(np.argmin(np.abs(times - t))) for t in cfg.analysis.qnd_times if t <= dyn.total_time]
    check = analysis.QNDCheck(p0, system.kappa_c2, "populations", cfg.analysis.qnd_min_samples, snaps)
    summary = analysis.ensemble_statistics(trs, qnd=check)
    # populations are reweighted between clicks, so the meaningful check is the
    # no-click update; the plain between-jump change is reported alongside
    update_defect = analysis.no_jump_update_defect(trs, "populations", values, system.kappa_c2)
    jump_defect = analysis.piecewise_constant_defect(trs, "populations")
    worst = max((r["l1"] for r in summary.qnd), default=float("nan"))
    out.table("qnd_strata", ["time", "photocount", "samples", "l1", "empirical", "predicted"],
              [[f"{r['time']:.12g}", r["photocount"], r["samples"], _f(r["l1"]),
                " ".join(_f(v) for v in r["empirical"]), " ".join(_f(v) for v in r["predicted"])]
               for r in summary.qnd], args.format)
    passed = bool(summary.qnd) and worst < 0.05 and update_defect < 1e-8
    out.json("summary.json", {"eigenvalues": values.tolist(), "strata": len(summary.qnd), "max_l1": worst,
                              "no_jump_update_defect": update_defect,
                              "between_jump_change": jump_defect, "passed": passed})
    if cfg.outputs.plots and summary.qnd:
        out.figure("qnd.png", plotting.qnd_strata, summary.qnd[:6])
    if not passed:
        raise ToleranceError(f"QND check failed: max L1 {worst:.3e}, no-click update defect {update_defect:.3e}")
    return EXIT_OK


COMMANDS = {
    "trajectories": cmd_trajectories,
    "master": cmd_master,
    "subspaces": cmd_subspaces,
    "table-s1": cmd_table_s1,
    "qnd-check": cmd_qnd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backaction", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration (defaults to the built-in scenario)")
        p.add_argument("--seed", type=int, help="ensemble seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for trajectories")
        p.add_argument("--format", choices=("csv", "json"), help="tabular output format")
        p.add_argument("--n-trajectories", type=int, help="ensemble size (overrides the config)")
        p.add_argument("--total-time", type=float, help="evolution time in units of 1/J")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
        if name == "master":
            p.add_argument("--compare-trajectories", type=int, metavar="N",
                           help="also average N trajectories and report the trace distance to rho(t)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load(args.config) if args.config else experiments.DEFAULT_CONFIGS[args.command]()
    if args.seed is not None:
        cfg.dynamics.seed = args.seed
    if args.out is not None:
        cfg.outputs.directory = args.out
    if args.n_trajectories is not None:
        cfg.dynamics.n_trajectories = args.n_trajectories
    if args.total_time is not None:
        cfg.dynamics.total_time = args.total_time
    if args.format is None:
        args.format = cfg.outputs.formats[0]
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg.validate()


def _fail(code: int, exc: BaseException, out_dir=None) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = None
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        out_dir = cfg.outputs.directory
        writer = ArtifactWriter(out_dir)
        writer.text("config.yaml", cfg.dumps())
        start = time.perf_counter()
        code = COMMANDS[args.command](cfg, writer, args)
        writer.manifest(args.command, cfg)
        print(json.dumps({"command": args.command, "out": str(writer.root), "files": len(writer.files) + 1,
                          "seconds": round(time.perf_counter() - start, 3)}))
        return code
    except (ConfigError, DimensionError) as exc:
        return _fail(EXIT_CONFIG, exc, out_dir)
    except (ToleranceError, CommutatorCheckFailed, DarkStateEdge, IncompleteProjectorSet) as exc:
        return _fail(EXIT_TOLERANCE, exc, out_dir)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_ERROR, exc, out_dir)


if __name__ == "__main__":
    raise SystemExit(main())
