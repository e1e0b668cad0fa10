import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from backaction import cli, experiments
from backaction import config as cfgmod
from backaction import fock


def test_roundtrip_default():
    c = cfgmod.RunConfig()
    assert cfgmod.loads(c.dumps()) == c


@given(
    st.integers(0, 4), st.integers(2, 8), st.floats(0, 5), st.sampled_from(["open", "periodic"]),
    st.floats(0, 1), st.integers(0, 2**63), st.sampled_from(["uniform-B1", "alternating-B2"]),
    st.one_of(st.floats(-2, 2), st.lists(st.floats(-2, 2), min_size=2, max_size=2)),
)
def test_roundtrip_property(n, m, U, boundary, kappa, seed, preset, C):
    c = cfgmod.RunConfig()
    c.lattice = cfgmod.LatticeConfig(n, m, 1.0, U, boundary)
    c.dynamics.kappa, c.dynamics.seed = kappa, seed
    c.geometry.preset, c.geometry.C = preset, C
    c.initial = [[0.5, "1,0"], [[0.1, -0.2], "0,1"]]
    c.validate()
    back = cfgmod.loads(c.dumps())
    assert back == c
    assert back.content_hash() == c.content_hash()


def test_content_hash_is_git_blob_hash():
    c = cfgmod.RunConfig()
    body = c.dumps().encode()
    assert c.content_hash() == hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


@pytest.mark.parametrize(
    "text",
    [
        "lattice: {n_sites: 0}",
        "lattice: {boundary: twisted}",
        "geometry: {preset: nope}",
        "geometry: {preset: custom, source: direct}",
        "dynamics: {kappa: -1}",
        "bogus: 1",
        "lattice: {wrong_key: 1}",
        "schema_version: 99",
        "lattice: [1, 2]",
        "::: not yaml",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.loads(text)


def test_initial_state_forms():
    b = fock.build_basis(2, 4)
    np.testing.assert_array_equal(experiments.initial_state("0,1,1,0", b), b.state_vector((0, 1, 1, 0)))
    sup = experiments.initial_state([[1.0, "2,0,0,0"], [[0, 1], "0,0,0,2"]], b)
    assert abs(sup[b.index_of[(2, 0, 0, 0)]] - 1 / np.sqrt(2)) < 1e-12
    assert abs(sup[b.index_of[(0, 0, 0, 2)]] - 1j / np.sqrt(2)) < 1e-12
    blk = experiments.initial_state({"preset": "center-block"}, b)
    assert abs(blk[b.index_of[(0, 1, 1, 0)]] - 1) < 1e-12
    with pytest.raises(cfgmod.ConfigError):
        experiments.initial_state("1,1,1,0", b)
    with pytest.raises(cfgmod.ConfigError):
        experiments.initial_state("1,1", b)
    with pytest.raises(cfgmod.ConfigError):
        experiments.initial_state({"preset": "missing"}, b)


def test_wannier_source_matches_direct_operator():
    c = experiments.fig2_config()
    c.lattice.n_atoms, c.lattice.n_sites = 2, 6
    c.initial = "0,0,1,1,0,0"
    c.geometry.source = "wannier"
    sys_w = experiments.build_system(c)
    from backaction import light

    J2 = light.fourier_overlap(light.WannierModel(c.geometry.sigma), "W1", np.pi)
    ref = light.b2_operator(sys_w.basis, J2)
    np.testing.assert_allclose(sys_w.B.toarray(), ref.toarray(), atol=1e-12)


def run_cli(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


def _manifest_ok(out: Path):
    man = json.loads((out / "manifest.json").read_text())
    listed = {f["path"] for f in man["files"]}
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert listed == on_disk
    for f in man["files"]:
        assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]
    return man


def _write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


SMALL = """
lattice: {n_atoms: 2, n_sites: 4}
initial: "0,1,1,0"
dynamics: {kappa: 0.1, total_time: 2.0, record_interval: 0.5, n_trajectories: 4, seed: 5, master_record_interval: 0.5}
"""


def test_trajectories_deterministic_and_manifest(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["trajectories", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["trajectories", "--config", cfg, "--out", str(b), "--threads", "3"]) == 0
    assert (a / "ensemble.csv").read_bytes() == (b / "ensemble.csv").read_bytes()
    assert (a / "events.jsonl").read_bytes() == (b / "events.jsonl").read_bytes()
    man = _manifest_ok(a)
    assert man["seed"] == 5
    assert man["config_hash"] == cfgmod.load(a / "config.yaml").content_hash()
    # re-running from the emitted config reproduces the ensemble table
    c = tmp_path / "c"
    assert cli.main(["trajectories", "--config", str(a / "config.yaml"), "--out", str(c)]) == 0
    assert (a / "ensemble.csv").read_bytes() == (c / "ensemble.csv").read_bytes()
    assert cli.main(["trajectories", "--config", cfg, "--out", str(c), "--seed", "6"]) == 0
    assert (a / "ensemble.csv").read_bytes() != (c / "ensemble.csv").read_bytes()


def test_zero_kappa_no_photons(tmp_path):
    cfg = _write(tmp_path, SMALL.replace("kappa: 0.1", "kappa: 0.0"))
    assert cli.main(["trajectories", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    for line in (tmp_path / "o" / "events.jsonl").read_text().splitlines():
        assert json.loads(line)["photocount"] == 0


def test_json_format(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["trajectories", "--config", cfg, "--out", str(tmp_path / "o"), "--format", "json"]) == 0
    rows = json.loads((tmp_path / "o" / "ensemble.json").read_text())
    assert set(rows[0]) == {"time", "observable", "mean", "std", "trajectory_count"}
    _manifest_ok(tmp_path / "o")


def test_master_command(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "m"
    assert cli.main(["master", "--config", cfg, "--out", str(out), "--compare-trajectories", "20"]) == 0
    header = (out / "master.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["time", "trace_drift", "hermiticity_defect", "max_offdiag", "max_offdiag_relative"]
    assert (out / "comparison.csv").exists() and (out / "block_decay.png").exists()
    _manifest_ok(out)


def test_master_block_diagonal_initial_state(tmp_path):
    # a Fock state of momentum modes lies in one emergent subspace: no coherences ever
    cfg = _write(tmp_path, SMALL.replace('initial: "0,1,1,0"', 'initial: "2,0,0,0"'))
    b = fock.build_basis(2, 4)
    assert cli.main(["master", "--config", cfg, "--out", str(tmp_path / "m")]) == 0
    summ = json.loads((tmp_path / "m" / "summary.json").read_text())
    assert summ["initial_max_offdiag"] >= 0
    del b


def test_subspaces_and_table(tmp_path):
    cfg = _write(tmp_path, "lattice: {n_atoms: 2, n_sites: 8}\ninitial: '0,0,0,1,1,0,0,0'\n")
    assert cli.main(["subspaces", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    d = json.loads((tmp_path / "s" / "subspaces.json").read_text())
    assert len(d["emergent"]["projectors"]) == 4
    assert d["graph_vs_parity_max_difference"] < 1e-10
    assert d["table_s1"]["max_deviation"] < 1e-9
    assert len(d["conserved"]["projectors"]) == 10
    assert cli.main(["table-s1", "--out", str(tmp_path / "t")]) == 0
    assert json.loads((tmp_path / "t" / "summary.json").read_text())["matches_reference"]


def test_empty_lattice_subspaces(tmp_path):
    cfg = _write(tmp_path, "lattice: {n_atoms: 0, n_sites: 8}\ninitial: '0,0,0,0,0,0,0,0'\n")
    assert cli.main(["subspaces", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    d = json.loads((tmp_path / "s" / "subspaces.json").read_text())
    assert len(d["emergent"]["projectors"]) == 1


def test_qnd_check_small(tmp_path):
    cfg = experiments.qnd_config(n_trajectories=200, total_time=5.0)
    cfg.analysis.qnd_min_samples = 20
    cfg.analysis.qnd_times = [2.5, 5.0]
    p = _write(tmp_path, cfg.dumps())
    assert cli.main(["qnd-check", "--config", p, "--out", str(tmp_path / "q")]) == 0
    s = json.loads((tmp_path / "q" / "summary.json").read_text())
    assert s["strata"] > 0 and s["max_l1"] < 0.05


def test_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "lattice: {boundary: twisted}")
    assert cli.main(["trajectories", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and err["error"] == "ConfigError"
    assert cli.main(["trajectories", "--config", str(tmp_path / "missing.yaml")]) == 2
    big = _write(tmp_path, "lattice: {n_atoms: 12, n_sites: 12}\ninitial: '1,1,1,1,1,1,1,1,1,1,1,1'\n")
    assert cli.main(["subspaces", "--config", big, "--out", str(tmp_path / "y")]) == 2
    # qnd-check with a non-commuting measurement is a configuration error
    nc = _write(tmp_path, "lattice: {n_atoms: 2, n_sites: 6}\ninitial: '0,1,1,0,0,0'\n")
    assert cli.main(["qnd-check", "--config", nc, "--out", str(tmp_path / "z")]) == 2


def test_tolerance_exit_code(tmp_path, monkeypatch):
    from backaction import dynamics

    def boom(*a, **k):
        raise dynamics.ToleranceError("trace drift")

    monkeypatch.setattr(cli, "run_master", boom)
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["master", "--config", cfg, "--out", str(tmp_path / "m")]) == 3
    assert json.loads((tmp_path / "m" / "error.json").read_text())["exit_code"] == 3


def test_dump_config(capsys):
    assert cli.main(["qnd-check", "--dump-config"]) == 0
    data = yaml.safe_load(capsys.readouterr().out)
    assert data["geometry"]["preset"] == "uniform-B1"
