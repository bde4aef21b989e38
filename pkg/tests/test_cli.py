import os

import numpy as np
import orjson
import pytest

from msrd.main import build_parser, main, parse_schedule, resolve_config
from msrd.routers import checks as checks_router
from msrd.schemas.run import CheckResult, RunConfig
from msrd.services.artifacts import read_csv
from msrd.services.grid import snapshot_from_bytes
from msrd.services.ssa import JumpLog

LIMIT_ARGS = ["--n-sites", "4", "--t-end", "0.1", "--sample-points", "11", "--seed", "1"]


def _read_json(path):
    with open(path, "rb") as f:
        return orjson.loads(f.read())


def _provenance(path):
    with open(path) as f:
        first = f.readline()
    assert first.startswith("# ")
    return orjson.loads(first[2:])


def _emitted(capsys):
    lines = [line for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
    return orjson.loads(lines[-1])


def test_no_command_is_a_usage_error(capsys):
    assert main([]) == 2


def test_validate_bundled_network(out_dir, capsys):
    assert main(["validate", "--out", out_dir]) == 0
    document = _read_json(os.path.join(out_dir, "validation.json"))
    assert document["tool"] == "msrd"
    assert document["valid"] is True
    assert document["network"]["name"] == "reference"
    assert document["violations"] == []
    assert "c1_status" in document["assumptions"]
    assert _emitted(capsys)["reactions"] == 6


def test_invalid_network_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_bytes(orjson.dumps({"reactions": [{
        "class": "FastMixed", "gamma_c": 1, "gamma_d": 1,
        "rate": {"terms": [{"coefficient": 1.0, "e_d": 1}]},
    }]}))
    assert main(["validate", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "FastMixed must have gamma_d = 0" in capsys.readouterr().err


def test_syntax_error_exits_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "run": {\n    "n_sites": ,\n  }\n}\n')
    assert main(["validate", "--config", str(path)]) == 2
    assert f"{path}:3:" in capsys.readouterr().err


def test_out_of_range_flag_exits_2(out_dir, capsys):
    assert main(["solve-limit", "--n-sites", "0", "--out", out_dir]) == 2


def test_bad_schedule_flag():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["lln-sweep", "--schedule", "8-32"])


def test_parse_schedule():
    pairs = parse_schedule("8:32,16:64")
    assert [(p.n_sites, p.mu) for p in pairs] == [(8, 32.0), (16, 64.0)]


def test_override_order():
    args = build_parser().parse_args(["validate"])
    config = RunConfig(seed=3)
    assert resolve_config(config, args, environ={}).seed == 3
    assert resolve_config(config, args, environ={"MSRD_SEED": "5"}).seed == 5
    args = build_parser().parse_args(["validate", "--seed", "7", "--mu", "16", "--track-martingales"])
    resolved = resolve_config(config, args, environ={"MSRD_SEED": "5"})
    assert (resolved.seed, resolved.mu, resolved.track_martingales) == (7, 16.0, True)


def test_spectral_check_passes(out_dir, capsys):
    assert main(["spectral-check", "--n", "4", "8", "--out", out_dir]) == 0
    table = read_csv(os.path.join(out_dir, "spectral-check.csv"))
    assert table["passed"].all()
    assert "expm_deviation" in set(table["name"])
    assert _emitted(capsys)["failed"] == []


def test_solve_limit_is_byte_identical(out_dir):
    names = ("limit.csv", "limit.json")
    assert main(["solve-limit", "--out", out_dir] + LIMIT_ARGS) == 0
    first = {}
    for name in names:
        with open(os.path.join(out_dir, name), "rb") as f:
            first[name] = f.read()
    assert main(["solve-limit", "--out", out_dir] + LIMIT_ARGS) == 0
    for name in names:
        with open(os.path.join(out_dir, name), "rb") as f:
            assert f.read() == first[name], name


def test_limit_csv_provenance(out_dir):
    assert main(["solve-limit", "--out", out_dir, "--rho-c", "5", "--rho-d", "5", "--m1", "1"] + LIMIT_ARGS) == 0
    path = os.path.join(out_dir, "limit.csv")
    provenance = _provenance(path)
    assert provenance["config"]["n_sites"] == 4
    assert provenance["config"]["seed"] == 1
    table = read_csv(path)
    assert list(table.columns) == ["time", "site", "v_c", "v_d"]
    assert len(table) == 11 * 4
    assert table["site"].min() == 1
    metadata = _read_json(os.path.join(out_dir, "limit.json"))
    assert metadata["converged"] is True
    assert "c_cap_ok_rho_c" in metadata["bounds"]


def test_json_only_format(out_dir):
    assert main(["solve-limit", "--out", out_dir, "--format", "json"] + LIMIT_ARGS) == 0
    assert os.path.exists(os.path.join(out_dir, "limit.json"))
    assert not os.path.exists(os.path.join(out_dir, "limit.csv"))


def test_simulate_artifacts(out_dir, capsys):
    args = ["simulate", "--out", out_dir, "--n-sites", "2", "--mu", "8", "--t-end", "0.05",
            "--sample-points", "5", "--seed", "11", "--record-events", "--track-martingales"]
    assert main(args) == 0
    table = read_csv(os.path.join(out_dir, "trajectory.csv"))
    assert len(table) == 5 * 2
    summary = _read_json(os.path.join(out_dir, "trajectory.json"))
    assert summary["seed"] == 11
    assert summary["jump_bounds"]["passed"] is True
    assert "Mg1" in summary["martingales"]
    with open(os.path.join(out_dir, "final_c.bin"), "rb") as f:
        final_c = snapshot_from_bytes(f.read())
    assert final_c.n_sites == 2
    assert np.allclose(final_c.values, table[table["time"] == table["time"].max()]["u_c"].values)
    records = JumpLog.read_binary(os.path.join(out_dir, "events.bin"), 2)
    assert records.size == sum(summary["events"].values())
    assert _emitted(capsys)["success"] is True


def test_simulate_event_cap(out_dir, capsys):
    assert main(["simulate", "--out", out_dir, "--n-sites", "4", "--mu", "16", "--max-events", "0"]) == 1
    assert os.path.exists(os.path.join(out_dir, "trajectory_partial.csv"))
    payload = _emitted(capsys)
    assert payload["success"] is False
    assert "event cap" in payload["error"]


def test_lln_sweep_artifacts(out_dir, capsys):
    args = ["lln-sweep", "--out", out_dir, "--schedule", "2:8,4:32", "--replicas", "2", "--t-end", "0.1",
            "--n-ref", "8", "--epsilon0", "0.5", "--seed", "3", "--plot-data"]
    assert main(args) == 0
    report = _read_json(os.path.join(out_dir, "lln-sweep.json"))
    assert [(p["n_sites"], p["mu"]) for p in report["pairs"]] == [(2, 8.0), (4, 32.0)]
    table = read_csv(os.path.join(out_dir, "lln-replicas.csv"))
    assert len(table) == 4
    assert set(table["n_sites"]) == {2, 4}
    plot = read_csv(os.path.join(out_dir, "lln-plot.csv"))
    assert {"median_error", "exceed_0.1"} <= set(plot["metric"])
    assert _emitted(capsys)["success"] is True


def test_martingale_check_passes(out_dir, capsys):
    args = ["martingale-check", "--out", out_dir, "--n-sites", "2", "--mu", "8", "--t-end", "0.05",
            "--martingale-replicas", "20", "--seed", "5", "--threshold", "1e9"]
    assert main(args) == 0
    table = read_csv(os.path.join(out_dir, "martingale-statistics.csv"))
    assert {"Z_C", "Mg1"} <= set(table["identity"])
    assert (table["samples"] + table["failures"] == 20).all()
    document = _read_json(os.path.join(out_dir, "martingale-check.json"))
    assert document["failures"] == int(table["failures"].iloc[0])
    assert _emitted(capsys)["failed"] == []


def test_martingale_check_without_replicas_exits_3(out_dir):
    args = ["martingale-check", "--out", out_dir, "--n-sites", "4", "--mu", "16",
            "--martingale-replicas", "3", "--max-events", "0", "--t-end", "1"]
    assert main(args) == 3
    document = _read_json(os.path.join(out_dir, "martingale-check.json"))
    assert document["failures"] == 3
    assert [c["name"] for c in document["checks"]] == ["martingale_replicas"]


@pytest.mark.parametrize("passed, code", [(True, 0), (False, 3)])
def test_convergence_check_exit_code(out_dir, monkeypatch, passed, code):
    monkeypatch.setattr(
        checks_router, "convergence_checks",
        lambda spec, n_ref, t_end: [CheckResult(name="semigroup_convergence", passed=passed, value=2.0)],
    )
    args = ["convergence-check", "--out", out_dir, "--n-sites", "4", "--mu", "16", "--plot-data"]
    assert main(args) == code
    table = read_csv(os.path.join(out_dir, "convergence-check.csv"))
    assert table["passed"].tolist() == [passed]
    bundle = read_csv(os.path.join(out_dir, "debit-bundle.csv"))
    assert list(bundle.columns) == ["site", "field", "value"]
    assert sorted(set(bundle["site"])) == [1, 2, 3, 4]
    assert "sq_delta" in set(bundle["field"])


@pytest.mark.slow
def test_convergence_check_full(out_dir):
    assert main(["convergence-check", "--out", out_dir]) == 0
    table = read_csv(os.path.join(out_dir, "convergence-check.csv"))
    assert table["passed"].all()
