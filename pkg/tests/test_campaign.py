from __future__ import annotations

import filecmp
from pathlib import Path

import pytest

import fanetsim.campaign as campaign
from fanetsim.campaign import (
    ParseError,
    ScenarioConfig,
    ValidationError,
    aggregate,
    by_phase,
    config_from_dict,
    emit_plotdata,
    load_config,
    run_campaign,
    run_single,
    traffic_pairs,
    traffic_times,
    write_results,
)
from fanetsim.cli import main

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def one_run():
    return run_campaign(config_from_dict({"runs": 1}))


# --- config -----------------------------------------------------------------


def test_empty_yaml_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg == ScenarioConfig()
    assert cfg.node_count == 36 and cfg.protocol == "cprtd" and cfg.runs == 100
    assert cfg.traffic.n_packets == 990 and cfg.cprtd.expiry == 30.0


def test_nested_override(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("protocol: aodv\ncprtd:\n  expiry: 5\ntraffic:\n  packet_size: 512\n")
    cfg = load_config(path)
    assert cfg.protocol == "aodv"
    assert cfg.cprtd.expiry == 5
    assert cfg.traffic.packet_size == 512
    assert cfg.traffic.n_packets == 990


@pytest.mark.parametrize(
    "data",
    [
        {"node_count": 37},
        {"node_count": 0},
        {"protocol": "olsr"},
        {"condition": "everything"},
        {"runs": 0},
        {"bogus": 1},
        {"cprtd": {"bogus": 1}},
        {"cprtd": {"expiry": 0}},
        {"traffic": {"n_packets": 2000}},
        {"phases": [[0, 1], [2, 1]]},
    ],
)
def test_invalid_configs_rejected(data):
    with pytest.raises(ValidationError):
        config_from_dict(data)


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("protocol: [unclosed\n")
    with pytest.raises(ParseError):
        load_config(bad)
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n")
    with pytest.raises(ParseError):
        load_config(scalar)
    with pytest.raises(ParseError):
        load_config(tmp_path / "missing.yaml")


def test_valid_node_counts():
    for n in (4, 16, 36, 64, 100, 196):
        assert config_from_dict({"node_count": n}).node_count == n


def test_failure_condition_index():
    assert ScenarioConfig().failure_condition == 1
    assert ScenarioConfig(condition="central_per_group").failure_condition == 2


# --- traffic ----------------------------------------------------------------


def test_traffic_schedule():
    times = traffic_times(ScenarioConfig().traffic)
    assert len(times) == 990
    assert times[0] == 1.0 and times[-1] == 99.9
    assert all(b - a == pytest.approx(0.1) for a, b in zip(times, times[1:]))


def test_common_random_numbers_shared_across_protocols():
    alive = list(range(36))
    a = traffic_pairs(ScenarioConfig(protocol="cprtd"), 7, alive)
    b = traffic_pairs(ScenarioConfig(protocol="dsdv"), 7, alive)
    assert a == b
    assert all(s != d for s, d in a)
    assert traffic_pairs(ScenarioConfig(), 8, alive) != a


def test_independent_streams_when_crn_off():
    cfg = config_from_dict({"traffic": {"common_random_numbers": False}})
    alive = list(range(36))
    assert traffic_pairs(cfg, 7, alive) != traffic_pairs(cfg.replace(protocol="aodv"), 7, alive)


def test_failed_nodes_never_endpoints():
    cfg = ScenarioConfig(condition="central_per_group", runs=1)
    res = run_single(cfg, 0, keep_ledger=True)
    used = {p.source for p in res.ledger.packets} | {p.destination for p in res.ledger.packets}
    assert used.isdisjoint({0, 9, 18, 27})


# --- runs and outputs ---------------------------------------------------------


def test_single_run_conserves_packets(one_run):
    [r] = one_run
    m = r.metrics
    assert r.ok and r.seed == 1
    assert m["generated"] == 990
    assert m["delivered"] + m["proactive_drop"] + m["expired"] + m["lost"] == 990
    assert sum(p["generated"] for p in r.phases) == 990
    assert sum(p["delivered"] for p in r.phases) == m["delivered"]


def test_golden_outputs(one_run, tmp_path):
    write_results(one_run, tmp_path)
    for name in ("runs.csv", "aggregate.csv", "by_phase.csv"):
        assert (tmp_path / name).read_text() == (GOLDEN / name).read_text(), name


def test_repeat_is_byte_identical(one_run, tmp_path):
    write_results(one_run, tmp_path / "a")
    write_results(run_campaign(config_from_dict({"runs": 1})), tmp_path / "b")
    for name in ("runs.csv", "aggregate.csv", "by_phase.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_worker_count_does_not_change_results(tmp_path):
    cfg = config_from_dict({"runs": 3, "protocol": "dsdv", "node_count": 16})
    write_results(run_campaign(cfg, workers=1), tmp_path / "w1")
    write_results(run_campaign(cfg, workers=2), tmp_path / "w2")
    for name in ("runs.csv", "aggregate.csv", "by_phase.csv"):
        assert filecmp.cmp(tmp_path / "w1" / name, tmp_path / "w2" / name, shallow=False)


def test_emit_plotdata_layouts(one_run, tmp_path):
    paths = emit_plotdata(one_run, "by_phase", tmp_path)
    assert [p.name for p in paths] == ["by_phase_pdr.csv", "by_phase_latency.csv", "by_phase_jitter.csv"]
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "protocol,node_count,condition,phase,pdr_mean,pdr_sd"
    assert len(lines) == 1 + 5
    for layout in ("by_size", "by_condition"):
        paths = emit_plotdata(one_run, layout, tmp_path)
        assert len(paths) == 4
        assert len(paths[0].read_text().splitlines()) == 2


def test_emit_plotdata_errors(one_run, tmp_path):
    with pytest.raises(ValueError):
        emit_plotdata([], "by_size", tmp_path)
    with pytest.raises(ValueError):
        emit_plotdata(one_run, "sideways", tmp_path)


def test_aggregate_groups_and_sd(one_run):
    rows = aggregate(one_run + one_run)
    assert len(rows) == 1
    assert rows[0]["runs"] == 2 and rows[0]["pdr_sd"] == 0.0
    assert len(by_phase(one_run)) == 5


def _boom_on_run_1(real):
    def fake(cfg, run, keep=False):
        if run == 1:
            raise RuntimeError("engine blew up")
        return real(cfg, run, keep)

    return fake


def test_engine_error_recorded_per_run(monkeypatch, tmp_path):
    monkeypatch.setattr(campaign, "run_single", _boom_on_run_1(campaign.run_single))
    cfg = config_from_dict({"runs": 3, "protocol": "dsdv", "node_count": 4})
    results = run_campaign(cfg)
    assert [r.ok for r in results] == [True, False, True]
    assert results[1].error == "RuntimeError: engine blew up"
    assert aggregate(results)[0]["runs"] == 2
    write_results(results, tmp_path)
    rows = (tmp_path / "runs.csv").read_text().splitlines()
    assert rows[0].endswith(",error")
    assert rows[2].endswith("RuntimeError: engine blew up") and ",nan," in rows[2]


# --- command line -------------------------------------------------------------


def test_cli_success(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["--protocol", "dsdv", "--nodes", "4", "--runs", "2", "--out", str(out), "--trace"])
    assert code == 0
    for name in ("runs.csv", "aggregate.csv", "by_phase.csv", "trajectories.csv", "plotdata/by_phase_pdr.csv"):
        assert (out / name).exists(), name
    assert len((out / "runs.csv").read_text().splitlines()) == 3
    assert list(out.glob("trace_*.csv"))
    assert "2 run(s) of dsdv" in capsys.readouterr().out


def test_cli_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("protocol: aodv\nnode_count: 4\nruns: 5\n")
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--runs", "1", "--out", str(out), "--no-trajectories"]) == 0
    assert (out / "runs.csv").read_text().splitlines()[1].startswith("aodv,4,1,0,1,")
    assert not (out / "trajectories.csv").exists()


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert main(["--nodes", "37", "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("runs: [\n")
    assert main(["--config", str(bad)]) == 2
    assert main(["--runs", "0"]) == 2


def test_cli_engine_error_exit_1(monkeypatch, tmp_path, capsys):
    monkeypatch.setattr(campaign, "run_single", _boom_on_run_1(campaign.run_single))
    out = tmp_path / "out"
    code = main(["--protocol", "dsdv", "--nodes", "4", "--runs", "2", "--out", str(out), "--no-trajectories"])
    assert code == 1
    assert "engine blew up" in capsys.readouterr().err
    assert (out / "runs.csv").exists()


def test_earth_section_reaches_scenario():
    cfg = config_from_dict({"earth": {"standard_radii": True}, "runs": 1})
    assert cfg.earth.standard_radii
    assert campaign.world_for(cfg).spec.earth.standard_radii
    with pytest.raises(ValidationError):
        config_from_dict({"earth": {"e": 2.0}})


def test_example_config_matches_defaults():
    cfg = load_config(Path(__file__).parents[1] / "configs" / "example.yaml")
    assert cfg.replace(runs=100) == ScenarioConfig()


def test_numeric_strings_coerced_and_junk_rejected():
    assert config_from_dict({"radio": {"frequency": "2.4e9"}}).radio.frequency == 2.4e9
    assert config_from_dict({"cprtd": {"expiry": 5}}).cprtd.expiry == 5.0
    with pytest.raises(ValidationError):
        config_from_dict({"radio": {"frequency": "fast"}})
