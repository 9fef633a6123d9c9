# tests/test_cli.py

import json

import pytest

from app.cli import main
from app.core.config import settings
from app.core.errors import EXIT_LOAD, EXIT_OK, EXIT_PARTIAL, EXIT_SHAPE, EXIT_USAGE
from app.services.fabric import dump_topology, load_topology
from app.services.flowgen import dump_workload, load_workload
from app.services.tracer import load_run_result


@pytest.fixture
def files(tmp_path, topology, bipartite):
    """Reference topology and the 16-flows-per-pair workload written to disk."""
    return {
        "topology": str(dump_topology(topology, tmp_path / "topology.json")),
        "workload": str(dump_workload(bipartite, tmp_path / "workload.json")),
    }


def _trace_args(files, out, *extra):
    return ["trace", "--topology", files["topology"], "--workload", files["workload"], "--out", str(out), *extra]


def _static_tables(files, out):
    assert main(["gen", "static-tables", "--balanced", "--topology", files["topology"],
                 "--workload", files["workload"], "--out", str(out)]) == EXIT_OK
    return str(out / "static_tables.json")


def _run_without_timing(path):
    data = json.loads(path.read_text())
    data.pop("timing")
    return data


# --- gen ---

def test_gen_reference_topology(tmp_path):
    assert main(["gen", "topology", "--reference", "--out", str(tmp_path)]) == EXIT_OK
    topology = load_topology(tmp_path / "topology.json")
    assert len(topology.devices) == 24


def test_gen_unidirectional_workload(tmp_path, topology):
    assert main(["gen", "workload", "--bipartite", "--flows-per-pair", "1", "--unidirectional",
                 "--out", str(tmp_path)]) == EXIT_OK
    workload = load_workload(tmp_path / "workload.json", topology)
    assert len(workload.pairs) == 8
    assert workload.total_flows() == 8


def test_gen_workload_needs_a_pattern(tmp_path):
    assert main(["gen", "workload", "--out", str(tmp_path)]) == EXIT_USAGE


def test_gen_static_tables(tmp_path, files):
    path = _static_tables(files, tmp_path)
    assert json.loads(open(path).read())


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE


# --- trace ---

def test_trace_in_process(tmp_path, files, capsys):
    assert main(_trace_args(files, tmp_path, "--in-process", "--threads", "4")) == EXIT_OK
    result = load_run_result(tmp_path / "run_result.json")
    assert len(result.paths) == 256
    assert result.query_count == 784
    assert "trace: 256 paths, 0 errors" in capsys.readouterr().out


def test_trace_in_process_with_static_tables(tmp_path, files):
    tables = _static_tables(files, tmp_path)
    args = _trace_args(files, tmp_path, "--in-process", "--policy", "static", "--static-tables", tables)
    assert main(args) == EXIT_OK


def test_static_policy_needs_tables(tmp_path, files):
    assert main(_trace_args(files, tmp_path, "--in-process", "--policy", "static")) == EXIT_USAGE


def test_trace_needs_a_registry(tmp_path, files, monkeypatch):
    monkeypatch.setattr(settings, "REGISTRY", None)
    assert main(_trace_args(files, tmp_path)) == EXIT_LOAD


def test_trace_rejects_zero_threads(tmp_path, files):
    assert main(_trace_args(files, tmp_path, "--in-process", "--threads", "0")) == EXIT_USAGE


def test_trace_missing_workload_file(tmp_path, files):
    files = dict(files, workload=str(tmp_path / "missing.json"))
    assert main(_trace_args(files, tmp_path, "--in-process")) == EXIT_LOAD


def test_trace_from_config_file(tmp_path, files):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "topology": files["topology"], "workload": files["workload"],
        "plan": {"procs": 2, "threads": 2, "mode": "persistent"},
        "in_process": True, "out": str(tmp_path / "from-config"),
    }))
    assert main(["trace", "--config", str(config)]) == EXIT_OK
    result = load_run_result(tmp_path / "from-config" / "run_result.json")
    assert result.plan.procs == 2
    assert result.plan.connection_mode.value == "persistent"


def test_trace_against_running_agents(tmp_path, files, fleet_thread):
    from app.services.agents import dump_registry

    registry = str(dump_registry(fleet_thread.registry, tmp_path / "registry.json"))
    assert main(_trace_args(files, tmp_path / "ok", "--registry", registry)) == EXIT_OK

    fleet_thread.stop_agent("spine-0")
    assert main(_trace_args(files, tmp_path / "partial", "--registry", registry)) == EXIT_PARTIAL
    partial = load_run_result(tmp_path / "partial" / "run_result.json")
    assert len(partial.paths) + len(partial.errors) == 256


def test_trace_is_deterministic(tmp_path, files):
    for name in ("first", "second"):
        assert main(_trace_args(files, tmp_path / name, "--in-process", "--procs", "4", "--threads", "2")) == EXIT_OK
    assert _run_without_timing(tmp_path / "first" / "run_result.json") == \
        _run_without_timing(tmp_path / "second" / "run_result.json")


# --- analyze / compare ---

def test_analyze_balanced_static_run(tmp_path, files, capsys):
    tables = _static_tables(files, tmp_path)
    main(_trace_args(files, tmp_path / "static", "--in-process", "--policy", "static", "--static-tables", tables))
    run_result = str(tmp_path / "static" / "run_result.json")

    assert main(["analyze", run_result, "--topology", files["topology"], "--out", str(tmp_path / "an")]) == EXIT_OK
    analysis = json.loads((tmp_path / "an" / "analysis.json").read_text())
    assert analysis["imbalance"]["aggregate_fim"] == pytest.approx(0.0)
    assert (tmp_path / "an" / "links.csv").exists()
    assert (tmp_path / "an" / "throughput.csv").exists()
    assert "aggregate FIM 0.00%" in capsys.readouterr().out


def test_compare_picks_the_balanced_run(tmp_path, files):
    tables = _static_tables(files, tmp_path)
    main(_trace_args(files, tmp_path / "ecmp", "--in-process"))
    main(_trace_args(files, tmp_path / "static", "--in-process", "--policy", "static", "--static-tables", tables))

    assert main(["compare", str(tmp_path / "ecmp" / "run_result.json"), str(tmp_path / "static" / "run_result.json"),
                 "--labels", "ecmp", "static", "--out", str(tmp_path / "cmp")]) == EXIT_OK
    comparison = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    assert comparison["winners"]["aggregate_fim"] == "b"
    assert (tmp_path / "cmp" / "comparison.csv").read_text().startswith("metric,ecmp,static,winner")


def test_compare_rejects_different_workloads(tmp_path, files, topology):
    from app.services.flowgen import make_bipartite_workload

    main(_trace_args(files, tmp_path / "big", "--in-process"))
    small = dict(files, workload=str(dump_workload(make_bipartite_workload(topology, 2, seed=0),
                                                   tmp_path / "small.json")))
    main(_trace_args(small, tmp_path / "small", "--in-process"))

    args = ["compare", str(tmp_path / "big" / "run_result.json"), str(tmp_path / "small" / "run_result.json"),
            "--out", str(tmp_path / "cmp")]
    assert main(args) == EXIT_SHAPE


# --- bench ---

def test_small_bench(tmp_path):
    args = ["bench", "--flows", "2", "--threads", "2", "--modes", "baseline,persistent,parallel-persistent",
            "--repetitions", "1", "--connect-latency-ms", "0", "--query-latency-ms", "0", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert len(lines) == 4


def test_bench_is_ecmp_only(tmp_path):
    assert main(["bench", "--policy", "static", "--out", str(tmp_path)]) == EXIT_USAGE


def test_bench_rejects_bad_thread_list():
    with pytest.raises(SystemExit) as info:
        main(["bench", "--threads", "0"])
    assert info.value.code == EXIT_USAGE


# --- seeds and workload validation ---

def _source_ports(path):
    return [p.flow.tuple.src_port for p in load_run_result(path).paths]


def test_run_seed_reaches_a_workload_without_one(tmp_path, files):
    seedless = tmp_path / "seedless.json"
    seedless.write_text(json.dumps({"pairs": [{"src": "host-00", "dst": "host-08", "flows": 4}]}))
    files = dict(files, workload=str(seedless))
    for seed in ("1", "2"):
        assert main(_trace_args(files, tmp_path / seed, "--in-process", "--seed", seed)) == EXIT_OK
    assert _source_ports(tmp_path / "1" / "run_result.json") != _source_ports(tmp_path / "2" / "run_result.json")


def test_seed_flag_overrides_the_workload_seed(tmp_path, files):
    assert main(_trace_args(files, tmp_path / "file", "--in-process")) == EXIT_OK
    assert main(_trace_args(files, tmp_path / "flag", "--in-process", "--seed", "12")) == EXIT_OK
    assert _source_ports(tmp_path / "file" / "run_result.json") != _source_ports(tmp_path / "flag" / "run_result.json")


def test_self_pair_workload_is_a_load_error(tmp_path, files):
    looped = tmp_path / "looped.json"
    looped.write_text(json.dumps({"pairs": [{"src": "host-00", "dst": "host-00", "flows": 1}]}))
    assert main(_trace_args(dict(files, workload=str(looped)), tmp_path, "--in-process")) == EXIT_LOAD
