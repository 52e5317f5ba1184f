import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwedges.cli import (
    BadValue,
    CliConfig,
    MissingSubcommand,
    UnknownFlag,
    main,
    parse_args,
    parse_offspring,
    render_config,
)


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


BD_TOML = """
[model.birth_death]
lambda = 1.0
mu = 0.5

[experiment]
horizon_t = 9.0
offsets_x = [-0.5, 0.0, 0.5]
ks = [1, 2]
replicates = 800
master_seed = 3
"""


@pytest.fixture
def bd_config(tmp_path):
    path = tmp_path / "bd.toml"
    path.write_text(BD_TOML)
    return path


def test_parse_experiment_with_seed_override(bd_config):
    cfg = parse_args(["experiment", "--config", str(bd_config), "--seed", "42"])
    assert cfg.subcommand == "experiment"
    assert cfg.get("experiment", "master_seed") == 42
    assert cfg.get("experiment", "replicates") == 800


def test_parse_limits_request():
    cfg = parse_args(["limits", "--lambda", "1", "--mu", "0.5", "--class", "pendant", "--x", "0"])
    assert cfg.settings["model"] == {"birth_death": {"lambda": 1.0, "mu": 0.5}}
    assert cfg.get("experiment", "classes") == ["pendant"]
    assert cfg.get("experiment", "offsets_x") == [0.0]


def test_usage_errors(tmp_path):
    with pytest.raises(MissingSubcommand):
        parse_args([])
    with pytest.raises(UnknownFlag):
        parse_args(["simulate", "--nope", "1"])
    with pytest.raises(BadValue):
        parse_args(["simulate", "--t", "abc"])
    with pytest.raises(BadValue):
        parse_args(["simulate", "--offspring", "2-1"])
    bad = tmp_path / "bad.toml"
    bad.write_text("[experiment]\nhorizon = 3.0\n")
    with pytest.raises(UnknownFlag):
        parse_args(["simulate", "--config", str(bad)])
    bad.write_text("[experiment]\nreplicates = 'many'\n")
    with pytest.raises(BadValue):
        parse_args(["simulate", "--config", str(bad)])


def test_exit_codes():
    assert run_cli()[0] == 1
    assert run_cli("simulate", "--beta", "-1", "--offspring", "2:1", "--t", "1")[0] == 1
    assert run_cli("simulate", "--offspring", "2:1", "--t", "25", "--particle-cap", "1000")[0] == 3
    code, _, err = run_cli("simulate", "--lambda", "1", "--mu", "0.5", "--beta", "2", "--t", "1")
    assert code == 1 and "implied" in err
    code, _, err = run_cli("simulate", "--t", "1")
    assert code == 1 and "offspring" in err


def test_offspring_flag_syntax():
    assert parse_offspring("0:0.25,2:0.75") == {"0": 0.25, "2": 0.75}
    cfg = parse_args(["simulate", "--offspring", "2:1.0", "--beta", "2"])
    assert cfg.settings["model"] == {"table": {"2": 1.0}, "beta": 2.0}


def test_simulate_dump_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        code, out, _ = run_cli("simulate", "--seed", "7", "--t", "5", "--beta", "1",
                               "--offspring", "2:1.0", "--dump", str(path))
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "id,parent_id,birth_time,end_time,censored,offspring_count"
    summary = json.loads(out)
    assert summary["n_edges"] == len(lines) - 1


def test_census_and_limits_csv():
    code, out, _ = run_cli("census", "--lambda", "1", "--mu", "0.5", "--t", "6", "--seed", "1",
                           "--thresholds", "0,1,2", "--format", "csv")
    assert code == 0
    rows = out.splitlines()
    assert rows[0] == "threshold,pendant_count,interior_count,all_count"
    assert len(rows) == 4
    code, out, _ = run_cli("limits", "--lambda", "1", "--mu", "0.5", "--class", "pendant",
                           "--x", "0", "--k", "1", "--format", "csv")
    assert code == 0
    header, row = out.splitlines()
    assert header == "edge_class,x,k,pmf,cdf_kth"
    assert float(row.split(",")[3]) == pytest.approx(2 / 9, rel=1e-15)


def test_limits_mixture_needs_horizon():
    assert run_cli("limits", "--offspring", "0:0.2,2:0.8")[0] == 1
    code, out, _ = run_cli("limits", "--offspring", "0:0.2,2:0.8", "--m-infty-horizon", "12",
                           "--m-infty-samples", "500", "--format", "json")
    assert code == 0 and json.loads(out)["law"] == "empirical_mixture"


def test_experiment_json_thread_independent(bd_config, tmp_path):
    outs = []
    for threads in ("1", "4"):
        path = tmp_path / f"r{threads}.json"
        code, _, _ = run_cli("experiment", "--config", str(bd_config), "--threads", threads,
                             "--output", str(path))
        assert code in (0, 2)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_threshold_violation_exit_code(bd_config):
    code, out, _ = run_cli("experiment", "--config", str(bd_config), "--tv-threshold", "1e-9")
    assert code == 2 and json.loads(out)["passed"] is False


def test_convergence_subcommand():
    code, out, _ = run_cli("convergence", "--offspring", "2:1", "--replicates", "200",
                           "--time-grid", "2,4,6", "--format", "csv", "--law", "empirical_mixture")
    assert code in (0, 2)
    assert out.splitlines()[0].startswith("edge_class,t,q50")


def test_print_config_round_trip(bd_config, tmp_path):
    cfg = parse_args(["experiment", "--config", str(bd_config), "--threads", "2", "--x", "1,2"])
    echoed = tmp_path / "echo.toml"
    code, out, _ = run_cli("experiment", "--config", str(bd_config), "--threads", "2",
                           "--x", "1,2", "--print-config")
    assert code == 0
    echoed.write_text(out)
    again = parse_args(["experiment", "--config", str(echoed)])
    assert again.settings == cfg.settings


values = st.fixed_dictionaries(
    {},
    optional={
        "seed": st.integers(0, 2**63 - 1),
        "replicates": st.integers(1, 10**6),
        "t": st.floats(0.0, 50.0),
        "threads": st.integers(1, 16),
        "x": st.lists(st.floats(-5, 5), min_size=1, max_size=4),
        "format": st.sampled_from(["csv", "json"]),
    },
)


@settings(max_examples=100, deadline=None)
@given(values, st.sampled_from(["simulate", "census", "limits", "experiment", "convergence"]),
       st.floats(0.1, 5.0), st.floats(0.0, 0.99))
def test_round_trip_property(tmp_path_factory, flags, sub, lam, ratio):
    argv = [sub, "--lambda", repr(lam), "--mu", repr(lam * ratio)]
    for k, v in flags.items():
        # '=' form: values such as -0.5 would otherwise parse as flags
        argv.append(f"--{k}=" + (",".join(map(repr, v)) if isinstance(v, list) else str(v)))
    cfg = parse_args(argv)
    path = tmp_path_factory.mktemp("rt") / "c.toml"
    path.write_text(render_config(cfg))
    back = parse_args([sub, "--config", str(path)])
    assert back.settings == cfg.settings
    assert isinstance(back, CliConfig)
