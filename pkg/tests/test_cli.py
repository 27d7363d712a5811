import csv
import io
import json

import pytest

from nbvkit.bench import RunReport, SeedResult, compare, load_config, paired_p_value, run
from nbvkit.cli import main
from nbvkit.errors import ConfigError, InvalidInputError
from nbvkit.geometry import save_obj
from nbvkit.shapes import box_mesh

FAST = ["shape=\"torus\"", "shape_params={major=0.35, minor=0.12}", "width=40", "height=40",
        "n_elev=3", "n_azim=6", "n_proxy=512", "n_reference=4096"]


def fast_config(*extra):
    return load_config(None, FAST + list(extra))


def write_report(path, policy, seeds, aucs, protocol="object-sphere", mesh="builtin:blob"):
    cfg = {"protocol": protocol, "policy": policy, "mesh": mesh, "shape": None}
    rep = RunReport(cfg, [SeedResult(s, [a, a], a) for s, a in zip(seeds, aucs)],
                    *RunReport.aggregate(aucs), 1.0)
    path.write_text(rep.to_json())
    return path


# ---------------------------------------------------------------- configuration

def test_toml_file_and_overrides(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text('protocol = "object-sphere"\nmesh = "builtin:blob"\n\n[planner]\npolicy = "scone"\nsteps = 4\n'
                 'seeds = [1, 2]\n\n[sensor]\nwidth = 64\n')
    cfg = load_config(p, ["steps=6", "planner.eps=0.01"])
    assert (cfg.policy, cfg.steps, cfg.seeds, cfg.width, cfg.eps) == ("scone", 6, [1, 2], 64, 0.01)


@pytest.mark.parametrize("override,field", [("policy=\"greedy\"", "policy"), ("steps=0", "steps"),
                                            ("seeds=[]", "seeds"), ("fov_x_deg=200", "fov_x_deg"),
                                            ("colour=3", "colour"), ("eps=-1", "eps"), ("oops", "oops")])
def test_config_errors_name_the_field(override, field):
    with pytest.raises(ConfigError) as err:
        load_config(None, ["mesh=\"builtin:blob\"", override])
    assert err.value.field == field


def test_config_needs_geometry():
    with pytest.raises(ConfigError, match="mesh"):
        load_config(None, [])


def test_scene_needs_bbox():
    with pytest.raises(ConfigError, match="bbox"):
        load_config(None, ["protocol=\"scene5d\"", "shape=\"sphere\""])


# ---------------------------------------------------------------- run

@pytest.fixture(scope="module")
def three_seed_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = fast_config("seeds=[0, 1, 2]", "steps=10", "plots=true")
    return run(cfg, out)


def test_report_shape(three_seed_run):
    report, out = three_seed_run
    assert len(report.seeds) == 3
    assert all(len(s.curve) == 10 and s.error is None for s in report.seeds)
    for s in (0, 1, 2):
        rows = list(csv.reader((out / f"curve_seed{s}.csv").open()))
        assert rows[0] == ["step", "coverage"] and len(rows) == 11
        assert json.loads((out / f"trajectory_seed{s}.json").read_text())["seed"] == s
    assert (out / "coverage.svg").read_text().startswith("<svg")
    mean, std = RunReport.aggregate([s.auc for s in report.seeds])
    assert (report.mean_auc, report.std_auc) == (mean, std)


def test_report_round_trip(three_seed_run):
    report, out = three_seed_run
    text = (out / "report.json").read_text()
    back = RunReport.from_json(text)
    assert back == report
    assert back.to_json() == text


def test_outputs_byte_identical(three_seed_run, tmp_path):
    _, first = three_seed_run
    cfg = fast_config("seeds=[0, 1, 2]", "steps=10")
    _, second = run(cfg, tmp_path)
    for s in (0, 1, 2):
        assert (first / f"curve_seed{s}.csv").read_bytes() == (second / f"curve_seed{s}.csv").read_bytes()
        assert (first / f"trajectory_seed{s}.json").read_bytes() == \
            (second / f"trajectory_seed{s}.json").read_bytes()


def test_worker_pool_matches_serial(three_seed_run, tmp_path, monkeypatch):
    _, first = three_seed_run
    monkeypatch.setenv("NBV_THREADS", "2")
    _, second = run(fast_config("seeds=[0, 1, 2]", "steps=10"), tmp_path)
    for s in (0, 1, 2):
        assert (first / f"curve_seed{s}.csv").read_bytes() == (second / f"curve_seed{s}.csv").read_bytes()


def test_cli_run(tmp_path, capsys):
    code = main(["run", "--out", str(tmp_path)] + sum([["--set", s] for s in FAST + ["steps=3"]], []))
    assert code == 0
    assert "mean auc" in capsys.readouterr().out
    assert (tmp_path / "report.json").exists()


def test_missing_mesh_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.obj"
    assert main(["run", "--set", f"mesh=\"{missing}\"", "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_all_seeds_failing_exit_code(tmp_path, capsys):
    far = tmp_path / "far.obj"
    save_obj(box_mesh([50, 50, 50], [51, 51, 51]), far)
    args = ["run", "--set", f"mesh=\"{far}\"", "--set", "normalize=false", "--set", "seeds=[0, 1]",
            "--set", "width=16", "--set", "height=16", "--out", str(tmp_path / "o")]
    assert main(args) == 1
    assert capsys.readouterr().out.count("failed (SetupError") == 2


def test_verify_theorem_verdict(tmp_path, capsys):
    args = ["verify-theorem", "--set", "shape=\"sphere\"", "--set", "n_volume=80000", "--set", "n_surface=100000",
            "--set", "replicates=4", "--set", "fov_x_deg=120", "--set", "fov_y_deg=120", "--set", "width=64",
            "--set", "height=64", "--out", str(tmp_path)]
    assert main(args) == 0
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert {"slope", "pass", "status"} <= set(verdict)
    rows = list(csv.reader((tmp_path / "theorem.csv").open()))
    assert rows[0] == ["mu", "integral", "gap", "sigma"] and len(rows) == 5


def test_verify_theorem_needs_analytic_shape(tmp_path):
    assert main(["verify-theorem", "--set", "mesh=\"builtin:blob\"", "--out", str(tmp_path)]) == 2


# ---------------------------------------------------------------- compare

def table_rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_identical_reports(tmp_path):
    a = write_report(tmp_path / "a.json", "scone", [0, 1, 2], [0.7, 0.8, 0.75])
    b = write_report(tmp_path / "b.json", "random", [0, 1, 2], [0.7, 0.8, 0.75])
    rows = table_rows(compare([a, b]))
    stats = rows[rows.index(["mesh", "better", "worse", "mean_diff", "p_value"]) + 1]
    assert float(stats[3]) == 0.0 and float(stats[4]) == 1.0


def test_disjoint_seeds_note(tmp_path):
    a = write_report(tmp_path / "a.json", "scone", [0, 1], [0.7, 0.8])
    b = write_report(tmp_path / "b.json", "random", [5, 6], [0.6, 0.5])
    text = compare([a, b])
    assert "p-values omitted" in text
    assert table_rows(text)[1][0] == "builtin:blob"


def test_three_policies_one_mesh(tmp_path):
    paths = [write_report(tmp_path / f"{p}.json", p, [0, 1, 2], [0.5 + k / 10, 0.6 + k / 10, 0.55 + k / 10])
             for k, p in enumerate(["random", "entropy", "scone"])]
    rows = table_rows(compare(paths))
    assert rows[0] == ["mesh", "entropy", "random", "scone"]
    assert rows[1][0] == "builtin:blob" and len(rows[1]) == 4 and rows[2] == []
    assert rows[1][3].startswith("0.7500 ± ")


def test_protocol_mismatch(tmp_path, capsys):
    a = write_report(tmp_path / "a.json", "scone", [0], [0.7])
    b = write_report(tmp_path / "b.json", "scone", [0], [0.7], protocol="scene5d")
    with pytest.raises(InvalidInputError):
        compare([a, b])
    assert main(["compare", str(a), str(b)]) == 2


def test_paired_p_value():
    assert paired_p_value([0.5, 0.6], [0.5, 0.6]) == 1.0
    assert paired_p_value([0.9, 0.8, 0.85, 0.95], [0.5, 0.45, 0.6, 0.55]) < 0.01
    assert paired_p_value([0.5, 0.45, 0.6, 0.55], [0.9, 0.8, 0.85, 0.95]) > 0.99
