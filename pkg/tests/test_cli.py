import json
from pathlib import Path

import numpy as np
import pytest

from taxons import cli, persist, raster
from taxons.persist import ConfigError

TINY_CFG = """\
[run]
method = TAXONS
generations = {generations}
seed = 5

[search]
population = 6
archive_best = 2
neighbors = 3
train_interval = 2
train_epochs = 1
batch_size = 8
workers = 2

[env]
name = maze
horizon = 20
observation_size = 16
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG.format(generations=4))
    return path


def run_dir_files(run_dir):
    return sorted(p.relative_to(run_dir).as_posix()
                  for p in Path(run_dir).rglob("*") if p.is_file())


def test_run_twice_byte_identical(cfg_file, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg_file), "--out", str(a)]) == 0
    assert cli.main(["run", "--config", str(cfg_file), "--out", str(b)]) == 0
    for name in ["archive.jsonl", "curve.csv", "metrics.log"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ckpts_a = sorted((a / "ae_checkpoints").iterdir())
    ckpts_b = sorted((b / "ae_checkpoints").iterdir())
    assert [p.name for p in ckpts_a] == [p.name for p in ckpts_b]
    for pa, pb in zip(ckpts_a, ckpts_b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name
    for pa, pb in zip(sorted((a / "observations").iterdir()),
                      sorted((b / "observations").iterdir())):
        assert pa.read_bytes() == pb.read_bytes()


def test_run_seed_override_changes_output(cfg_file, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    cli.main(["run", "--config", str(cfg_file), "--out", str(a)])
    cli.main(["run", "--config", str(cfg_file), "--seed", "99", "--out", str(b)])
    assert (a / "archive.jsonl").read_bytes() != (b / "archive.jsonl").read_bytes()
    assert json.loads((b / "config.json").read_text())["seed"] == 99


def test_missing_method_key_names_it(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\ngenerations = 1\n")
    code = cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code != 0
    assert "method" in capsys.readouterr().err


def test_unknown_key_named(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nmethod = TAXONS\ngenerations = 1\nwombat = 3\n")
    with pytest.raises(ConfigError, match="wombat"):
        persist.load_config(bad)


def test_unparseable_value_named(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nmethod = TAXONS\ngenerations = soon\n")
    with pytest.raises(ConfigError, match="generations"):
        persist.load_config(bad)


def test_zero_budget_run_dir(tmp_path):
    cfg = tmp_path / "zero.cfg"
    cfg.write_text(TINY_CFG.format(generations=0))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "archive.jsonl").read_text() == ""
    assert (out / "curve.csv").read_text() == "generation,archive_size,coverage\n"


def test_refuses_nonempty_out_dir(cfg_file, tmp_path, capsys):
    out = tmp_path / "occupied"
    out.mkdir()
    (out / "junk.txt").write_text("do not clobber")
    code = cli.main(["run", "--config", str(cfg_file), "--out", str(out)])
    assert code != 0
    assert "--force" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(cfg_file), "--out", str(out),
                     "--force"]) == 0


def test_sweep_cartesian_product_and_resume(cfg_file, tmp_path, capsys):
    out = tmp_path / "sweep"
    code = cli.main(["sweep", "--config", str(cfg_file), "--methods", "RS,NS",
                     "--seeds", "1,2,3", "--out", str(out)])
    assert code == 0
    dirs = sorted(p.name for p in out.iterdir())
    assert dirs == ["NS_seed1", "NS_seed2", "NS_seed3",
                    "RS_seed1", "RS_seed2", "RS_seed3"]
    capsys.readouterr()
    code = cli.main(["sweep", "--config", str(cfg_file), "--methods", "RS,NS",
                     "--seeds", "1,2,3", "--out", str(out), "--resume"])
    assert code == 0
    assert capsys.readouterr().out.count("skip") == 6


def test_sweep_degenerate_equals_run(cfg_file, tmp_path):
    sweep_out = tmp_path / "s"
    run_out = tmp_path / "r"
    cli.main(["sweep", "--config", str(cfg_file), "--methods", "TAXONS",
              "--seeds", "1", "--out", str(sweep_out)])
    cli.main(["run", "--config", str(cfg_file), "--seed", "1", "--out", str(run_out)])
    sweep_dir = sweep_out / "TAXONS_seed1"
    for name in ["archive.jsonl", "curve.csv", "metrics.log"]:
        assert (sweep_dir / name).read_bytes() == (run_out / name).read_bytes()


def test_sweep_continues_after_failure(cfg_file, tmp_path, capsys):
    out = tmp_path / "sweep"
    # sabotage one combination by pre-creating a non-empty dir without --force
    target = out / "RS_seed1"
    target.mkdir(parents=True)
    (target / "junk").write_text("x")
    code = cli.main(["sweep", "--config", str(cfg_file), "--methods", "RS",
                     "--seeds", "1,2", "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 1
    assert "FAILED" in captured.err
    assert (out / "RS_seed2" / "archive.jsonl").exists()


def test_archive_round_trip(cfg_file, tmp_path):
    out = tmp_path / "run"
    cli.main(["run", "--config", str(cfg_file), "--out", str(out)])
    first = (out / "archive.jsonl").read_bytes()
    arc = persist.read_archive(out / "archive.jsonl",
                               observations_dir=out / "observations")
    rewritten = tmp_path / "rewritten.jsonl"
    persist.write_archive(rewritten, arc)
    assert rewritten.read_bytes() == first


def test_observations_replay_bit_identical(cfg_file, tmp_path):
    from taxons import envs, policies
    out = tmp_path / "run"
    cli.main(["run", "--config", str(cfg_file), "--out", str(out)])
    config = persist.load_run_config(out)
    arena = envs.make_arena(config.environment, config.arena or None)
    cspec = policies.ControllerSpec(input_dim=5, hidden=(config.controller_hidden,))
    arc = persist.read_archive(out / "archive.jsonl")
    for i in [0, 3, len(arc) - 1]:
        entry = arc.entries[i]
        res = envs.rollout(arena, policies.Controller(cspec, entry.genome),
                           config.horizon, config.observation_size)
        stored = raster.read_ppm(out / "observations" / f"entry_{i:06d}.ppm")
        assert np.array_equal(res.observation_u8, stored)


def test_manifest_lists_artifacts_with_checksums(cfg_file, tmp_path):
    out = tmp_path / "run"
    cli.main(["run", "--config", str(cfg_file), "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    files = set(run_dir_files(out)) - {"manifest.json"}
    assert set(manifest["artifacts"]) == files
    for rel, info in manifest["artifacts"].items():
        assert persist.sha256_file(out / rel) == info["sha256"]
    assert persist.run_is_complete(out)
    (out / "curve.csv").write_text("tampered\n")
    assert not persist.run_is_complete(out)


def test_compare_exact_and_tied(tmp_path):
    def fake_run(name, method, coverage):
        d = tmp_path / name
        d.mkdir()
        from taxons.search import SearchConfig
        config = SearchConfig(method=method, generations=1, population_size=6,
                              archive_best=2, neighbors=3, horizon=20,
                              observation_size=16)
        persist.write_text(d / "config.json",
                           persist.dumps(persist.config_to_json_dict(config), indent=2))
        persist.write_curve(d / "curve.csv", [(1, 2, coverage)])
        return d

    runs = [fake_run(f"a{i}", "NS", c) for i, c in enumerate([4.0, 5.0, 6.0])]
    runs += [fake_run(f"b{i}", "RS", c) for i, c in enumerate([1.0, 2.0, 3.0])]
    out = tmp_path / "cmp"
    assert cli.main(["compare", *map(str, runs), "--out", str(out)]) == 0
    rows = (out / "comparison.csv").read_text().strip().splitlines()
    assert len(rows) == 2  # header + one pair
    name_a, name_b, n_a, n_b, u, p, exact, adj, rej = rows[1].split(",")
    assert (name_a, name_b) == ("NS", "RS")
    assert float(u) == 9.0  # NS above RS everywhere
    assert float(p) == pytest.approx(0.1)
    assert exact == "1"

    # identical groups: all tied, no rejection
    runs2 = [fake_run(f"c{i}", "PNS", 2.0) for i in range(3)]
    runs2 += [fake_run(f"d{i}", "RNS", 2.0) for i in range(3)]
    out2 = tmp_path / "cmp2"
    cli.main(["compare", *map(str, runs2), "--out", str(out2)])
    row = (out2 / "comparison.csv").read_text().strip().splitlines()[1].split(",")
    assert float(row[5]) == 1.0
    assert row[8] == "0"


def test_compare_row_count_pairs(tmp_path, cfg_file):
    out = tmp_path / "sweep"
    cli.main(["sweep", "--config", str(cfg_file), "--methods", "RS,NS,PNS",
              "--seeds", "1,2", "--out", str(out)])
    cmp_out = tmp_path / "cmp"
    runs = [str(p) for p in sorted(out.iterdir())]
    assert cli.main(["compare", *runs, "--out", str(cmp_out)]) == 0
    rows = (cmp_out / "comparison.csv").read_text().strip().splitlines()
    assert len(rows) - 1 == 3  # C(3, 2) pairs


def test_compare_excludes_small_groups(tmp_path, cfg_file, capsys):
    out = tmp_path / "sweep"
    cli.main(["sweep", "--config", str(cfg_file), "--methods", "RS,NS",
              "--seeds", "1,2", "--out", str(out)])
    cli.main(["run", "--config", str(cfg_file), "--out", str(out / "PNS_seed1")])
    capsys.readouterr()
    runs = [str(p) for p in sorted(out.iterdir())]
    assert cli.main(["compare", *runs, "--out", str(tmp_path / "cmp")]) == 0
    err = capsys.readouterr().err
    assert "TAXONS" in err and "fewer than 2" in err


def test_goal_exact_match_and_errors(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    cli.main(["run", "--config", str(cfg_file), "--out", str(out)])
    capsys.readouterr()
    goal_img = out / "observations" / "entry_000002.ppm"
    assert cli.main(["goal", "--run", str(out), "--image", str(goal_img)]) == 0
    printed = capsys.readouterr().out
    assert "distance 0" in printed.splitlines()[0]

    # replay path
    assert cli.main(["goal", "--run", str(out), "--image", str(goal_img),
                     "--replay"]) == 0
    assert "replayed ground truth" in capsys.readouterr().out

    # wrong image size
    bad = tmp_path / "bad.ppm"
    raster.write_ppm(bad, np.zeros((32, 32, 3), dtype=np.uint8))
    assert cli.main(["goal", "--run", str(out), "--image", str(bad)]) != 0
    assert "expected" in capsys.readouterr().err


def test_goal_refuses_unlearned_observer(tmp_path, cfg_file, capsys):
    out = tmp_path / "nsrun"
    cfg = tmp_path / "ns.cfg"
    cfg.write_text(TINY_CFG.format(generations=2).replace("TAXONS", "NS"))
    cli.main(["run", "--config", str(cfg), "--out", str(out)])
    img = out / "observations" / "entry_000000.ppm"
    capsys.readouterr()
    assert cli.main(["goal", "--run", str(out), "--image", str(img)]) != 0
    assert "no learned outcome space" in capsys.readouterr().err


def test_config_json_round_trip(cfg_file, tmp_path):
    out = tmp_path / "run"
    cli.main(["run", "--config", str(cfg_file), "--out", str(out)])
    config = persist.load_run_config(out)
    assert config.method == "TAXONS"
    assert config.population_size == 6
    assert config.arena  # resolved arena geometry embedded
    d1 = persist.dumps(persist.config_to_json_dict(config))
    config2 = persist.config_from_json_dict(json.loads(d1))
    assert persist.dumps(persist.config_to_json_dict(config2)) == d1


def test_dumps_float_exact_round_trip():
    vals = [0.1, 1.0 / 3.0, 1e-17, 123456789.123456789, 2.0, 0.0, -5.5e-200]
    text = persist.dumps(vals)
    back = json.loads(text)
    for a, b in zip(vals, back):
        assert float(a) == float(b)
    assert persist.dumps(json.loads(text)) == text
