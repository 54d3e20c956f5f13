import csv
import io
import json

import numpy as np
import pytest

from robustot import cli, pipeline
from robustot.density import save_points_csv
from robustot.pipeline import manifest_path
from robustot.solver import NumericalFailure
from robustot.synthetic import fish_cloud, random_warp

FAST = ["--stages", "2", "--max-samples", "200"]


@pytest.fixture
def pair(tmp_path):
    x = fish_cloud(100, seed=7)
    y = random_warp(seed=8)(x)
    save_points_csv(tmp_path / "x.csv", x)
    save_points_csv(tmp_path / "y.csv", y)
    return str(tmp_path / "y.csv"), str(tmp_path / "x.csv")


def test_losses_stdout(capsys):
    assert cli.main(["losses", "--sigma", "0.5", "--points", "11"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 12
    body = np.array(rows[1:], dtype=float)
    np.testing.assert_allclose(body[:, 0], np.linspace(0, 2.5, 11))
    assert np.all(body[0, 1:] == 0.0)


def test_losses_bad_args(capsys):
    assert cli.main(["losses", "--sigma", "0"]) == cli.EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_argparse_errors_are_usage():
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["register", "a.csv"]) == cli.EXIT_USAGE
    assert cli.main(["register", "a", "b", "--out", "o", "--mode", "bogus"]) == cli.EXIT_USAGE


def test_bad_config_is_usage(tmp_path, pair):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"unknown_key": 1}')
    assert cli.main(["register", *pair, "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2
    assert cli.main(["register", *pair, "--out", str(tmp_path / "o"), "--lambda", "2"]) == 2


def test_missing_and_malformed_inputs(tmp_path, pair):
    out = str(tmp_path / "o.tps")
    assert cli.main(["register", str(tmp_path / "nope.csv"), pair[1], "--out", out]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert cli.main(["register", str(bad), pair[1], "--out", out]) == 3
    img = tmp_path / "x.png"
    img.write_bytes(b"junk")
    assert cli.main(["transfer", str(img), str(img), "--out", str(tmp_path / "r.png")]) == 3


def test_numerical_failure_exit(tmp_path, pair, monkeypatch):
    def boom(*a, **k):
        raise NumericalFailure("non-finite cost at stage 0, iterate 3", stage=0, iterate=3)

    monkeypatch.setattr(cli, "run_register", boom)
    assert cli.main(["register", *pair, "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERIC


def test_failure_manifest(tmp_path, pair, monkeypatch):
    def boom(*a, **k):
        raise NumericalFailure("bad", stage=1, iterate=2, params=np.zeros(3))

    monkeypatch.setattr(pipeline, "solve", boom)
    out = tmp_path / "o.tps"
    assert cli.main(["register", *pair, "--out", str(out)]) == cli.EXIT_NUMERIC
    man = json.loads(manifest_path(out).read_text())
    assert man["status"] == "numerical_failure"
    assert man["results"]["stage"] == 1 and man["results"]["iterate"] == 2


def test_register_then_eval_cost(tmp_path, pair, capsys):
    out = tmp_path / "t.tps"
    assert cli.main(["register", *pair, "--out", str(out), "--trace", str(tmp_path / "tr.csv"), *FAST]) == 0
    assert "final_total" in capsys.readouterr().out
    text_out = tmp_path / "b.txt"
    assert cli.main(["eval-cost", *pair, "--transform", str(out), "--out", str(text_out)]) == 0
    printed = capsys.readouterr().out
    assert printed == text_out.read_text()
    assert "total = " in printed


def test_eval_cost_matches_api(tmp_path, pair, capsys):
    assert cli.main(["eval-cost", pair[0], pair[0], "--h", "0.1", "--t0"]) == 0
    printed = capsys.readouterr().out.strip()
    cfg = cli.resolve_config(cli.build_parser().parse_args(["eval-cost", "a", "b", "--h", "0.1", "--t0"]),
                             annealed=False)
    br = pipeline.run_eval_cost(pair[0], pair[0], cfg=cfg)
    assert printed == pipeline.format_breakdown(br)
    total = float(dict(l.split(" = ") for l in printed.splitlines())["total"])
    assert abs(total) <= 1e-10


def test_transfer_cli(tmp_path, data_dir, capsys):
    out = tmp_path / "r.png"
    args = ["transfer", str(data_dir / "pair_warm_target.png"), str(data_dir / "pair_warm_palette.png"),
            "--out", str(out), *FAST]
    assert cli.main(args) == 0
    vals = dict(l.split(" = ") for l in capsys.readouterr().out.strip().splitlines())
    assert float(vals["l2_after"]) < float(vals["l2_before"])
    assert out.exists() and manifest_path(out).exists()


def test_config_layering(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"cost": {"hc_sq": 0.04, "h_sq": 0.09}, "max_samples": 50}))
    parser = cli.build_parser()
    args = parser.parse_args(["register", "a", "b", "--out", "o", "--config", str(cfg_file), "--hc", "0.1"])
    cfg = cli.resolve_config(args)
    assert cfg.cost.hc_sq == pytest.approx(0.01)
    assert cfg.cost.h_sq == 0.09 and cfg.max_samples == 50
