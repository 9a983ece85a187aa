import json

import numpy as np
import pytest

from pedretrieval import cli, io
from pedretrieval.errors import InvariantViolation


@pytest.fixture
def data(tmp_path):
    g, q = tmp_path / "gallery.bin", tmp_path / "queries.bin"
    rc = cli.main([
        "gen-synthetic", "--identities", "12", "--samples-per-identity", "4", "--dim", "8",
        "--seed", "3", "--gallery", str(g), "--queries", str(q),
    ])
    assert rc == 0
    return tmp_path, g, q


def test_gen_synthetic_deterministic(data):
    tmp, g, q = data
    g2 = tmp / "again.bin"
    cli.main(["gen-synthetic", "--identities", "12", "--samples-per-identity", "4", "--dim", "8",
              "--seed", "3", "--gallery", str(g2), "--queries", str(tmp / "q2.bin")])
    assert g.read_bytes() == g2.read_bytes()


def test_theta_zero_index_matches_brute_force(data):
    tmp, g, q = data
    assert cli.main(["build-index", str(g), "--theta", "0", "--out", str(tmp / "idx")]) == 0
    assert cli.main(["query", str(tmp / "idx"), "--gallery", str(g), "--queries", str(q),
                     "--topk-groups", "48", "--out", str(tmp / "c2f.txt")]) == 0
    assert cli.main(["query", "--brute-force", "--gallery", str(g), "--queries", str(q),
                     "--out", str(tmp / "brute.txt")]) == 0
    assert (tmp / "c2f.txt").read_text() == (tmp / "brute.txt").read_text()
    assert len(io.read_results(tmp / "brute.txt")) == 12


def test_evaluate_report(data):
    tmp, g, q = data
    cli.main(["build-index", str(g), "--theta", "0.5", "--pca-dim", "4", "--out", str(tmp / "idx")])
    rc = cli.main(["evaluate", str(tmp / "idx"), "--gallery", str(g), "--queries", str(q),
                   "--topk-groups", "2", "--report", str(tmp / "rep"), "--ranks", "1,3"])
    assert rc == 0
    rows = (tmp / "rep_cmc.csv").read_text().splitlines()
    assert rows[0] == "rank,cmc"
    values = [float(r.split(",")[1]) for r in rows[1:]]
    assert values == sorted(values) and len(values) == 50
    kv = dict(l.split("=", 1) for l in (tmp / "rep.kv").read_text().splitlines())
    assert {"mAP", "cmc.1", "cmc.3", "groups"} <= kv.keys()


def test_bench_sweep(data, capsys):
    tmp, g, q = data
    rc = cli.main(["bench", "--gallery", str(g), "--queries", str(q), "--theta", "0", "1",
                   "--report", str(tmp / "bench")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "brute" in out
    rows = (tmp / "bench_sweep.csv").read_text().splitlines()
    assert len(rows) == 4 and rows[1].startswith("brute,")


def test_pca_fit(data):
    tmp, g, _ = data
    assert cli.main(["pca-fit", str(g), "--k", "3", "--out", str(tmp / "pca.npz")]) == 0
    with np.load(tmp / "pca.npz") as z:
        c = z["components"]
    np.testing.assert_allclose(c @ c.T, np.eye(3), atol=1e-6)


def test_part_boxes(tmp_path):
    kp = tmp_path / "kp.csv"
    kp.write_text("id,x1,y1,x2,y2,x3,y3,x4,y4,W,H\na,50,10,50,40,40,120,60,120,100,200\n")
    assert cli.main(["part-boxes", str(kp), "--out", str(tmp_path / "b.csv")]) == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 4


def test_config_supplies_theta(data):
    tmp, g, _ = data
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"build-index": {"theta": 0.5, "pca_dim": 2}}))
    assert cli.main(["--config", str(cfg), "build-index", str(g), "--out", str(tmp / "idx")]) == 0
    manifest = json.loads((tmp / "idx" / "manifest.json").read_text())
    assert manifest["theta"] == 0.5 and manifest["k"] == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["build-index", "G", "--out", "X"],
        ["build-index", "G", "--theta", "-1", "--out", "X"],
        ["query", "--gallery", "G", "--queries", "Q"],
        ["nonsense"],
        ["evaluate", "I", "--gallery", "G", "--queries", "Q", "--ranks", "0"],
    ],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_bad_data_exit_3(tmp_path, data):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a gallery")
    assert cli.main(["build-index", str(bad), "--theta", "1", "--out", str(tmp_path / "i")]) == 3
    assert cli.main(["build-index", str(tmp_path / "missing.bin"), "--theta", "1", "--out", str(tmp_path / "i")]) == 3
    _, g, q = data
    other = tmp_path / "other.bin"
    cli.main(["gen-synthetic", "--identities", "3", "--samples-per-identity", "2", "--dim", "8",
              "--gallery", str(other), "--queries", str(tmp_path / "oq.bin")])
    cli.main(["build-index", str(other), "--theta", "1", "--out", str(tmp_path / "oidx")])
    # index built from a different gallery
    assert cli.main(["query", str(tmp_path / "oidx"), "--gallery", str(g), "--queries", str(q)]) == 3


def test_invariant_violation_exit_4(data, monkeypatch):
    tmp, g, _ = data

    def broken(*a, **k):
        raise InvariantViolation("partition broken")

    monkeypatch.setattr(cli, "build_index", broken)
    assert cli.main(["build-index", str(g), "--theta", "1", "--out", str(tmp / "idx")]) == 4
