import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tilebench import cli, dyadic, signal, sparsedom
from tilebench.cli import HEADER, main, make_signal, read_csv


def run(tmp_path, *args, name="out.csv"):
    out = tmp_path / name
    rc = main([*args, "--out", str(out)])
    return rc, (out.read_text() if out.exists() else "")


def test_selftest_passes(tmp_path):
    rc, text = run(tmp_path, "selftest")
    assert rc == 0
    assert text.splitlines()[0] == HEADER
    assert all(line.endswith(",1") for line in text.splitlines()[2:])


def test_grid_csv(tmp_path):
    rc, text = run(tmp_path, "grid", "--L", "4")
    assert rc == 0
    assert text.splitlines()[1:] == [
        "shift,intervals,pairs,violations",
        "0,31,465,0",
        "1,31,465,0",
        "2,31,465,0",
    ]


def test_carleson_deterministic_across_threads(tmp_path):
    args = ["carleson", "--L", "8", "--p-grid", "1.1,2", "--seed", "7"]
    rc1, a = run(tmp_path, *args, name="a.csv")
    rc2, b = run(tmp_path, "--threads", "3", *args, name="b.csv")
    assert rc1 == rc2 == 0 and a == b
    cols, rows = read_csv(str(tmp_path / "a.csv"))
    assert cols == ["p", "weak_norm", "ratio_pm1"] and len(rows) == 2


def test_threads_env_fallback(monkeypatch, tmp_path):
    seen = []
    real = signal.carleson_max

    def spy(*a, threads=None, **kw):
        seen.append(threads)
        return real(*a, threads=threads, **kw)

    monkeypatch.setattr(signal, "carleson_max", spy)
    monkeypatch.setenv("TILEBENCH_THREADS", "2")
    assert run(tmp_path, "carleson", "--L", "6", "--seed", "1")[0] == 0
    assert run(tmp_path, "--threads", "1", "carleson", "--L", "6", "--seed", "1")[0] == 0
    assert seen == [2, 1]


def test_svg_self_contained(tmp_path):
    svg = tmp_path / "plot.svg"
    rc = main(["carleson", "--L", "7", "--seed", "2", "--out", str(tmp_path / "c.csv"), "--svg", str(svg)])
    assert rc == 0
    text = svg.read_text()
    assert "href" not in text and "<script" not in text
    assert ET.fromstring(text).tag.endswith("svg")


@pytest.mark.parametrize("args", [
    ["carleson", "--L", "6"],  # seed is mandatory
    ["carleson", "--L", "6", "--seed", "1", "--p-grid", "1,2"],
    ["carleson", "--L", "6", "--seed", "1", "--p-grid", "a,b"],
    ["sparse-check", "--L", "6", "--seed", "1", "--eps-grid", "0.75"],
    ["grid", "--L", "3", "--shifts", "5"],
    ["nosuchcommand"],
])
def test_schema_errors_exit_2(tmp_path, args):
    assert run(tmp_path, *args)[0] == 2


def test_rank1_config_schema(tmp_path):
    good = {"gamma": [1, -2, 1], "H": 1, "K": 2, "h": 0, "L": 8, "scale": 6,
            "epsilon_grid": [0.5, 0.25], "signals": [{"seed": 1}, {"seed": 2}, {"seed": 3, "family": "random-phase"}]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(good))
    rc, text = run(tmp_path, "rank1-check", "--config", str(path))
    assert rc == 0
    cols, rows = read_csv(str(tmp_path / "out.csv"))
    assert [float(r["eps"]) for r in rows] == [0.5, 0.25]
    assert all(float(r["tree_ratio"]) <= 3 for r in rows)
    for bad in ({**good, "H": "one"}, {**good, "signals": [{"seed": 1}]}, {**good, "extra": 1},
                {**good, "epsilon_grid": [0.9]}, {**good, "signals": [{"family": "indicator"}] * 3}):
        path.write_text(json.dumps(bad))
        assert run(tmp_path, "rank1-check", "--config", str(path))[0] == 2
    path.write_text("{not json")
    assert run(tmp_path, "rank1-check", "--config", str(path))[0] == 2


def test_invariant_violation_exit_4(monkeypatch, tmp_path):
    monkeypatch.setattr(dyadic, "grid_violations", lambda g: (10, 1))
    rc, text = run(tmp_path, "grid", "--L", "3")
    assert rc == 4 and text  # the CSV is still written


def test_numerical_failure_exit_3(monkeypatch, tmp_path):
    def boom(*a, **kw):
        raise sparsedom.PackingError("no Theta works")

    monkeypatch.setattr(sparsedom, "sparse_check", boom)
    assert run(tmp_path, "sparse-check", "--L", "6", "--seed", "1")[0] == 3


def test_decompose_and_embed(tmp_path):
    rc, _ = run(tmp_path, "decompose", "--L", "9", "--seed", "1", "--K-grid", "2,8", name="d.csv")
    assert rc == 0
    _, rows = read_csv(str(tmp_path / "d.csv"))
    assert float(rows[1]["tail_ratio"]) < float(rows[0]["tail_ratio"])
    assert all(float(r["recon_error"]) <= 1e-12 for r in rows)
    rc, _ = run(tmp_path, "embed", "--L", "6", "--seed", "1", name="e.csv")
    assert rc == 0
    _, rows = read_csv(str(tmp_path / "e.csv"))
    assert len({r["w2_ratio"] for r in rows}) == 1


def test_sparse_check_detail(tmp_path):
    detail = tmp_path / "detail.json"
    rc, text = run(tmp_path, "sparse-check", "--L", "7", "--seed", "7", "--eps-grid", "0.5,0.25",
                   "--detail", str(detail))
    assert rc == 0
    assert text.splitlines()[1] == "eps,ratio,generations,theta,max_depth"
    assert all("holder_ratio" in row for row in json.loads(detail.read_text()))


def test_report_reads_outputs(tmp_path):
    run(tmp_path, "carleson", "--L", "7", "--seed", "3", name="c.csv")
    rc, text = run(tmp_path, "report", "--inputs", str(tmp_path / "c.csv"), "--x", "p", "--y", "ratio_pm1",
                   "--loglog", "--svg", str(tmp_path / "r.svg"), name="r.csv")
    assert rc == 0 and (tmp_path / "r.svg").exists()
    _, rows = read_csv(str(tmp_path / "r.csv"))
    assert rows[0]["rows"] == "5"
    bad = tmp_path / "bad.csv"
    bad.write_text("p,q\n1,2\n")
    assert run(tmp_path, "report", "--inputs", str(bad), "--x", "p", "--y", "q")[0] == 2
    assert run(tmp_path, "report", "--inputs", str(tmp_path / "c.csv"), "--x", "p", "--y", "zz")[0] == 2


@pytest.mark.parametrize("family", cli.FAMILIES)
def test_signal_families_seeded(family):
    a, b = make_signal(6, family, 5, 0.25), make_signal(6, family, 5, 0.25)
    assert np.array_equal(a.samples, b.samples) and np.abs(a.samples).max() > 0
    if family == "indicator":
        assert a.samples.real.sum() == 16
    with pytest.raises(cli.SchemaError):
        make_signal(6, "noise", 1)
