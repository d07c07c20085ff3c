import json
import math
import shutil
import subprocess
from importlib import resources

import numpy as np
import pytest

from structcrf import cli
from structcrf import models as M
from structcrf import oracle as O

DATA = resources.files("structcrf") / "data"

EXAMPLES = [
    ("linear-chain", "chain_random.json", []),
    ("semi-markov", "semimarkov.json", []),
    ("cky", "cky.json", []),
    ("cfg", "grammar.json", []),
    ("dep", "arcs.json", []),
    ("dep-np", "arcs.json", []),
    ("alignment", "alignment.json", []),
    ("alignment", "alignment.json", ["--steps", "dtw"]),
]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_partition_prints_log_eight(capsys):
    code, out, _ = run(capsys, "partition", "--model", "linear-chain", "--potentials", DATA / "chain.json")
    assert code == 0 and out.strip() == "2.0794415416798357"


@pytest.mark.parametrize("family,fname,extra", EXAMPLES)
def test_round_trip_every_family(family, fname, extra, tmp_path, capsys):
    base = ["--model", family, "--potentials", DATA / fname, *extra]
    code, out, _ = run(capsys, "partition", *base)
    assert code == 0
    A = float(out)
    pgm = tmp_path / "m.pgm"
    assert run(capsys, "marginals", *base, "--heatmap", pgm)[0] == 0
    assert pgm.read_text().startswith("P2")
    tree = tmp_path / "best.json"
    assert run(capsys, "argmax", *base, "--out", tree)[0] == 0
    best = json.loads(tree.read_text())
    code, out, _ = run(capsys, "sample", *base, "--seed", 1, "--k", 3)
    assert code == 0
    code, out, _ = run(capsys, "logprob", *base, "--structure", tree)
    assert code == 0
    lp = float(out)
    assert lp <= 1e-12
    assert lp == pytest.approx(best["score"] - A, abs=1e-10)


def test_nonprojective_argmax_matches_oracle(tmp_path, capsys):
    out = tmp_path / "tree.json"
    assert run(capsys, "argmax", "--model", "dep-np", "--potentials", DATA / "arcs.json", "--out", out)[0] == 0
    rec = json.loads(out.read_text())
    pots = cli.parse_tensor(json.loads((DATA / "arcs.json").read_text()))
    model = M.dependency_np(pots.shape[1])
    assert rec["score"] == pytest.approx(O.reference_max(model, pots), abs=1e-12)
    assert len(rec["structure"]) == pots.shape[1]


def test_heatmap_pixels_are_rounded_span_marginals(tmp_path, capsys):
    pgm = tmp_path / "spans.pgm"
    code, _, _ = run(capsys, "marginals", "--model", "cky", "--potentials", DATA / "cky.json", "--heatmap", pgm, "--out", tmp_path / "m.json")
    assert code == 0
    tokens = pgm.read_text().split()
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pixels = np.array(tokens[4:], dtype=int).reshape(h, w)
    obj = json.loads((tmp_path / "m.json").read_text())
    assert obj["kind"] == "marginal"
    span = np.array(obj["data"], dtype=float).reshape(obj["shape"]).sum(axis=0)
    assert maxval == 255
    assert np.array_equal(pixels, np.rint(255 * span).astype(int))


def test_same_seed_same_bytes(tmp_path, capsys):
    outs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        run(capsys, "sample", "--model", "cky", "--potentials", DATA / "cky.json", "--seed", 42, "--k", 5, "--out", path)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_other_queries(capsys):
    base = ["--model", "linear-chain", "--potentials", DATA / "chain.json"]
    assert run(capsys, "count", *base)[1].strip() == "8"
    assert float(run(capsys, "entropy", *base)[1]) == pytest.approx(math.log(8))
    code, out, _ = run(capsys, "kbest", *base, "--k", 3, "--format", "json")
    assert code == 0 and len(json.loads(out)) == 3


def test_order_flag(capsys):
    base = ["--model", "linear-chain", "--potentials", DATA / "chain_random.json"]
    a = float(run(capsys, "partition", *base, "--order", "serial")[1])
    b = float(run(capsys, "partition", *base, "--order", "scan")[1])
    assert a == pytest.approx(b, rel=1e-12)
    assert run(capsys, "partition", *base, "--order", "naive")[0] == 2


def test_malformed_inputs_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "partition", "--potentials", bad)[0] == 2
    bad.write_text(json.dumps({"shape": [2, 2, 2], "data": [0.0] * 7, "kind": "log"}))
    assert run(capsys, "partition", "--potentials", bad)[0] == 2
    bad.write_text(json.dumps({"shape": [1, 2, 2], "data": [0, "nan", 0, 0], "kind": "log"}))
    assert run(capsys, "partition", "--potentials", bad)[0] == 2
    assert run(capsys, "partition", "--model", "dep", "--potentials", DATA / "chain.json")[0] == 2
    assert run(capsys, "partition")[0] == 2


def test_empty_distribution_exits_three(tmp_path, capsys):
    f = tmp_path / "masked.json"
    f.write_text(json.dumps({"shape": [1, 2, 2], "data": ["-inf"] * 4, "kind": "log"}))
    for cmd in ("partition", "argmax", "sample"):
        assert run(capsys, cmd, "--potentials", f)[0] == 3
    g = tmp_path / "align.json"
    g.write_text(json.dumps(cli.tensor_json(np.zeros((3, 2, 3)))))
    assert run(capsys, "partition", "--model", "alignment", "--potentials", g, "--step-set", "diag")[0] == 3


def test_tensor_json_round_trip():
    x = np.array([[0.5, -np.inf], [1e-300, -2.0]])
    obj = cli.tensor_json(x)
    assert obj["data"][1] == "-inf" and obj["shape"] == [2, 2]
    assert np.array_equal(cli.parse_tensor(json.loads(json.dumps(obj))), x)


def test_console_script_installed():
    exe = shutil.which("structcrf")
    if exe is None:
        pytest.skip("console script not on PATH")
    res = subprocess.run([exe, "partition", "--potentials", str(DATA / "chain.json")], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "2.0794415416798357"
