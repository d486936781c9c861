import os
import subprocess
import sys

import numpy as np
import pytest

from synth import texture
from sgmstereo import cli
from sgmstereo.imgio import read_pfm, save_gray_png, write_pfm
from sgmstereo.metrics import EvalReport


@pytest.fixture
def pair(tmp_path):
    rng = np.random.default_rng(0)
    left = texture((40, 56), rng, 0.8)
    right = np.roll(left, -3, axis=1)
    save_gray_png(left, tmp_path / "l.png")
    save_gray_png(right, tmp_path / "r.png")
    gt = np.full(left.shape, 3.0, np.float32)   # Middlebury sign
    write_pfm(gt, tmp_path / "gt.pfm")
    return tmp_path


def test_run_writes_full_size_map(pair, capsys):
    out = pair / "out.pfm"
    rc = cli.main(["--algo", "sgm8", "--dmin", "0", "--dmax", "64",
                   str(pair / "l.png"), str(pair / "r.png"), str(out)])
    assert rc == 0 and read_pfm(out).shape == (40, 56)
    assert "match_seconds" in capsys.readouterr().out


def test_self_match_zero(pair):
    out = pair / "self.pfm"
    rc = cli.main(["--dmin", "-2", "--dmax", "2", str(pair / "l.png"), str(pair / "l.png"),
                   str(out)])
    d = read_pfm(out)
    assert rc == 0 and np.isfinite(d).any()
    assert (d[np.isfinite(d)] == 0).all()


def test_eval_outputs_partition(pair):
    out = pair / "e.pfm"
    rc = cli.main(["--algo", "tsgm8", "--dmin", "-8", "--dmax", "0", str(pair / "l.png"),
                   str(pair / "r.png"), str(out), "--eval", str(pair / "gt.pfm"),
                   "--deltas", "1,2,3", "--subpixel", "--fill-holes"])
    assert rc == 0
    rep = EvalReport.from_records((pair / "e.metrics.txt").read_text())
    assert rep.deltas == [1, 2, 3]
    for d in rep.deltas:
        assert rep.total_pct[d] == rep.invalid_pct + rep.bad_pct[d]
        assert (pair / f"e_mask_d{d:g}.png").exists()
    assert rep.total_pct[1] < 20
    assert "total >1" in (pair / "e.report.txt").read_text()


def test_missing_input_names_stage(pair, capsys):
    rc = cli.main(["--dmin", "0", "--dmax", "4", str(pair / "nope.png"), str(pair / "r.png"),
                   str(pair / "o.pfm")])
    assert rc == 1
    assert "load left image" in capsys.readouterr().err


def test_bad_configuration(pair, capsys):
    rc = cli.main(["--dmin", "5", "--dmax", "1", str(pair / "l.png"), str(pair / "r.png"),
                   str(pair / "o.pfm")])
    assert rc == 2 and "configuration" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["--algo", "bm", "--dmin", "0", "--dmax", "1", "a", "b", "c"])


def _manifest(path, lines):
    path.write_text("# left right gt dmin dmax\n" + "\n".join(lines) + "\n")
    return path


def test_batch_single_pair(pair, capsys):
    man = _manifest(pair / "m.txt", ["l.png r.png gt.pfm -8 0"])
    rc = cli.main(["batch", str(man), "--algo", "sgm8", "--out-dir", str(pair / "res"),
                   "--report", str(pair / "agg.txt")])
    assert rc == 0
    agg = EvalReport.from_records((pair / "agg.txt").read_text())
    (rec,) = (pair / "res").glob("*.metrics.txt")
    single = EvalReport.from_records(rec.read_text())
    assert agg.total_pct == single.total_pct and agg.avg_err == single.avg_err
    assert "aggregate over 1 of 1" in capsys.readouterr().out


def test_batch_skips_unreadable(pair, capsys):
    man = _manifest(pair / "m.txt", ["l.png r.png gt.pfm -8 0", "gone.png r.png gt.pfm -8 0"])
    rc = cli.main(["batch", str(man), "--algo", "sgm8", "--out-dir", str(pair / "res")])
    cap = capsys.readouterr()
    assert rc == 0
    assert "warning" in cap.err and "gone.png" in cap.err
    assert "aggregate over 1 of 2" in cap.out


def test_batch_all_fail_and_empty(pair, capsys):
    man = _manifest(pair / "m.txt", ["gone.png r.png gt.pfm -8 0"])
    assert cli.main(["batch", str(man), "--out-dir", str(pair / "res")]) == 1
    empty = _manifest(pair / "e.txt", [])
    assert cli.main(["batch", str(empty), "--out-dir", str(pair / "res")]) == 2
    assert "no pairs" in capsys.readouterr().err


def test_batch_bad_line(pair):
    man = _manifest(pair / "m.txt", ["l.png r.png gt.pfm"])
    assert cli.main(["batch", str(man), "--out-dir", str(pair / "res")]) == 2


def test_batch_jobs_match_serial(pair):
    man = _manifest(pair / "m.txt", ["l.png r.png gt.pfm -8 0", "r.png l.png gt.pfm 0 8"])
    outs = []
    for jobs in ("1", "2"):
        d = pair / f"res{jobs}"
        assert cli.main(["batch", str(man), "--algo", "sgm8", "--out-dir", str(d),
                         "--jobs", jobs, "--gt-sign", "native"]) == 0
        outs.append(sorted((p.name, p.read_bytes()) for p in d.glob("*.pfm")))
    assert outs[0] == outs[1] and len(outs[0]) == 2


def _module_run(args, env_extra):
    env = dict(os.environ, **env_extra)
    return subprocess.run([sys.executable, "-m", "sgmstereo", *args], env=env,
                          capture_output=True, text=True, timeout=300)


def test_thread_override_is_deterministic(pair):
    args = ["--algo", "mgm8", "--dmin", "-6", "--dmax", "0", str(pair / "l.png"),
            str(pair / "r.png")]
    blobs = []
    for n in ("1", "2"):
        out = pair / f"t{n}.pfm"
        res = _module_run(args + [str(out)], {"SGMSTEREO_THREADS": n})
        assert res.returncode == 0, res.stderr
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]
    bad = _module_run(args + [str(pair / "x.pfm")], {"SGMSTEREO_THREADS": "many"})
    assert bad.returncode == 2 and "SGMSTEREO_THREADS" in bad.stderr
