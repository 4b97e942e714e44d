import subprocess
import sys

import numpy as np
import pytest

from anticopy import barcode as bc
from anticopy import io
from anticopy.cli import EXIT_DETECTED, EXIT_OK, EXIT_RECOVERY, EXIT_USAGE, main

SMALL_LCAC = [
    "--set", "rows=31", "--set", "cols=31", "--set", "module_px=8", "--set", "ecc_block=200",
    "--set", "ecc_payload=40", "--set", "ecc_blocks=1", "--set", "auth_block=12", "--set", "auth_payload=4",
]


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def lqr2_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("lqr2")
    assert run("generate", "--family", "2lqr", "--seed", 5, "--out", d / "b.pgm") == EXIT_OK
    return d


@pytest.fixture(scope="module")
def lcac_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("lcac")
    assert run("generate", "--family", "lcac", "--seed", 5, "--key", 77, *SMALL_LCAC, "--out", d / "b.pgm") == EXIT_OK
    return d


class TestGenerate:
    def test_2lqr_outputs(self, lqr2_files):
        assert io.read_pgm(lqr2_files / "b.pgm").shape == (300, 300)
        for suffix in (".meta", ".truth.npz", ".pdb"):
            assert (lqr2_files / f"b{suffix}").exists()
        assert io.read_config(lqr2_files / "b.meta")["family"] == "2lqr"

    def test_lcac_full_size(self, tmp_path):
        assert run("generate", "--family", "lcac", "--seed", 1, "--key", 3, "--out", tmp_path / "f.pgm") == EXIT_OK
        img = io.read_pgm(tmp_path / "f.pgm")
        assert img.shape == (1504, 1504)
        assert set(np.unique(img)) <= {40.0, 100.0, 160.0, 220.0}

    def test_missing_key_writes_nothing(self, tmp_path):
        assert run("generate", "--family", "lcac", "--seed", 1, "--out", tmp_path / "x.pgm") == EXIT_USAGE
        assert list(tmp_path.iterdir()) == []

    def test_config_file(self, tmp_path):
        (tmp_path / "d.cfg").write_text("family = 2lqr\nseed = 5\n")
        assert run("generate", "--config", tmp_path / "d.cfg", "--out", tmp_path / "c.pgm") == EXIT_OK
        assert (tmp_path / "c.pgm").exists()

    def test_deterministic(self, lqr2_files, tmp_path):
        run("generate", "--family", "2lqr", "--seed", 5, "--out", tmp_path / "b.pgm")
        for name in ("b.pgm", "b.pdb", "b.meta"):
            assert (tmp_path / name).read_bytes() == (lqr2_files / name).read_bytes()

    @pytest.mark.parametrize("extra", [["--set", "bogus=1"], ["--family", "qr"]])
    def test_bad_design(self, tmp_path, extra):
        argv = ["generate", "--family", "2lqr", "--seed", 1, "--out", tmp_path / "x.pgm"]
        assert run(*argv, *extra) == EXIT_USAGE


class TestChannel:
    def test_identity(self, lqr2_files, tmp_path):
        assert run("channel", "--in", lqr2_files / "b.pgm", "--out", tmp_path / "y.pgm", "--preset", "identity", "--seed", 0) == EXIT_OK
        assert np.array_equal(io.read_pgm(tmp_path / "y.pgm"), io.read_pgm(lqr2_files / "b.pgm"))

    def test_deterministic_and_seeded(self, lqr2_files, tmp_path):
        for name, seed in (("a", 1), ("b", 1), ("c", 2)):
            run("channel", "--in", lqr2_files / "b.pgm", "--out", tmp_path / f"{name}.pgm", "--preset", "2lqr", "--passes", 2, "--seed", seed)
        a, b, c = ((tmp_path / f"{n}.pgm").read_bytes() for n in "abc")
        assert a == b and a != c

    def test_scale(self, lqr2_files, tmp_path):
        run("channel", "--in", lqr2_files / "b.pgm", "--out", tmp_path / "s.pgm", "--scale", 2, "--seed", 0)
        assert io.read_pgm(tmp_path / "s.pgm").shape == (600, 600)

    @pytest.mark.parametrize("extra", [["--preset", "nope"], ["--set", "blur_sigma=-1"], ["--set", "zzz=1"]])
    def test_bad_channel(self, lqr2_files, tmp_path, extra):
        assert run("channel", "--in", lqr2_files / "b.pgm", "--out", tmp_path / "y.pgm", "--seed", 0, *extra) == EXIT_USAGE

    def test_missing_seed_is_usage_error(self, lqr2_files, tmp_path):
        assert run("channel", "--in", lqr2_files / "b.pgm", "--out", tmp_path / "y.pgm") == EXIT_USAGE

    def test_missing_input(self, tmp_path):
        assert run("channel", "--in", tmp_path / "none.pgm", "--out", tmp_path / "y.pgm", "--seed", 0) == EXIT_USAGE


class TestDetect:
    def test_hidden_2lqr_detected(self, lqr2_files, tmp_path, capsys):
        run("channel", "--in", lqr2_files / "b.pgm", "--out", tmp_path / "y.pgm", "--preset", "2lqr", "--seed", 3)
        code = run("detect", "--kind", "pvbd", "--in", tmp_path / "y.pgm", "--meta", lqr2_files / "b.meta", "--m-s", 100, "--seed", 4)
        out = capsys.readouterr().out
        assert code == EXIT_DETECTED and out.startswith("kind=pvbd delta=") and out.rstrip().endswith("phi=1 seed=4")

    def test_plain_lcac_passes(self, lcac_files, tmp_path):
        truth = np.load(lcac_files / "b.truth.npz")
        plain = bc.render(bc.ModuleGrid(truth["plain"], bc.LCAC_CONSTELLATION), 8)
        io.write_pgm(tmp_path / "p.pgm", plain)
        run("channel", "--in", tmp_path / "p.pgm", "--out", tmp_path / "y.pgm", "--preset", "lcac", "--seed", 3)
        code = run("detect", "--kind", "pvbd", "--in", tmp_path / "y.pgm", "--meta", lcac_files / "b.meta", "--m-s", 100, "--seed", 4)
        assert code == EXIT_OK

    def test_unreadable_capture(self, lcac_files, tmp_path):
        io.write_pgm(tmp_path / "g.pgm", np.full((248, 248), 128.0))
        code = run("detect", "--kind", "pdbd", "--in", tmp_path / "g.pgm", "--meta", lcac_files / "b.meta", "--m-s", 100, "--seed", 0)
        assert code == EXIT_RECOVERY

    def test_shape_mismatch(self, lcac_files, tmp_path):
        io.write_pgm(tmp_path / "g.pgm", np.zeros((10, 10)))
        code = run("detect", "--kind", "pdbd", "--in", tmp_path / "g.pgm", "--meta", lcac_files / "b.meta", "--seed", 0)
        assert code == EXIT_USAGE


class TestAttack:
    def test_ppd_reproduces_clean(self, lqr2_files, tmp_path):
        code = run("attack", "--kind", "ppd", "--in", lqr2_files / "b.pgm", "--meta", lqr2_files / "b.meta",
                   "--db", lqr2_files / "b.pdb", "--out", tmp_path / "f.pgm")
        assert code == EXIT_OK
        assert (tmp_path / "f.pgm").read_bytes() == (lqr2_files / "b.pgm").read_bytes()

    def test_ppd_needs_db(self, lqr2_files, tmp_path):
        code = run("attack", "--kind", "ppd", "--in", lqr2_files / "b.pgm", "--meta", lqr2_files / "b.meta", "--out", tmp_path / "f.pgm")
        assert code == EXIT_USAGE and not (tmp_path / "f.pgm").exists()

    def test_upd_writes_db(self, lqr2_files, tmp_path):
        run("channel", "--in", lqr2_files / "b.pgm", "--out", tmp_path / "y.pgm", "--preset", "2lqr", "--scale", 2, "--seed", 1)
        code = run("attack", "--kind", "upd", "--in", tmp_path / "y.pgm", "--meta", lqr2_files / "b.meta",
                   "--db-out", tmp_path / "alt.pdb", "--L-m", 1000, "--out", tmp_path / "f.pgm")
        assert code == EXIT_OK
        from anticopy import lqr2

        assert len(lqr2.load_db(tmp_path / "alt.pdb")) == 1000
        assert io.read_pgm(tmp_path / "f.pgm").shape == (300, 300)

    def test_synthetic_needs_two(self, lqr2_files, tmp_path):
        assert run("attack", "--kind", "synthetic", "--in", lqr2_files / "b.pgm", "--out", tmp_path / "f.pgm") == EXIT_USAGE

    def test_scp_locations_csv(self, lcac_files, tmp_path):
        run("channel", "--in", lcac_files / "b.pgm", "--out", tmp_path / "y.pgm", "--preset", "lcac", "--seed", 2)
        code = run("attack", "--kind", "lcac-scp", "--in", tmp_path / "y.pgm", "--meta", lcac_files / "b.meta",
                   "--locations-out", tmp_path / "loc.csv", "--out", tmp_path / "f.pgm")
        assert code == EXIT_OK
        lines = (tmp_path / "loc.csv").read_text().splitlines()
        assert lines[0] == "module,row,col,delta,flag" and len(lines) > 1
        changed = set(np.load(lcac_files / "b.truth.npz")["changed_modules"].tolist())
        found = {int(l.split(",")[0]) for l in lines[1:]}
        assert len(found & changed) / len(changed) >= 0.9

    def test_lcac_attack_rejects_2lqr_meta(self, lqr2_files, tmp_path):
        code = run("attack", "--kind", "lcac-acp", "--in", lqr2_files / "b.pgm", "--meta", lqr2_files / "b.meta", "--out", tmp_path / "f.pgm")
        assert code == EXIT_USAGE


class TestAuthenticate:
    def test_needs_harness_flag(self, lqr2_files):
        assert run("authenticate", "--image", lqr2_files / "b.pgm", "--in", lqr2_files / "b.pgm") == EXIT_USAGE

    def test_clean_accepts(self, lqr2_files, capsys):
        assert run("authenticate", "--image", lqr2_files / "b.pgm", "--in", lqr2_files / "b.pgm", "--harness") == EXIT_OK
        assert capsys.readouterr().out.rstrip().endswith("accept=1")

    def test_lcac_key(self, lcac_files, capsys):
        img = lcac_files / "b.pgm"
        assert run("authenticate", "--image", img, "--in", img, "--harness", "--key", 77) == EXIT_OK
        assert "accept=1" in capsys.readouterr().out
        assert run("authenticate", "--image", img, "--in", img, "--harness") == EXIT_USAGE


class TestEval:
    def test_deterministic_outputs(self, tmp_path, capsys):
        (tmp_path / "a.cfg").write_text("family = 2lqr\nattack = direct\ntrials = 3\nseed = 9\n")
        argv = ["eval", "--config", tmp_path / "a.cfg"]
        assert run(*argv, "--csv", tmp_path / "1.csv", "--table", tmp_path / "1.txt") == EXIT_OK
        assert run(*argv, "--csv", tmp_path / "2.csv", "--table", tmp_path / "2.txt") == EXIT_OK
        assert (tmp_path / "1.csv").read_text() == (tmp_path / "2.csv").read_text()
        assert (tmp_path / "1.txt").read_text() == (tmp_path / "2.txt").read_text()
        assert len((tmp_path / "1.csv").read_text().splitlines()) == 4
        assert "a" in (tmp_path / "1.txt").read_text().splitlines()[2].split()[0]

    def test_bad_key(self, tmp_path):
        (tmp_path / "b.cfg").write_text("family = 2lqr\nwhatever = 1\n")
        assert run("eval", "--config", tmp_path / "b.cfg") == EXIT_USAGE


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "anticopy", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "generate" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "anticopy", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
