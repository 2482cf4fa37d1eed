import json
import subprocess
import sys

import pytest

from ifs_julia.cli import (EXIT_GATE, EXIT_INVALID, EXIT_OK, ConfigError, build_report,
                           compare_to_baseline, config_from_dict, load_config, load_corpus, main)


def write(path, obj):
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return path


def test_attractor_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["--ifs", "corpus:four_map", "--command", "attractor", "--seed", "7",
                     "--res", "256", "--out", str(tmp_path / d)]) == EXIT_OK
    a = (tmp_path / "a" / "attractor.pgm").read_bytes()
    b = (tmp_path / "b" / "attractor.pgm").read_bytes()
    assert a == b and a.startswith(b"P5\n256 256\n255\n")
    # a dense cloud saturates the raster, so seed sensitivity needs a sparse one
    images = []
    for seed in (7, 8):
        cfg = write(tmp_path / f"s{seed}.json", {"command": "attractor", "ifs": "corpus:four_map",
                                                  "seed": seed, "n_points": 300, "resolution": 256,
                                                  "out": str(tmp_path / f"s{seed}")})
        assert main(["--config", str(cfg)]) == EXIT_OK
        images.append((tmp_path / f"s{seed}" / "attractor.pgm").read_bytes())
    assert images[0] != images[1]


def test_verify_runs_both_pipelines(tmp_path, capsys):
    cfg = write(tmp_path / "run.json", {"command": "verify", "ifs": "corpus:cantor_third",
                                        "resolution": 256, "out": str(tmp_path / "out")})
    assert main(["--config", str(cfg)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and all(line.endswith("PASS") for line in lines)
    out = tmp_path / "out"
    recs = json.loads((out / "metrics_verify_cantor_third.json").read_text())
    assert [r["command"] for r in recs] == ["semigroup", "uqr"]
    for r in recs:
        assert r["passed"] and all(r["gates"].values())
        assert r["hausdorff_px"] < 3
    assert (out / "semigroup_julia.pgm").is_file() and (out / "uqr_julia.pgm").is_file()


def test_uqr_on_overlapping_system_is_rejected(tmp_path, capsys):
    code = main(["--ifs", "corpus:overlap_half", "--command", "uqr", "--res", "128",
                 "--out", str(tmp_path)])
    assert code == EXIT_INVALID
    assert "open set condition" in capsys.readouterr().err


@pytest.mark.parametrize("cfg, needle", [
    ({"command": "verify", "ifs": "corpus:cantor_third", "resolution": 32}, "resolution"),
    ({"command": "verify", "ifs": "corpus:cantor_third", "colour": 1}, "unknown"),
    ({"command": "paint", "ifs": "corpus:cantor_third"}, "command"),
    ({"command": "verify", "ifs": "corpus:nope"}, "no bundled system"),
    ({"command": "verify", "ifs": "corpus:cantor_third", "seed": 1.5}, "seed"),
    ({"command": "verify", "ifs": "corpus:cantor_third", "window": {"half_width": 0.5}}, "window"),
    ({"command": "attractor", "ifs": {"maps": [{"a_re": 0.5, "b_re": 0.7}]}}, "ifs"),
])
def test_config_errors_name_the_field(cfg, needle):
    with pytest.raises(ConfigError, match=needle):
        config_from_dict(cfg)


def test_malformed_config_reports_line(tmp_path, capsys):
    p = write(tmp_path / "bad.json", '{\n  "command": "verify",\n  "seed": ,\n}')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)
    assert main(["--config", str(p)]) == EXIT_INVALID
    assert "line 3" in capsys.readouterr().err


def test_ifs_file_relative_to_config(tmp_path):
    write(tmp_path / "sys.json", load_corpus("tri_quarter"))
    cfg = load_config(write(tmp_path / "run.json", {"command": "attractor", "ifs": "sys.json"}))
    assert cfg.ifs_source.endswith("sys.json")


def test_config_hash_stability():
    base = {"command": "verify", "ifs": "corpus:cantor_third", "seed": 3}
    h = config_from_dict(base).config_hash()
    assert config_from_dict(dict(base, out="elsewhere")).config_hash() == h
    assert config_from_dict(dict(base, ifs=load_corpus("cantor_third"))).config_hash() == h
    assert config_from_dict(dict(base, seed=4)).config_hash() != h
    assert config_from_dict(dict(base, resolution=256)).config_hash() != h
    assert len(h) == 64


def record(**kw):
    rec = {"command": "semigroup", "system": "s", "hausdorff_px": 0.7,
           "K": {"generator": 12.0}, "seam_max": 1e-10, "passed": True}
    rec.update(kw)
    return rec


def test_report_rows_and_regressions():
    rep = build_report([record()], None)
    assert rep["mode"] == "bootstrap" and len(rep["rows"]) == 1 and rep["regressions"] == 0
    base = {"semigroup:s": record()}
    assert compare_to_baseline(record(), base["semigroup:s"]) == []
    flags = compare_to_baseline(record(hausdorff_px=2.0, K={"generator": 14.0}, seam_max=1e-6,
                                       passed=False), base["semigroup:s"])
    assert len(flags) == 4
    rep = build_report([record(hausdorff_px=2.0)], base)
    assert rep["mode"] == "compare" and rep["regressions"] == 1
    with pytest.raises(ConfigError):
        build_report([], None)


def test_report_command_bootstrap_compare_and_corruption(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["--ifs", "corpus:tri_quarter", "--command", "semigroup", "--res", "256",
                 "--out", str(out)]) == EXIT_OK
    assert main(["--command", "report", "--out", str(out)]) == EXIT_OK
    assert "mode: bootstrap" in capsys.readouterr().out
    assert (out / "baseline.json").is_file()
    assert main(["--command", "report", "--out", str(out)]) == EXIT_OK
    assert "mode: compare" in capsys.readouterr().out
    # corrupt one stored metric: the comparison must flag it
    mpath = out / "metrics_semigroup_tri_quarter.json"
    recs = json.loads(mpath.read_text())
    recs[0]["hausdorff_px"] += 5
    mpath.write_text(json.dumps(recs))
    assert main(["--command", "report", "--out", str(out)]) == EXIT_GATE
    text = (out / "report.txt").read_text()
    assert "hausdorff_px" in text and "baseline" in text


def test_report_without_records_is_invalid(tmp_path):
    assert main(["--command", "report", "--out", str(tmp_path)]) == EXIT_INVALID


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ifs_julia.cli", "--ifs", "corpus:cantor_third",
                          "--command", "attractor", "--res", "64", "--out", str(tmp_path)],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0, res.stderr
    assert res.stdout.startswith("attractor-cantor_third-")
    res = subprocess.run([sys.executable, "-m", "ifs_julia.cli"], capture_output=True, text=True,
                         timeout=120)
    assert res.returncode == EXIT_INVALID and "config error" in res.stderr
