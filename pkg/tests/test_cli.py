import json
import subprocess
import sys

import numpy as np
import pytest

from cst import io as cio
from cst.cli import (EXIT_FORMAT, EXIT_MISSING_INPUT, EXIT_OK, EXIT_PIPELINE, EXIT_STAGE,
                     EXIT_USAGE, main)
from cst.physics import PhysicsParams, lambda_weight

SMALL = ["--n", "48", "--ns", "67", "--ntheta", "40", "--no-preview"]


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--phantom", "disk", "--out-dir", str(d), "--seed", "3", *SMALL[:-1]]) == 0
    return d


def test_simulate_outputs(sim_dir):
    names = {p.name for p in sim_dir.iterdir()}
    for stem in ("phantom", "nonlinear", "linear", "noisy"):
        assert f"sim_{stem}.cst" in names and f"sim_{stem}.pgm" in names
    assert "manifest_simulate.json" in names
    b, meta = cio.read_sinogram_with_meta(sim_dir / "sim_noisy.cst")
    assert b.values.shape == (40, 67) and meta["stage"] == "noisy" and meta["seed"] == 3


def test_simulate_default_geometry(tmp_path, capsys):
    code, _, _ = _run(capsys, "simulate", "--phantom", "disk", "--n", "16", "--gamma", "0",
                      "--kernel-radius", "0", "--out-dir", tmp_path, "--no-preview")
    assert code == EXIT_OK
    assert cio.read_sinogram(tmp_path / "sim_nonlinear.cst").values.shape == (360, 282)


def test_manifest_contents(sim_dir):
    m = json.loads((sim_dir / "manifest_simulate.json").read_text())
    assert m["command"] == "simulate" and m["seed"] == 3
    assert set(m["outputs"]) >= {"sim_noisy.cst", "sim_linear.cst"}
    assert len(m["artifact_hash"]) == 40 and m["wall_time_s"] >= 0
    assert m["config"]["geometry"]["ns"] == 67


def test_gamma_zero_noisy_equals_noiseless(tmp_path, capsys):
    code, _, _ = _run(capsys, "simulate", "--phantom", "square", "--gamma", "0", "--out-dir", tmp_path, *SMALL)
    assert code == EXIT_OK
    a = cio.read_sinogram(tmp_path / "sim_noisy.cst").values
    b = cio.read_sinogram(tmp_path / "sim_nonlinear.cst").values
    assert a.tobytes() == b.tobytes()


def test_zero_attenuation_is_scaled_linear(tmp_path, capsys):
    code, _, _ = _run(capsys, "simulate", "--phantom", "disk", "--atten-a", "0", "--atten-b", "0",
                      "--lambda", "2.5", "--out-dir", tmp_path, *SMALL)
    assert code == EXIT_OK
    nl = cio.read_sinogram(tmp_path / "sim_nonlinear.cst").values
    lin = cio.read_sinogram(tmp_path / "sim_linear.cst").values
    lam = lambda_weight(PhysicsParams(a=0.0, b=0.0, lambda_value=2.5))
    assert np.linalg.norm(nl - lam * lin) <= 1e-10 * np.linalg.norm(lam * lin)


def test_outputs_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert _run(capsys, "simulate", "--phantom", "non_convex", "--seed", "11",
                    "--out-dir", tmp_path / d, *SMALL)[0] == EXIT_OK
    for name in ("sim_phantom.cst", "sim_nonlinear.cst", "sim_linear.cst", "sim_noisy.cst"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest_simulate.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest_simulate.json").read_text())
    assert ma["artifact_hash"] == mb["artifact_hash"]


def test_seed_changes_noise(tmp_path, capsys):
    for d, seed in (("a", 1), ("b", 2)):
        _run(capsys, "simulate", "--phantom", "disk", "--seed", seed, "--out-dir", tmp_path / d, *SMALL)
    a = cio.read_sinogram(tmp_path / "a" / "sim_noisy.cst").values
    b = cio.read_sinogram(tmp_path / "b" / "sim_noisy.cst").values
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("method", ["fbp", "landweber", "tv"])
def test_pipeline_stages(sim_dir, tmp_path, capsys, method):
    sino = sim_dir / "sim_noisy.cst"
    code, _, _ = _run(capsys, "reconstruct", sino, "--method", method, "--n", "48", "--iters", "20",
                      "--out-dir", tmp_path)
    assert code == EXIT_OK
    tag = "fbp_lambda" if method == "fbp" else method
    recon = tmp_path / f"recon_{tag}.cst"
    assert cio.read_image_with_meta(recon)[1]["stage"] == "reconstruction"
    if method != "fbp":
        table = cio.read_csv(tmp_path / f"recon_{tag}_trace.csv")
        assert table["iteration"].size > 1
    code, out, _ = _run(capsys, "edges", recon, "--out-dir", tmp_path)
    assert code == EXIT_OK and out.startswith("edge pixels:")
    for name in ("manifest_reconstruct.json", "manifest_edges.json", f"recon_{tag}.pgm"):
        assert (tmp_path / name).is_file()


def test_support_and_density(sim_dir, tmp_path, capsys):
    code, _, _ = _run(capsys, "edges", sim_dir / "sim_phantom.cst", "--out-dir", tmp_path)
    assert code == EXIT_OK
    code, out, _ = _run(capsys, "support", tmp_path / "edges_phantom.cst", "--truth", "disk",
                        "--out-dir", tmp_path)
    assert code == EXIT_OK and "p = " in out
    results = json.loads((tmp_path / "manifest_support.json").read_text())["results"]
    assert results["p"] >= 0.95 and results["enclosed"]
    code, out, _ = _run(capsys, "density", "--support", tmp_path / "support_phantom.cst",
                        "--sinogram", sim_dir / "sim_nonlinear.cst", "--umax", "2", "--ngrid", "41",
                        "--out-dir", tmp_path)
    assert code == EXIT_OK
    ne_hat = float(out.strip().splitlines()[-1])
    assert ne_hat == pytest.approx(json.loads((tmp_path / "density.json").read_text())["ne_hat"], abs=1e-6)
    assert 0.8 < ne_hat < 1.2
    table = cio.read_csv(tmp_path / "density_residuals.csv")
    assert list(table) == ["ne", "residual"] and table["ne"].size == 41


def test_support_failure_exit_code(sim_dir, tmp_path, capsys):
    blank = cio.read_image(sim_dir / "sim_phantom.cst")
    cio.write_image(blank.with_values(np.zeros(blank.shape)), tmp_path / "e.cst", {"stage": "edges"})
    code, _, err = _run(capsys, "support", tmp_path / "e.cst", "--out-dir", tmp_path)
    assert code == EXIT_PIPELINE and "pipeline failure" in err


def test_stage_mismatch(sim_dir, tmp_path, capsys):
    code, _, err = _run(capsys, "support", sim_dir / "sim_noisy.cst", "--out-dir", tmp_path)
    assert code == EXIT_STAGE and "stage mismatch" in err
    code, _, _ = _run(capsys, "support", sim_dir / "sim_phantom.cst", "--out-dir", tmp_path)
    assert code == EXIT_STAGE


def test_missing_input(tmp_path, capsys):
    code, _, err = _run(capsys, "reconstruct", tmp_path / "nope.cst", "--out-dir", tmp_path)
    assert code == EXIT_MISSING_INPUT != EXIT_OK and "not found" in err


def test_malformed_input(tmp_path, capsys):
    bad = tmp_path / "bad.cst"
    bad.write_bytes(b"CSTSIN01\x02\x00\x00\x00{}")
    code, _, err = _run(capsys, "reconstruct", bad, "--out-dir", tmp_path)
    assert code == EXIT_FORMAT and "format error" in err


def test_usage_errors(tmp_path, capsys):
    assert _run(capsys, "simulate", "--out-dir", tmp_path)[0] == EXIT_USAGE
    assert _run(capsys, "simulate", "--phantom", "disk", "--water", "--atten-a", "1",
                "--out-dir", tmp_path)[0] == EXIT_USAGE
    assert _run(capsys, "simulate", "--phantom", "disk", "--gamma", "-1", "--out-dir", tmp_path)[0] == EXIT_USAGE
    assert _run(capsys, "bogus")[0] == EXIT_USAGE
    assert _run(capsys, "reconstruct", "x.cst", "--method", "magic")[0] == EXIT_USAGE


def test_threads_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CST_THREADS", "zero")
    code, _, err = _run(capsys, "simulate", "--phantom", "disk", "--out-dir", tmp_path, *SMALL)
    assert code == EXIT_USAGE and "CST_THREADS" in err
    monkeypatch.setenv("CST_THREADS", "2")
    assert _run(capsys, "simulate", "--phantom", "disk", "--out-dir", tmp_path, *SMALL)[0] == EXIT_OK


def test_phantom_file(tmp_path, capsys):
    spec = {"name": "", "positive": True, "amplitude": [[0, 0, 1.0]],
            "shapes": [{"kind": "ellipse", "cx": 0.1, "cy": 0.0, "a": 0.4, "b": 0.2, "angle": 0.3, "sign": 1}]}
    (tmp_path / "p.json").write_text(json.dumps(spec))
    code, _, _ = _run(capsys, "simulate", "--phantom-file", tmp_path / "p.json", "--out-dir", tmp_path, *SMALL)
    assert code == EXIT_OK and (tmp_path / "sim_phantom.json").is_file()
    spec["shapes"][0]["a"] = -1
    (tmp_path / "q.json").write_text(json.dumps(spec))
    code, _, _ = _run(capsys, "simulate", "--phantom-file", tmp_path / "q.json", "--out-dir", tmp_path, *SMALL)
    assert code == EXIT_FORMAT


def test_analyze_reports(sim_dir, tmp_path, capsys):
    code, out, _ = _run(capsys, "analyze", "sobolev", "--phantom", "disk", "--n", "64", "--out-dir", tmp_path)
    assert code == EXIT_OK and "fitted Sobolev order" in out
    assert json.loads((tmp_path / "sobolev.json").read_text())["alpha"] == 0.0
    code, _, _ = _run(capsys, "analyze", "vline-fourier", "--n", "48", "--nphi", "16", "--k-max", "1", "--taper", "0.5", "0.95",
                      "--out-dir", tmp_path)
    assert code == EXIT_OK
    assert list(cio.read_csv(tmp_path / "vline_fourier.csv"))[0] == "k"
    code, _, _ = _run(capsys, "analyze", "sing-order", sim_dir / "sim_nonlinear.cst", "--window", "16",
                      "--out-dir", tmp_path)
    assert code == EXIT_OK and (tmp_path / "sing_order_flags.csv").is_file()
    assert (tmp_path / "manifest_analyze_sing_order.json").is_file()


def test_edge_ratio_report(tmp_path, capsys):
    code, _, _ = _run(capsys, "simulate", "--phantom", "elliptic_annulus", "--water", "--gamma", "0",
                      "--n", "100", "--ns", "141", "--ntheta", "90", "--no-preview", "--out-dir", tmp_path)
    assert code == EXIT_OK
    code, out, _ = _run(capsys, "analyze", "edge-ratio", "--nonlinear", tmp_path / "sim_nonlinear.cst",
                        "--linear", tmp_path / "sim_linear.cst", "--phantom", "elliptic_annulus",
                        "--out-dir", tmp_path)
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "edge_ratio.json").read_text())
    assert rep["ratio_nl"] < rep["ratio_lin"]
    assert out.splitlines()[0].startswith("ratio_nl =")


def test_edge_ratio_needs_inner_shape(sim_dir, tmp_path, capsys):
    code, _, _ = _run(capsys, "analyze", "edge-ratio", "--nonlinear", sim_dir / "sim_nonlinear.cst",
                      "--linear", sim_dir / "sim_linear.cst", "--phantom", "disk", "--out-dir", tmp_path)
    assert code == EXIT_USAGE


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "cst.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("simulate", "reconstruct", "edges", "support", "density", "analyze", "--out-dir",
                "--seed", "--threads"):
        assert cmd in out.stdout
