import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from spinerecon.cli import main
from spinerecon.meshio import save_mesh
from spinerecon.spine import load_landmarks
from spinerecon.synthetic import default_vertebra_params, generate_vertebra


def dir_digest(path):
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        h.update(name.encode())
        with open(os.path.join(path, name), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("synth"))
    assert main(["synth", "--out", out, "--seed", "3"]) == 0
    return out


class TestSynth:
    def test_outputs_present(self, synth_dir):
        names = sorted(os.listdir(synth_dir))
        assert "morphometrics.json" in names
        assert sum(n.endswith(".ply") for n in names) == 5
        assert sum(n.startswith("landmarks_") for n in names) == 5

    def test_byte_identical_reruns(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["synth", "--out", a, "--seed", "7"]) == 0
        assert main(["synth", "--out", b, "--seed", "7"]) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_invalid_params_rejected_before_writing(self, tmp_path, capsys):
        params = tmp_path / "params.json"
        params.write_text(json.dumps({
            "levels": [{"level": "L1", "endplate_tilt_deg": 45.0},
                       {"level": "L2"}],
            "ivd_heights": [5.0], "fsu_angles": [0.0],
        }))
        out = tmp_path / "out"
        assert main(["synth", "--params", str(params), "--out", str(out)]) == 1
        assert "tilt" in capsys.readouterr().err
        assert not out.exists()


class TestLandmarks:
    def test_five_levels(self, synth_dir, tmp_path, capsys):
        meshes = sorted(
            os.path.join(synth_dir, n) for n in os.listdir(synth_dir) if n.endswith(".ply"))
        out = str(tmp_path / "lmk")
        assert main(["landmarks", *meshes, "--out", out]) == 0
        assert sorted(os.listdir(out)) == [f"landmarks_L{i}.json" for i in range(1, 6)]
        level, lms = load_landmarks(os.path.join(out, "landmarks_L3.json"))
        assert level == "L3"
        summary = capsys.readouterr().out
        assert summary.startswith("landmarks ")
        assert "levels=L1,L2,L3,L4,L5" in summary

    def test_matches_generator_truth(self, synth_dir, tmp_path):
        meshes = sorted(
            os.path.join(synth_dir, n) for n in os.listdir(synth_dir) if n.endswith(".ply"))
        out = str(tmp_path / "lmk")
        main(["landmarks", *meshes, "--out", out])
        for level in ("L1", "L5"):
            _, detected = load_landmarks(os.path.join(out, f"landmarks_{level}.json"))
            _, truth = load_landmarks(os.path.join(synth_dir, f"landmarks_{level}.json"))
            err = np.linalg.norm(detected.points() - truth.points(), axis=1).max()
            assert err < 1e-6

    def test_spine_curve_axis_mode(self, synth_dir, tmp_path):
        # spline-tangent axes on a coherent lordotic stack still land on
        # the exact extreme vertices
        meshes = sorted(
            os.path.join(synth_dir, n) for n in os.listdir(synth_dir) if n.endswith(".ply"))
        out = str(tmp_path / "lmk_curve")
        rc = main(["landmarks", *meshes, "--out", out,
                   "--set", "anatomy.use_spine_curve=true"])
        assert rc == 0
        for level in ("L1", "L3", "L5"):
            _, detected = load_landmarks(os.path.join(out, f"landmarks_{level}.json"))
            _, truth = load_landmarks(os.path.join(synth_dir, f"landmarks_{level}.json"))
            err = np.linalg.norm(detected.points() - truth.points(), axis=1).max()
            assert err < 1e-6

    def test_corrupt_file_nonzero_exit_names_file(self, tmp_path, capsys):
        bad = tmp_path / "vertebra_L1.ply"
        bad.write_text("not a ply file")
        out = str(tmp_path / "lmk")
        assert main(["landmarks", str(bad), "--out", out]) == 1
        assert "vertebra_L1.ply" in capsys.readouterr().err

    def test_single_vertebra_warns_and_succeeds(self, tmp_path, capsys):
        mesh, _, _ = generate_vertebra(default_vertebra_params("L3"))
        path = str(tmp_path / "vertebra_L3.ply")
        save_mesh(mesh, path)
        out = str(tmp_path / "lmk")
        assert main(["landmarks", path, "--out", out]) == 0
        assert "single vertebra" in capsys.readouterr().err

    def test_levels_override_and_duplicates(self, synth_dir, tmp_path, capsys):
        meshes = sorted(
            os.path.join(synth_dir, n) for n in os.listdir(synth_dir) if n.endswith(".ply"))
        assert main(["landmarks", *meshes[:2], "--out", str(tmp_path / "x"),
                     "--levels", "L1,L1"]) == 1
        assert "duplicate" in capsys.readouterr().err

    def test_threads_flag_output_identical(self, synth_dir, tmp_path):
        meshes = sorted(
            os.path.join(synth_dir, n) for n in os.listdir(synth_dir) if n.endswith(".ply"))
        a, b = str(tmp_path / "t1"), str(tmp_path / "t4")
        assert main(["landmarks", *meshes, "--out", a]) == 0
        assert main(["landmarks", *meshes, "--out", b, "--threads", "4"]) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_detection_failure_names_level(self, tmp_path, capsys):
        # tilted plates cannot pass an extreme similarity threshold
        mesh, _, _ = generate_vertebra(
            default_vertebra_params("L2", endplate_tilt_deg=10.0))
        path = str(tmp_path / "vertebra_L2.ply")
        save_mesh(mesh, path)
        rc = main(["landmarks", path, "--out", str(tmp_path / "lmk"),
                   "--set", "anatomy.cos_threshold=0.9999"])
        assert rc == 1
        err = capsys.readouterr().err
        assert "L2" in err and "endplate" in err


@pytest.fixture(scope="module")
def recon_dir(synth_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("recon"))
    rc = main(["reconstruct", "--atlas", synth_dir, "--targets", synth_dir,
               "--out", out, "--mode", "ours"])
    assert rc == 0
    return out


class TestReconstructEvaluate:
    def test_outputs(self, recon_dir):
        names = sorted(os.listdir(recon_dir))
        assert "transforms.json" in names
        assert "facet_gaps.json" in names
        assert sum(n.startswith("registered_") for n in names) == 5
        assert sum(n.startswith("landmarks_") for n in names) == 5

    def test_identity_case_transforms_are_identity(self, recon_dir):
        from spinerecon.spine import load_transforms
        transforms = load_transforms(os.path.join(recon_dir, "transforms.json"))
        for T in transforms.values():
            np.testing.assert_allclose(T, np.eye(4), atol=1e-9)

    def test_evaluate_identity_near_zero(self, recon_dir, synth_dir, tmp_path, capsys):
        out = str(tmp_path / "eval")
        rc = main(["evaluate", "--registered", recon_dir, "--ground-truth", synth_dir,
                   "--gt-landmarks", synth_dir, "--out", out])
        assert rc == 0
        report = json.loads(open(os.path.join(out, "report.json")).read())
        assert report["p2m_vb_mean_mm"] < 1e-9
        assert report["landmark_mae_mean_mm"] < 1e-9
        assert report["fsu_mae_deg"] < 1e-9
        assert "facet_gaps" in report
        csv_text = open(os.path.join(out, "report.csv")).read()
        assert csv_text.splitlines()[0].split(",")[:2] == ["mode", "level"]

    def test_evaluate_without_gt_landmarks_leaves_columns_absent(
            self, recon_dir, synth_dir, tmp_path, capsys):
        out = str(tmp_path / "eval2")
        rc = main(["evaluate", "--registered", recon_dir, "--ground-truth", synth_dir,
                   "--out", out])
        assert rc == 0
        report = json.loads(open(os.path.join(out, "report.json")).read())
        assert report["landmark_mae_mm"] is None
        assert report["fsu_mae_deg"] is None
        assert report["p2m_vb_mean_mm"] < 1e-9

    def test_missing_level_aborts_with_name(self, synth_dir, tmp_path, capsys):
        partial = tmp_path / "partial"
        partial.mkdir()
        for name in os.listdir(synth_dir):
            if name.endswith(".ply") and "L4" not in name:
                (partial / name).write_bytes(open(os.path.join(synth_dir, name), "rb").read())
        rc = main(["reconstruct", "--atlas", synth_dir, "--targets", str(partial),
                   "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "L4" in capsys.readouterr().err

    def test_per_pair_facet_width_via_config(self, synth_dir, tmp_path):
        widths = '{"L1-L2":2.0,"L2-L3":1.5,"L3-L4":1.5,"L4-L5":1.0}'
        out = str(tmp_path / "widths")
        rc = main(["reconstruct", "--atlas", synth_dir, "--targets", synth_dir,
                   "--out", out, "--set", f"facet.target_width_mm={widths}"])
        assert rc == 0
        gaps = json.loads(open(os.path.join(out, "facet_gaps.json")).read())
        assert gaps["L1-L2"]["left"]["mean_gap_mm"] == pytest.approx(2.0, abs=0.2)
        assert gaps["L4-L5"]["right"]["mean_gap_mm"] == pytest.approx(1.0, abs=0.2)

    def test_no_facets_flag(self, synth_dir, tmp_path, capsys):
        out = str(tmp_path / "nf")
        rc = main(["reconstruct", "--atlas", synth_dir, "--targets", synth_dir,
                   "--out", out, "--no-facets"])
        assert rc == 0
        assert "facets=skipped" in capsys.readouterr().out
        assert not os.path.exists(os.path.join(out, "facet_gaps.json"))

    def test_reconstruct_deterministic(self, synth_dir, tmp_path):
        a, b = str(tmp_path / "ra"), str(tmp_path / "rb")
        for out in (a, b):
            assert main(["reconstruct", "--atlas", synth_dir, "--targets", synth_dir,
                         "--out", out, "--seed", "11"]) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_reconstruct_reports_subsecond_time(self, synth_dir, tmp_path, capsys):
        out = str(tmp_path / "timed")
        assert main(["reconstruct", "--atlas", synth_dir, "--targets", synth_dir,
                     "--out", out]) == 0
        summary = capsys.readouterr().out
        elapsed = float(summary.split("elapsed_s=")[1].split()[0])
        assert elapsed < 1.0

    def test_evaluate_perturbed_case(self, synth_dir, tmp_path):
        # shift every ground-truth mesh so the report shows a uniform error
        import spinerecon as sr
        shifted = tmp_path / "shifted"
        shifted.mkdir()
        T = np.eye(4)
        T[:3, 3] = [0.0, 1.5, 0.0]
        for name in os.listdir(synth_dir):
            src = os.path.join(synth_dir, name)
            if name.endswith(".ply"):
                mesh = sr.load_mesh(src)
                save_mesh(sr.transform_mesh(mesh, T), str(shifted / name))
            elif name.startswith("landmarks_"):
                level, lms = load_landmarks(src)
                from spinerecon.spine import save_landmarks as save_lmk
                save_lmk(str(shifted / name), level, lms.transformed(T))
        recon = str(tmp_path / "recon")
        assert main(["reconstruct", "--atlas", synth_dir, "--targets", synth_dir,
                     "--out", recon, "--no-facets"]) == 0
        out = str(tmp_path / "eval")
        assert main(["evaluate", "--registered", recon, "--ground-truth", str(shifted),
                     "--gt-landmarks", str(shifted), "--out", out]) == 0
        report = json.loads(open(os.path.join(out, "report.json")).read())
        # landmarks are offset by exactly 1.5 mm; morphometrics are shift-invariant
        assert report["landmark_mae_mean_mm"] == pytest.approx(1.5, abs=1e-9)
        assert report["fsu_mae_deg"] == pytest.approx(0.0, abs=1e-9)
        assert 0 < report["p2m_full_mean_mm"] <= 1.5


class TestConfig:
    def test_dump_is_valid_json(self, capsys):
        assert main(["config", "--dump"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["anatomy"]["cos_threshold"] == 0.8
        assert payload["facet"]["target_width_mm"] == 1.5

    def test_set_override(self, capsys):
        assert main(["config", "--dump", "--set", "anatomy.cos_threshold=0.75"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["anatomy"]["cos_threshold"] == 0.75

    def test_bad_key_rejected(self, capsys):
        assert main(["config", "--set", "anatomy.nope=1"]) == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_bad_value_rejected(self, capsys):
        assert main(["config", "--set", "anatomy.cos_threshold=2.0"]) == 1
        assert "cos_threshold" in capsys.readouterr().err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spinerecon.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
