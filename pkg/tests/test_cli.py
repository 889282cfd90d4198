"""End-to-end tests of the command-line pipeline."""

import os

import numpy as np
import pytest

from calibrix.cli import main
from calibrix.meshes import quarter_plate_mesh
from calibrix.mesh_fem import write_mesh_file


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    write_mesh_file(path / "plate.mesh", quarter_plate_mesh(8, 6))
    write_mesh_file(path / "plate_fine.mesh", quarter_plate_mesh(16, 15, grading=1.3))
    return path


def write_config(path, name, **keys):
    cfg = path / name
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in keys.items()))
    return str(cfg)


@pytest.fixture(scope="module")
def generated(workdir):
    cfg = write_config(
        workdir, "gen.cfg",
        mesh_file=str(workdir / "plate.mesh"),
        fine_mesh_file=str(workdir / "plate_fine.mesh"),
        E_true=210000.0, nu_true=0.3, load=1500.0, sigma=2e-4, seed=42,
        data_out=str(workdir / "data.csv"),
        manifest_out=str(workdir / "manifest.txt"),
    )
    assert main(["generate", "-c", cfg]) == 0
    return cfg


class TestGenerate:
    def test_deterministic_output(self, workdir, generated):
        first = (workdir / "data.csv").read_bytes()
        assert main(["generate", "-c", generated]) == 0
        assert (workdir / "data.csv").read_bytes() == first

    def test_seed_changes_data_not_manifest_shape(self, workdir):
        outputs = {}
        for seed in (42, 43):
            cfg = write_config(
                workdir, f"gen{seed}.cfg",
                mesh_file=str(workdir / "plate.mesh"),
                E_true=210000.0, nu_true=0.3, sigma=4e-4, seed=seed,
                data_out=str(workdir / f"data{seed}.csv"),
                manifest_out=str(workdir / f"manifest{seed}.txt"),
            )
            assert main(["generate", "-c", cfg]) == 0
            outputs[seed] = ((workdir / f"data{seed}.csv").read_text(),
                             (workdir / f"manifest{seed}.txt").read_text())
        assert outputs[42][0] != outputs[43][0]
        m42 = [l for l in outputs[42][1].splitlines()
               if not l.startswith(("seed", "config_hash", "data_out"))]
        m43 = [l for l in outputs[43][1].splitlines()
               if not l.startswith(("seed", "config_hash", "data_out"))]
        assert m42 == m43

    def test_missing_mesh_exits_2(self, workdir, capsys):
        cfg = write_config(workdir, "bad.cfg", mesh_file=str(workdir / "nope.mesh"),
                           E_true=210000.0, nu_true=0.3)
        assert main(["generate", "-c", cfg]) == 2
        assert "nope.mesh" in capsys.readouterr().err

    def test_env_seed_fallback(self, workdir, monkeypatch):
        cfg = write_config(
            workdir, "genenv.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            E_true=210000.0, nu_true=0.3, sigma=4e-4,
            data_out=str(workdir / "data_env.csv"),
            manifest_out=str(workdir / "manifest_env.txt"),
        )
        monkeypatch.setenv("CALIBRIX_SEED", "42")
        assert main(["generate", "-c", cfg]) == 0
        assert "seed = 42" in (workdir / "manifest_env.txt").read_text()


class TestCalibrate:
    def test_reduced(self, workdir, generated):
        cfg = write_config(
            workdir, "cal.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            data=str(workdir / "data.csv"),
            report_out=str(workdir / "cal_reduced.txt"),
        )
        assert main(["calibrate", "-c", cfg, "--method", "reduced"]) == 0
        report = (workdir / "cal_reduced.txt").read_text()
        assert "E = " in report and "delta_E = " in report
        E = float([l for l in report.splitlines() if l.startswith("E = ")][0][4:])
        assert abs(E - 210000.0) < 0.05 * 210000.0
        assert "config_hash = " in report

    def test_vfm_single_solve(self, workdir, generated):
        cfg = write_config(
            workdir, "calv.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            data=str(workdir / "data.csv"),
            report_out=str(workdir / "cal_vfm.txt"),
        )
        assert main(["calibrate", "-c", cfg, "--method", "vfm"]) == 0
        report = (workdir / "cal_vfm.txt").read_text()
        assert "iterations" not in report  # direct solve, no iteration log
        assert "residual_norm = " in report

    def test_aao_fem_echoes_weights(self, workdir, generated):
        cfg = write_config(
            workdir, "cala.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            data=str(workdir / "data.csv"),
            report_out=str(workdir / "cal_aao.txt"),
        )
        assert main(["calibrate", "-c", cfg, "--method", "aao-fem"]) == 0
        report = (workdir / "cal_aao.txt").read_text()
        assert "sigma_s = 1.0" in report
        assert "sigma_d = 1e-05" in report

    def test_unknown_method_exits_2(self, workdir, generated):
        cfg = write_config(
            workdir, "calx.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            data=str(workdir / "data.csv"),
            method="wobble",
        )
        assert main(["calibrate", "-c", cfg]) == 2


class TestUq:
    def test_asymptotic_report(self, workdir, generated):
        cfg = write_config(
            workdir, "uqa.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            data=str(workdir / "data.csv"),
            report_out=str(workdir / "uq_asym.txt"),
        )
        assert main(["uq", "-c", cfg, "--method", "asymptotic"]) == 0
        report = (workdir / "uq_asym.txt").read_text()
        assert "delta" in report and "ci = [" in report

    def test_two_step_report_columns(self, workdir):
        cfg = write_config(
            workdir, "uqt.cfg", seed=0,
            report_out=str(workdir / "uq_two.txt"),
        )
        assert main(["uq", "-c", cfg, "--method", "two-step"]) == 0
        report = (workdir / "uq_two.txt").read_text()
        for name in ("K", "G", "k", "b", "c"):
            assert f"{name} = " in report
        assert "Delta = " in report and "delta = " in report

    def test_bayes_chain_csv(self, workdir, generated):
        cfg = write_config(
            workdir, "uqb.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            data=str(workdir / "data.csv"),
            sigma_e=2e-4, walkers=8, steps=20, seed=3,
            chain_out=str(workdir / "chain.csv"),
            report_out=str(workdir / "uq_bayes.txt"),
        )
        assert main(["uq", "-c", cfg, "--method", "bayes"]) == 0
        chain = (workdir / "chain.csv").read_text().splitlines()
        assert chain[0] == "walker,step,E,nu,log_post,accepted"
        assert len(chain) == 1 + 8 * 20

    def test_hierarchical_smoke(self, workdir):
        cfg = write_config(
            workdir, "uqh.cfg", seed=0, n_outer=3, walkers=8, steps=20,
            means_out=str(workdir / "means.csv"),
            stds_out=str(workdir / "stds.csv"),
            report_out=str(workdir / "uq_hier.txt"),
        )
        assert main(["uq", "-c", cfg, "--method", "hierarchical"]) == 0
        means = (workdir / "means.csv").read_text().splitlines()
        assert means[0] == "draw,k,b,c"
        assert len(means) == 1 + 3

    def test_missing_data_artifact_exits_2(self, workdir, capsys):
        cfg = write_config(
            workdir, "uqm.cfg",
            mesh_file=str(workdir / "plate.mesh"),
            data=str(workdir / "missing.csv"),
        )
        assert main(["uq", "-c", cfg, "--method", "asymptotic"]) == 2
        assert "missing.csv" in capsys.readouterr().err


class TestReportAndDeterminism:
    def test_report_prints(self, workdir, generated, capsys):
        assert main(["report", str(workdir / "manifest.txt")]) == 0
        assert "calibrix data manifest" in capsys.readouterr().out
        assert main(["report", str(workdir / "no-such-file")]) == 2

    def test_full_pipeline_byte_identical(self, workdir, tmp_path):
        files = {}
        for run in ("a", "b"):
            gen = write_config(
                workdir, f"det_gen_{run}.cfg",
                mesh_file=str(workdir / "plate.mesh"),
                E_true=210000.0, nu_true=0.3, sigma=2e-4, seed=11,
                data_out=str(tmp_path / f"{run}_data.csv"),
                manifest_out=str(tmp_path / f"{run}_manifest.txt"),
            )
            assert main(["generate", "-c", gen]) == 0
            cal = write_config(
                workdir, f"det_cal_{run}.cfg",
                mesh_file=str(workdir / "plate.mesh"),
                data=str(tmp_path / f"{run}_data.csv"),
                report_out=str(tmp_path / f"{run}_cal.txt"),
            )
            assert main(["calibrate", "-c", cal, "--method", "reduced"]) == 0
            files[run] = [
                (tmp_path / f"{run}_data.csv").read_bytes(),
                (tmp_path / f"{run}_cal.txt").read_bytes(),
            ]
        assert files["a"][0] == files["b"][0]
        # Reports differ only in the config hash line (paths differ); compare
        # the numeric content.
        a_lines = files["a"][1].decode().splitlines()
        b_lines = files["b"][1].decode().splitlines()
        strip = lambda ls: [l for l in ls if not l.startswith("config_hash")]
        assert strip(a_lines) == strip(b_lines)
