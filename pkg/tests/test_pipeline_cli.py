import json

import numpy as np
import pytest

from toruskit.cli import main
from toruskit.dynamics import SM_WEAK_K, ObservableSeries, PhaseState, write_series_csv
from toruskit.pipeline import (
    PipelineConfig,
    TorusReport,
    batch_run,
    run_pipeline,
    sample_initial_state,
    write_batch_outputs,
)

WEAK_MAP = {"kind": "coupled_standard_map", "K_sm": SM_WEAK_K.tolist()}
SHORT = dict(map=WEAK_MAP, ladder=[(300, 600)], classify_tol=1e-10)


def _strip(rep: TorusReport) -> dict:
    doc = rep.to_dict()
    doc.pop("timings")
    return doc


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            PipelineConfig.from_dict({"ladr": [[10, 20]]})

    def test_ladder_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(ladder=[])
        with pytest.raises(ValueError):
            PipelineConfig(ladder=[(20, 40), (10, 40)])

    def test_bad_values(self):
        with pytest.raises(ValueError):
            PipelineConfig(classify_tol=0)
        with pytest.raises(ValueError):
            PipelineConfig(eta=0.5)
        with pytest.raises(ValueError):
            PipelineConfig(map=None)

    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig(**SHORT, d=2)
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = PipelineConfig.from_json(path)
        assert back.to_dict() == cfg.to_dict()
        assert back.N == 1201 and back.torus_dim == 2


class TestRunPipeline:
    def test_fixed_point(self):
        rep = run_pipeline(PipelineConfig(**SHORT), PhaseState([0.0, 0.0], [0.0, 0.0]))
        assert rep.classification == "torus" and rep.stage_failure is None
        assert rep.K == [0, 0] and rep.R_KAM == 0.0 and rep.omega == [0.0, 0.0]

    def test_chaotic(self):
        cfg = PipelineConfig(map={"kind": "coupled_standard_map", "K_sm": [[5, 0], [0, 5]]}, ladder=[(300, 600)])
        rep = run_pipeline(cfg, PhaseState([0.1, 0.2], [0.3, 0.4]))
        assert rep.classification == "not_converged"
        assert rep.R_RRE > 1e-6 and rep.omega is None and rep.stage_failure is None

    def test_weak_torus(self):
        rep = run_pipeline(PipelineConfig(**SHORT), sample_initial_state(0, 2))
        assert rep.classification == "torus" and rep.p == 1
        assert rep.R_h < 1e-8 and rep.R_KAM < 1e-8
        assert abs(rep.det_L) == 1
        assert all(0 <= w <= 0.5 for w in rep.omega)

    def test_deterministic(self):
        cfg = PipelineConfig(**SHORT)
        x0 = sample_initial_state(0, 2)
        assert _strip(run_pipeline(cfg, x0)) == _strip(run_pipeline(cfg, x0))

    def test_trajectory_file(self, tmp_path):
        cfg = PipelineConfig(**SHORT)
        from toruskit.pipeline import _trajectory

        series = _trajectory(cfg, sample_initial_state(0, 2))
        write_series_csv(series, tmp_path / "traj.csv")
        from_file = run_pipeline(PipelineConfig(map=None, trajectory=str(tmp_path / "traj.csv"), d=2,
                                                ladder=[(300, 600)], classify_tol=1e-10))
        direct = run_pipeline(cfg, sample_initial_state(0, 2))
        assert from_file.omega == direct.omega and from_file.R_h == direct.R_h
        assert from_file.kam_status == "unavailable" and from_file.R_KAM is None

    def test_short_trajectory_file(self, tmp_path):
        write_series_csv(ObservableSeries(np.ones((10, 2))), tmp_path / "t.csv")
        rep = run_pipeline(PipelineConfig(map=None, trajectory=str(tmp_path / "t.csv"), ladder=[(300, 600)]))
        assert rep.stage_failure.startswith("trajectory")


class TestBatch:
    def test_sampling(self):
        a = sample_initial_state(3, 7)
        b = sample_initial_state(3, 7)
        assert np.array_equal(a.as_vector(), b.as_vector())
        assert not np.array_equal(a.as_vector(), sample_initial_state(3, 8).as_vector())
        v = np.array([sample_initial_state(0, i).as_vector() for i in range(200)])
        assert v.min() >= 0 and v.max() < 1

    def test_single_sample_matches_run(self):
        cfg = PipelineConfig(**SHORT, seed=5)
        reports, summary = batch_run(cfg, 1)
        assert _strip(reports[0]) == _strip(run_pipeline(cfg, sample_initial_state(5, 0, cfg.map)))
        assert summary["n_samples"] == 1

    def test_workers_and_bytes(self, tmp_path):
        cfg = PipelineConfig(**SHORT, seed=1)
        r1, s1 = batch_run(cfg, 2)
        cfg2 = PipelineConfig(**SHORT, seed=1, workers=2)
        r2, s2 = batch_run(cfg2, 2)
        write_batch_outputs(r1, s1, cfg, tmp_path / "a")
        write_batch_outputs(r2, s2, cfg, tmp_path / "b")
        for name in ("batch.csv", "rre_vs_N.csv", "resid_scatter.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_rejects_other_maps(self):
        with pytest.raises(ValueError):
            batch_run(PipelineConfig(map={"kind": "er3bp_planar"}), 1)
        with pytest.raises(ValueError):
            batch_run(PipelineConfig(**SHORT), 0)


class TestCli:
    @pytest.fixture
    def cfg_path(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(SHORT))
        return path

    def test_run(self, cfg_path, tmp_path, capsys):
        x0 = sample_initial_state(0, 2).as_vector().tolist()
        assert main(["run", "--config", str(cfg_path), "--x0", *map(str, x0), "--out", str(tmp_path / "o")]) == 0
        rep = json.loads((tmp_path / "o" / "report.json").read_text())
        assert rep["classification"] == "torus"
        assert "class=torus" in capsys.readouterr().out

    def test_run_bad_x0(self, cfg_path):
        with pytest.raises(SystemExit):
            main(["run", "--config", str(cfg_path), "--x0", "0.1", "0.2"])

    def test_classify(self, cfg_path, capsys):
        assert main(["classify", "--config", str(cfg_path), "--x0", "0.1", "0.2", "0.3", "0.4"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "J,T,N,R_RRE,R_WBA"
        assert out[1].startswith("300,600,1201,")
        assert out[-1].startswith("class=")

    def test_batch(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "b"
        assert main(["batch", "--config", str(cfg_path), "--n", "2", "--seed", "0", "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["n_samples"] == 2
        for name in ("batch.csv", "rre_vs_N.csv", "resid_scatter.csv", "summary.json",
                     "classification_vs_N.png", "resid_scatter.png", "reports/report_00001.json"):
            assert (out / name).exists()
        assert (out / "classification_vs_N.png").read_bytes()[:4] == b"\x89PNG"
        rows = (out / "batch.csv").read_text().splitlines()
        assert len(rows) == 3 and rows[0].startswith("index,class,p,R_RRE")

    def test_batch_no_plots(self, cfg_path, tmp_path):
        out = tmp_path / "b"
        main(["batch", "--config", str(cfg_path), "--n", "1", "--seed", "0", "--out", str(out), "--no-plots"])
        assert (out / "batch.csv").exists() and not (out / "resid_scatter.png").exists()
