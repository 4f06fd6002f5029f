import csv
import io
import json

import pytest

from kacsphere import cli
from kacsphere.harness import (
    CSV_HEADER,
    ConfigError,
    MetricSpec,
    StudyConfig,
    emit_plot_data,
    fit_slopes,
    load_result,
    plan,
    run_study,
)


def _cfg(tmp_path, **kw):
    d = {"study_id": "null", "density": {"name": "gamma", "params": {}}, "metrics": ["w2", "entropy"],
         "N": [4, 16, 64], "M": 10_000, "seed": 42, "output_dir": str(tmp_path), "quad_nodes": {"kernel": 64}}
    d.update(kw)
    return d


class TestMetricSpec:
    @pytest.mark.parametrize("text", ["wr(3)", "wr(r=3)", {"name": "wr", "r": 3}])
    def test_parse_forms(self, text):
        m = MetricSpec.parse(text)
        assert m.name == "wr" and m.params["r"] == 3.0 and m.id == "wr(r=3)"

    def test_default_id(self):
        assert MetricSpec.parse("tail_prob").id == "tail_prob(k=1,q=0.25)"
        assert MetricSpec.parse("w2").id == "w2"

    @pytest.mark.parametrize("bad", ["nope", "wr(s=1)", "w2(", 17])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            MetricSpec.parse(bad)


class TestValidation:
    def test_valid(self, tmp_path):
        cfg = StudyConfig.from_dict(_cfg(tmp_path))
        assert cfg.base.name == "gamma" or cfg.base.mu == 0.0

    @pytest.mark.parametrize("field,value", [("N", [4, 4, 8]), ("N", [1, 4]), ("M", 10), ("seed", -1),
                                             ("study_id", "a b"), ("quad_nodes", {"kernel": 5})])
    def test_named_field(self, tmp_path, field, value):
        with pytest.raises(ConfigError) as exc:
            StudyConfig.from_dict(_cfg(tmp_path, **{field: value}))
        assert exc.value.field == field

    def test_unknown_field(self, tmp_path):
        with pytest.raises(ConfigError):
            StudyConfig.from_dict({**_cfg(tmp_path), "extra": 1})

    def test_fisher_needs_differentiable(self, tmp_path):
        with pytest.raises(ConfigError, match="fisher requires differentiable base"):
            StudyConfig.from_dict(_cfg(tmp_path, density="uniform", metrics=["fisher"]))

    def test_entropy_moment_guard(self, tmp_path):
        with pytest.raises(ConfigError, match="entropic chaos"):
            StudyConfig.from_dict(_cfg(tmp_path, density={"name": "student_t", "params": {"nu": 3}},
                                       metrics=["entropy"]))

    def test_wr_moment_guard(self, tmp_path):
        with pytest.raises(ConfigError, match="W_r"):
            StudyConfig.from_dict(_cfg(tmp_path, density={"name": "student_t", "params": {"nu": 3}},
                                       metrics=["wr(4)"]))

    def test_unit_energy_guard(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            StudyConfig.from_dict(_cfg(tmp_path, density={"name": "gaussian", "params": {"mu": 0, "sigma": 2}}))
        assert exc.value.field == "density"

    def test_tail_nmin(self, tmp_path):
        with pytest.raises(ConfigError, match="von Bahr"):
            StudyConfig.from_dict(_cfg(tmp_path, metrics=["tail_prob(k=2,q=0.5)"], N=[4, 8, 16]))

    def test_conditioned_cap(self, tmp_path):
        with pytest.raises(ConfigError):
            StudyConfig.from_dict(_cfg(tmp_path, caps={"conditioned_entropy": 128}))

    def test_duplicates(self, tmp_path):
        with pytest.raises(ConfigError):
            StudyConfig.from_dict(_cfg(tmp_path, metrics=["w2", "w2"]))

    def test_round_trip(self, tmp_path):
        cfg = StudyConfig.from_dict(_cfg(tmp_path, metrics=["wr(3)", "tail_prob"], N=[16, 32]))
        assert StudyConfig.from_dict(cfg.to_dict()) == cfg


class TestPlan:
    def test_caps_and_special_cells(self, tmp_path):
        cfg = StudyConfig.from_dict(_cfg(tmp_path, metrics=["conditioned_entropy", "fisher_n2", "alip_step"],
                                         N=[32, 64, 128]))
        cells, skipped = plan(cfg)
        got = [(c.metric.name, c.N) for c in cells]
        assert got == [("conditioned_entropy", 32), ("conditioned_entropy", 64), ("fisher_n2", 2), ("alip_step", 0)]
        assert skipped == [{"metric": "conditioned_entropy", "N": 128, "reason": "above cap 64"}]


class TestRunStudy:
    def test_gaussian_null(self, tmp_path):
        res = run_study(_cfg(tmp_path))
        assert res.exit_code == 0
        for r in res.metric_rows("entropy"):
            assert r.estimate.within(0.0, atol=1e-12)
        text = (tmp_path / "null.csv").read_text()
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == CSV_HEADER and len(rows) == 7
        assert "\r" not in text
        data = json.loads((tmp_path / "null.json").read_text())
        assert data["config"]["seed"] == 42 and data["references"]["rel_entropy_gaussian"] == 0.0

    def test_entropy_slope_refused(self, tmp_path):
        res = run_study(_cfg(tmp_path, metrics=["entropy"], N=[4, 8, 16, 32]), write=False)
        assert "consistent with zero" in res.slopes["entropy"]["refused"]

    def test_w2_slope(self, tmp_path):
        res = run_study(_cfg(tmp_path, metrics=["w2"], N=[8, 32, 128, 512], M=100_000), write=False)
        e = res.slopes["w2"]
        assert e["slope"] == pytest.approx(-1.0, abs=0.15)
        assert e["predicted_exponent"] == -0.5

    def test_l1_slope(self, tmp_path):
        res = run_study(_cfg(tmp_path, metrics=["l1_k1"], N=[4, 8, 16, 32, 64, 128], M_mix=1000), write=False)
        assert res.slopes["l1_k1"]["slope"] == pytest.approx(-1.0, abs=0.2)

    def test_deterministic(self, tmp_path):
        cfg = _cfg(tmp_path, metrics=["w2", "tail_prob", "fisher_n2"], density="mixture", N=[16, 32])
        a = run_study(cfg, write=False).csv_text()
        b = run_study(cfg, write=False).csv_text()
        c = run_study(cfg, workers=2, write=False).csv_text()
        assert a == b == c

    def test_errors_recorded_with_coordinates(self, tmp_path):
        cfg = _cfg(tmp_path, metrics=["conditioned_entropy"], density={"name": "student_t", "params": {"nu": 5}},
                   N=[64], M=1000)
        res = run_study(cfg, write=False)
        assert res.exit_code == 1
        assert res.errors[0]["metric"] == "conditioned_entropy" and res.errors[0]["N"] == 64

    def test_violation_sets_exit(self, tmp_path):
        from kacsphere.estimates import EstimateWithError
        from kacsphere.harness import Row
        row = Row("s", "fisher", 8, EstimateWithError(1.0, 0.01, 100), "1", bound=0.5)
        lower = Row("s", "entropy_gap", 8, EstimateWithError(-1.0, 0.01, 100), "1", bound=0.0, lower=True)
        assert row.violation and lower.violation
        assert row.csv_fields()[-1] == "true"

    def test_alip_rows(self, tmp_path):
        res = run_study(_cfg(tmp_path, metrics=["alip_step", "alip_power(a=0.5)"]), write=False)
        step = res.metric_rows("alip_step")[0]
        assert step.N == 0 and step.estimate.value == pytest.approx(1.0, abs=0.05)
        assert res.metric_rows("alip_power(a=0.5)")[0].estimate.extra["table_exponent"] == pytest.approx(1 / 3)


class TestPlotData:
    def test_entropy_reference(self, tmp_path):
        res = run_study(_cfg(tmp_path, density="gaussian", metrics=["entropy"], N=[4, 8]))
        out = emit_plot_data(res, "entropy", tmp_path / "e.dat")
        text = out.read_text()
        assert "H(f|gamma)" in text and "0.22314355131" in text
        assert text.count("# block") == 2

    def test_fisher_reference_lines(self, tmp_path):
        res = run_study(_cfg(tmp_path, density="gaussian", metrics=["fisher"], N=[4, 8], M=2000))
        text = emit_plot_data(load_result(res.json_path), "fisher", tmp_path / "f.dat").read_text()
        assert "(1-1/N)I(f|gamma)" in text
        last = text.strip().splitlines()[-1].split()
        assert float(last[1]) == pytest.approx(0.5625) and float(last[2]) == pytest.approx(0.5625 * 7 / 8)

    def test_w2_shape(self, tmp_path):
        res = run_study(_cfg(tmp_path, metrics=["w2"], N=[4, 16]), write=False)
        text = emit_plot_data(res, "w2", tmp_path / "w.dat").read_text()
        assert "shape N^-0.5" in text

    def test_missing_metric(self, tmp_path):
        res = run_study(_cfg(tmp_path, metrics=["w2"], N=[4]), write=False)
        with pytest.raises(KeyError):
            emit_plot_data(res, "fisher", tmp_path / "x.dat")


class TestCli:
    def test_rates(self, capsys):
        assert cli.main(["rates", "--k", "2", "--delta", "1", "--r", "1"]) == 0
        out = capsys.readouterr().out
        assert "0.09090909091" in out and "0.2727272727" in out

    def test_list(self, capsys):
        assert cli.main(["list-densities"]) == 0
        assert "student_t" in capsys.readouterr().out

    def test_run_and_plot(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(_cfg(tmp_path, metrics=["w2"], N=[4, 8, 16, 32])))
        assert cli.main(["run", str(path)]) == 0
        assert "w2" in capsys.readouterr().out
        assert cli.main(["plot", str(tmp_path / "null.json"), "--metric", "w2"]) == 0
        assert (tmp_path / "null.w2.dat").exists()
        assert cli.main(["plot", str(tmp_path / "null.json"), "--metric", "nope"]) == 2

    def test_bad_config(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(_cfg(tmp_path, N=[8, 4])))
        assert cli.main(["run", str(path)]) == 2
        assert "N:" in capsys.readouterr().err

    def test_workers_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KACSPHERE_WORKERS", "0")
        with pytest.raises(ConfigError):
            run_study(_cfg(tmp_path, metrics=["w2"], N=[4]), write=False)


def test_fit_slopes_rerun(tmp_path):
    res = run_study(_cfg(tmp_path, metrics=["w2"], N=[4, 8, 16, 32]), write=False)
    assert fit_slopes(res)["w2"]["points"] == 4
