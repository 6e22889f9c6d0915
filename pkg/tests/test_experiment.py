import json
from pathlib import Path

import numpy as np
import pytest

from adfnet import experiment as ex
from adfnet.cli import main
from adfnet.errors import ConfigurationError, LoadError
from adfnet.model import load_params
from adfnet.objectives import relevance_gs, relevance_std
from adfnet.plots import extract_metadata, gap_svg, mask_sweep_svg, relevance_svg

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.toml"


def _run(*argv):
    return main([*map(str, argv)])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Both models trained through the CLI on the dead-feature fixture."""
    out = tmp_path_factory.mktemp("run")
    for mode in ("lpn", "dnn"):
        assert _run("train", "--config", CONFIG, "--out", out, "--mode", mode) == 0
    return out


def _payload(path):
    return json.loads(Path(path).read_text())["payload"]


class TestConfig:
    def test_defaults(self):
        cfg = ex.load_config()
        assert cfg.data.dataset == "linear-1d"
        assert cfg.network_config(18).widths == (18, 256, 128, 16, 1)
        assert cfg.gap.factors == (1.1, 1.25, 1.5, 1.75, 2.0, 2.5)

    def test_load_file(self):
        cfg = ex.load_config(CONFIG)
        assert cfg.network_config(2).widths == (2, 16, 8, 1)
        assert (cfg.train.epochs, cfg.train.refine_epochs) == (40, 5)
        assert cfg.gap.samples == (0, 1)

    @pytest.mark.parametrize("text", [
        "[model]\nx = 1\n",
        "[network]\nwidth = 3\n",
        "[train]\nepochs = 0\nrefine = false\n",
        "[network\n",
    ])
    def test_rejects(self, tmp_path, text):
        path = tmp_path / "bad.toml"
        path.write_text(text)
        with pytest.raises(ConfigurationError):
            ex.load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ex.load_config(tmp_path / "none.toml")

    def test_seed_override(self):
        cfg = ex.load_config(CONFIG).with_overrides(seed=9)
        assert (cfg.network["seed"], cfg.train.seed, cfg.data.seed) == (9, 9, 9)

    def test_fingerprint(self):
        cfg = ex.load_config(CONFIG)
        assert cfg.fingerprint() == cfg.with_overrides(mode="dnn").fingerprint()
        assert cfg.fingerprint() != cfg.with_overrides(seed=1).fingerprint()


class TestTrain:
    def test_smoke(self, tmp_path):
        config = tmp_path / "small.toml"
        config.write_text("[network]\nhidden = [4]\n[train]\nepochs = 3\nrefine_epochs = 1\n[data]\nn = 300\n")
        assert _run("train", "--config", config, "--dataset", "linear-1d", "--out", tmp_path) == 0
        report = json.loads((tmp_path / "train_report_lpn.json").read_text())
        assert np.isfinite(report["payload"]["final"]["r2"])
        assert {"experiment_hash", "seed", "library_version"} <= set(report)
        assert (tmp_path / "params_lpn.json").exists()

    def test_trained_fixture_fits(self, trained):
        assert _payload(trained / "train_report_lpn.json")["final"]["r2"] > 0.9
        assert _payload(trained / "train_report_dnn.json")["final"]["r2"] > 0.9

    def test_missing_dataset_writes_nothing(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("ADFNET_DATA_DIR", str(tmp_path / "empty"))
        out = tmp_path / "out"
        assert _run("train", "--dataset", "parkinsons", "--out", out) != 0
        assert "not found" in capsys.readouterr().err
        assert not out.exists()

    def test_bad_config_exit_code(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[network]\ndropout = 1.5\n")
        assert _run("train", "--config", path, "--out", tmp_path) == 2

    def test_same_seed_same_payload(self, tmp_path):
        for run in ("a", "b"):
            assert _run("train", "--config", CONFIG, "--out", tmp_path / run, "--seed", 3) == 0
        a = json.loads((tmp_path / "a" / "train_report_lpn.json").read_text())
        b = json.loads((tmp_path / "b" / "train_report_lpn.json").read_text())
        assert json.dumps(a["payload"], sort_keys=True) == json.dumps(b["payload"], sort_keys=True)
        assert (tmp_path / "a" / "params_lpn.json").read_bytes() == (tmp_path / "b" / "params_lpn.json").read_bytes()

    def test_cross_validation(self, tmp_path):
        cfg = ex.load_config(CONFIG)
        cfg = ex.ExperimentConfig(cfg.network, ex.TrainConfig(epochs=2, refine_epochs=1), cfg.data)
        report = ex.cmd_train(cfg, tmp_path, folds=3)
        agg = report["payload"]["aggregate"]
        assert len(report["payload"]["per_fold"]) == 3
        assert agg["r2_mean"] == pytest.approx(np.mean(agg["r2_per_fold"]))

    def test_params_carry_experiment_hash(self, trained):
        _, _, extra = load_params(trained / "params_lpn.json")
        assert extra["experiment_hash"] == ex.load_config(CONFIG).fingerprint()

    def test_foreign_params_rejected(self, trained):
        cfg = ex.load_config(CONFIG).with_overrides(seed=5)
        with pytest.raises(LoadError):
            ex.cmd_evaluate(cfg, trained, trained / "params_lpn.json")


class TestEvaluate:
    def test_matches_training(self, trained, tmp_path):
        cfg = ex.load_config(CONFIG)
        report = ex.cmd_evaluate(cfg, tmp_path, trained / "params_lpn.json")
        final = _payload(trained / "train_report_lpn.json")["final"]
        assert report["payload"]["validation"]["r2"] == pytest.approx(final["r2"], rel=1e-12)


class TestRelevance:
    @pytest.mark.parametrize("method", ["lpn", "gs", "std"])
    def test_dead_feature_ranked_last(self, trained, method):
        assert _run("relevance", "--config", CONFIG, "--out", trained, "--method", method) == 0
        payload = _payload(trained / f"relevance_{method}.json")
        assert payload["features"] == ["x1", "x2"]
        assert len(payload["scores"]) == 2
        assert payload["scores"] == sorted(payload["scores"], reverse=True)

    def test_svg_mirrors_report(self, trained):
        ex.cmd_relevance(ex.load_config(CONFIG), trained, "lpn")
        svg = (trained / "relevance_lpn.svg").read_text()
        payload = _payload(trained / "relevance_lpn.json")
        assert relevance_svg(payload) == svg
        meta = extract_metadata(svg)
        assert meta["labels"] == payload["features"]

    def test_gs_and_std_agree_at_equal_inputs(self, trained):
        params, net, _ = load_params(trained / "params_dnn.json")
        x = np.full(2, 0.8)
        gs = relevance_gs(params, net, x).scores
        std = relevance_std(params, net, x).scores
        assert np.array_equal(np.argsort(gs), np.argsort(std))

    def test_unknown_method(self, trained):
        with pytest.raises(ConfigurationError):
            ex.cmd_relevance(ex.load_config(CONFIG), trained, "lrp")


class TestMaskSweep:
    @pytest.fixture
    def sweep(self, trained):
        cfg = ex.load_config(CONFIG)
        ex.cmd_relevance(cfg, trained, "lpn")
        return ex.cmd_mask_sweep(cfg, trained, trained / "relevance_lpn.json")["payload"]

    def test_shape(self, sweep):
        assert len(sweep["r2"]) == 3
        assert sweep["features"] == ["x2", "x1"]

    def test_unmasked_entry(self, sweep, trained):
        final = _payload(trained / "train_report_lpn.json")["final"]["r2"]
        assert sweep["r2"][0] == pytest.approx(final, rel=1e-12)

    def test_dead_feature_mask_is_harmless(self, sweep):
        assert sweep["r2"][0] - sweep["r2"][1] < 0.01

    def test_all_masked_is_constant_model(self, sweep):
        assert sweep["r2"][-1] <= 1e-9

    def test_auc(self, sweep):
        assert sweep["auc"] == pytest.approx(np.trapezoid(sweep["r2"]))

    def test_svg_mirrors_report(self, sweep, trained):
        assert mask_sweep_svg(sweep) == (trained / "mask_sweep_lpn_ascending.svg").read_text()

    def test_hash_mismatch(self, trained, tmp_path):
        doc = json.loads((trained / "relevance_lpn.json").read_text())
        doc["experiment_hash"] = "0" * 16
        forged = tmp_path / "forged.json"
        forged.write_text(json.dumps(doc))
        with pytest.raises(ConfigurationError, match="experiment"):
            ex.cmd_mask_sweep(ex.load_config(CONFIG), trained, forged)

    def test_cli(self, trained):
        code = _run("mask-sweep", "--config", CONFIG, "--out", trained,
                    "--ranking", trained / "relevance_lpn.json", "--order", "descending")
        assert code == 0
        payload = _payload(trained / "mask_sweep_lpn_descending.json")
        assert payload["features"] == ["x1", "x2"]


class TestGap:
    @pytest.fixture
    def gap(self, trained):
        return ex.cmd_gap(ex.load_config(CONFIG), trained)["payload"]

    def test_default_factors(self, gap):
        assert gap["factors"] == [1.1, 1.25, 1.5, 1.75, 2.0, 2.5]

    def test_scores_per_sample(self, gap):
        assert [s["sample"] for s in gap["samples"]] == [0, 1]
        for entry in gap["samples"]:
            assert len(entry["profile"]["gaps"]) == 2
            assert entry["features"] == ["x1", "x2"]
            assert entry["all_converged"] == all(entry["profile"]["converged"])

    def test_live_feature_has_larger_gap(self, gap):
        for entry in gap["samples"]:
            g = entry["profile"]["gaps"]
            assert g[0] > g[1]

    def test_svg_mirrors_report(self, gap, trained):
        for entry in gap["samples"]:
            assert gap_svg(entry) == (trained / f"gap_sample_{entry['sample']}.svg").read_text()

    def test_unknown_sample(self, trained):
        with pytest.raises(ConfigurationError, match="sample"):
            ex.cmd_gap(ex.load_config(CONFIG), trained, samples=[10_000])
        assert _run("gap", "--config", CONFIG, "--out", trained, "--samples", "10000") == 2

    def test_deterministic(self, trained, tmp_path):
        cfg = ex.load_config(CONFIG)
        a = ex.cmd_gap(cfg, trained, samples=[3], factors=(1.5, 2.0))
        b = ex.cmd_gap(cfg, trained, samples=[3], factors=(1.5, 2.0))
        assert json.dumps(a["payload"], sort_keys=True) == json.dumps(b["payload"], sort_keys=True)


class TestPrep:
    def test_report(self, tmp_path):
        assert _run("prep", "--config", CONFIG, "--out", tmp_path) == 0
        payload = _payload(tmp_path / "prep_report.json")
        assert (payload["n"], payload["n_train"], payload["n_validation"]) == (1000, 800, 200)
        assert payload["features"] == ["x1", "x2"]


class TestSelfcheckCli:
    def test_clean(self, tmp_path, capsys):
        assert _run("selfcheck", "--out", tmp_path) == 0
        report = json.loads((tmp_path / "selfcheck_report.json").read_text())
        assert all("tolerance" in c and "observed" in c for c in report["checks"])
        assert "PASS" in capsys.readouterr().out

    @pytest.mark.parametrize("fault", ["relu-var-sign", "leaky-grad", "pdf-second-derivative"])
    def test_injected_faults(self, tmp_path, capsys, fault):
        assert _run("selfcheck", "--out", tmp_path, "--inject", fault) == 1
        assert "failed checks" in capsys.readouterr().err

    def test_sign_fault_names_monte_carlo(self, tmp_path, capsys):
        _run("selfcheck", "--out", tmp_path, "--inject", "relu-var-sign")
        assert "mc-relu-moments" in capsys.readouterr().err
