import json

import numpy as np
import pytest

from difftok.autodiff import ParamSet
from difftok.experiment import (
    ConfigError,
    ExperimentConfig,
    TokenizerConfig,
    canonical_json,
    compare_regimes,
    config_hash,
    load_codebook,
    load_config,
    load_dataset,
    load_paramset,
    load_tokens,
    run_experiment,
    run_gradcheck,
    save_codebook,
    save_dataset,
    save_paramset,
    save_tokens,
    synth_hash,
)
from difftok.tokenizer import Codebook, TokenSequence
from difftok.trainer import Schedule
from difftok.upstream import SynthConfig, synth_generate


def tiny_config(out_dir, **overrides):
    synth_over = overrides.pop("synth", {})
    synth = dict(phone_count=3, speaker_count=2, frames_per_utterance=20,
                 utterance_count=12, input_dim=6, feature_dim=6, layer_count=2,
                 phone_mix=(0.9, 0.8), speaker_mix=(0.6, 0.5),
                 noise_std=0.2, seed=0)
    synth.update(synth_over)
    base = dict(synth=SynthConfig(**synth),
                tokenizer=TokenizerConfig(k=4, sigma_sq=1.0),
                mode="single_layer", single_layer_index=1,
                regime="BASELINE",
                schedule=Schedule(total_epochs=3, warmup_epochs=1,
                                  ssl_unfreeze_epoch=2),
                alpha=0.0, seed=0, lr=1e-3, embed_dim=6, hidden_dim=8,
                out_dir=str(out_dir))
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_round_trip_single_layer(self):
        cfg = tiny_config("runs/x", regime="FREEZE_SSL")
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_round_trip_multi_layer(self):
        # the layer index is meaningless in multi-layer mode and is not kept
        cfg = tiny_config("runs/x", mode="multi_layer")
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()
        assert config_hash(again) == config_hash(cfg)

    def test_hash_ignores_out_dir(self):
        a = tiny_config("runs/a")
        b = tiny_config("runs/b")
        assert config_hash(a) == config_hash(b)

    def test_hash_ignores_file_formatting(self, tmp_path):
        cfg = tiny_config(str(tmp_path / "out"))
        d = cfg.to_dict()
        p1 = tmp_path / "c1.json"
        p2 = tmp_path / "c2.json"
        p1.write_text(json.dumps(d, indent=4))
        p2.write_text(json.dumps(dict(reversed(list(d.items())))))
        assert config_hash(load_config(p1)) == config_hash(load_config(p2))

    def test_hash_sensitive_to_fields(self):
        base = tiny_config("runs/x")
        assert config_hash(base) != config_hash(tiny_config("runs/x", seed=1))
        assert config_hash(base) != config_hash(tiny_config("runs/x", alpha=0.1))
        assert config_hash(base) != config_hash(
            tiny_config("runs/x", tokenizer=TokenizerConfig(k=8)))
        assert config_hash(base) != config_hash(
            tiny_config("runs/x", synth=dict(noise_std=0.25)))

    def test_canonical_json_is_stable(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_invalid_layer_index(self):
        with pytest.raises(ConfigError) as exc:
            tiny_config("runs/x", single_layer_index=5).validate()
        assert exc.value.field_path == "mode.single_layer"

    def test_invalid_regime_and_k(self):
        with pytest.raises(ConfigError):
            tiny_config("runs/x", regime="FANCY").validate()
        with pytest.raises(ConfigError):
            tiny_config("runs/x", tokenizer=TokenizerConfig(k=1)).validate()

    def test_from_dict_rejects_unknown_mode(self):
        d = tiny_config("runs/x").to_dict()
        d["mode"] = "stacked"
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_load_config_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(tiny_config(str(tmp_path)).to_dict()))
        cfg = load_config(p, seed=9, regime="FREEZE_SSL", out_dir="elsewhere")
        assert cfg.seed == 9
        assert cfg.regime == "FREEZE_SSL"
        assert cfg.out_dir == "elsewhere"

    def test_load_config_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)


class TestPersistence:
    def test_dataset_round_trip(self, tmp_path):
        data = synth_generate(tiny_config(str(tmp_path)).synth)
        path = tmp_path / "d.jsonl"
        save_dataset(path, data)
        again = load_dataset(path)
        assert len(again) == len(data)
        for a, b in zip(data, again):
            assert a.utt_id == b.utt_id
            assert a.transcript_id == b.transcript_id
            assert a.speaker_id == b.speaker_id
            np.testing.assert_array_equal(a.phones, b.phones)
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_paramset_round_trip(self, tmp_path):
        params = ParamSet()
        rng = np.random.default_rng(0)
        params.add("a.w", rng.normal(size=(3, 4)))
        params.add("b.v", rng.normal(size=5), trainable=False)
        path = tmp_path / "p.json"
        save_paramset(path, params, "hash", 0)
        again = load_paramset(path)
        np.testing.assert_array_equal(again.values["a.w"], params.values["a.w"])
        np.testing.assert_array_equal(again.values["b.v"], params.values["b.v"])
        assert again.trainable == {"a.w": True, "b.v": False}

    def test_codebook_round_trip(self, tmp_path):
        cb = Codebook(centroids=np.random.default_rng(1).normal(size=(4, 3)),
                      sigma_sq=2.0)
        path = tmp_path / "cb.json"
        save_codebook(path, cb, "hash", 0)
        again = load_codebook(path)
        np.testing.assert_array_equal(again.centroids, cb.centroids)
        assert again.sigma_sq == 2.0

    def test_tokens_round_trip(self, tmp_path):
        seqs = [TokenSequence(ids=np.array([1, 2, 2, 0]), utt_id="u0"),
                TokenSequence(ids=np.array([], dtype=np.int64), utt_id="u1")]
        path = tmp_path / "t.txt"
        save_tokens(path, seqs, "hash", 7)
        assert path.read_text().startswith("# config_hash=hash seed=7\n")
        again = load_tokens(path)
        for a, b in zip(seqs, again):
            assert a.utt_id == b.utt_id
            np.testing.assert_array_equal(a.ids, b.ids)

    def test_synth_hash_reacts_to_content(self):
        a = SynthConfig()
        b = SynthConfig(seed=1)
        assert synth_hash(a) != synth_hash(b)
        assert synth_hash(a) == synth_hash(SynthConfig())


class TestRunExperiment:
    def test_artifacts_written(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        result = run_experiment(cfg)
        out = tmp_path / "run"
        for name in ("codebook_init.json", "codebook.json", "history.csv",
                     "params.json", "evaluation.json", "tokens.txt",
                     "metrics.json"):
            assert (out / name).exists(), name
        assert result.report is not None
        assert len(result.history) == 3
        header = (out / "history.csv").read_text().splitlines()[0]
        assert result.config_hash in header

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg1 = tiny_config(tmp_path / "r1")
        cfg2 = tiny_config(tmp_path / "r2")
        run_experiment(cfg1)
        run_experiment(cfg2)
        for name in ("codebook.json", "history.csv", "params.json",
                     "evaluation.json", "tokens.txt", "metrics.json"):
            a = (tmp_path / "r1" / name).read_bytes()
            b = (tmp_path / "r2" / name).read_bytes()
            assert a == b, f"{name} differs between identical runs"

    def test_baseline_codebook_never_moves(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        run_experiment(cfg)
        init = load_codebook(tmp_path / "run" / "codebook_init.json")
        final = load_codebook(tmp_path / "run" / "codebook.json")
        np.testing.assert_array_equal(init.centroids, final.centroids)

    def test_dataset_reused_across_runs(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        run_experiment(cfg)
        data_files = list((tmp_path / "run" / "data").glob("dataset_*.jsonl"))
        assert len(data_files) == 1
        before = data_files[0].read_bytes()
        run_experiment(tiny_config(tmp_path / "run", regime="FREEZE_SSL"))
        assert data_files[0].read_bytes() == before
        assert len(list((tmp_path / "run" / "data").glob("*.jsonl"))) == 1

    def test_continuous_topline_skips_token_artifacts(self, tmp_path):
        cfg = tiny_config(tmp_path / "run",
                          tokenizer=TokenizerConfig(k=4, mode="continuous"))
        result = run_experiment(cfg)
        assert result.report is None
        assert not (tmp_path / "run" / "tokens.txt").exists()


class TestGradcheckEntry:
    def test_default_instance_passes(self):
        report = run_gradcheck()
        assert report["passed"]
        assert report["max_rel_err"] < report["threshold"]
        assert set(report["modes"]) == {"single_layer", "multi_layer"}

    def test_fault_injection_detected(self):
        report = run_gradcheck(inject_fault="asr.W1")
        assert not report["passed"]
        assert "single_layer:asr.W1" in report["failed_params"]

    def test_oversize_instance_rejected(self, tmp_path):
        cfg = tiny_config(tmp_path, synth=dict(frames_per_utterance=100))
        with pytest.raises(ConfigError):
            run_gradcheck(cfg)


class TestCompare:
    def test_requires_two_regimes(self, tmp_path):
        with pytest.raises(ConfigError):
            compare_regimes(tiny_config(tmp_path), ["BASELINE"])
        with pytest.raises(ConfigError):
            compare_regimes(tiny_config(tmp_path), ["BASELINE", "NOPE"])

    def test_duplicate_regimes_give_identical_rows(self, tmp_path):
        cfg = tiny_config(tmp_path / "cmp")
        rows = compare_regimes(cfg, ["BASELINE", "BASELINE"])
        assert rows[0] == rows[1]
        assert (tmp_path / "cmp" / "comparison.csv").exists()

    def test_regime_column_matches_request(self, tmp_path):
        cfg = tiny_config(tmp_path / "cmp")
        rows = compare_regimes(cfg, ["BASELINE", "FREEZE_SSL"])
        assert [r["regime"] for r in rows] == ["BASELINE", "FREEZE_SSL"]
