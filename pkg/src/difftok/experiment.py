"""Experiment configuration, artifact persistence, and orchestration.

A single JSON config document drives every run. The config hash covers the
semantically meaningful fields (canonical re-serialization, so whitespace
and key order in the file do not matter) and is embedded in every artifact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .autodiff import ParamSet
from .downstream import DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM, PipelineSpec
from .tokenizer import Codebook, TokenSequence
from .trainer import Regime, Schedule, TrainState
from .upstream import SynthConfig, Utterance, synth_generate


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass
class TokenizerConfig:
    k: int = 16
    sigma_sq: float = 1.0
    mode: str = "discrete"  # "discrete" | "continuous"

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError("tokenizer.k", f"must be >= 2, got {self.k}")
        if self.sigma_sq < 0:
            raise ConfigError("tokenizer.sigma_sq", "must be >= 0")
        if self.mode not in ("discrete", "continuous"):
            raise ConfigError("tokenizer.mode", f"unknown mode {self.mode!r}")


@dataclass
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    mode: str = "single_layer"          # "single_layer" | "multi_layer"
    single_layer_index: int = 2         # last layer by default (L=3)
    regime: str = "BASELINE"
    schedule: Schedule = field(default_factory=Schedule)
    alpha: float = 0.0
    seed: int = 0
    lr: float = 1e-3
    gumbel_noise: bool = True
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    out_dir: str = "runs/default"

    def validate(self) -> None:
        try:
            self.synth.validate()
        except ValueError as e:
            raise ConfigError("synth", str(e)) from e
        self.tokenizer.validate()
        if self.mode not in ("single_layer", "multi_layer"):
            raise ConfigError("mode", f"unknown mode {self.mode!r}")
        if self.mode == "single_layer" and not (
                0 <= self.single_layer_index < self.synth.layer_count):
            raise ConfigError(
                "mode.single_layer",
                f"layer index {self.single_layer_index} out of range for "
                f"{self.synth.layer_count} layers")
        if self.regime not in Regime.__members__:
            raise ConfigError("regime", f"unknown regime {self.regime!r}")
        try:
            self.schedule.validate()
        except ValueError as e:
            raise ConfigError("schedule", str(e)) from e
        if self.alpha < 0:
            raise ConfigError("alpha", "must be >= 0")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.lr < 0:
            raise ConfigError("lr", "must be >= 0")

    def pipeline_spec(self) -> PipelineSpec:
        return PipelineSpec(
            layer_count=self.synth.layer_count,
            mode=self.mode,
            layer_index=self.single_layer_index,
            sigma_sq=self.tokenizer.sigma_sq,
            alpha=self.alpha,
            phone_count=self.synth.phone_count,
            tokenizer=self.tokenizer.mode,
        )

    def to_dict(self) -> dict:
        d = {
            "synth": asdict(self.synth),
            "tokenizer": asdict(self.tokenizer),
            "mode": ({"single_layer": self.single_layer_index}
                     if self.mode == "single_layer" else "multi_layer"),
            "regime": self.regime,
            "schedule": asdict(self.schedule),
            "alpha": self.alpha,
            "seed": self.seed,
            "lr": self.lr,
            "gumbel_noise": self.gumbel_noise,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "out_dir": self.out_dir,
        }
        d["synth"]["phone_mix"] = list(self.synth.phone_mix)
        d["synth"]["speaker_mix"] = list(self.synth.speaker_mix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        synth_d = dict(d.pop("synth", {}))
        for key in ("phone_mix", "speaker_mix"):
            if key in synth_d:
                synth_d[key] = tuple(synth_d[key])
        try:
            synth = SynthConfig(**synth_d)
        except TypeError as e:
            raise ConfigError("synth", str(e)) from e
        try:
            tok_cfg = TokenizerConfig(**d.pop("tokenizer", {}))
        except TypeError as e:
            raise ConfigError("tokenizer", str(e)) from e
        try:
            schedule = Schedule(**d.pop("schedule", {}))
        except TypeError as e:
            raise ConfigError("schedule", str(e)) from e
        mode_field = d.pop("mode", {"single_layer": 2})
        if mode_field == "multi_layer":
            mode, layer_index = "multi_layer", 0
        elif isinstance(mode_field, dict) and set(mode_field) == {"single_layer"}:
            mode, layer_index = "single_layer", int(mode_field["single_layer"])
        else:
            raise ConfigError("mode", f"expected 'multi_layer' or "
                                      f"{{'single_layer': index}}, got {mode_field!r}")
        try:
            cfg = cls(synth=synth, tokenizer=tok_cfg, mode=mode,
                      single_layer_index=layer_index, schedule=schedule, **d)
        except TypeError as e:
            raise ConfigError("<root>", str(e)) from e
        cfg.validate()
        return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the semantic config fields; out_dir is presentation-only."""
    d = config.to_dict()
    d.pop("out_dir")
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]


def synth_hash(synth: SynthConfig) -> str:
    d = asdict(synth)
    d["phone_mix"] = list(synth.phone_mix)
    d["speaker_mix"] = list(synth.speaker_mix)
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]


def load_config(path: str | Path, seed: int | None = None,
                out_dir: str | None = None, regime: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError("<file>", f"invalid JSON: {e}") from e
    cfg = ExperimentConfig.from_dict(raw)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    if regime is not None:
        cfg = replace(cfg, regime=regime)
        cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_json(path: Path, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def save_dataset(path: Path, dataset: list[Utterance]) -> None:
    with open(path, "w") as fh:
        for utt in dataset:
            fh.write(json.dumps(utt.to_dict()) + "\n")


def load_dataset(path: Path) -> list[Utterance]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(Utterance.from_dict(json.loads(line)))
    return out


def dataset_for(config: ExperimentConfig, data_dir: Path) -> list[Utterance]:
    """Generate the synthetic dataset, or reuse an existing file keyed by the
    synth-config content hash."""
    data_dir.mkdir(parents=True, exist_ok=True)
    path = data_dir / f"dataset_{synth_hash(config.synth)}.jsonl"
    if path.exists():
        return load_dataset(path)
    dataset = synth_generate(config.synth)
    save_dataset(path, dataset)
    return dataset


def save_paramset(path: Path, params: ParamSet, cfg_hash: str, seed: int) -> None:
    payload = {
        "config_hash": cfg_hash,
        "seed": seed,
        "params": {
            name: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
            for name, v in params.values.items()
        },
        "trainable": dict(params.trainable),
    }
    write_json(path, payload)


def load_paramset(path: Path) -> ParamSet:
    with open(path) as fh:
        payload = json.load(fh)
    params = ParamSet()
    for name, entry in payload["params"].items():
        arr = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        params.add(name, arr, trainable=payload["trainable"].get(name, True))
    return params


def save_codebook(path: Path, codebook: Codebook, cfg_hash: str, seed: int) -> None:
    d = codebook.to_dict()
    d["config_hash"] = cfg_hash
    d["seed"] = seed
    write_json(path, d)


def load_codebook(path: Path) -> Codebook:
    with open(path) as fh:
        return Codebook.from_dict(json.load(fh))


def save_tokens(path: Path, sequences: list[TokenSequence], cfg_hash: str, seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        for seq in sequences:
            fh.write(f"{seq.utt_id}\t{' '.join(str(int(i)) for i in seq.ids)}\n")


def load_tokens(path: Path) -> list[TokenSequence]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            utt_id, _, rest = line.rstrip("\n").partition("\t")
            ids = [int(x) for x in rest.split()] if rest else []
            out.append(TokenSequence(ids=np.asarray(ids, dtype=np.int64), utt_id=utt_id))
    return out


HISTORY_COLUMNS = ("epoch", "total_loss", "asr_loss", "km_loss", "tau",
                   "frame_acc", "regime", "trainable_set")


def history_csv(history, cfg_hash: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={cfg_hash} seed={seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for rec in history:
        writer.writerow([
            rec.epoch, repr(rec.total_loss), repr(rec.asr_loss),
            repr(rec.km_loss), repr(rec.tau), repr(rec.frame_acc),
            rec.regime, "|".join(rec.trainable),
        ])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: ExperimentConfig
    config_hash: str
    state: TrainState
    history: list
    evaluation: dict
    report: metrics_mod.MetricReport | None


def run_experiment(config: ExperimentConfig, dataset: list[Utterance] | None = None,
                   write_artifacts: bool = True) -> RunResult:
    """One full experiment: data, init, train, evaluate, metrics, artifacts."""
    config.validate()
    cfg_hash = config_hash(config)
    out = Path(config.out_dir)
    if write_artifacts:
        out.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        if write_artifacts:
            dataset = dataset_for(config, out / "data")
        else:
            dataset = synth_generate(config.synth)

    state = trainer_mod.init_training(Regime(config.regime), dataset, config)
    if write_artifacts and state.spec.tokenizer == "discrete":
        save_codebook(out / "codebook_init.json", state.codebook(), cfg_hash, config.seed)

    history = trainer_mod.train(state, dataset)
    evaluation = trainer_mod.evaluate(state, dataset)

    report = None
    if state.spec.tokenizer == "discrete":
        sequences = trainer_mod.tokenize_dataset(state, dataset)
        feats = [trainer_mod.extract_features(state.params, state.spec, u.frames)
                 for u in dataset]
        report = metrics_mod.evaluate_tokens(dataset, sequences, feats,
                                             state.codebook(), cfg_hash)
        if write_artifacts:
            save_tokens(out / "tokens.txt", sequences, cfg_hash, config.seed)
            save_codebook(out / "codebook.json", state.codebook(), cfg_hash, config.seed)

    if write_artifacts:
        (out / "history.csv").write_text(history_csv(history, cfg_hash, config.seed))
        save_paramset(out / "params.json", state.params, cfg_hash, config.seed)
        eval_payload = dict(evaluation, config_hash=cfg_hash, seed=config.seed)
        write_json(out / "evaluation.json", eval_payload)
        if report is not None:
            write_json(out / "metrics.json", report.to_dict())
    return RunResult(config=config, config_hash=cfg_hash, state=state,
                     history=history, evaluation=evaluation, report=report)


GRADCHECK_MAX_T = 16
GRADCHECK_MAX_K = 8
GRADCHECK_MAX_L = 4
GRADCHECK_THRESHOLD = 1e-4


def gradcheck_config() -> ExperimentConfig:
    """Small default instance for the gradcheck entry point."""
    return ExperimentConfig(
        synth=SynthConfig(phone_count=3, speaker_count=2, frames_per_utterance=8,
                          utterance_count=6, input_dim=4, feature_dim=4,
                          layer_count=2, phone_mix=(0.9, 0.6), speaker_mix=(0.6, 0.9),
                          noise_std=0.2, seed=7),
        tokenizer=TokenizerConfig(k=3, sigma_sq=1.0),
        mode="single_layer", single_layer_index=1,
        schedule=Schedule(total_epochs=4, warmup_epochs=1, ssl_unfreeze_epoch=2),
        alpha=0.5, seed=7, embed_dim=4, hidden_dim=5,
        out_dir="runs/gradcheck",
    )


def run_gradcheck(config: ExperimentConfig | None = None, eps: float = 1e-5,
                  inject_fault: str | None = None,
                  trainable: list[str] | None = None) -> dict:
    """Finite-difference check of the full joint loss in both layer modes.

    Uses the soft surrogate forward (hardening bypassed) so the loss is
    differentiable everywhere the finite differences probe. inject_fault
    scales one parameter's analytic gradient, for testing the harness.
    """
    from .autodiff import gradcheck
    from .core_math import SeededRng, gumbel_from_uniform
    from .downstream import joint_loss_graph

    if config is None:
        config = gradcheck_config()
    config.validate()
    s = config.synth
    if (s.frames_per_utterance > GRADCHECK_MAX_T or config.tokenizer.k > GRADCHECK_MAX_K
            or s.layer_count > GRADCHECK_MAX_L):
        raise ConfigError(
            "gradcheck", f"oversize instance: requires T <= {GRADCHECK_MAX_T}, "
            f"k <= {GRADCHECK_MAX_K}, L <= {GRADCHECK_MAX_L}")

    dataset = synth_generate(s)
    report: dict = {"threshold": GRADCHECK_THRESHOLD, "eps": eps, "modes": {}}
    worst = 0.0
    for mode in ("single_layer", "multi_layer"):
        cfg = replace(config, mode=mode,
                      single_layer_index=min(config.single_layer_index, s.layer_count - 1))
        state = trainer_mod.init_training(Regime(cfg.regime), dataset, cfg)
        state.params.set_trainable(state.params.names() if trainable is None
                                   else [n for n in trainable
                                         if n in state.params.values])
        utt = dataset[0]
        noise = gumbel_from_uniform(
            SeededRng(cfg.seed).uniform(size=(s.frames_per_utterance, cfg.tokenizer.k)))
        inputs = {
            "frames": utt.frames, "labels": utt.phones, "noise": noise,
            "tau": cfg.schedule.tau_start, "spec": cfg.pipeline_spec(),
            "hard": False,
        }
        mode_report = gradcheck(joint_loss_graph, state.params, inputs, eps=eps)
        # Frozen parameters are vacuous here; report only what was checked.
        mode_report = {n: e for n, e in mode_report.items()
                       if state.params.trainable[n]}
        if inject_fault is not None and inject_fault in mode_report:
            mode_report[inject_fault]["max_rel_err"] += 1.0
        report["modes"][mode] = mode_report
        for entry in mode_report.values():
            worst = max(worst, entry["max_rel_err"])
    report["max_rel_err"] = worst
    report["passed"] = worst < GRADCHECK_THRESHOLD
    if not report["passed"]:
        report["failed_params"] = sorted(
            f"{mode}:{name}"
            for mode, mr in report["modes"].items()
            for name, entry in mr.items()
            if entry["max_rel_err"] >= GRADCHECK_THRESHOLD)
    return report


def _compare_worker(args) -> dict:
    config_dict, regime, out_dir = args
    cfg = ExperimentConfig.from_dict(config_dict)
    cfg = replace(cfg, regime=regime, out_dir=out_dir)
    result = run_experiment(cfg)
    row = {"regime": regime,
           "frame_accuracy": result.evaluation["frame_accuracy"]}
    if result.report is not None:
        row.update(pnmi=result.report.pnmi, nqe=result.report.nqe,
                   tsl=result.report.tsl, mter_pct=result.report.mter_pct)
    else:
        row.update(pnmi="", nqe="", tsl="", mter_pct="")
    return row


COMPARE_COLUMNS = ("regime", "frame_accuracy", "pnmi", "nqe", "tsl", "mter_pct")


def compare_regimes(config: ExperimentConfig, regimes: list[str]) -> list[dict]:
    """Run one experiment per regime and collect a comparison table."""
    if len(regimes) < 2:
        raise ConfigError("regimes", "compare needs at least 2 regimes")
    for r in regimes:
        if r not in Regime.__members__:
            raise ConfigError("regimes", f"unknown regime {r!r}")
    base = config.to_dict()
    out = Path(config.out_dir)
    jobs = [(base, r, str(out / f"regime_{i}_{r}")) for i, r in enumerate(regimes)]
    workers = int(os.environ.get("DIFFTOK_THREADS", "1"))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_compare_worker, jobs))
    else:
        rows = [_compare_worker(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w") as fh:
        fh.write(f"# config_hash={config_hash(config)} seed={config.seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARE_COLUMNS)
        for row in rows:
            writer.writerow([row[c] if not isinstance(row[c], float) else repr(row[c])
                             for c in COMPARE_COLUMNS])
    return rows
