"""Training loop: regimes, staged unfreezing, temperature annealing, Adam.

Three regimes mirror the experimental conditions: BASELINE trains the
classifier only, FREEZE_SSL additionally trains the centroids (and the layer
weights in multi-layer mode), FULL_FINETUNE also unfreezes the extractor.
Every run starts with a warmup phase in which only the classifier trains;
in multi-layer FULL_FINETUNE the extractor unfreezes later still.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import downstream, tokenizer as tok, upstream
from .autodiff import ParamSet, backward, forward_record
from .core_math import SeededRng, geometric_interp, gumbel_from_uniform
from .downstream import PipelineSpec, init_downstream_params, joint_loss_graph
from .upstream import LayerWeights, init_extractor_params, upstream_forward


class NumericalAbortError(RuntimeError):
    """Raised when a loss term goes non-finite during training."""


class Regime(str, Enum):
    BASELINE = "BASELINE"
    FREEZE_SSL = "FREEZE_SSL"
    FULL_FINETUNE = "FULL_FINETUNE"


@dataclass
class Schedule:
    total_epochs: int = 45
    warmup_epochs: int = 15
    ssl_unfreeze_epoch: int = 30
    tau_start: float = 2.0
    tau_end: float = 0.5

    def validate(self) -> None:
        if not (0 <= self.warmup_epochs <= self.ssl_unfreeze_epoch <= self.total_epochs):
            raise ValueError("schedule must satisfy 0 <= warmup <= ssl_unfreeze <= total")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not (0 < self.tau_end <= self.tau_start):
            raise ValueError("temperature must be non-increasing and positive")


def temperature_at(schedule: Schedule, epoch: int) -> float:
    """Exponential decay from tau_start (epoch 0) to tau_end (last epoch)."""
    e = schedule.total_epochs
    if not (0 <= epoch < e):
        raise ValueError(f"epoch {epoch} out of range [0, {e})")
    if e == 1:
        return schedule.tau_start
    return geometric_interp(schedule.tau_start, schedule.tau_end, epoch / (e - 1))


def trainable_set(regime: Regime, schedule: Schedule, epoch: int,
                  mode: str, params: ParamSet) -> set[str]:
    """Names trainable at this epoch under the regime and staged schedule."""
    names = {n for n in params.names() if n.startswith("asr.")}
    if epoch < schedule.warmup_epochs or regime == Regime.BASELINE:
        return names
    if "codebook.M" in params.values:
        names.add("codebook.M")
    if mode == "multi_layer" and "layers.logits" in params.values:
        names.add("layers.logits")
    if regime == Regime.FULL_FINETUNE:
        ssl_from = (schedule.ssl_unfreeze_epoch if mode == "multi_layer"
                    else schedule.warmup_epochs)
        if epoch >= ssl_from:
            names |= {n for n in params.names() if n.startswith("ssl.")}
    return names


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def step(self, params: ParamSet, grads: dict, names) -> None:
        # Moments for frozen parameters are never touched, so a parameter
        # unfreezing later starts from zeroed optimizer state.
        for n in sorted(names):
            g = grads[n]
            if n not in self.m:
                self.m[n] = np.zeros_like(g)
                self.v[n] = np.zeros_like(g)
                self.t[n] = 0
            self.t[n] += 1
            self.m[n] = self.beta1 * self.m[n] + (1 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1 - self.beta2) * g * g
            mhat = self.m[n] / (1 - self.beta1 ** self.t[n])
            vhat = self.v[n] / (1 - self.beta2 ** self.t[n])
            params.values[n] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    total_loss: float
    asr_loss: float
    km_loss: float
    tau: float
    frame_acc: float
    regime: str
    trainable: list[str]
    grad_norms: dict = field(default_factory=dict)


@dataclass
class TrainState:
    params: ParamSet
    spec: PipelineSpec
    schedule: Schedule
    regime: Regime
    rng: SeededRng
    adam: Adam
    epoch: int = 0
    tau: float = 2.0
    init_inertia: float = 0.0
    gumbel_noise: bool = True

    def codebook(self) -> tok.Codebook:
        return tok.Codebook(centroids=self.params.values["codebook.M"].copy(),
                            sigma_sq=self.spec.sigma_sq)

    def layer_weights(self) -> LayerWeights:
        return LayerWeights(logits=self.params.values["layers.logits"].copy())


def extract_features(params: ParamSet, spec: PipelineSpec, frames: np.ndarray) -> np.ndarray:
    """Deterministic feature stream for one utterance (no tape)."""
    stack = upstream_forward(frames, params, spec.layer_count)
    if spec.mode == "multi_layer":
        return upstream.weighted_sum(stack, LayerWeights(params.values["layers.logits"]))
    return stack[spec.layer_index]


def init_training(regime: Regime, dataset, config) -> TrainState:
    """Parameter and codebook initialization for one experiment run.

    config is an ExperimentConfig. The codebook is fit with standard k-means
    on features produced by the freshly initialized frozen extractor (flat
    layer weights in multi-layer mode).
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    config.schedule.validate()
    spec = config.pipeline_spec()
    spec.validate()

    rng = SeededRng(config.seed)
    params = init_extractor_params(config.synth, rng.fork(1))
    params.add("layers.logits", np.zeros(config.synth.layer_count))

    token_count = (config.tokenizer.k if spec.tokenizer == "discrete"
                   else config.synth.feature_dim)
    init_downstream_params(token_count, config.synth.phone_count, rng.fork(2),
                           params=params, embed_dim=config.embed_dim,
                           hidden_dim=config.hidden_dim)

    init_inertia = 0.0
    if spec.tokenizer == "discrete":
        feats = np.concatenate(
            [extract_features(params, spec, u.frames) for u in dataset])
        fit = tok.fit_kmeans(feats, config.tokenizer.k, seed=config.seed,
                             sigma_sq=config.tokenizer.sigma_sq)
        params.add("codebook.M", fit.codebook.centroids)
        init_inertia = fit.final_inertia

    state = TrainState(
        params=params, spec=spec, schedule=config.schedule,
        regime=Regime(regime), rng=rng.fork(3), adam=Adam(lr=config.lr),
        tau=config.schedule.tau_start, init_inertia=init_inertia,
        gumbel_noise=config.gumbel_noise,
    )
    state.params.set_trainable(
        trainable_set(state.regime, state.schedule, 0, spec.mode, state.params))
    return state


def train(state: TrainState, dataset) -> list[EpochRecord]:
    """Per-utterance Adam steps for the configured number of epochs."""
    spec = state.spec
    history: list[EpochRecord] = []
    k = (state.params.values["codebook.M"].shape[0]
         if spec.tokenizer == "discrete" else 1)
    for epoch in range(state.epoch, state.schedule.total_epochs):
        state.epoch = epoch
        state.tau = temperature_at(state.schedule, epoch)
        names = trainable_set(state.regime, state.schedule, epoch, spec.mode,
                              state.params)
        state.params.set_trainable(names)
        order = state.rng.permutation(len(dataset))
        sums = {"total": 0.0, "asr": 0.0, "km": 0.0}
        correct = frames_seen = 0
        grad_sq: dict[str, float] = {}
        for idx in order:
            utt = dataset[int(idx)]
            t = utt.frames.shape[0]
            if state.gumbel_noise:
                noise = gumbel_from_uniform(state.rng.uniform(size=(t, k)))
            else:
                noise = np.zeros((t, k))
            inputs = {
                "frames": utt.frames, "labels": utt.phones, "noise": noise,
                "tau": state.tau, "spec": spec, "hard": True,
            }
            value, tape = forward_record(joint_loss_graph, state.params, inputs)
            terms = inputs["terms"]
            for term in ("asr", "km", "total"):
                if not np.isfinite(terms[term]):
                    raise NumericalAbortError(
                        f"non-finite {term} loss at epoch {epoch}, "
                        f"utterance {utt.utt_id}")
            grads = backward(tape)
            state.adam.step(state.params, grads, names)
            sums["total"] += terms["total"]
            sums["asr"] += terms["asr"]
            sums["km"] += terms["km"]
            correct += terms["correct"]
            frames_seen += terms["frames"]
            for n, g in grads.items():
                grad_sq[n] = grad_sq.get(n, 0.0) + float(np.sum(g * g))
        n_utt = len(dataset)
        history.append(EpochRecord(
            epoch=epoch,
            total_loss=sums["total"] / n_utt,
            asr_loss=sums["asr"] / n_utt,
            km_loss=sums["km"] / n_utt,
            tau=state.tau,
            frame_acc=correct / frames_seen,
            regime=state.regime.value,
            trainable=sorted(names),
            grad_norms={n: float(np.sqrt(s)) for n, s in sorted(grad_sq.items())},
        ))
        for n, v in state.params.values.items():
            if not np.all(np.isfinite(v)):
                raise NumericalAbortError(f"non-finite parameter {n} after epoch {epoch}")
    state.epoch = state.schedule.total_epochs
    return history


def evaluate(state: TrainState, dataset) -> dict:
    """Deterministic evaluation: nearest-centroid tokens, frame accuracy,
    mean per-frame cross-entropy (pooled over all frames)."""
    spec = state.spec
    correct = total = 0
    loss_sum = 0.0
    for utt in dataset:
        feats = extract_features(state.params, spec, utt.frames)
        if spec.tokenizer == "discrete":
            seq = tok.tokenize_inference(feats, state.codebook(), utt.utt_id)
            emb = state.params.values["asr.embed"][seq.ids]
        else:
            emb = feats @ state.params.values["asr.embed"]
        logits = downstream.classify(emb, state.params)
        preds = np.argmax(logits, axis=1)
        correct += int(np.sum(preds == utt.phones))
        total += len(utt.phones)
        loss_sum += downstream.asr_loss(logits, utt.phones) * len(utt.phones)
    return {"frame_accuracy": correct / total, "mean_asr_loss": loss_sum / total}


def tokenize_dataset(state: TrainState, dataset) -> list[tok.TokenSequence]:
    """Deterministic token sequences for every utterance."""
    out = []
    cb = state.codebook()
    for utt in dataset:
        feats = extract_features(state.params, state.spec, utt.frames)
        out.append(tok.tokenize_inference(feats, cb, utt.utt_id))
    return out
