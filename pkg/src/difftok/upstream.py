"""Synthetic corpus generation and the toy multi-layer feature extractor.

The extractor stands in for a pretrained speech model: a stack of tanh
layers whose initial weights emphasize the phone subspace or the speaker
subspace of the input to a different degree per layer. Raw frames carry
phone identity in the first half of the input dimensions and speaker
identity in the second half, so the per-layer mix coefficients control how
much of each survives to that layer's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamSet, Var, add_bias, matmul, softmax_rows, tanh, weighted_layers
from .core_math import SeededRng, softmax_t

MARKOV_SELF_LOOP = 0.6
# Fraction of transcripts read by several speakers; needed for MTER groups.
SHARED_TRANSCRIPT_FRACTION = 0.5
PARAM_INIT_STD = 0.1


@dataclass
class SynthConfig:
    phone_count: int = 8
    speaker_count: int = 8
    frames_per_utterance: int = 60
    utterance_count: int = 600
    input_dim: int = 16
    feature_dim: int = 16
    layer_count: int = 3
    # Per-layer gain on the phone / speaker subspaces of the propagated
    # signal. The middle layer is the most phone-informative; the last layer
    # (the single-layer default) is speaker-heavy, so layer selection matters.
    phone_mix: tuple = (0.9, 1.0, 0.3)
    speaker_mix: tuple = (0.9, 0.3, 1.0)
    noise_std: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.phone_count < 2:
            raise ValueError("phone_count must be >= 2")
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if self.feature_dim < 2 or self.input_dim < 2:
            raise ValueError("feature dimensions must be >= 2")
        if self.speaker_count < 1 or self.utterance_count < 1 or self.frames_per_utterance < 1:
            raise ValueError("counts must be positive")
        if len(self.phone_mix) != self.layer_count or len(self.speaker_mix) != self.layer_count:
            raise ValueError("mix coefficient lists must have one entry per layer")
        for c in tuple(self.phone_mix) + tuple(self.speaker_mix):
            if not (0.0 <= c <= 1.0):
                raise ValueError("mix coefficients must lie in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class Utterance:
    utt_id: str
    transcript_id: int
    speaker_id: int
    phones: np.ndarray   # (T,) latent phone labels
    frames: np.ndarray   # (T, input_dim) raw input

    def to_dict(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "transcript_id": int(self.transcript_id),
            "speaker_id": int(self.speaker_id),
            "phones": [int(p) for p in self.phones],
            "frames": [[float(v) for v in row] for row in self.frames],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Utterance":
        return cls(
            utt_id=d["utt_id"],
            transcript_id=int(d["transcript_id"]),
            speaker_id=int(d["speaker_id"]),
            phones=np.asarray(d["phones"], dtype=np.int64),
            frames=np.asarray(d["frames"], dtype=float),
        )


@dataclass
class LayerWeights:
    """Simplex layer weights parameterized as softmax of free logits."""

    logits: np.ndarray

    def effective(self) -> np.ndarray:
        return softmax_t(self.logits, 1.0)


def markov_transition(phone_count: int) -> np.ndarray:
    p = np.full((phone_count, phone_count),
                (1.0 - MARKOV_SELF_LOOP) / (phone_count - 1))
    np.fill_diagonal(p, MARKOV_SELF_LOOP)
    return p


def _sample_phone_sequence(rng: SeededRng, trans: np.ndarray, length: int) -> np.ndarray:
    p = trans.shape[0]
    seq = np.empty(length, dtype=np.int64)
    seq[0] = int(rng.integers(0, p))
    for t in range(1, length):
        seq[t] = rng.choice_weighted(trans[seq[t - 1]])
    return seq


def synth_generate(config: SynthConfig) -> list[Utterance]:
    """Seeded synthetic corpus: Markov phone sequences rendered as
    phone embedding + speaker offset + Gaussian noise per frame."""
    config.validate()
    rng = SeededRng(config.seed)
    d = config.input_dim
    half = d // 2

    # Phone identity occupies dims [0, half); speaker identity [half, d).
    phone_emb = np.zeros((config.phone_count, d))
    phone_emb[:, :half] = rng.normal(0.0, 1.0, size=(config.phone_count, half))
    speaker_off = np.zeros((config.speaker_count, d))
    speaker_off[:, half:] = rng.normal(0.0, 1.0, size=(config.speaker_count, d - half))

    trans = markov_transition(config.phone_count)
    readers = min(config.speaker_count, 4)
    n_shared = max(1, int(round(config.utterance_count
                                * SHARED_TRANSCRIPT_FRACTION
                                / readers)))
    n_solo = max(0, config.utterance_count - n_shared * readers)

    transcripts: list[np.ndarray] = []
    plan: list[tuple[int, int]] = []  # (transcript_id, speaker_id)
    for t in range(n_shared):
        transcripts.append(_sample_phone_sequence(rng, trans, config.frames_per_utterance))
        speakers = rng.permutation(config.speaker_count)[:readers]
        for s in speakers:
            plan.append((t, int(s)))
    for _ in range(n_solo):
        tid = len(transcripts)
        transcripts.append(_sample_phone_sequence(rng, trans, config.frames_per_utterance))
        plan.append((tid, int(rng.integers(0, config.speaker_count))))
    plan = plan[:config.utterance_count]

    utts = []
    for i, (tid, sid) in enumerate(plan):
        phones = transcripts[tid]
        frames = phone_emb[phones] + speaker_off[sid]
        if config.noise_std > 0:
            frames = frames + rng.normal(0.0, config.noise_std, size=frames.shape)
        else:
            frames = frames.copy()
        utts.append(Utterance(
            utt_id=f"utt{i:05d}", transcript_id=tid, speaker_id=sid,
            phones=phones.copy(), frames=frames,
        ))
    return utts


def init_extractor_params(config: SynthConfig, rng: SeededRng,
                          params: ParamSet | None = None) -> ParamSet:
    """Extractor weights: seeded Gaussian (std 0.1) plus a diagonal component
    scaling the phone/speaker halves by the per-layer mix coefficients."""
    if params is None:
        params = ParamSet()
    d_in, d = config.input_dim, config.feature_dim
    half_in, half = d_in // 2, d // 2
    for l in range(config.layer_count):
        rows = d_in if l == 0 else d
        a = rng.normal(0.0, PARAM_INIT_STD, size=(rows, d))
        r_half = half_in if l == 0 else half
        m = min(r_half, half)
        for i in range(m):
            a[i, i] += config.phone_mix[l]
        for i in range(min(rows - r_half, d - half)):
            a[r_half + i, half + i] += config.speaker_mix[l]
        params.add(f"ssl.A{l}", a)
        params.add(f"ssl.b{l}", np.zeros(d))
    return params


def upstream_forward_graph(x: Var, param_vars: dict[str, Var], layer_count: int) -> list[Var]:
    """Differentiable feature stack: layer l = tanh(prev @ A_l + b_l)."""
    stack = []
    h = x
    for l in range(layer_count):
        h = tanh(add_bias(matmul(h, param_vars[f"ssl.A{l}"]), param_vars[f"ssl.b{l}"]))
        stack.append(h)
    return stack


def upstream_forward(frames: np.ndarray, params: ParamSet, layer_count: int) -> np.ndarray:
    """Inference-path feature stack, shape (L, T, feature_dim)."""
    h = np.asarray(frames, dtype=float)
    layers = []
    for l in range(layer_count):
        a = params.values[f"ssl.A{l}"]
        b = params.values[f"ssl.b{l}"]
        if h.shape[1] != a.shape[0]:
            raise ValueError(f"layer {l}: input dim {h.shape[1]} vs weight rows {a.shape[0]}")
        h = np.tanh(h @ a + b)
        layers.append(h)
    return np.stack(layers)


def weighted_sum(stack: np.ndarray, weights: LayerWeights) -> np.ndarray:
    """Layer mix sum_l w_l * layer_l (numpy path)."""
    stack = np.asarray(stack, dtype=float)
    w = weights.effective()
    if stack.shape[0] != w.shape[0]:
        raise ValueError(f"layer count mismatch: {stack.shape[0]} vs {w.shape[0]}")
    return np.einsum("l,ltd->td", w, stack)


def weighted_sum_graph(stack: list[Var], logits: Var) -> Var:
    w = softmax_rows(logits, 1.0)
    return weighted_layers(stack, w)
