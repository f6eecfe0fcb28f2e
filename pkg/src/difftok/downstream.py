"""Token embedding, frame classifier, and the joint training loss.

The classifier is a frame-wise stand-in for a full sequence recognizer: two
affine layers with a tanh hidden. The joint loss combines its cross-entropy
with the per-frame quantization loss, total = asr + alpha * km.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Var
from .core_math import SeededRng, log_sum_exp
from .upstream import upstream_forward_graph, weighted_sum_graph

DEFAULT_EMBED_DIM = 16
DEFAULT_HIDDEN_DIM = 32


@dataclass
class PipelineSpec:
    """Static shape/mode description of the recorded computation graph."""

    layer_count: int
    mode: str                  # "single_layer" | "multi_layer"
    layer_index: int           # used in single_layer mode
    sigma_sq: float
    alpha: float
    phone_count: int
    tokenizer: str = "discrete"  # "discrete" | "continuous" (identity topline)

    def validate(self) -> None:
        if self.mode not in ("single_layer", "multi_layer"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "single_layer" and not (0 <= self.layer_index < self.layer_count):
            raise ValueError(
                f"mode.single_layer: layer index {self.layer_index} out of "
                f"range for {self.layer_count} layers")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.tokenizer not in ("discrete", "continuous"):
            raise ValueError(f"unknown tokenizer mode {self.tokenizer!r}")


@dataclass
class LossBreakdown:
    total: float
    asr_term: float
    km_term: float
    alpha: float

    def check_additive(self, tol: float = 1e-12) -> None:
        if abs(self.total - (self.asr_term + self.alpha * self.km_term)) > tol:
            raise AssertionError("loss breakdown is not additive")


def init_downstream_params(token_count: int, phone_count: int, rng: SeededRng,
                           params: ParamSet | None = None,
                           embed_dim: int = DEFAULT_EMBED_DIM,
                           hidden_dim: int = DEFAULT_HIDDEN_DIM) -> ParamSet:
    """Classifier parameters; token_count is k (discrete) or the feature
    dimension (continuous topline)."""
    if params is None:
        params = ParamSet()
    std = 0.1
    params.add("asr.embed", rng.normal(0.0, std, size=(token_count, embed_dim)))
    params.add("asr.W1", rng.normal(0.0, std, size=(embed_dim, hidden_dim)))
    params.add("asr.b1", np.zeros(hidden_dim))
    params.add("asr.W2", rng.normal(0.0, std, size=(hidden_dim, phone_count)))
    params.add("asr.b2", np.zeros(phone_count))
    return params


def embed(hard_onehot: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Row i = h~_i . E (numpy path; the graph uses the matmul primitive)."""
    hard_onehot = np.asarray(hard_onehot, dtype=float)
    table = np.asarray(table, dtype=float)
    if hard_onehot.shape[1] != table.shape[0]:
        raise ValueError(f"token count mismatch: {hard_onehot.shape[1]} vs {table.shape[0]}")
    return hard_onehot @ table


def classify(embedded: np.ndarray, params: ParamSet) -> np.ndarray:
    """Frame logits from embedded features (numpy path)."""
    h = np.tanh(embedded @ params.values["asr.W1"] + params.values["asr.b1"])
    return h @ params.values["asr.W2"] + params.values["asr.b2"]


def asr_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over frames of -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label id out of range")
    lse = log_sum_exp(logits)
    picked = logits[np.arange(len(labels)), labels]
    return float(np.mean(lse - picked))


def joint_loss_graph(param_vars: dict[str, Var], inputs: dict) -> Var:
    """Full differentiable pipeline; records loss terms into inputs["terms"].

    inputs: frames (T, D_in), labels (T,), noise (T, k) fixed Gumbel draw,
    tau, spec: PipelineSpec, hard: bool (False = soft surrogate used by
    gradient checking).
    """
    spec: PipelineSpec = inputs["spec"]
    frames = ad.const(inputs["frames"])
    labels = inputs["labels"]
    tau = float(inputs["tau"])
    hard = bool(inputs.get("hard", True))

    stack = upstream_forward_graph(frames, param_vars, spec.layer_count)
    if spec.mode == "multi_layer":
        feats = weighted_sum_graph(stack, param_vars["layers.logits"])
    else:
        feats = stack[spec.layer_index]

    t = frames.data.shape[0]
    if spec.tokenizer == "continuous":
        emb = ad.matmul(feats, param_vars["asr.embed"])
        km = ad.const(0.0)
    else:
        m = param_vars["codebook.M"]
        d = ad.pairwise_sq_dists(feats, m)
        p = ad.softmax_rows(ad.scale(d, -spec.sigma_sq), 1.0)
        logp = ad.log_floored(p)
        h = ad.softmax_rows(ad.add(logp, ad.const(inputs["noise"])), tau)
        assign = ad.straight_through(h) if hard else h
        emb = ad.matmul(assign, param_vars["asr.embed"])
        km = ad.scale(ad.sum_squares(ad.sub(feats, ad.matmul(assign, m))), 1.0 / t)

    hidden = ad.tanh(ad.add_bias(ad.matmul(emb, param_vars["asr.W1"]),
                                 param_vars["asr.b1"]))
    logits = ad.add_bias(ad.matmul(hidden, param_vars["asr.W2"]),
                         param_vars["asr.b2"])
    asr = ad.cross_entropy_mean(logits, labels)
    total = ad.add(asr, ad.scale(km, spec.alpha))

    preds = np.argmax(logits.data, axis=1)
    inputs["terms"] = {
        "asr": float(asr.data),
        "km": float(km.data),
        "total": float(total.data),
        "correct": int(np.sum(preds == np.asarray(labels))),
        "frames": int(t),
    }
    return total


def joint_loss(utterance, state, noise: np.ndarray | None = None,
               tau: float | None = None, hard: bool = True) -> LossBreakdown:
    """Forward-only joint loss for one utterance given a training state.

    state must expose .params (ParamSet), .spec (PipelineSpec), .rng
    (SeededRng) and .tau (current temperature); the trainer's TrainState
    satisfies this.
    """
    spec: PipelineSpec = state.spec
    if noise is None:
        if spec.tokenizer == "continuous":
            noise = np.zeros((utterance.frames.shape[0], 1))
        else:
            from .core_math import gumbel_from_uniform
            k = state.params.values["codebook.M"].shape[0]
            noise = gumbel_from_uniform(
                state.rng.uniform(size=(utterance.frames.shape[0], k)))
    inputs = {
        "frames": utterance.frames,
        "labels": utterance.phones,
        "noise": noise,
        "tau": state.tau if tau is None else tau,
        "spec": spec,
        "hard": hard,
    }
    param_vars = {n: Var(v, requires_grad=False) for n, v in state.params.values.items()}
    joint_loss_graph(param_vars, inputs)
    terms = inputs["terms"]
    breakdown = LossBreakdown(total=terms["total"], asr_term=terms["asr"],
                              km_term=terms["km"], alpha=spec.alpha)
    breakdown.check_additive()
    return breakdown
