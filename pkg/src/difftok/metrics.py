"""Token-quality metrics: PNMI, NQE, TSL, MTER and their primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core_math import entropy_nats
from .tokenizer import Codebook, TokenSequence


def dedup(tokens: TokenSequence) -> TokenSequence:
    """Collapse maximal runs of equal consecutive ids to one occurrence."""
    ids = tokens.ids
    if len(ids) == 0:
        return TokenSequence(ids=ids.copy(), utt_id=tokens.utt_id)
    keep = np.ones(len(ids), dtype=bool)
    keep[1:] = ids[1:] != ids[:-1]
    return TokenSequence(ids=ids[keep], utt_id=tokens.utt_id)


def tsl(sequences) -> float:
    """Mean token sequence length after deduplication."""
    sequences = list(sequences)
    if not sequences:
        raise ValueError("tsl needs at least one sequence")
    return float(np.mean([len(dedup(s)) for s in sequences]))


def edit_distance(a: TokenSequence, b: TokenSequence) -> int:
    """Unit-cost Levenshtein distance between two token sequences."""
    return kernels.levenshtein(a.ids, b.ids)


@dataclass
class EvalGroup:
    """Token sequences of utterances sharing one transcript."""

    transcript_id: int
    sequences: list


def mter(group: EvalGroup, dedup_first: bool = True) -> float:
    """Mean token error rate over all ordered (reference, hypothesis) pairs,
    as a percentage. Sequences are deduplicated first by default, so that
    speaking-rate-like repetition differences do not dominate."""
    seqs = group.sequences
    if len(seqs) < 2:
        raise ValueError("mter needs a group of at least 2 sequences")
    if dedup_first:
        seqs = [dedup(s) for s in seqs]
    for s in seqs:
        if len(s) == 0:
            raise ValueError("mter is undefined for empty (deduplicated) sequences")
    ters = []
    for i, ref in enumerate(seqs):
        for j, hyp in enumerate(seqs):
            if i == j:
                continue
            ters.append(edit_distance(ref, hyp) / len(ref))
    return float(np.mean(ters) * 100.0)


def contingency_table(phones: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """counts[phone][token] over aligned frames."""
    phones = np.asarray(phones, dtype=np.int64)
    tokens = np.asarray(tokens, dtype=np.int64)
    if phones.shape != tokens.shape or phones.ndim != 1:
        raise ValueError("phones and tokens must be aligned 1-D sequences")
    if len(phones) == 0:
        raise ValueError("empty input")
    table = np.zeros((phones.max() + 1, tokens.max() + 1), dtype=np.int64)
    np.add.at(table, (phones, tokens), 1)
    return table


def pnmi_from_counts(counts: np.ndarray) -> float:
    """I(phone; token) / H(phone) in nats from a contingency table."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("contingency table is empty")
    joint = counts / total
    p_phone = joint.sum(axis=1)
    p_token = joint.sum(axis=0)
    h_phone = entropy_nats(p_phone)
    if h_phone == 0.0:
        # Constant phone labels: mutual information is 0 by convention.
        return 0.0
    nz = joint > 0
    outer = np.outer(p_phone, p_token)
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return mi / h_phone


def pnmi(phones: np.ndarray, tokens: np.ndarray) -> float:
    """Phone-normalized mutual information over aligned frames, in [0, 1]."""
    return pnmi_from_counts(contingency_table(phones, tokens))


def nqe(features: np.ndarray, tokens: TokenSequence, codebook: Codebook) -> float:
    """Mean frame-to-assigned-centroid distance over mean frame norm.

    Frames are pooled: both averages run over all frames passed in.
    """
    features = np.asarray(features, dtype=float)
    ids = tokens.ids
    if features.shape[0] != len(ids):
        raise ValueError("feature/token length mismatch")
    assigned = codebook.centroids[ids]
    num = float(np.mean(np.linalg.norm(features - assigned, axis=1)))
    den = float(np.mean(np.linalg.norm(features, axis=1)))
    if den == 0.0:
        raise ValueError("mean feature norm is zero; NQE undefined")
    return num / den


@dataclass
class MetricReport:
    pnmi: float
    nqe: float
    tsl: float
    mter_pct: float
    n_frames: int
    n_groups: int
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "pnmi": self.pnmi,
            "nqe": self.nqe,
            "tsl": self.tsl,
            "mter_pct": self.mter_pct,
            "n_frames": self.n_frames,
            "n_groups": self.n_groups,
            "config_hash": self.config_hash,
        }


def build_groups(dataset, sequences) -> list[EvalGroup]:
    """Group token sequences by transcript id; only groups of >= 2 qualify."""
    by_transcript: dict[int, list] = {}
    for utt, seq in zip(dataset, sequences):
        by_transcript.setdefault(utt.transcript_id, []).append(seq)
    return [EvalGroup(transcript_id=t, sequences=s)
            for t, s in sorted(by_transcript.items()) if len(s) >= 2]


def evaluate_tokens(dataset, sequences, features_per_utt, codebook: Codebook,
                    config_hash: str = "") -> MetricReport:
    """All four token metrics over one tokenized dataset.

    features_per_utt must align frame-for-frame with each token sequence.
    """
    phones = np.concatenate([u.phones for u in dataset])
    token_ids = np.concatenate([s.ids for s in sequences])
    feats = np.concatenate(features_per_utt)
    all_tokens = TokenSequence(ids=token_ids)
    groups = build_groups(dataset, sequences)
    mter_vals = [mter(g) for g in groups]
    return MetricReport(
        pnmi=pnmi(phones, token_ids),
        nqe=nqe(feats, all_tokens, codebook),
        tsl=tsl(sequences),
        mter_pct=float(np.mean(mter_vals)) if mter_vals else float("nan"),
        n_frames=int(len(phones)),
        n_groups=len(groups),
        config_hash=config_hash,
    )
