"""Likelihood scoring, Viterbi decoding and sampling for :class:`HMMModel`."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from ..game import N_SYMBOLS
from . import _kernels
from .model import HMMModel

log = logging.getLogger(__name__)


def pack(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten sequences into (symbols, starts, lengths) for the kernels."""
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in sequences]
    seqs = [s for s in seqs if s.size]
    if not seqs:
        raise ValueError("empty sequence set")
    lengths = np.array([s.size for s in seqs], dtype=np.int64)
    starts = np.zeros(len(seqs), dtype=np.int64)
    starts[1:] = np.cumsum(lengths)[:-1]
    obs = np.concatenate(seqs)
    if obs.min() < 0 or obs.max() >= N_SYMBOLS:
        raise ValueError(f"symbols must lie in [0, {N_SYMBOLS - 1}]")
    return obs, starts, lengths


def forward_log_likelihood(model: HMMModel, sequences: Sequence[Sequence[int]]) -> float:
    """Sum over sequences of log P(sequence | model); -inf if any is impossible."""
    obs, starts, lengths = pack(sequences)
    return float(_kernels.forward_ll(obs, starts, lengths, model.trans, model.emit))


def per_sequence_log_likelihood(model: HMMModel, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    obs, starts, lengths = pack(sequences)
    return _kernels.forward_ll_each(obs, starts, lengths, model.trans, model.emit)


def _logs(model: HMMModel) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(model.trans), np.log(model.emit)


def viterbi_decode(model: HMMModel, sequence: Sequence[int]) -> np.ndarray:
    path, _ = viterbi_with_score(model, sequence)
    return path


def viterbi_with_score(model: HMMModel, sequence: Sequence[int]) -> tuple[np.ndarray, float]:
    """Most probable hidden path and its joint log-probability.

    A sequence the model cannot emit still gets a (monotone) path; its score
    is -inf and a warning is logged.
    """
    seq = np.asarray(sequence, dtype=np.int64)
    if seq.size == 0:
        raise ValueError("cannot decode an empty sequence")
    if seq.min() < 0 or seq.max() >= N_SYMBOLS:
        raise ValueError(f"symbols must lie in [0, {N_SYMBOLS - 1}]")
    lt, le = _logs(model)
    path, score = _kernels.viterbi(seq, lt, le)
    if not np.isfinite(score):
        log.warning("sequence has zero probability under the model; Viterbi path is arbitrary")
    return path, float(score)


def per_sequence_viterbi_log_likelihood(model: HMMModel, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    return np.array([viterbi_with_score(model, s)[1] for s in sequences if len(s)])


def viterbi_log_likelihood(model: HMMModel, sequences: Sequence[Sequence[int]]) -> float:
    """Sum of best-path joint log-probabilities (alternative held-out score)."""
    return float(per_sequence_viterbi_log_likelihood(model, sequences).sum())


def state_occupancy(model: HMMModel, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    """Fraction of Viterbi-decoded time steps spent in each state."""
    counts = np.zeros(model.h)
    for s in sequences:
        counts += np.bincount(viterbi_decode(model, s), minlength=model.h)
    total = counts.sum()
    return counts / total if total else counts


def sample(
    model: HMMModel, length: int, rng: np.random.Generator, return_states: bool = False
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Draw one symbol sequence (and optionally its hidden path)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    u = rng.random((length, 2))
    cum_trans = np.cumsum(model.trans, axis=1)
    cum_emit = np.cumsum(model.emit, axis=1)
    states = np.empty(length, dtype=np.int64)
    symbols = np.empty(length, dtype=np.int64)
    state = int(np.searchsorted(np.cumsum(model.initial), u[0, 0] * model.initial.sum(), side="right"))
    for t in range(length):
        if t:
            row = cum_trans[state]
            state = int(np.searchsorted(row, u[t, 0] * row[-1], side="right"))
        states[t] = state
        row = cum_emit[state]
        symbols[t] = np.searchsorted(row, u[t, 1] * row[-1], side="right")
    return (symbols, states) if return_states else symbols
