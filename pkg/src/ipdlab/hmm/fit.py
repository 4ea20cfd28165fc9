"""Baum-Welch fitting with many random restarts, and held-out model selection
over 4, 3, 2 and 1 hidden states."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..game import N_SYMBOLS
from . import _kernels
from .inference import (
    forward_log_likelihood,
    pack,
    per_sequence_log_likelihood,
    per_sequence_viterbi_log_likelihood,
    viterbi_decode,
)
from .model import MAX_STATES, HMMModel

log = logging.getLogger(__name__)

CANDIDATE_STATES = (4, 3, 2, 1)


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 10_000
    max_em_iters: int = 500
    ll_tolerance: float = 1e-6
    min_transition: float = 0.01
    test_fraction: float = 0.2
    seed: int = 0
    # short-run screening: every restart gets `screen_iters` EM steps, the best
    # `refine_top` continue to convergence; screen_iters=0 runs all to convergence
    screen_iters: int = 10
    refine_top: int = 32
    scoring: str = "forward"
    chunk: int = 16
    # a larger model must beat a smaller one on held-out data by more than
    # se_factor standard errors of the paired per-sequence differences; 2 covers
    # the up to three one-sided comparisons against larger candidates
    se_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.max_em_iters < 1:
            raise ValueError("max_em_iters must be >= 1")
        if self.scoring not in ("forward", "viterbi"):
            raise ValueError("scoring must be 'forward' or 'viterbi'")
        if self.screen_iters < 0 or self.refine_top < 1 or self.chunk < 1:
            raise ValueError("screen_iters >= 0, refine_top >= 1 and chunk >= 1 are required")
        if self.se_factor < 0:
            raise ValueError("se_factor must be >= 0")


@dataclass(frozen=True)
class FitResult:
    model: HMMModel
    log_likelihood: float
    iterations: int


def closed_form_single_state(sequences: Sequence[Sequence[int]]) -> HMMModel:
    """The h=1 maximum-likelihood model: pooled symbol frequencies."""
    obs, _, _ = pack(sequences)
    counts = np.bincount(obs, minlength=N_SYMBOLS).astype(float)
    return HMMModel.left_to_right([[1.0]], [counts / counts.sum()])


def random_init(h: int, restarts: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Dirichlet(1) rows for every restart, zeros below the diagonal.

    Returns ``trans`` (R, h, h) and ``emit`` (R, h, 8).
    """
    trans = np.zeros((restarts, h, h))
    for i in range(h):
        trans[:, i, i:] = rng.dirichlet(np.ones(h - i), size=restarts)
    emit = rng.dirichlet(np.ones(N_SYMBOLS), size=(restarts, h))
    return trans, emit


def _check_inputs(sequences: Sequence[Sequence[int]], h: int) -> None:
    if not 1 <= h <= MAX_STATES:
        raise ValueError(f"h must lie in [1, {MAX_STATES}], got {h}")
    if not sequences:
        raise ValueError("empty sequence set")
    if all(len(s) < 2 for s in sequences):
        raise ValueError("all sequences are shorter than 2 symbols")


def _finish(trans: np.ndarray, emit: np.ndarray) -> HMMModel:
    trans = trans / trans.sum(axis=1, keepdims=True)
    emit = emit / emit.sum(axis=1, keepdims=True)
    return HMMModel.left_to_right(trans, emit)


def fit_with_score(
    sequences: Sequence[Sequence[int]],
    h: int,
    config: FitConfig = FitConfig(),
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Best-of-restarts Baum-Welch fit; returns the model with its training ll."""
    _check_inputs(sequences, h)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if h == 1:
        model = closed_form_single_state(sequences)
        return FitResult(model, forward_log_likelihood(model, sequences), 1)

    obs, starts, lengths = pack(sequences)
    sym, valid = _kernels.pad(obs, starts, lengths)
    r = config.restarts
    trans, emit = random_init(h, r, rng)
    # per restart: [previous ll, done flag, last ll, iterations run]
    state = np.zeros((r, 4))
    state[:, 0] = state[:, 2] = -np.inf
    tol = config.ll_tolerance
    chunk = config.chunk

    budget = config.max_em_iters
    if config.screen_iters and r > config.refine_top:
        n_screen = min(config.screen_iters, budget)
        _kernels.em_restarts(sym, valid, trans, emit, n_screen, tol, state, chunk)
        budget -= n_screen
        keep = np.sort(np.argsort(-state[:, 2], kind="stable")[: config.refine_top])
        trans, emit, state = trans[keep], emit[keep], state[keep]
    if budget > 0:
        _kernels.em_restarts(sym, valid, trans, emit, budget, tol, state, 1)

    # restarts stopped by the iteration cap carry the ll from before their
    # last M-step; rescore them
    final = state[:, 2].copy()
    for k in np.flatnonzero(state[:, 1] == 0):
        final[k] = _kernels.forward_ll(obs, starts, lengths, trans[k], emit[k])
    final = np.where(np.isnan(final), -np.inf, final)
    best = int(np.argmax(final))
    model = _finish(trans[best], emit[best])
    ll = forward_log_likelihood(model, sequences)
    log.debug("h=%d best ll %.4f after %d iterations", h, ll, state[best, 3])
    return FitResult(model, ll, int(state[best, 3]))


def fit_baum_welch(
    sequences: Sequence[Sequence[int]],
    h: int,
    config: FitConfig = FitConfig(),
    rng: np.random.Generator | None = None,
) -> HMMModel:
    return fit_with_score(sequences, h, config, rng).model


def em_trace(
    sequences: Sequence[Sequence[int]],
    model: HMMModel,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> tuple[HMMModel, np.ndarray]:
    """Single EM run from ``model``; returns the fit and its per-iteration ll."""
    obs, starts, lengths = pack(sequences)
    trans = np.array(model.trans, dtype=float)
    emit = np.array(model.emit, dtype=float)
    _, _, trace = _kernels.em_traced(obs, starts, lengths, trans, emit, max_iter, tol)
    return _finish(trans, emit), trace[~np.isnan(trace)]


@dataclass
class Candidate:
    h: int
    model: HMMModel
    train_ll: float
    test_ll: float
    accepted: bool
    reason: str = ""
    test_scores: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


@dataclass
class Selection:
    model: HMMModel
    candidates: list[Candidate] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    n_train: int = 0
    n_test: int = 0

    @property
    def h(self) -> int:
        return self.model.h


def transition_ok(model: HMMModel, min_transition: float) -> bool:
    """Every retained (nonzero) left-to-right transition is >= ``min_transition``."""
    allowed = np.triu(np.ones_like(model.trans, dtype=bool))
    retained = allowed & (model.trans > 0)
    return bool(np.all(model.trans[retained] >= min_transition))


def visits_all_states(model: HMMModel, sequences: Sequence[Sequence[int]]) -> bool:
    seen = np.zeros(model.h, dtype=bool)
    for s in sequences:
        seen[np.unique(viterbi_decode(model, s))] = True
        if seen.all():
            return True
    return bool(seen.all())


def split_train_test(
    sequences: Sequence[Sequence[int]], test_fraction: float, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Seeded split, independent of the order ``sequences`` are given in."""
    seqs = sorted((np.asarray(s, dtype=np.int64) for s in sequences), key=lambda a: (a.size, a.tolist()))
    n = len(seqs)
    n_test = min(n - 1, max(1, int(round(test_fraction * n))))
    perm = rng.permutation(n)
    test = sorted(perm[:n_test].tolist())
    train = sorted(perm[n_test:].tolist())
    return [seqs[i] for i in train], [seqs[i] for i in test]


def paired_standard_error(a: np.ndarray, b: np.ndarray) -> float:
    """Standard error of sum(a) - sum(b) from per-sequence differences."""
    with np.errstate(invalid="ignore"):
        d = np.asarray(a) - np.asarray(b)
    if d.size < 2 or not np.all(np.isfinite(d)):
        return 0.0
    return float(np.sqrt(d.size) * d.std(ddof=1))


def choose_candidate(candidates: Sequence[Candidate], config: FitConfig) -> Candidate | None:
    """Smallest accepted h whose held-out score is within the tie margin of
    the best accepted score."""
    accepted = sorted((c for c in candidates if c.accepted), key=lambda c: c.h)
    if not accepted:
        return None
    best = max(accepted, key=lambda c: (c.test_ll, -c.h))
    for cand in accepted:
        margin = max(config.ll_tolerance, config.se_factor * paired_standard_error(best.test_scores, cand.test_scores))
        if cand.test_ll >= best.test_ll - margin:
            return cand
    return best


def select_model(
    sequences: Sequence[Sequence[int]],
    config: FitConfig = FitConfig(),
    rng: np.random.Generator | None = None,
) -> Selection:
    """Fit h = 4, 3, 2, 1 on a training split and keep the smallest accepted
    model whose held-out log-likelihood ties with the best.

    A model is accepted when all its retained transitions are at least
    ``config.min_transition`` and Viterbi decoding of the training split uses
    every state. Held-out scores tie when they differ by at most
    ``ll_tolerance`` or by at most ``se_factor`` standard errors of the
    paired per-sequence differences.
    """
    if len(sequences) < 2:
        raise ValueError("model selection needs at least 2 sequences for a train/test split")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    split_rng, fit_seed = rng.spawn(2)
    train, test = split_train_test(sequences, config.test_fraction, split_rng)
    fit_seeds = dict(zip(CANDIDATE_STATES, fit_seed.spawn(len(CANDIDATE_STATES))))
    score = per_sequence_log_likelihood if config.scoring == "forward" else per_sequence_viterbi_log_likelihood

    sel = Selection(model=closed_form_single_state(train), n_train=len(train), n_test=len(test))
    for h in CANDIDATE_STATES:
        if h > 1 and sum(len(s) for s in train) < h:
            sel.diagnostics.append(f"h={h}: too few training symbols")
            continue
        fit = fit_with_score(train, h, config, fit_seeds[h])
        scores = score(fit.model, test)
        cand = Candidate(h, fit.model, fit.log_likelihood, float(scores.sum()), accepted=True, test_scores=scores)
        if not transition_ok(fit.model, config.min_transition):
            cand.accepted, cand.reason = False, f"transition below {config.min_transition}"
        elif not visits_all_states(fit.model, train):
            cand.accepted, cand.reason = False, "Viterbi decoding leaves a state unused"
        sel.candidates.append(cand)

    best = choose_candidate(sel.candidates, config)
    if best is None:
        sel.diagnostics.append("no candidate passed the constraints; using the closed-form h=1 model")
    else:
        sel.model = best.model
    return sel
