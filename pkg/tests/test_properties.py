"""Randomized invariant checks (hypothesis, at least 100 cases each)."""

import tempfile

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ipdlab.analysis import ClusterConfig, PipelineConfig, RoundWindow, interaction_network, participants, run_pipeline
from ipdlab.game import (
    ConditionalAction,
    PlayerHistory,
    decode_symbols,
    encode_conditional,
    encode_symbols,
    feature_vector,
)
from ipdlab.hmm import FitConfig, HMMModel, em_trace, forward_log_likelihood, sample
from ipdlab.hmm.fit import random_init
from ipdlab.ingest import parse_csv, write_csv
from ipdlab.simulator import SimConfig, parse_roster, run_session, shuffled_pairing
from oracles import brute_log_likelihood

CASES = settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 2**32 - 1)
actions = st.text(alphabet="CD", min_size=2, max_size=60)
STRATEGIES = ["TFT", "AllC", "AllD", "WSLS", "Grim", "GTFT(0.3)", "RandomCoin(0.5)", "Switch(TFT,AllD,5)"]


def random_model(rng, h):
    trans, emit = random_init(h, 1, rng)
    return HMMModel.left_to_right(trans[0], emit[0])


def random_corpus(rng, model, n_max=6, len_max=25):
    return [sample(model, int(rng.integers(2, len_max)), rng) for _ in range(int(rng.integers(1, n_max)))]


@CASES
@given(seeds, st.integers(1, 4))
def test_em_keeps_rows_stochastic(seed, h):
    rng = np.random.default_rng(seed)
    fitted, _ = em_trace(random_corpus(rng, random_model(rng, h)), random_model(rng, h), max_iter=20)
    assert np.allclose(fitted.trans.sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(fitted.emit.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(fitted.trans >= 0) and np.all(fitted.emit >= 0)


@CASES
@given(seeds, st.integers(2, 4))
def test_em_keeps_structural_zeros(seed, h):
    rng = np.random.default_rng(seed)
    fitted, _ = em_trace(random_corpus(rng, random_model(rng, h)), random_model(rng, h), max_iter=20)
    assert np.all(np.tril(fitted.trans, -1) == 0.0)
    assert fitted.initial[0] == 1.0


@CASES
@given(seeds, st.integers(1, 4))
def test_em_is_monotone(seed, h):
    rng = np.random.default_rng(seed)
    _, trace = em_trace(random_corpus(rng, random_model(rng, 3)), random_model(rng, h), max_iter=40, tol=0.0)
    assert np.all(np.diff(trace) >= -1e-7 * np.maximum(1.0, np.abs(trace[1:])))


@CASES
@given(seeds, st.integers(1, 3), st.lists(st.integers(0, 7), min_size=1, max_size=5))
def test_forward_matches_enumeration(seed, h, seq):
    model = random_model(np.random.default_rng(seed), h)
    expected = brute_log_likelihood(model.initial, model.trans, model.emit, seq)
    assert np.isclose(forward_log_likelihood(model, [seq]), expected, atol=1e-9)


@CASES
@given(seeds, st.integers(1, 15), st.booleans())
def test_shuffled_pairing_is_a_perfect_matching(seed, half, avoid):
    n = 2 * half
    rng = np.random.default_rng(seed)
    prev = shuffled_pairing(n, rng)
    nxt = shuffled_pairing(n, rng, prev, avoid_repeat=avoid and n > 2)
    for pairs in (prev, nxt):
        flat = [i for p in pairs for i in p]
        assert sorted(flat) == list(range(n))
        assert all(a < b for a, b in pairs)
    if avoid and n > 2:
        assert not set(prev) & set(nxt)


@CASES
@given(seeds, st.integers(1, 5), st.integers(2, 30), st.sampled_from(["fixed", "shuffled"]))
def test_simulated_sessions_are_consistent(seed, half, rounds, matching):
    rng = np.random.default_rng(seed)
    roster = ",".join(rng.choice(STRATEGIES, 2 * half))
    s = run_session(SimConfig(2 * half, rounds, matching, 0.1, seed=seed), parse_roster(roster))
    assert s.consistency_errors() == []
    parsed, diag = parse_csv(write_csv([s]))
    assert diag.ok and parsed == [s]


@CASES
@given(actions, st.data())
def test_encoding_is_a_bijection(own, data):
    opp = data.draw(st.text(alphabet="CD", min_size=len(own), max_size=len(own)))
    h = PlayerHistory.from_strings(own, opp)
    symbols = encode_symbols(h)
    assert decode_symbols(symbols) == encode_conditional(h)
    assert all(ConditionalAction.from_symbol(int(s)).symbol == s for s in symbols)
    # the symbol sequence plus the first round determine the history
    assert "".join(str(ConditionalAction.from_symbol(int(s)).action) for s in symbols) == own[1:]
    fv = feature_vector(h)
    assert sum(fv.context_counts) == len(own) - 1
    assert all(c <= n for c, n in zip(fv.coop_counts, fv.context_counts))


@CASES
@given(seeds, st.integers(1, 6), st.integers(2, 40), st.integers(1, 4))
def test_network_weight_conservation(seed, half, rounds, n_labels):
    rng = np.random.default_rng(seed)
    s = run_session(SimConfig(2 * half, rounds, "shuffled", 0.1, seed=seed), parse_roster(f"{2 * half}xRandomCoin(0.5)"))
    labels = {p.key: f"A.{rng.integers(n_labels)}" for p in participants([s])}
    net = interaction_network([s], labels)
    assert net.total == 2 * half * rounds // 2
    assert all(w > 0 for w in net.weights.values())


@CASES
@given(seeds, st.integers(2, 4), st.booleans())
def test_pipeline_is_byte_identical(seed, half, windows):
    rng = np.random.default_rng(seed)
    roster = ",".join(rng.choice(STRATEGIES, 2 * half))
    s = run_session(SimConfig(2 * half, 12, "shuffled", 0.1, seed=seed), parse_roster(roster))
    runs = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as out:
            cfg = PipelineConfig(
                output=out,
                seed=seed,
                windows=(RoundWindow(1, 6), RoundWindow(7, 12)) if windows else (),
                cluster=ClusterConfig(kmeans_restarts=2),
                fit=FitConfig(restarts=2, refine_top=1, max_em_iters=20),
                tsne=False,
            )
            runs.append(run_pipeline([s], cfg).files)
    assert runs[0] == runs[1]
