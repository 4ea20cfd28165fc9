"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
with the measured values (collected in the terminal summary).

Set IPDLAB_ACCEPTANCE_FULL=1 to run the 100-repetition model-selection
check at the full 10,000 restarts (hours on one core); the default run uses
32 restarts for that check only. Set IPDLAB_DATASET to the converted
experimental session file(s) (comma-separated) to enable criterion 10.
"""

import itertools
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ipdlab.analysis import ClusterConfig, PipelineConfig, participants, run_pipeline, sequences_for, two_stage_cluster, weighted_emission
from ipdlab.clustering import elbow_select, inertia_curve, kmeans, louvain, random_baseline_modularity, silhouette
from ipdlab.clustering.network import WeightedGraph
from ipdlab.game import SYMBOL_LABELS, feature_vector, symbol_of
from ipdlab.hmm import FitConfig, HMMModel, fit_baum_welch, forward_log_likelihood, sample, select_model
from ipdlab.hmm.inference import per_sequence_log_likelihood, viterbi_with_score
from ipdlab.ingest import context_table_rows, histories_by_treatment, load_sessions
from ipdlab.simulator import ALLC, ALLD, TFT, WSLS, SimConfig, Switch, run_session
from oracles import direct_silhouette, enumerate_all_sequences, exhaustive_kmeans_optimum
from synth import agreement, three_blobs, two_cliques

FULL = os.environ.get("IPDLAB_ACCEPTANCE_FULL") == "1"
RESTARTS = 10_000
SELECTION_REPEATS = 100
SELECTION_FIT = FitConfig() if FULL else FitConfig(restarts=32, refine_top=8)

TFT_SET = ("(CC)C", "(CD)D", "(DC)C", "(DD)D")


def mass(emission, labels):
    return float(sum(emission[symbol_of(s)] for s in labels))


def subcluster_emission(sessions, result, treatment, sub, window="full"):
    """Viterbi-weighted emission of a sub-cluster's selected model."""
    tr = result.treatments[treatment]
    everyone = participants(s for s in sessions if s.treatment == treatment)
    members = [everyone[i] for i in tr.report.members(sub)]
    win = None if window == "full" else next(w for w in PipelineConfig().windows if w.name == window)
    seqs = sequences_for(members, win)
    return weighted_emission(tr.report.models[(sub, window)].model, seqs)


def pipeline(tmp_path, sessions, **kw):
    cfg = PipelineConfig(output=str(tmp_path / "report"), fit=FitConfig(restarts=RESTARTS), **kw)
    return run_pipeline(sessions, cfg)


@pytest.mark.criterion(1)
@pytest.mark.slow
def test_criterion_1_planted_tft_recovery(tmp_path, report):
    session = run_session(SimConfig(60, 100, "fixed", 0.05, seed=1), [TFT] * 60)
    start = time.perf_counter()
    result = pipeline(tmp_path, [session])
    elapsed = time.perf_counter() - start
    sub = result.treatments["FP"].report.largest_subcluster()
    m = mass(subcluster_emission([session], result, "FP", sub), TFT_SET)
    h = result.treatments["FP"].report.models[(sub, "full")].h
    report(f"largest sub-cluster {sub} (h={h}) TFT mass {m:.3f} (>= 0.80); runtime {elapsed:.0f}s on 1 core (<= 300s)")
    assert m >= 0.80
    assert elapsed <= 300


@pytest.mark.criterion(2)
@pytest.mark.slow
def test_criterion_2_alld_allc_separation(tmp_path, report):
    session = run_session(SimConfig(40, 100, "shuffled", 0.02, seed=2), [ALLD] * 20 + [ALLC] * 20)
    result = pipeline(tmp_path, [session], windows=(), tsne=False)
    rep = result.treatments["SP"].report
    truth = [0] * 20 + [1] * 20
    agree = agreement(rep.context_labels, truth)
    masses = {}
    for sub in rep.subclusters:
        idx = rep.members(sub)
        kind = "AllD" if sum(i < 20 for i in idx) * 2 > len(idx) else "AllC"
        labels = ("(DD)D", "(DC)D") if kind == "AllD" else ("(CD)C", "(CC)C")
        masses[f"{sub}:{kind}"] = mass(subcluster_emission([session], result, "SP", sub), labels)
    shown = ", ".join(f"{k} {v:.3f}" for k, v in masses.items())
    report(f"context agreement {agree:.3f} (>= 0.95); sub-cluster masses {shown} (each >= 0.90)")
    assert agree >= 0.95
    assert all(v >= 0.90 for v in masses.values())
    assert {k.split(":")[1] for k in masses} == {"AllD", "AllC"}


@pytest.mark.criterion(3)
@pytest.mark.slow
def test_criterion_3_wsls_signature(tmp_path, report):
    session = run_session(SimConfig(60, 100, "fixed", 0.05, seed=3), [WSLS] * 60)
    result = pipeline(tmp_path, [session], windows=(), tsne=False)
    sub = result.treatments["FP"].report.largest_subcluster()
    emission = subcluster_emission([session], result, "FP", sub)
    m = mass(emission, ("(CC)C", "(DC)C", "(CD)D", "(DD)C"))
    pavlov = mass(emission, ("(CC)C", "(DC)D", "(CD)D", "(DD)C"))
    report(f"largest sub-cluster {sub}: mass {m:.3f} on the listed set (>= 0.75); {pavlov:.3f} on the win-stay lose-shift set")
    assert m >= 0.75


PLANTED_TWO = HMMModel.left_to_right(
    [[0.9, 0.1], [0.0, 1.0]],
    [[0.7, 0.2, 0.1, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0.1, 0.2, 0.7]],
)
PLANTED_ONE = HMMModel.left_to_right([[1.0]], [[0.4, 0.1, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05]])


def corpus(model, seed):
    rng = np.random.default_rng(seed)
    return [sample(model, 99, rng) for _ in range(200)]


def aligned_tv(fitted, truth):
    return min(
        max(0.5 * np.abs(fitted.emit[p[i]] - truth.emit[i]).sum() for i in range(truth.h))
        for p in itertools.permutations(range(truth.h))
    )


@pytest.mark.criterion(4)
@pytest.mark.slow
def test_criterion_4_baum_welch_oracle(report):
    # parameter recovery at the calibrated restart count
    tvs, gaps = [], []
    for seed in range(3):
        seqs = corpus(PLANTED_TWO, 70_000 + seed)
        train, test = seqs[:160], seqs[160:]
        fitted = fit_baum_welch(train, 2, FitConfig(restarts=RESTARTS, seed=seed))
        tvs.append(aligned_tv(fitted, PLANTED_TWO))
        truth = forward_log_likelihood(PLANTED_TWO, test)
        gaps.append(abs(forward_log_likelihood(fitted, test) - truth) / abs(truth))

    # selection frequency over fresh seeded corpora
    picks = {"two": [], "one": []}
    for rep in range(SELECTION_REPEATS):
        for name, model in (("two", PLANTED_TWO), ("one", PLANTED_ONE)):
            seqs = corpus(model, 50_000 + rep)
            picks[name].append(select_model(seqs, SELECTION_FIT, np.random.default_rng(60_000 + rep)).h)
    two = picks["two"].count(2)
    one = picks["one"].count(1)
    mode = "10000" if FULL else f"{SELECTION_FIT.restarts} (IPDLAB_ACCEPTANCE_FULL=1 for 10000)"
    report(
        f"max aligned TV {max(tvs):.4f} (<= 0.05); max held-out gap {100 * max(gaps):.3f}% (<= 2%); "
        f"h=2 in {two}/100 (>= 95), h=1 in {one}/100 (>= 99); selection restarts {mode}; "
        f"h counts two={np.bincount(picks['two'], minlength=5)[1:].tolist()} one={np.bincount(picks['one'], minlength=5)[1:].tolist()}"
    )
    assert max(tvs) <= 0.05
    assert max(gaps) <= 0.02
    assert two >= 95
    assert one >= 99


FIXED = HMMModel.left_to_right(
    [[0.8, 0.2], [0.0, 1.0]],
    [
        [0.30, 0.05, 0.20, 0.05, 0.15, 0.10, 0.10, 0.05],
        [0.02, 0.28, 0.05, 0.15, 0.05, 0.15, 0.10, 0.20],
    ],
)


@pytest.mark.criterion(5)
def test_criterion_5_exact_inference_oracle(report):
    worst_fwd = worst_vit = 0.0
    count = 0
    for length in range(1, 7):
        seqs, probs, best = enumerate_all_sequences(FIXED.initial, FIXED.trans, FIXED.emit, length)
        fwd = per_sequence_log_likelihood(FIXED, list(seqs))
        worst_fwd = max(worst_fwd, float(np.abs(fwd - np.log(probs)).max()))
        vit = np.array([viterbi_with_score(FIXED, s)[1] for s in seqs])
        worst_vit = max(worst_vit, float(np.abs(vit - np.log(best)).max()))
        count += len(seqs)
    report(f"{count} sequences; max |forward - brute| {worst_fwd:.2e}, max |viterbi - brute| {worst_vit:.2e} (<= 1e-9)")
    assert worst_fwd <= 1e-9 and worst_vit <= 1e-9


@pytest.mark.criterion(6)
@pytest.mark.slow
def test_criterion_6_clustering_oracles(report):
    rng = np.random.default_rng(6)
    worst_inertia = worst_sil = 0.0
    for _ in range(30):
        n, k = int(rng.integers(3, 11)), int(rng.integers(1, 4))
        x = rng.normal(size=(n, 2)) * rng.uniform(0.5, 5)
        res = kmeans(x, k)
        opt = exhaustive_kmeans_optimum(x, k)
        worst_inertia = max(worst_inertia, abs(res.inertia - opt) / max(opt, 1e-12))
        if k >= 2:
            worst_sil = max(worst_sil, abs(silhouette(x, res.labels) - direct_silhouette(x, res.labels)))
    hits = 0
    for seed in range(100):
        x, _ = three_blobs(np.random.default_rng(seed))
        hits += elbow_select(inertia_curve(x, range(1, 9), seed=seed)).k == 3
    report(f"kmeans vs exhaustive max rel gap {worst_inertia:.1e}; silhouette max diff {worst_sil:.1e} (<= 1e-9); elbow k=3 in {hits}/100 (>= 95)")
    assert worst_inertia <= 1e-9
    assert worst_sil <= 1e-9
    assert hits >= 95


@pytest.mark.criterion(7)
def test_criterion_7_modularity(report):
    graph = WeightedGraph(tuple(f"n{i}" for i in range(20)), two_cliques(10, bridge=0.05))
    part = louvain(graph, seed=0)
    mean, std = random_baseline_modularity(graph, iterations=100, seed=0)
    z = (part.modularity - mean) / std if std > 0 else np.inf
    report(f"planted M {part.modularity:.4f}; baseline {mean:.4f} +- {std:.4f}; gap {z:.1f} SD (>= 5)")
    assert part.labels.tolist() == [0] * 10 + [1] * 10
    assert z >= 5


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_criterion_8_window_switch(tmp_path, report):
    session = run_session(SimConfig(20, 100, "fixed", 0.02, seed=8), [Switch(TFT, ALLD, 51)] * 20)
    result = pipeline(tmp_path, [session], tsne=False)
    sub = result.treatments["FP"].report.largest_subcluster()
    top = {}
    for w in PipelineConfig().windows:
        top[w.name] = SYMBOL_LABELS[int(np.argmax(subcluster_emission([session], result, "FP", sub, w.name)))]
    report(f"sub-cluster {sub} argmax per window {top}")
    assert top["1-25"] in ("(CD)D", "(CC)C") and top["26-50"] in ("(CD)D", "(CC)C")
    assert top["51-75"] == "(DD)D" and top["76-100"] == "(DD)D"


@pytest.mark.criterion(9)
@pytest.mark.slow
def test_criterion_9_invariant_suites(tmp_path, report):
    here = Path(__file__).parent
    props = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(here / "test_properties.py")],
        capture_output=True,
        text=True,
        cwd=here.parent,
    )
    # byte-identical re-runs across separate processes
    args = ["analyze", "--roster", "6xTFT,2xAllD", "--noise", "0.05", "--restarts", "16", "--seed", "9"]
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "ipdlab", *args, "--output", str(tmp_path / name)], check=True, capture_output=True)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    identical = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    summary = props.stdout.strip().splitlines()[-1] if props.stdout.strip() else props.stderr[-200:]
    report(f"property suites: {summary}; cross-process re-run byte-identical over {len(files)} files: {identical}")
    assert props.returncode == 0
    assert identical and files


DATASET = os.environ.get("IPDLAB_DATASET")


@pytest.mark.criterion(10)
@pytest.mark.skipif(not DATASET, reason="experimental dataset absent (set IPDLAB_DATASET)")
def test_criterion_10_dataset(report):
    sessions = []
    for path in DATASET.split(","):
        found, diag = load_sessions(path)
        assert diag.ok, [str(d) for d in diag]
        sessions.extend(found)
    rows = {(t, c): (f, k, p) for t, c, f, k, p in context_table_rows(histories_by_treatment(sessions))}
    sil = {}
    for t in ("FP", "SP"):
        members = participants(s for s in sessions if s.treatment == t)
        rep = two_stage_cluster([feature_vector(p.history) for p in members], [p.key for p in members], ClusterConfig(), t)
        sil[t] = rep.context_silhouette
    report(f"FP CC {rows[('FP', 'CC')]}, SP DD {rows[('SP', 'DD')]}, silhouettes FP {sil['FP']:.4f} SP {sil['SP']:.4f}")
    assert rows[("FP", "CC")] == (4122, 3910, "77.38%")
    assert rows[("SP", "DD")] == (4878, 626, "12.83%")
    assert abs(sil["FP"] - 0.5445) <= 0.05
    assert abs(sil["SP"] - 0.4201) <= 0.05
