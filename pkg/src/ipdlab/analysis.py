"""End-to-end strategy inference: context table, two-stage clustering,
per-sub-cluster HMM selection over round windows, interaction networks and
the on-disk report bundle."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import platform
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.metrics import silhouette_samples

from . import __version__
from .clustering import (
    build_similarity_graph,
    default_perplexity,
    elbow_select,
    kmeans,
    louvain,
    silhouette,
    tsne_embed,
)
from .game import FeatureVector, encode_symbols, feature_vector
from .hmm import FitConfig, HMMModel, closed_form_single_state, model_to_dot, select_model, state_occupancy
from .hmm.fit import Selection
from .ingest import export_context_table, write_csv
from .session import SessionData

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A failure tagged with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, order=True)
class RoundWindow:
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo < 1 or self.hi < self.lo:
            raise ValueError(f"empty or invalid window [{self.lo}, {self.hi}]")

    @property
    def name(self) -> str:
        return f"{self.lo}-{self.hi}"

    @classmethod
    def parse(cls, text: str) -> "RoundWindow":
        try:
            lo, hi = (int(x) for x in text.strip().split("-"))
        except ValueError:
            raise ValueError(f"window must look like 1-25, got {text!r}") from None
        return cls(lo, hi)


CANONICAL_WINDOWS = (RoundWindow(1, 25), RoundWindow(26, 50), RoundWindow(51, 75), RoundWindow(76, 100))
FULL = "full"


def parse_windows(text: str) -> tuple[RoundWindow, ...]:
    """Comma-separated windows, e.g. ``"1-25,26-50"``; ``"none"`` for no windows."""
    if text.strip().lower() in ("", "none"):
        return ()
    return tuple(RoundWindow.parse(x) for x in text.split(","))


def window_slice(data: SessionData, window: RoundWindow) -> SessionData:
    """Restrict a session to ``window``. Contexts are later recomputed inside
    the window, so its first round contributes no context."""
    if window.hi > data.rounds:
        raise ValueError(f"window {window.name} exceeds the {data.rounds} recorded rounds")
    return data.window(window.lo, window.hi)


@dataclass(frozen=True)
class Participant:
    """A player of one session, keyed ``session_id:player_id``."""

    key: str
    session: SessionData
    index: int

    @property
    def history(self):
        return self.session.players[self.index]


def participants(sessions: Iterable[SessionData]) -> list[Participant]:
    out = []
    for s in sessions:
        out.extend(Participant(f"{s.session_id}:{p.player_id}", s, i) for i, p in enumerate(s.players))
    keys = [p.key for p in out]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate session/player identifiers")
    return out


@dataclass(frozen=True)
class ClusterConfig:
    kmax: int = 8
    kmeans_restarts: int = 50
    seed: int = 0
    standardize: bool = False
    behavioral_rates: bool = False
    min_subcluster: int = 3

    def __post_init__(self) -> None:
        if self.kmax < 3:
            raise ValueError("kmax must be >= 3 for elbow selection")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")


@dataclass
class StageResult:
    labels: np.ndarray
    k: int
    inertias: list[float]
    silhouette: float
    diagnostic: str = ""


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def cluster_stage(x: np.ndarray, config: ClusterConfig, seed: int) -> StageResult:
    """K-means with the k chosen by the elbow of the inertia curve."""
    x = _zscore(x) if config.standardize else x
    n_distinct = np.unique(x, axis=0).shape[0]
    kmax = min(config.kmax, n_distinct)
    ks = list(range(1, kmax + 1))
    fits = [kmeans(x, k, config.kmeans_restarts, seed) for k in ks]
    inertias = [f.inertia for f in fits]
    diagnostic = ""
    if n_distinct == 2:
        k, diagnostic = 2, "only two distinct feature vectors; each forms a cluster"
    elif len(ks) < 3:
        k, diagnostic = 1, "no knee: fewer than 3 distinct feature vectors"
    else:
        try:
            knee = elbow_select(inertias, ks)
            k = knee.k
            if knee.low_confidence:
                diagnostic = "elbow is ambiguous (no point below the chord)"
        except ValueError as exc:
            k, diagnostic = 1, str(exc)
    labels = fits[k - 1].labels
    sil = silhouette(x, labels) if k > 1 else math.nan
    return StageResult(labels, k, inertias, sil, diagnostic)


def _letters(i: int) -> str:
    out = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        out = string.ascii_uppercase[r] + out
    return out


def _per_cluster_silhouette(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if np.unique(labels).size < 2 or np.unique(labels).size >= len(labels):
        return np.full(len(labels), math.nan)
    return silhouette_samples(x, labels)


@dataclass
class ClusterReport:
    participants: tuple[str, ...]
    treatment: str
    context_labels: tuple[str, ...]
    subcluster_labels: tuple[str, ...]
    context_silhouette: float
    cluster_silhouettes: dict[str, float]
    subcluster_silhouettes: dict[str, float]
    context_inertias: list[float]
    diagnostics: list[str] = field(default_factory=list)
    models: dict[tuple[str, str], Selection] = field(default_factory=dict)

    @property
    def context_clusters(self) -> list[str]:
        return sorted(set(self.context_labels), key=lambda s: (len(s), s))

    @property
    def subclusters(self) -> list[str]:
        return sorted(set(self.subcluster_labels), key=_sub_key)

    def sizes(self) -> dict[str, int]:
        return dict(sorted(Counter(self.context_labels).items(), key=lambda kv: (len(kv[0]), kv[0])))

    def subcluster_sizes(self) -> dict[str, int]:
        return dict(sorted(Counter(self.subcluster_labels).items(), key=lambda kv: _sub_key(kv[0])))

    def members(self, sub: str) -> list[int]:
        return [i for i, s in enumerate(self.subcluster_labels) if s == sub]

    def largest_subcluster(self) -> str:
        sizes = self.subcluster_sizes()
        return max(sizes, key=lambda s: (sizes[s], [-ord(c) for c in s]))


def _sub_key(label: str) -> tuple:
    letter, num = label.split(".")
    return (len(letter), letter, int(num))


def two_stage_cluster(
    features: Sequence[FeatureVector],
    ids: Sequence[str],
    config: ClusterConfig = ClusterConfig(),
    treatment: str = "",
    first_letter: int = 0,
) -> ClusterReport:
    """Contextual clustering on context counts, then behavioral clustering of
    each context cluster on cooperative-response counts (or rates).

    Context clusters are lettered by descending mean mutual-cooperation (CC)
    frequency, starting at letter ``first_letter``; sub-clusters are numbered
    from 0 by descending size.
    """
    n = len(features)
    if n != len(ids):
        raise ValueError("features and ids differ in length")
    if n < 2:
        raise ValueError("two-stage clustering needs at least 2 participants")
    ctx = np.array([f.context_counts for f in features], dtype=float)
    coop = np.array([f.coop_counts for f in features], dtype=float)
    if config.behavioral_rates:
        beh = np.divide(coop, ctx, out=np.zeros_like(coop), where=ctx > 0)
    else:
        beh = coop
    seeds = np.random.SeedSequence(config.seed).generate_state(2, dtype=np.uint32)

    diagnostics = []
    stage1 = cluster_stage(ctx, config, int(seeds[0]))
    if stage1.diagnostic:
        diagnostics.append(f"context clustering: {stage1.diagnostic}")
    cc_share = ctx[:, 0] / np.maximum(ctx.sum(axis=1), 1.0)
    order = sorted(range(stage1.k), key=lambda c: (-cc_share[stage1.labels == c].mean(), c))
    letter_of = {c: _letters(first_letter + rank) for rank, c in enumerate(order)}
    context_labels = [letter_of[c] for c in stage1.labels]

    sil1 = _per_cluster_silhouette(_zscore(ctx) if config.standardize else ctx, stage1.labels)
    cluster_sil = {letter_of[c]: float(np.mean(sil1[stage1.labels == c])) for c in range(stage1.k)}

    sub_labels = [""] * n
    sub_sil: dict[str, float] = {}
    for c in order:
        letter = letter_of[c]
        idx = np.flatnonzero(stage1.labels == c)
        if idx.size < config.min_subcluster:
            diagnostics.append(f"cluster {letter}: {idx.size} members, kept as a single sub-cluster")
            labels = np.zeros(idx.size, dtype=int)
            sub_sil[letter] = math.nan
        else:
            stage2 = cluster_stage(beh[idx], config, int(seeds[1]))
            if stage2.diagnostic:
                diagnostics.append(f"cluster {letter}: {stage2.diagnostic}")
            labels = stage2.labels
            sub_sil[letter] = stage2.silhouette
        counts = Counter(labels.tolist())
        rank = {lab: r for r, lab in enumerate(sorted(counts, key=lambda lab: (-counts[lab], lab)))}
        for i, lab in zip(idx, labels):
            sub_labels[i] = f"{letter}.{rank[lab]}"

    return ClusterReport(
        participants=tuple(ids),
        treatment=treatment,
        context_labels=tuple(context_labels),
        subcluster_labels=tuple(sub_labels),
        context_silhouette=stage1.silhouette,
        cluster_silhouettes=cluster_sil,
        subcluster_silhouettes=sub_sil,
        context_inertias=stage1.inertias,
        diagnostics=diagnostics,
    )


@dataclass
class InteractionNetwork:
    """Co-play counts between sub-clusters; (a, a) entries are rounds played
    inside sub-cluster a."""

    nodes: tuple[str, ...]
    weights: dict[tuple[str, str], int]

    @property
    def total(self) -> int:
        return sum(self.weights.values())


def interaction_network(sessions: Iterable[SessionData], labels: dict[str, str]) -> InteractionNetwork:
    """Count, for every round and pair, the sub-clusters that met."""
    counts: Counter = Counter()
    for s in sessions:
        keys = [f"{s.session_id}:{p.player_id}" for p in s.players]
        missing = [k for k in keys if k not in labels]
        if missing:
            raise ValueError(f"participant {missing[0]} has no sub-cluster label")
        for pairs in s.pairing:
            for i, j in pairs:
                a, b = sorted((labels[keys[i]], labels[keys[j]]), key=_sub_key)
                counts[(a, b)] += 1
    nodes = tuple(sorted(set(labels.values()), key=_sub_key))
    weights = dict(sorted(counts.items(), key=lambda kv: (_sub_key(kv[0][0]), _sub_key(kv[0][1]))))
    return InteractionNetwork(nodes, weights)


def sequences_for(members: Sequence[Participant], window: RoundWindow | None) -> list[np.ndarray]:
    seqs = []
    for p in members:
        h = p.history if window is None else p.history.window(window.lo, window.hi)
        if len(h) >= 2:
            seqs.append(encode_symbols(h))
    return seqs


def fit_subcluster(seqs: list[np.ndarray], fit: FitConfig, rng: np.random.Generator) -> Selection:
    """select_model, or the closed-form single state when only one sequence exists."""
    if not seqs:
        raise ValueError("no sequences to fit")
    if len(seqs) < 2:
        sel = Selection(model=closed_form_single_state(seqs), n_train=1, n_test=0)
        sel.diagnostics.append("single sequence: no train/test split, closed-form h=1 model")
        return sel
    return select_model(seqs, fit, rng)


def weighted_emission(model: HMMModel, seqs: Sequence[Sequence[int]]) -> np.ndarray:
    """Emission distribution averaged over states weighted by Viterbi occupancy."""
    return state_occupancy(model, seqs) @ model.emit


@dataclass(frozen=True)
class PipelineConfig:
    output: str = "report"
    seed: int = 0
    windows: tuple[RoundWindow, ...] = CANONICAL_WINDOWS
    cluster: ClusterConfig = ClusterConfig()
    fit: FitConfig = FitConfig()
    tsne: bool = True
    recluster_per_window: bool = False
    jobs: int | None = None


def _stable_seed(*parts: object) -> np.random.SeedSequence:
    digest = hashlib.sha256("/".join(map(str, parts)).encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:8], "little"))


def _rows_to_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


@dataclass
class TreatmentResult:
    treatment: str
    keys: list[str]
    report: ClusterReport
    window_reports: dict[str, ClusterReport]
    network: InteractionNetwork
    modularity: float
    embedding: np.ndarray | None


@dataclass
class PipelineResult:
    treatments: dict[str, TreatmentResult]
    files: dict[str, str]
    summary: dict


def _analyze_windows(
    members: list[Participant],
    report: ClusterReport,
    windows: Sequence[tuple[str, RoundWindow | None]],
    config: PipelineConfig,
) -> None:
    for wname, window in windows:
        for sub in report.subclusters:
            seqs = sequences_for([members[i] for i in report.members(sub)], window)
            if not seqs:
                report.diagnostics.append(f"{sub} {wname}: no sequences")
                continue
            rng = np.random.default_rng(_stable_seed(config.seed, "hmm", report.treatment, sub, wname))
            try:
                report.models[(sub, wname)] = fit_subcluster(seqs, config.fit, rng)
            except Exception as exc:
                raise PipelineError(f"hmm {sub} {wname}", exc) from exc


def run_pipeline(
    sessions: Sequence[SessionData],
    config: PipelineConfig = PipelineConfig(),
    source: dict | None = None,
) -> PipelineResult:
    """Run every stage, write the report bundle to ``config.output`` and
    return the in-memory results. Re-running with the same inputs and seed
    writes byte-identical files. ``source`` describes where the data came
    from and is stored in the manifest."""
    if not sessions:
        raise PipelineError("input", ValueError("no sessions"))
    for s in sessions:
        errors = s.consistency_errors()
        if errors:
            raise PipelineError("input", ValueError(f"session {s.session_id}: {errors[0]}"))
    rounds = min(s.rounds for s in sessions)
    for w in config.windows:
        if w.hi > rounds:
            raise PipelineError("windows", ValueError(f"window {w.name} exceeds the {rounds} recorded rounds"))
    windows: list[tuple[str, RoundWindow | None]] = [(FULL, None)] + [(w.name, w) for w in config.windows]

    files: dict[str, str] = {}
    by_treatment: dict[str, list[SessionData]] = {}
    for s in sorted(sessions, key=lambda s: (s.treatment, s.session_id)):
        by_treatment.setdefault(s.treatment, []).append(s)
    files["context_table.csv"] = export_context_table(
        {t: [p for s in ss for p in s.players] for t, ss in by_treatment.items()}
    )

    results: dict[str, TreatmentResult] = {}
    next_letter = 0
    for treatment, group in by_treatment.items():
        members = participants(group)
        keys = [p.key for p in members]
        try:
            feats = [feature_vector(p.history) for p in members]
            ccfg = ClusterConfig(**{**asdict(config.cluster), "seed": int(_stable_seed(config.seed, "cluster", treatment).generate_state(1)[0])})
            report = two_stage_cluster(feats, keys, ccfg, treatment, next_letter)
        except Exception as exc:
            raise PipelineError(f"clustering {treatment}", exc) from exc
        next_letter += len(report.context_clusters)

        reclustered: dict[str, ClusterReport] = {}
        if config.recluster_per_window:
            for wname, window in windows[1:]:
                try:
                    wfeats = [feature_vector(p.history.window(window.lo, window.hi)) for p in members]
                    reclustered[wname] = two_stage_cluster(wfeats, keys, ccfg, treatment, 0)
                except Exception as exc:
                    raise PipelineError(f"clustering {treatment} {wname}", exc) from exc
        _analyze_windows(members, report, windows[:1] if reclustered else windows, config)
        for wname, window in windows[1:]:
            if wname in reclustered:
                _analyze_windows(members, reclustered[wname], [(wname, window)], config)

        try:
            net = interaction_network(group, dict(zip(keys, report.subcluster_labels)))
        except Exception as exc:
            raise PipelineError(f"network {treatment}", exc) from exc
        x = np.array([f.as_array() for f in feats])
        modularity = math.nan
        if len(keys) >= 2 and np.unique(x, axis=0).shape[0] >= 2:
            graph = build_similarity_graph(x, keys)
            modularity = louvain(graph, seed=config.seed).modularity
        emb = None
        if config.tsne:
            if len(keys) >= 4:
                emb = tsne_embed(x, default_perplexity(len(keys)), seed=config.seed)
            else:
                report.diagnostics.append("t-SNE skipped: fewer than 4 participants")
        results[treatment] = TreatmentResult(treatment, keys, report, reclustered, net, modularity, emb)

    rows = []
    for t, r in results.items():
        for k, c, s in zip(r.keys, r.report.context_labels, r.report.subcluster_labels):
            rows.append((k, t, c, s))
    files["clusters.csv"] = _rows_to_csv(("participant_id", "treatment", "context_cluster", "behavioral_subcluster"), rows)
    for t, r in results.items():
        for wname, rep in r.window_reports.items():
            wrows = [(k, t, c, s) for k, c, s in zip(r.keys, rep.context_labels, rep.subcluster_labels)]
            files[f"clusters_{t}_{wname}.csv"] = _rows_to_csv(
                ("participant_id", "treatment", "context_cluster", "behavioral_subcluster"), wrows
            )
    if config.tsne:
        erows = []
        for t, r in results.items():
            if r.embedding is not None:
                erows.extend((k, t, _fmt(a), _fmt(b)) for k, (a, b) in zip(r.keys, r.embedding))
        files["embeddings.csv"] = _rows_to_csv(("participant_id", "treatment", "x", "y"), erows)
    nrows = []
    for t, r in results.items():
        nrows.extend((t, a, b, w) for (a, b), w in r.network.weights.items())
    files["network.csv"] = _rows_to_csv(("treatment", "source", "target", "weight"), nrows)

    summary: dict = {"treatments": {}}
    for t, r in results.items():
        reports = {FULL: r.report, **r.window_reports}
        hmms = {}
        for rep_name, rep in reports.items():
            for (sub, wname), sel in sorted(rep.models.items(), key=lambda kv: (_sub_key(kv[0][0]), kv[0][1])):
                prefix = "" if rep is r.report else f"{t}_"
                stem = f"{prefix}{sub}_{wname}"
                files[f"hmm/{stem}.json"] = sel.model.to_json() + "\n"
                files[f"hmm/{stem}.dot"] = model_to_dot(sel.model, stem)
                hmms[stem] = {
                    "h": sel.h,
                    "n_train": sel.n_train,
                    "n_test": sel.n_test,
                    "candidates": [
                        {"h": c.h, "train_ll": _fmt(c.train_ll), "test_ll": _fmt(c.test_ll), "accepted": c.accepted, "reason": c.reason}
                        for c in sel.candidates
                    ],
                    "diagnostics": sel.diagnostics,
                }
        summary["treatments"][t] = {
            "participants": len(r.keys),
            "context_clusters": r.report.sizes(),
            "subclusters": r.report.subcluster_sizes(),
            "context_silhouette": _fmt(r.report.context_silhouette),
            "cluster_silhouettes": {k: _fmt(v) for k, v in r.report.cluster_silhouettes.items()},
            "subcluster_silhouettes": {k: _fmt(v) for k, v in r.report.subcluster_silhouettes.items()},
            "context_inertias": [_fmt(v) for v in r.report.context_inertias],
            "modularity": _fmt(r.modularity),
            "diagnostics": r.report.diagnostics,
            "hmms": hmms,
        }
    files["summary.json"] = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    files["manifest.json"] = _manifest(sessions, config, files, source)

    out = Path(config.output)
    (out / "hmm").mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    return PipelineResult(results, files, summary)


def _versions() -> dict[str, str]:
    import networkx
    import numba
    import scipy
    import sklearn

    return {
        "ipdlab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "networkx": networkx.__version__,
        "numba": numba.__version__,
    }


def config_dict(config: PipelineConfig) -> dict:
    d = asdict(config)
    d["windows"] = [w.name for w in config.windows]
    d.pop("output")
    d.pop("jobs")
    return d


def _manifest(
    sessions: Sequence[SessionData], config: PipelineConfig, files: dict[str, str], source: dict | None
) -> str:
    data_hash = hashlib.sha256(write_csv(sorted(sessions, key=lambda s: s.session_id)).encode()).hexdigest()
    manifest = {
        "seed": config.seed,
        "config": config_dict(config),
        "versions": _versions(),
        "input_sha256": data_hash,
        "source": source or {},
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"
