"""``ipdlab`` command line: simulate | validate | analyze | export-dot | report.

Settings come from command-line flags, then an optional INI file
(``--config``; a ``[common]`` section plus one section per subcommand), then
built-in defaults. The seed falls back to ``$IPDLAB_SEED`` before the
default. Exit codes: 0 ok, 1 usage, 2 validation, 3 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from .analysis import CANONICAL_WINDOWS, ClusterConfig, PipelineConfig, PipelineError, parse_windows, run_pipeline
from .hmm import FitConfig, HMMModel, ModelError, model_to_dot
from .ingest import Diagnostics, context_table_rows, histories_by_treatment, load_sessions, write_csv, write_json
from .simulator import SimConfig, parse_roster, run_session, session_rng

log = logging.getLogger("ipdlab")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_INTERNAL = 0, 1, 2, 3
SEED_ENV = "IPDLAB_SEED"


class UsageError(Exception):
    pass


class ValidationError(Exception):
    def __init__(self, message: str, diagnostics: Diagnostics | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str | float | None) -> float | None:
    if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none")):
        return None
    return float(text)


# name -> (default, converter, help)
COMMON: dict[str, tuple[Any, Callable, str]] = {
    "seed": (0, int, f"master seed (falls back to ${SEED_ENV})"),
    "jobs": (0, int, "worker threads for HMM restarts; 0 uses all cores"),
    "log_level": ("WARNING", str, "logging level"),
}
SIMULATION: dict[str, tuple[Any, Callable, str]] = {
    "roster": (None, str, 'strategies, e.g. "30xTFT,GTFT(0.3),Switch(TFT,AllD,51)"'),
    "rounds": (100, int, "rounds per session"),
    "matching": ("fixed", str, "fixed (FP) or shuffled (SP) partners"),
    "noise": (0.0, float, "probability of flipping each action"),
    "omega": (None, _opt_float, "continuation probability; geometric game length capped at --rounds"),
    "sessions": (1, int, "number of sessions to simulate"),
    "avoid_repeat_partners": (False, _bool, "shuffled matching never repeats the previous round's pairs"),
}
SETTINGS: dict[str, dict[str, tuple[Any, Callable, str]]] = {
    "simulate": {
        **SIMULATION,
        "output": (None, str, "session file to write (.csv or .json)"),
    },
    "validate": {
        "input": (None, str, "session files (.csv or .json), comma-separated in config files"),
    },
    "analyze": {
        "input": (None, str, "session files (.csv or .json); alternative to --roster"),
        **SIMULATION,
        "output": ("report", str, "report bundle directory"),
        "windows": (",".join(w.name for w in CANONICAL_WINDOWS), str, 'round windows, or "none"'),
        "restarts": (10_000, int, "Baum-Welch random restarts per candidate"),
        "max_em_iters": (500, int, "EM iteration cap"),
        "min_transition": (0.01, float, "smallest accepted retained transition probability"),
        "test_fraction": (0.2, float, "held-out share of sequences in model selection"),
        "se_factor": (2.0, float, "held-out tie margin in standard errors; 0 keeps only exact ties"),
        "scoring": ("forward", str, "held-out score: forward or viterbi"),
        "kmax": (8, int, "largest k in the elbow search"),
        "kmeans_restarts": (50, int, "k-means++ restarts"),
        "standardize": (False, _bool, "z-score features before k-means"),
        "behavioral_rates": (False, _bool, "sub-cluster on cooperation rates instead of counts"),
        "no_tsne": (False, _bool, "skip the t-SNE embedding"),
        "recluster_per_window": (False, _bool, "re-run the clustering inside every window"),
    },
    "export-dot": {
        "input": (None, str, "model JSON file"),
        "output": ("-", str, 'DOT file, "-" for stdout'),
    },
    "report": {
        "input": (None, str, "report bundle directory"),
    },
}
LIST_KEYS = {"input"}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> _Parser:
    parser = _Parser(prog="ipdlab", description="Strategy inference for the iterated prisoner's dilemma.")
    parser.add_argument("--version", action="store_true", help="print the version and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "simulate": "simulate sessions and write them to a session file",
        "validate": "check session files and print diagnostics",
        "analyze": "run the full inference pipeline and write a report bundle",
        "export-dot": "render a model JSON file as DOT",
        "report": "print the summary of a report bundle",
    }
    for command, settings in SETTINGS.items():
        p = sub.add_parser(command, help=helps[command], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="INI file with [common] and [%s] sections" % command)
        for name, (default, conv, text) in {**COMMON, **settings}.items():
            shown = "none" if default is None else default
            if conv is _bool:
                p.add_argument(_flag(name), action="store_true", help=f"{text} (default: off)")
            elif name in LIST_KEYS:
                p.add_argument(_flag(name), nargs="+", help=f"{text} (default: {shown})")
            else:
                p.add_argument(_flag(name), type=conv, help=f"{text} (default: {shown})")
    return parser


def resolve(command: str, flags: dict[str, Any], environ: dict[str, str] | None = None) -> dict[str, Any]:
    """Merge flags over the config file over defaults."""
    environ = os.environ if environ is None else environ
    table = {**COMMON, **SETTINGS[command]}
    values = {k: v[0] for k, v in table.items()}
    if SEED_ENV in environ:
        try:
            values["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
    path = flags.pop("config", None)
    if path:
        cp = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        for section in ("common", command):
            if not cp.has_section(section):
                continue
            for key, raw in cp.items(section, raw=True):
                key = key.replace("-", "_")
                if key not in table:
                    if section == "common":
                        continue
                    raise UsageError(f"unknown key {key!r} in [{section}] of {path}")
                conv = table[key][1]
                try:
                    values[key] = [x.strip() for x in raw.split(",") if x.strip()] if key in LIST_KEYS else conv(raw)
                except ValueError as exc:
                    raise UsageError(f"bad value for {key} in {path}: {exc}") from None
    values.update(flags)
    return values


def _set_jobs(jobs: int) -> None:
    if jobs < 0:
        raise UsageError("--jobs must be >= 0")
    import numba

    numba.set_num_threads(min(jobs, numba.config.NUMBA_NUM_THREADS) if jobs else numba.config.NUMBA_NUM_THREADS)


def _print_rates(sessions, out) -> None:
    for row in context_table_rows(histories_by_treatment(sessions)):
        treatment, ctx, freq, coop, pct = row
        print(f"{treatment} {ctx}: frequency {freq}, cooperated {coop}, {pct}", file=out)


def _simulate(v: dict[str, Any]) -> list:
    if not v["roster"]:
        raise UsageError("a --roster is required to simulate")
    try:
        specs = parse_roster(v["roster"])
    except (OSError, ModelError) as exc:
        raise ValidationError(f"roster: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"roster: {exc}") from None
    if v["sessions"] < 1:
        raise UsageError("--sessions must be >= 1")
    sessions = []
    for k in range(v["sessions"]):
        try:
            cfg = SimConfig(
                n_players=len(specs),
                rounds=v["rounds"],
                matching=v["matching"],
                noise_epsilon=v["noise"],
                continuation_omega=v["omega"],
                seed=v["seed"],
                avoid_repeat_partners=v["avoid_repeat_partners"],
                session_id=f"S{k + 1}",
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        sessions.append(run_session(cfg, specs, session_rng(v["seed"], k)))
    return sessions


def _load(paths: Sequence[str]) -> list:
    sessions = []
    all_diag = Diagnostics()
    for path in paths:
        try:
            found, diag = load_sessions(path)
        except OSError as exc:
            raise ValidationError(f"cannot read {path}: {exc}") from None
        for d in diag:
            all_diag.items.append(type(d)(d.severity, f"{path}: {d.location}", d.message))
        sessions.extend(found)
    if not all_diag.ok:
        raise ValidationError(f"{len(all_diag.errors)} validation error(s)", all_diag)
    ids = [s.session_id for s in sessions]
    if len(set(ids)) != len(ids):
        raise ValidationError("the same session id appears in several inputs")
    return sessions


def cmd_simulate(v: dict[str, Any], out=sys.stdout) -> int:
    if not v["output"]:
        raise UsageError("--output is required")
    sessions = _simulate(v)
    path = Path(v["output"])
    text = write_json(sessions) if path.suffix.lower() == ".json" else write_csv(sessions)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    n_rows = sum(len(s.players) * s.rounds for s in sessions)
    print(f"wrote {n_rows} rows ({len(sessions)} session(s)) to {path}", file=out)
    _print_rates(sessions, out)
    return EXIT_OK


def cmd_validate(v: dict[str, Any], out=sys.stdout) -> int:
    if not v["input"]:
        raise UsageError("--input is required")
    sessions = _load(v["input"])
    for s in sessions:
        print(f"{s.session_id}: {s.treatment}, {len(s.players)} players, {s.rounds} rounds", file=out)
    print("ok", file=out)
    return EXIT_OK


def cmd_analyze(v: dict[str, Any], out=sys.stdout) -> int:
    if bool(v["input"]) == bool(v["roster"]):
        raise UsageError("give exactly one data source: --input files or a --roster to simulate")
    try:
        windows = parse_windows(v["windows"])
        fit = FitConfig(
            restarts=v["restarts"],
            max_em_iters=v["max_em_iters"],
            min_transition=v["min_transition"],
            test_fraction=v["test_fraction"],
            seed=v["seed"],
            scoring=v["scoring"],
            se_factor=v["se_factor"],
        )
        cluster = ClusterConfig(
            kmax=v["kmax"],
            kmeans_restarts=v["kmeans_restarts"],
            seed=v["seed"],
            standardize=v["standardize"],
            behavioral_rates=v["behavioral_rates"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if v["input"]:
        sessions = _load(v["input"])
        source = {"input": [Path(p).name for p in v["input"]]}
    else:
        sessions = _simulate(v)
        source = {k: v[k] for k in SIMULATION}
    config = PipelineConfig(
        output=v["output"],
        seed=v["seed"],
        windows=windows,
        cluster=cluster,
        fit=fit,
        tsne=not v["no_tsne"],
        recluster_per_window=v["recluster_per_window"],
    )
    try:
        result = run_pipeline(sessions, config, source)
    except PipelineError as exc:
        if exc.stage in ("input", "windows"):
            raise ValidationError(str(exc)) from None
        raise
    for t, summary in result.summary["treatments"].items():
        print(f"{t}: {summary['participants']} participants, context clusters {summary['context_clusters']}", file=out)
    print(f"report written to {config.output}", file=out)
    return EXIT_OK


def cmd_export_dot(v: dict[str, Any], out=sys.stdout) -> int:
    if not v["input"]:
        raise UsageError("--input is required")
    path = v["input"][0] if isinstance(v["input"], list) else v["input"]
    try:
        model = HMMModel.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    except ModelError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    dot = model_to_dot(model, Path(path).stem)
    if v["output"] in ("-", None):
        out.write(dot)
    else:
        Path(v["output"]).write_text(dot, encoding="utf-8")
    return EXIT_OK


def cmd_report(v: dict[str, Any], out=sys.stdout) -> int:
    if not v["input"]:
        raise UsageError("--input is required")
    root = Path(v["input"][0] if isinstance(v["input"], list) else v["input"])
    try:
        summary = json.loads((root / "summary.json").read_text(encoding="utf-8"))
        table = (root / "context_table.csv").read_text(encoding="utf-8")
    except (OSError, ValueError) as exc:
        raise ValidationError(f"not a report bundle: {exc}") from None
    out.write(table)
    for t, s in summary["treatments"].items():
        print(f"\n{t}: {s['participants']} participants, silhouette {s['context_silhouette']}", file=out)
        print(f"  context clusters: {s['context_clusters']}", file=out)
        print(f"  sub-clusters: {s['subclusters']}", file=out)
        for name, info in s["hmms"].items():
            print(f"  {name}: h={info['h']}", file=out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "analyze": cmd_analyze,
    "export-dot": cmd_export_dot,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "version", False) and not args.command:
            from . import __version__

            print(__version__)
            return EXIT_OK
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "version")}
        values = resolve(args.command, flags)
        level = getattr(logging, str(values["log_level"]).upper(), None)
        if not isinstance(level, int):
            raise UsageError(f"unknown log level {values['log_level']!r}")
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        _set_jobs(values["jobs"])
        return COMMANDS[args.command](values, sys.stdout)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        if exc.diagnostics is not None:
            for d in exc.diagnostics:
                print(str(d), file=sys.stderr)
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
