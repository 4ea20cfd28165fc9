"""Reading, validating and writing session files.

One CSV row per (session, round, player) with the fixed header
``session_id,treatment,round,player_id,partner_id,action``. A file may hold
several sessions. Parsing either yields fully validated sessions or none,
together with every problem found.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .game import Action, Context, PlayerHistory, cooperation_rate
from .session import TREATMENTS, SessionData

HEADER = ("session_id", "treatment", "round", "player_id", "partner_id", "action")
UNDEFINED = "NA"


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.location}: {self.message}"


@dataclass
class Diagnostics:
    items: list[Diagnostic] = field(default_factory=list)

    def error(self, location: str, message: str) -> None:
        self.items.append(Diagnostic("error", location, message))

    def warning(self, location: str, message: str) -> None:
        self.items.append(Diagnostic("warning", location, message))

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.items if d.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass(frozen=True)
class SessionFileRecord:
    session_id: str
    treatment: str
    round: int
    player_id: str
    partner_id: str
    action: Action


def _records_from_rows(rows: Iterable[tuple[str, Sequence[str]]], diag: Diagnostics) -> list[tuple[str, SessionFileRecord]]:
    out = []
    for loc, row in rows:
        if len(row) != len(HEADER):
            diag.error(loc, f"expected {len(HEADER)} fields, got {len(row)}")
            continue
        sid, treat, rnd, pid, partner, act = (x.strip() for x in row)
        bad = False
        if treat not in TREATMENTS:
            diag.error(loc, f"invalid treatment {treat!r}")
            bad = True
        try:
            rnd_i = int(rnd)
            if rnd_i < 1:
                raise ValueError
        except ValueError:
            diag.error(loc, f"invalid round {rnd!r}")
            bad = True
        if act not in ("C", "D"):
            diag.error(loc, f"invalid action {act!r}")
            bad = True
        if not sid or not pid or not partner:
            diag.error(loc, "empty identifier")
            bad = True
        if not bad and pid == partner:
            diag.error(loc, f"self-pairing of player {pid}")
            bad = True
        if not bad:
            out.append((loc, SessionFileRecord(sid, treat, rnd_i, pid, partner, Action[act])))
    return out


def _build_session(sid: str, recs: list[tuple[str, SessionFileRecord]], diag: Diagnostics) -> SessionData | None:
    n_errors = len(diag.errors)
    where = f"session {sid}"
    treatments = {r.treatment for _, r in recs}
    if len(treatments) > 1:
        diag.error(where, f"mixed treatments {sorted(treatments)}")
    table: dict[tuple[str, int], SessionFileRecord] = {}
    order: list[str] = []
    for loc, r in recs:
        key = (r.player_id, r.round)
        if key in table:
            diag.error(loc, f"duplicate record for player {r.player_id} in round {r.round}")
            continue
        table[key] = r
        if r.player_id not in order:
            order.append(r.player_id)
    rounds_of = defaultdict(set)
    for pid, rnd in table:
        rounds_of[pid].add(rnd)
    t_max = max(max(v) for v in rounds_of.values())
    for pid in order:
        if rounds_of[pid] != set(range(1, t_max + 1)):
            missing = sorted(set(range(1, t_max + 1)) - rounds_of[pid])
            diag.error(where, f"non-contiguous rounds for player {pid} (missing {missing[:5]})")
    for (pid, rnd), r in table.items():
        other = table.get((r.partner_id, rnd))
        if other is None:
            diag.error(where, f"round {rnd}: missing reciprocal record for {pid} -> {r.partner_id}")
        elif other.partner_id != pid:
            diag.error(where, f"round {rnd}: {pid} names {r.partner_id} but {r.partner_id} names {other.partner_id}")
    for rnd in range(1, t_max + 1):
        present = sum(1 for pid in order if (pid, rnd) in table)
        if present % 2:
            diag.error(where, f"round {rnd}: odd number of players ({present})")
    if len(diag.errors) > n_errors:
        return None

    treatment = treatments.pop()
    index = {pid: i for i, pid in enumerate(order)}
    players = []
    for pid in order:
        rs = [table[(pid, t)] for t in range(1, t_max + 1)]
        players.append(
            PlayerHistory(
                pid,
                tuple(r.action for r in rs),
                tuple(table[(r.partner_id, r.round)].action for r in rs),
                tuple(r.partner_id for r in rs),
            )
        )
    pairing = tuple(
        tuple(sorted({tuple(sorted((index[pid], index[table[(pid, t)].partner_id]))) for pid in order}))
        for t in range(1, t_max + 1)
    )
    session = SessionData(sid, treatment, tuple(players), pairing)
    if treatment == "FP" and any(set(p) != set(pairing[0]) for p in pairing):
        diag.error(where, "fixed-partner session changes partners")
        return None
    return session


def _group(records: list[tuple[str, SessionFileRecord]], diag: Diagnostics) -> list[SessionData]:
    by_session: dict[str, list] = {}
    for loc, r in records:
        by_session.setdefault(r.session_id, []).append((loc, r))
    built = [_build_session(sid, recs, diag) for sid, recs in by_session.items()]
    if not diag.ok:
        return []
    return [s for s in built if s is not None]


def parse_csv(text: str) -> tuple[list[SessionData], Diagnostics]:
    """All sessions in a CSV text, or an empty list when any error is found."""
    diag = Diagnostics()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        diag.error("line 1", "empty file")
        return [], diag
    if tuple(h.strip() for h in header) != HEADER:
        diag.error("line 1", f"header must be {','.join(HEADER)}")
        return [], diag
    rows = ((f"line {reader.line_num}", row) for row in reader if any(x.strip() for x in row))
    records = _records_from_rows(rows, diag)
    if not records and diag.ok:
        diag.error("line 2", "no data rows")
    return _group(records, diag), diag


def parse_session_csv(text: str) -> tuple[SessionData | None, Diagnostics]:
    """Parse a file that holds exactly one session."""
    sessions, diag = parse_csv(text)
    if len(sessions) > 1:
        diag.error("file", f"expected one session, found {len(sessions)}")
        return None, diag
    return (sessions[0] if sessions else None), diag


def to_records(session: SessionData) -> list[SessionFileRecord]:
    return [
        SessionFileRecord(session.session_id, session.treatment, t + 1, p.player_id, p.partner_ids[t], p.actions[t])
        for t in range(session.rounds)
        for p in session.players
    ]


def write_csv(sessions: Iterable[SessionData]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for s in sessions:
        for r in to_records(s):
            w.writerow((r.session_id, r.treatment, r.round, r.player_id, r.partner_id, r.action.name))
    return buf.getvalue()


def write_json(sessions: Iterable[SessionData]) -> str:
    rows = [
        {
            "session_id": r.session_id,
            "treatment": r.treatment,
            "round": r.round,
            "player_id": r.player_id,
            "partner_id": r.partner_id,
            "action": r.action.name,
        }
        for s in sessions
        for r in to_records(s)
    ]
    return json.dumps({"records": rows}, indent=1) + "\n"


def parse_json(text: str) -> tuple[list[SessionData], Diagnostics]:
    diag = Diagnostics()
    try:
        rows = json.loads(text)["records"]
        rows = [(f"record {i}", [str(r[k]) for k in HEADER]) for i, r in enumerate(rows)]
    except (ValueError, KeyError, TypeError) as exc:
        diag.error("file", f"malformed session JSON: {exc}")
        return [], diag
    return _group(_records_from_rows(rows, diag), diag), diag


def load_sessions(path: str | Path) -> tuple[list[SessionData], Diagnostics]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return parse_json(text)
    return parse_csv(text)


def format_percentage(cooperation: int, frequency: int) -> str:
    if frequency == 0:
        return UNDEFINED
    return f"{100.0 * cooperation / frequency:.2f}%"


def context_table_rows(data: Mapping[str, Iterable[PlayerHistory]]) -> list[tuple[str, str, int, int, str]]:
    rows = []
    for treatment, histories in data.items():
        histories = [h for h in histories if len(h) >= 2]
        if histories:
            rates = cooperation_rate(histories)
        else:
            rates = None
        for ctx in Context:
            freq, coop = (rates[ctx].frequency, rates[ctx].cooperation) if rates else (0, 0)
            rows.append((treatment, ctx.name, freq, coop, format_percentage(coop, freq)))
    return rows


def export_context_table(data: Mapping[str, Iterable[PlayerHistory]]) -> str:
    """CSV of context frequency, cooperative follow-ups and cooperation
    percentage (two decimals, ``NA`` for unseen contexts) per treatment."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("treatment", "context", "frequency", "cooperation", "percentage"))
    w.writerows(context_table_rows(data))
    return buf.getvalue()


def histories_by_treatment(sessions: Iterable[SessionData]) -> dict[str, list[PlayerHistory]]:
    out: dict[str, list[PlayerHistory]] = {}
    for s in sessions:
        out.setdefault(s.treatment, []).extend(s.players)
    return out


def percentage_value(text: str) -> float:
    return math.nan if text == UNDEFINED else float(text.rstrip("%"))
