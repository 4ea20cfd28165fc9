"""Session container shared by the simulator, the file loaders and the analysis."""

from __future__ import annotations

from dataclasses import dataclass

from .game import DEFAULT_PAYOFFS, PayoffMatrix, PlayerHistory

TREATMENTS = ("FP", "SP")

Pair = tuple[int, int]


@dataclass(frozen=True)
class SessionData:
    """One treatment session.

    ``pairing[t]`` lists the pairs (as indices into ``players``) that met in
    round ``t + 1``.
    """

    session_id: str
    treatment: str
    players: tuple[PlayerHistory, ...]
    pairing: tuple[tuple[Pair, ...], ...]

    def __post_init__(self) -> None:
        if self.treatment not in TREATMENTS:
            raise ValueError(f"treatment must be one of {TREATMENTS}, got {self.treatment!r}")

    @property
    def rounds(self) -> int:
        return len(self.pairing)

    @property
    def player_ids(self) -> list[str]:
        return [p.player_id for p in self.players]

    def consistency_errors(self) -> list[str]:
        """Everything that breaks the matching or cross-reference invariants."""
        errors = []
        n = len(self.players)
        ids = self.player_ids
        if len(set(ids)) != n:
            errors.append("duplicate player ids")
        for p in self.players:
            if len(p) != self.rounds:
                errors.append(f"player {p.player_id}: {len(p)} rounds, session has {self.rounds}")
        if errors:
            return errors
        for t, pairs in enumerate(self.pairing):
            seen = sorted(i for pair in pairs for i in pair)
            if seen != list(range(n)):
                errors.append(f"round {t + 1}: pairing is not a perfect matching")
                continue
            for i, j in pairs:
                a, b = self.players[i], self.players[j]
                if i == j:
                    errors.append(f"round {t + 1}: self-pairing of {a.player_id}")
                if a.partner_ids[t] != b.player_id or b.partner_ids[t] != a.player_id:
                    errors.append(f"round {t + 1}: partner ids of {a.player_id}/{b.player_id} disagree")
                if a.opp_actions[t] != b.actions[t] or b.opp_actions[t] != a.actions[t]:
                    errors.append(f"round {t + 1}: actions of {a.player_id}/{b.player_id} disagree")
        if self.treatment == "FP" and any(set(p) != set(self.pairing[0]) for p in self.pairing):
            errors.append("fixed-partner session changes pairs")
        return errors

    def payoffs(self, matrix: PayoffMatrix = DEFAULT_PAYOFFS) -> dict[str, int]:
        return {
            p.player_id: sum(matrix.payoff(a, b)[0] for a, b in zip(p.actions, p.opp_actions))
            for p in self.players
        }

    def window(self, lo: int, hi: int) -> "SessionData":
        """Rounds ``lo..hi`` inclusive (1-based)."""
        return SessionData(
            self.session_id,
            self.treatment,
            tuple(p.window(lo, hi) for p in self.players),
            self.pairing[lo - 1 : hi],
        )
