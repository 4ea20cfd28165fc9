"""Core IPD types: actions, contexts, the 8-symbol conditional-action alphabet,
payoffs and per-participant feature vectors.

Symbols are ``2 * context_index + action_index`` with contexts ordered
CC, CD, DC, DD (own action first) and actions C=0, D=1, so (CC)C=0 ... (DD)D=7.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

N_SYMBOLS = 8


class Action(enum.IntEnum):
    C = 0
    D = 1

    @classmethod
    def parse(cls, text: str) -> "Action":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"invalid action {text!r}") from None

    def flip(self) -> "Action":
        return Action.D if self is Action.C else Action.C

    def __str__(self) -> str:
        return self.name


C, D = Action.C, Action.D


class Context(enum.IntEnum):
    """Previous-round outcome seen by the focal player: (own, opponent)."""

    CC = 0
    CD = 1
    DC = 2
    DD = 3

    @classmethod
    def of(cls, own: Action, opp: Action) -> "Context":
        return cls(2 * int(own) + int(opp))

    @property
    def own_prev(self) -> Action:
        return Action(int(self) >> 1)

    @property
    def opp_prev(self) -> Action:
        return Action(int(self) & 1)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ConditionalAction:
    context: Context
    action: Action

    @property
    def symbol(self) -> int:
        return 2 * int(self.context) + int(self.action)

    @classmethod
    def from_symbol(cls, symbol: int) -> "ConditionalAction":
        if not 0 <= symbol < N_SYMBOLS:
            raise ValueError(f"symbol out of range: {symbol}")
        return cls(Context(symbol >> 1), Action(symbol & 1))

    @property
    def label(self) -> str:
        return f"({self.context.name}){self.action.name}"

    def __str__(self) -> str:
        return self.label


SYMBOL_LABELS: tuple[str, ...] = tuple(
    ConditionalAction.from_symbol(s).label for s in range(N_SYMBOLS)
)


def symbol_of(label: str) -> int:
    """Inverse of SYMBOL_LABELS, e.g. ``"(CD)D" -> 3``."""
    try:
        return SYMBOL_LABELS.index(label)
    except ValueError:
        raise ValueError(f"unknown conditional action {label!r}") from None


@dataclass(frozen=True)
class PayoffMatrix:
    T: int = 4
    R: int = 3
    P: int = 1
    S: int = 0

    def __post_init__(self) -> None:
        if not (self.T > self.R > self.P > self.S):
            raise ValueError("payoffs must satisfy T > R > P > S")
        if not 2 * self.R > self.T + self.S:
            raise ValueError("payoffs must satisfy 2R > T + S")

    def payoff(self, a: Action, b: Action) -> tuple[int, int]:
        """Points for (focal, opponent) when focal plays ``a`` against ``b``."""
        if a is C:
            return (self.R, self.R) if b is C else (self.S, self.T)
        return (self.T, self.S) if b is C else (self.P, self.P)


DEFAULT_PAYOFFS = PayoffMatrix()


def payoff(a: Action, b: Action, matrix: PayoffMatrix = DEFAULT_PAYOFFS) -> tuple[int, int]:
    return matrix.payoff(a, b)


@dataclass(frozen=True)
class PlayerHistory:
    player_id: str
    actions: tuple[Action, ...]
    opp_actions: tuple[Action, ...]
    partner_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        n = len(self.actions)
        if n < 1:
            raise ValueError("history must contain at least one round")
        if len(self.opp_actions) != n or len(self.partner_ids) != n:
            raise ValueError("actions, opp_actions and partner_ids must have equal length")

    @classmethod
    def from_strings(
        cls,
        actions: str | Sequence[str],
        opp_actions: str | Sequence[str],
        player_id: str = "p0",
        partner_ids: Sequence[str] | None = None,
    ) -> "PlayerHistory":
        acts = tuple(Action.parse(a) for a in actions)
        opps = tuple(Action.parse(a) for a in opp_actions)
        partners = tuple(partner_ids) if partner_ids is not None else ("opp",) * len(acts)
        return cls(player_id, acts, opps, partners)

    def __len__(self) -> int:
        return len(self.actions)

    def window(self, lo: int, hi: int) -> "PlayerHistory":
        """Rounds ``lo..hi`` inclusive, 1-based."""
        if lo < 1 or hi > len(self) or lo > hi:
            raise ValueError(f"window [{lo}, {hi}] outside recorded rounds 1..{len(self)}")
        s = slice(lo - 1, hi)
        return PlayerHistory(self.player_id, self.actions[s], self.opp_actions[s], self.partner_ids[s])


def contexts(history: PlayerHistory) -> list[Context]:
    """Context seen before each of rounds 2..T."""
    if len(history) < 2:
        raise ValueError("no context available: history shorter than 2 rounds")
    return [Context.of(a, b) for a, b in zip(history.actions[:-1], history.opp_actions[:-1])]


def encode_conditional(history: PlayerHistory) -> list[ConditionalAction]:
    return [
        ConditionalAction(ctx, act)
        for ctx, act in zip(contexts(history), history.actions[1:])
    ]


def encode_symbols(history: PlayerHistory) -> np.ndarray:
    """Integer observation sequence (length rounds - 1) for HMM fitting."""
    if len(history) < 2:
        raise ValueError("no context available: history shorter than 2 rounds")
    a = np.fromiter((int(x) for x in history.actions), dtype=np.int64, count=len(history))
    o = np.fromiter((int(x) for x in history.opp_actions), dtype=np.int64, count=len(history))
    return 4 * a[:-1] + 2 * o[:-1] + a[1:]


def decode_symbols(symbols: Iterable[int]) -> list[ConditionalAction]:
    return [ConditionalAction.from_symbol(int(s)) for s in symbols]


@dataclass(frozen=True)
class FeatureVector:
    context_counts: tuple[int, int, int, int]
    coop_counts: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if any(c > n for c, n in zip(self.coop_counts, self.context_counts)):
            raise ValueError("cooperation count exceeds context count")

    def as_array(self, normalize: bool = False) -> np.ndarray:
        """The 8-vector S = (CC, CD, DC, DD, (CC)C, (CD)C, (DC)C, (DD)C)."""
        v = np.array(self.context_counts + self.coop_counts, dtype=float)
        if normalize:
            total = sum(self.context_counts)
            if total:
                v = v / total
        return v


def feature_vector(history: PlayerHistory) -> FeatureVector:
    counts = np.bincount(encode_symbols(history), minlength=N_SYMBOLS)
    ctx = counts[0::2] + counts[1::2]
    coop = counts[0::2]
    return FeatureVector(tuple(int(x) for x in ctx), tuple(int(x) for x in coop))


@dataclass(frozen=True)
class ContextRate:
    context: Context
    frequency: int
    cooperation: int

    @property
    def percentage(self) -> float:
        """Cooperation percentage; NaN when the context never occurred."""
        if self.frequency == 0:
            return float("nan")
        return 100.0 * self.cooperation / self.frequency


def cooperation_rate(histories: Iterable[PlayerHistory]) -> list[ContextRate]:
    histories = list(histories)
    if not histories:
        raise ValueError("cooperation_rate needs at least one history")
    ctx = np.zeros(4, dtype=int)
    coop = np.zeros(4, dtype=int)
    for h in histories:
        if len(h) < 2:
            continue
        fv = feature_vector(h)
        ctx += fv.context_counts
        coop += fv.coop_counts
    return [ContextRate(Context(i), int(ctx[i]), int(coop[i])) for i in range(4)]
