"""Agent-based IPD sessions under fixed or shuffled partner matching.

Strategies are described by immutable :class:`StrategySpec` values and played
by small stateful agents built from them. Noise is a trembling hand applied
after every decision.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .game import C, D, Action, Context, N_SYMBOLS, PlayerHistory
from .hmm.model import HMMModel, ModelError
from .session import SessionData

log = logging.getLogger(__name__)

KINDS = ("AllC", "AllD", "TFT", "GTFT", "WSLS", "Grim", "RandomCoin", "HmmAgent", "Switch")


@dataclass(frozen=True)
class SimConfig:
    n_players: int
    rounds: int = 100
    matching: str = "fixed"
    noise_epsilon: float = 0.0
    continuation_omega: float | None = None
    seed: int = 0
    avoid_repeat_partners: bool = False
    session_id: str = "S1"

    def __post_init__(self) -> None:
        if self.n_players < 2 or self.n_players % 2:
            raise ValueError(f"n_players must be even and >= 2, got {self.n_players}")
        if self.rounds < 2:
            raise ValueError("rounds must be >= 2")
        if self.matching not in ("fixed", "shuffled"):
            raise ValueError("matching must be 'fixed' or 'shuffled'")
        if not 0.0 <= self.noise_epsilon <= 1.0:
            raise ValueError("noise_epsilon must lie in [0, 1]")
        if self.continuation_omega is not None and not 0.0 <= self.continuation_omega < 1.0:
            raise ValueError("continuation_omega must lie in [0, 1)")

    @property
    def treatment(self) -> str:
        return "FP" if self.matching == "fixed" else "SP"


@dataclass(frozen=True)
class StrategySpec:
    """``param`` is the forgiveness probability for GTFT and P(C) for
    RandomCoin. Switch plays ``first`` before round ``at`` and ``second``
    from round ``at`` on."""

    kind: str
    param: float | None = None
    model: HMMModel | None = None
    first: "StrategySpec | None" = None
    second: "StrategySpec | None" = None
    at: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.kind in ("GTFT", "RandomCoin"):
            if self.param is None or not 0.0 <= self.param <= 1.0:
                raise ValueError(f"{self.kind} needs a probability parameter in [0, 1]")
        if self.kind == "Switch" and (self.first is None or self.second is None or not self.at or self.at < 2):
            raise ValueError("Switch needs two strategies and a switch round >= 2")

    def __str__(self) -> str:
        if self.kind in ("GTFT", "RandomCoin"):
            return f"{self.kind}({self.param:g})"
        if self.kind == "HmmAgent":
            return f"HmmAgent(h={self.model.h})" if self.model is not None else "HmmAgent()"
        if self.kind == "Switch":
            return f"Switch({self.first},{self.second},{self.at})"
        return self.kind


ALLC = StrategySpec("AllC")
ALLD = StrategySpec("AllD")
TFT = StrategySpec("TFT")
WSLS = StrategySpec("WSLS")
GRIM = StrategySpec("Grim")


def GTFT(g: float) -> StrategySpec:
    return StrategySpec("GTFT", param=g)


def RandomCoin(p: float) -> StrategySpec:
    return StrategySpec("RandomCoin", param=p)


def HmmAgent(model: HMMModel) -> StrategySpec:
    return StrategySpec("HmmAgent", model=model)


def Switch(first: StrategySpec, second: StrategySpec, at: int) -> StrategySpec:
    return StrategySpec("Switch", first=first, second=second, at=at)


def hmm_agent_action(
    model: HMMModel, hidden_state: int, ctx: Context | None, rng: np.random.Generator
) -> tuple[Action, int, bool]:
    """One move of an HMM-driven agent.

    The current state's emissions are restricted to the two symbols that
    match ``ctx`` and renormalized; then the hidden state advances. With no
    context (round 1) the emissions are marginalized over contexts and the
    state stays put. The flag is True when both matching symbols had zero
    mass and a fair coin was used instead.
    """
    row = model.emit[hidden_state]
    if ctx is None:
        p_c = float(row[0::2].sum())
        return (C if rng.random() < p_c else D), hidden_state, False
    pc, pd = row[2 * int(ctx)], row[2 * int(ctx) + 1]
    fallback = pc + pd <= 0.0
    p_c = 0.5 if fallback else pc / (pc + pd)
    action = C if rng.random() < p_c else D
    nxt = int(rng.choice(model.h, p=model.trans[hidden_state]))
    return action, nxt, fallback


class Agent:
    """Stateful player of one :class:`StrategySpec`."""

    def __init__(self, spec: StrategySpec) -> None:
        if spec.kind == "HmmAgent":
            if spec.model is None:
                raise ModelError("empty model: HmmAgent needs an HMM")
            if spec.model.emit.shape[1] != N_SYMBOLS:
                raise ModelError("HmmAgent model must emit the 8 conditional-action symbols")
        self.spec = spec
        self.round = 0
        self.triggered = False
        self.hidden_state = 0
        self.fallbacks = 0
        self.sub = (Agent(spec.first), Agent(spec.second)) if spec.kind == "Switch" else None

    def act(self, ctx: Context | None, rng: np.random.Generator) -> Action:
        """Decide the next move given the previous-round context."""
        self.round += 1
        kind = self.spec.kind
        if kind == "Switch":
            return self.sub[0 if self.round < self.spec.at else 1].act(ctx, rng)
        if kind == "AllC":
            return C
        if kind == "AllD":
            return D
        if kind == "RandomCoin":
            return C if rng.random() < self.spec.param else D
        if kind == "HmmAgent":
            action, self.hidden_state, fell_back = hmm_agent_action(self.spec.model, self.hidden_state, ctx, rng)
            if fell_back:
                self.fallbacks += 1
                log.warning("HmmAgent state %d cannot respond to %s; used a fair coin", self.hidden_state, ctx)
            return action
        if ctx is None:
            return C
        if kind == "TFT":
            return ctx.opp_prev
        if kind == "GTFT":
            if ctx.opp_prev is C:
                return C
            return C if rng.random() < self.spec.param else D
        if kind == "WSLS":
            # win (T or R) exactly when the opponent cooperated
            return ctx.own_prev if ctx.opp_prev is C else ctx.own_prev.flip()
        if kind == "Grim":
            self.triggered = self.triggered or ctx is not Context.CC
            return D if self.triggered else C
        raise AssertionError(kind)


def strategy_action(agent: Agent, ctx: Context | None, rng: np.random.Generator) -> Action:
    return agent.act(ctx, rng)


def apply_noise(a: Action, epsilon: float, rng: np.random.Generator) -> Action:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return a.flip() if rng.random() < epsilon else a


def _as_pairs(perm: np.ndarray) -> tuple[tuple[int, int], ...]:
    return tuple(sorted((int(min(a, b)), int(max(a, b))) for a, b in perm.reshape(-1, 2)))


def shuffled_pairing(
    n: int,
    rng: np.random.Generator,
    previous: Sequence[tuple[int, int]] | None = None,
    avoid_repeat: bool = False,
    max_tries: int = 1000,
) -> tuple[tuple[int, int], ...]:
    """Uniform random perfect matching of ``n`` players.

    A uniform permutation cut into consecutive pairs hits every matching
    equally often. With ``avoid_repeat`` the draw is repeated until no pair
    of ``previous`` recurs (uniform over the remaining matchings).
    """
    if n < 2 or n % 2:
        raise ValueError(f"a perfect matching needs an even number of players >= 2, got {n}")
    if avoid_repeat and previous is not None:
        if n == 2:
            raise ValueError("two players cannot avoid meeting again")
        old = set(previous)
        for _ in range(max_tries):
            pairs = _as_pairs(rng.permutation(n))
            if not old.intersection(pairs):
                return pairs
        raise RuntimeError("could not draw a matching without repeats")
    return _as_pairs(rng.permutation(n))


def session_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream for session ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _n_rounds(config: SimConfig, rng: np.random.Generator) -> int:
    if config.continuation_omega is None:
        return config.rounds
    # geometric game length with mean 1 / (1 - omega), capped at `rounds`
    drawn = int(rng.geometric(1.0 - config.continuation_omega))
    return min(config.rounds, max(2, drawn))


def run_session(
    config: SimConfig,
    specs: Sequence[StrategySpec],
    rng: np.random.Generator | None = None,
) -> SessionData:
    """Play one session. Fixed matching pairs players (0,1), (2,3), ... in
    roster order; shuffled matching draws a fresh matching every round."""
    if len(specs) != config.n_players:
        raise ValueError(f"roster has {len(specs)} strategies for {config.n_players} players")
    if rng is None:
        rng = session_rng(config.seed)
    pair_rng, act_rng, noise_rng, len_rng = rng.spawn(4)
    n = config.n_players
    rounds = _n_rounds(config, len_rng)
    agents = [Agent(s) for s in specs]
    ids = [f"P{i + 1:03d}" for i in range(n)]
    actions = np.zeros((rounds, n), dtype=np.int8)
    partner = np.zeros((rounds, n), dtype=np.int64)
    pairing = []
    fixed = tuple((i, i + 1) for i in range(0, n, 2))
    prev = None
    for t in range(rounds):
        if config.matching == "fixed":
            pairs = fixed
        else:
            pairs = shuffled_pairing(n, pair_rng, prev, config.avoid_repeat_partners)
        prev = pairs
        pairing.append(pairs)
        for i, j in pairs:
            partner[t, i], partner[t, j] = j, i
        for i in range(n):
            ctx = None
            if t:
                ctx = Context.of(Action(actions[t - 1, i]), Action(actions[t - 1, partner[t - 1, i]]))
            a = agents[i].act(ctx, act_rng)
            actions[t, i] = apply_noise(a, config.noise_epsilon, noise_rng)
    players = []
    for i in range(n):
        own = tuple(Action(x) for x in actions[:, i])
        opp = tuple(Action(actions[t, partner[t, i]]) for t in range(rounds))
        players.append(PlayerHistory(ids[i], own, opp, tuple(ids[j] for j in partner[:, i])))
    return SessionData(config.session_id, config.treatment, tuple(players), tuple(pairing))


_ITEM = re.compile(r"^(?:(\d+)\s*[xX]\s*)?([A-Za-z]+)\s*(?:\((.*)\))?$")


def _split_top(text: str) -> list[str]:
    """Split on commas outside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ValueError(f"unbalanced parentheses in {text!r}")
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ValueError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(cur).strip())
    return [p for p in parts if p]


def _parse_one(name: str, args: str | None) -> StrategySpec:
    canon = {k.lower(): k for k in KINDS}
    kind = canon.get(name.lower())
    if kind is None:
        raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(KINDS)}")
    if kind in ("GTFT", "RandomCoin"):
        if not args:
            raise ValueError(f"{kind} needs a probability, e.g. {kind}(0.3)")
        return StrategySpec(kind, param=float(args))
    if kind == "HmmAgent":
        if not args:
            raise ValueError("HmmAgent needs a model JSON path, e.g. HmmAgent(model.json)")
        with open(args.strip(), encoding="utf-8") as fh:
            return HmmAgent(HMMModel.from_json(fh.read()))
    if kind == "Switch":
        inner = _split_top(args or "")
        if len(inner) != 3:
            raise ValueError("Switch takes (first, second, round), e.g. Switch(TFT,AllD,51)")
        first, second = (parse_roster(x) for x in inner[:2])
        if len(first) != 1 or len(second) != 1:
            raise ValueError("Switch arguments must be single strategies")
        return Switch(first[0], second[0], int(inner[2]))
    if args:
        raise ValueError(f"{kind} takes no arguments")
    return StrategySpec(kind)


def parse_roster(text: str) -> list[StrategySpec]:
    """Parse e.g. ``"2xTFT, GTFT(0.3), Switch(TFT,AllD,51)"``."""
    specs = []
    for item in _split_top(text):
        m = _ITEM.match(item)
        if not m:
            raise ValueError(f"cannot parse roster entry {item!r}")
        count = int(m.group(1)) if m.group(1) else 1
        if count < 1:
            raise ValueError(f"roster multiplicity must be >= 1 in {item!r}")
        specs.extend([_parse_one(m.group(2), m.group(3))] * count)
    if not specs:
        raise ValueError("empty roster")
    return specs

