from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..game import SYMBOL_LABELS
from .model import HMMModel

EMISSION_FLOOR = 0.05
TRANSITION_FLOOR = 0.01


@dataclass(frozen=True)
class DisplayModel:
    """Pruned view of a model for figures. Kept values are not renormalized."""

    states: tuple[int, ...]
    initial_state: int
    emissions: dict[int, tuple[tuple[str, float], ...]]
    transitions: tuple[tuple[int, int, float], ...]


def prune_for_display(
    model: HMMModel,
    emission_floor: float = EMISSION_FLOOR,
    transition_floor: float = TRANSITION_FLOOR,
) -> DisplayModel:
    """Drop emissions below ``emission_floor``, transitions at or below
    ``transition_floor``, and states no longer reachable from state 0."""
    edges = [
        (i, j, float(model.trans[i, j]))
        for i in range(model.h)
        for j in range(i, model.h)
        if model.trans[i, j] > transition_floor
    ]
    reach = {0}
    for i, j, _ in edges:  # edges are ordered by source; left-to-right means one pass suffices
        if i in reach:
            reach.add(j)
    states = tuple(sorted(reach))
    emissions = {}
    for s in states:
        order = np.argsort(-model.emit[s], kind="stable")
        emissions[s] = tuple(
            (SYMBOL_LABELS[k], float(model.emit[s, k])) for k in order if model.emit[s, k] >= emission_floor
        )
    kept = tuple(e for e in edges if e[0] in reach and e[1] in reach)
    return DisplayModel(states, 0, emissions, kept)


def to_dot(display: DisplayModel, name: str = "hmm") -> str:
    """GraphViz text: one box per state listing its emissions, bold initial
    state, labelled forward transitions (self-loops omitted)."""
    lines = [f'digraph "{name}" {{', "  rankdir=LR;", '  node [shape=box, fontname="Helvetica"];']
    for s in display.states:
        label = "\\n".join(f"{sym} {p:.3f}" for sym, p in display.emissions[s]) or "(no symbol >= 0.05)"
        style = ", style=bold, penwidth=2" if s == display.initial_state else ""
        lines.append(f'  s{s + 1} [label="{label}"{style}];')
    for i, j, p in display.transitions:
        if i != j:
            lines.append(f'  s{i + 1} -> s{j + 1} [label="{p:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def model_to_dot(model: HMMModel, name: str = "hmm") -> str:
    return to_dot(prune_for_display(model), name)
