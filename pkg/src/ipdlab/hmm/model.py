from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..game import N_SYMBOLS, SYMBOL_LABELS

MAX_STATES = 4
STOCHASTIC_ATOL = 1e-9


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HMMModel:
    """Left-to-right multinomial HMM over the 8 conditional-action symbols.

    The chain always starts in state 0 and ``trans[i, j] == 0`` for ``j < i``.
    """

    initial: np.ndarray
    trans: np.ndarray
    emit: np.ndarray

    def __post_init__(self) -> None:
        for name in ("initial", "trans", "emit"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def h(self) -> int:
        return self.trans.shape[0]

    @classmethod
    def left_to_right(cls, trans: Any, emit: Any) -> "HMMModel":
        trans = np.asarray(trans, dtype=float)
        initial = np.zeros(trans.shape[0])
        initial[0] = 1.0
        return cls(initial, trans, emit)

    def validate(self) -> None:
        h = self.trans.shape[0] if self.trans.ndim == 2 else 0
        if h < 1:
            raise ModelError("empty model: at least one hidden state is required")
        if h > MAX_STATES:
            raise ModelError(f"at most {MAX_STATES} hidden states are supported, got {h}")
        if self.trans.shape != (h, h) or self.emit.shape != (h, N_SYMBOLS) or self.initial.shape != (h,):
            raise ModelError(
                f"shape mismatch: initial {self.initial.shape}, trans {self.trans.shape}, emit {self.emit.shape}"
            )
        for name, arr in (("initial", self.initial), ("trans", self.trans), ("emit", self.emit)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} has negative or non-finite entries")
        if abs(self.initial.sum() - 1.0) > STOCHASTIC_ATOL:
            raise ModelError("initial distribution does not sum to 1")
        if np.any(np.abs(self.trans.sum(axis=1) - 1.0) > STOCHASTIC_ATOL):
            raise ModelError("transition rows do not sum to 1")
        if np.any(np.abs(self.emit.sum(axis=1) - 1.0) > STOCHASTIC_ATOL):
            raise ModelError("emission rows do not sum to 1")
        if np.any(np.tril(self.trans, -1) != 0):
            raise ModelError("transition matrix is not left-to-right")
        if self.initial[0] != 1.0:
            raise ModelError("initial distribution must put all mass on state 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "h": self.h,
            "initial": self.initial.tolist(),
            "trans": self.trans.tolist(),
            "emit": self.emit.tolist(),
            "symbols": list(SYMBOL_LABELS),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HMMModel":
        try:
            model = cls(data["initial"], data["trans"], data["emit"])
        except KeyError as exc:
            raise ModelError(f"model JSON missing field {exc.args[0]!r}") from None
        if "h" in data and int(data["h"]) != model.h:
            raise ModelError(f"declared h={data['h']} but matrices have {model.h} states")
        if "symbols" in data and list(data["symbols"]) != list(SYMBOL_LABELS):
            raise ModelError("model symbol labels do not match the conditional-action alphabet")
        return model

    @classmethod
    def from_json(cls, text: str) -> "HMMModel":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"malformed model JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ModelError("model JSON must be an object")
        return cls.from_dict(data)
