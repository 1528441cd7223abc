"""Exponential moving average of a parameter tree (the teacher's weights)."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from ..params import ParamTree


@dataclass
class EmaState:
    tree: ParamTree          # teacher parameters, isomorphic to the student
    decay: float
    step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError(f"EMA decay must lie in [0, 1], got {self.decay}")


def ema_init(student: ParamTree, decay: float) -> EmaState:
    """Teacher starts as an exact copy of the student."""
    return EmaState(tree=student.clone(), decay=decay)


def ema_update(state: EmaState, student: ParamTree) -> EmaState:
    """theta_t <- d * theta_t + (1 - d) * theta_s for every entry.

    Applies to all entries, including BN running statistics.
    """
    if state.tree.paths() != student.paths():
        raise ConfigError("student tree is not isomorphic to the EMA teacher")
    d = state.decay
    for path, t in state.tree.items():
        s = student[path]
        t.data *= d
        t.data += (1.0 - d) * s.data
    state.step += 1
    return state
