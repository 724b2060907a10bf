"""Tabular Q-learning: tables, epsilon-greedy selection, the one-step update."""

from __future__ import annotations

import ast
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable


@dataclass
class LearnerConfig:
    alpha: float = 0.1
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_fraction: float = 0.5
    default_value: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0 <= eps <= 1:
                raise ValueError("epsilon values must be in [0, 1]")
        if not 0 < self.decay_fraction <= 1:
            raise ValueError("decay_fraction must be in (0, 1]")

    def epsilon(self, progress: float) -> float:
        """Linear decay over the first ``decay_fraction`` of training, then flat."""
        frac = min(1.0, max(0.0, progress) / self.decay_fraction)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


@dataclass
class QTable:
    """Q-values keyed by hashable state; absent entries read as ``default_value``."""

    n_actions: int
    default_value: float = 0.0
    values: dict[Hashable, list[float]] = field(default_factory=dict)
    visits: dict[Hashable, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_actions <= 0:
            raise ValueError("empty action set")

    def row(self, s: Hashable) -> list[float]:
        r = self.values.get(s)
        return r if r is not None else [self.default_value] * self.n_actions

    def get(self, s: Hashable, a: int) -> float:
        r = self.values.get(s)
        return self.default_value if r is None else r[a]

    def set(self, s: Hashable, a: int, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError("Q-values must be finite")
        r = self.values.get(s)
        if r is None:
            r = self.values[s] = [self.default_value] * self.n_actions
        r[a] = value

    def max_value(self, s: Hashable) -> float:
        return max(self.row(s))

    def greedy(self, s: Hashable) -> int:
        """Argmax, lowest action id on ties."""
        row = self.row(s)
        best = max(row)
        return row.index(best)

    def __contains__(self, s: Hashable) -> bool:
        return s in self.values

    def __len__(self) -> int:
        return len(self.values)

    # text format: header line, then "state<TAB>action<TAB>value" sorted
    def dumps(self) -> str:
        lines = [f"# qtable actions={self.n_actions} default={self.default_value!r}"]
        for key in sorted(self.values, key=repr):
            visits = self.visits.get(key, 0)
            for a, v in enumerate(self.values[key]):
                lines.append(f"{key!r}\t{a}\t{v!r}\t{visits}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> QTable:
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# qtable"):
            raise ValueError("not a qtable dump")
        meta = dict(part.split("=", 1) for part in lines[0].split()[2:])
        table = cls(int(meta["actions"]), float(meta["default"]))
        for line in lines[1:]:
            if not line.strip():
                continue
            key_text, a, v, visits = line.split("\t")
            key = ast.literal_eval(key_text)
            table.set(key, int(a), float(v))
            if int(visits):
                table.visits[key] = int(visits)
        return table

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> QTable:
        return cls.loads(Path(path).read_text())


def q_update(table: QTable, s: Hashable, a: int, r: float, t: Hashable, done: bool, cfg: LearnerConfig) -> QTable:
    """One Q-learning backup in place; returns the table for chaining."""
    if not math.isfinite(r):
        raise ValueError("reward must be finite")
    if not 0 <= a < table.n_actions:
        raise ValueError(f"action {a} out of range")
    target = r if done else r + cfg.gamma * table.max_value(t)
    q = table.get(s, a)
    table.set(s, a, q + cfg.alpha * (target - q))
    table.visits[s] = table.visits.get(s, 0) + 1
    return table


def select_action(table: QTable, s: Hashable, epsilon: float, rng: random.Random) -> int:
    """Uniform with probability ``epsilon``, otherwise greedy with lowest-id ties."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return rng.randrange(table.n_actions)
    return table.greedy(s)
