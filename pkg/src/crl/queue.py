"""Single-server queue with flow and service control.

States are buffer occupancies 0..L. A composite action (a, b) picks a service
success probability a and an arrival probability b; at a full buffer arrivals
are impossible, so every action there acts with b = 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .cmdp import CmdpModel

DEFAULT_SERVICE_LEVELS = (0.2, 0.3, 0.5, 0.6, 0.8)
DEFAULT_FLOW_LEVELS = (0.1, 0.3, 0.5, 0.9, 0.0)


@dataclass(frozen=True)
class LinearShape:
    """f(x) = intercept + slope * x."""

    intercept: float
    slope: float

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class QueueConfig:
    buffer_size: int = 4
    service_levels: tuple[float, ...] = DEFAULT_SERVICE_LEVELS
    flow_levels: tuple[float, ...] = DEFAULT_FLOW_LEVELS
    holding_reward: LinearShape = field(default_factory=lambda: LinearShape(5.0, -1.0))
    service_reward: LinearShape = field(default_factory=lambda: LinearShape(3.0, -10.0))
    flow_reward: LinearShape = field(default_factory=lambda: LinearShape(-3.0, 10.0))
    thresholds: tuple[float, float] = (0.0, 0.0)
    discount: float = 0.9
    action_mode: str = "product"

    def __post_init__(self):
        object.__setattr__(self, "service_levels", tuple(float(a) for a in self.service_levels))
        object.__setattr__(self, "flow_levels", tuple(float(b) for b in self.flow_levels))
        object.__setattr__(self, "thresholds", tuple(float(h) for h in self.thresholds))
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be at least 1")
        if not self.service_levels or not all(0.0 < a < 1.0 for a in self.service_levels):
            raise ValueError("service levels must lie in (0, 1)")
        if not self.flow_levels or not all(0.0 <= b < 1.0 for b in self.flow_levels):
            raise ValueError("flow levels must lie in [0, 1)")
        if 0.0 not in self.flow_levels:
            raise ValueError("flow levels must include 0")
        if len(self.thresholds) != 2:
            raise ValueError("expected two thresholds (service, flow)")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.action_mode not in ("product", "paired"):
            raise ValueError("action_mode must be 'product' or 'paired'")
        if self.action_mode == "paired" and len(self.service_levels) != len(self.flow_levels):
            raise ValueError("paired mode needs equally many service and flow levels")

    @property
    def n_states(self) -> int:
        return self.buffer_size + 1

    def actions(self) -> list[tuple[float, float]]:
        if self.action_mode == "product":
            return list(itertools.product(self.service_levels, self.flow_levels))
        return list(zip(self.service_levels, self.flow_levels))


def effective_action(config: QueueConfig, state: int, a: float, b: float) -> tuple[float, float]:
    return (a, 0.0) if state == config.buffer_size else (a, b)


def transition_row(config: QueueConfig, state: int, a: float, b: float) -> np.ndarray:
    a, b = effective_action(config, state, a, b)
    L = config.buffer_size
    row = np.zeros(L + 1)
    if state == 0:
        row[1] = (1 - a) * b
        row[0] = 1 - row[1]
        return row
    row[state - 1] = a * (1 - b)
    if state < L:
        row[state + 1] = (1 - a) * b
    row[state] = 1 - row.sum()  # = ab + (1-a)(1-b)
    # Nudge the diagonal by single ulps until the row sums to 1 in floating point.
    for _ in range(4):
        err = row.sum() - 1.0
        if err == 0.0:
            break
        row[state] = np.nextafter(row[state], -np.inf if err > 0 else np.inf)
    return row


def build_queue_cmdp(config: QueueConfig | None = None) -> CmdpModel:
    config = config or QueueConfig()
    actions = config.actions()
    S, A = config.n_states, len(actions)
    P = np.zeros((A, S, S))
    r = np.zeros((S, A))
    g = np.zeros((2, S, A))
    for k, (a, b) in enumerate(actions):
        for s in range(S):
            P[k, s] = transition_row(config, s, a, b)
            ea, eb = effective_action(config, s, a, b)
            r[s, k] = config.holding_reward(s)
            g[0, s, k] = config.service_reward(ea)
            g[1, s, k] = config.flow_reward(eb)
    return CmdpModel(
        transition=P,
        reward=r,
        constraint_rewards=g,
        thresholds=np.array(config.thresholds),
        discount=config.discount,
        initial_dist=np.full(S, 1.0 / S),
    )


class TabularGenerativeModel:
    """Sampler over a known CMDP exposing only draws and reward look-ups.

    Owns its random generator; instances are not meant to be shared across
    threads.
    """

    def __init__(self, model: CmdpModel, seed=None):
        self._model = model
        self._rng = np.random.default_rng(seed)
        self._cdf = np.cumsum(model.transition, axis=2)
        self._cdf[..., -1] = 1.0
        self._q_cdf = np.cumsum(model.initial_dist)
        self._q_cdf[-1] = 1.0
        self.n_states = model.n_states
        self.n_actions = model.n_actions
        self.n_constraints = model.n_constraints
        self.discount = model.discount
        self.thresholds = model.thresholds

    def sample_initial(self) -> int:
        return int(np.searchsorted(self._q_cdf, self._rng.random(), side="right"))

    def sample_transition(self, s: int, a: int) -> int:
        return int(np.searchsorted(self._cdf[a, s], self._rng.random(), side="right"))

    def rewards(self, s: int, a: int) -> tuple[float, ...]:
        m = self._model
        return (float(m.reward[s, a]), *(float(x) for x in m.constraint_rewards[:, s, a]))

    def sample_initial_batch(self, size: int) -> np.ndarray:
        return np.searchsorted(self._q_cdf, self._rng.random(size), side="right")

    def sample_transition_batch(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        u = self._rng.random(np.shape(s))
        cdf = self._cdf[a, s]
        return (cdf <= u[:, None]).sum(axis=1)


def queue_generative_model(config: QueueConfig | None = None, seed=None) -> TabularGenerativeModel:
    return TabularGenerativeModel(build_queue_cmdp(config), seed)
