"""Regularized projected saddle-flow dynamics.

The generic engine integrates, for min_x max_y L(x, y) over K x V,

    x' = Pi_K[x, -grad_x L - (x - x_hat)/rho]     x_hat' = Pi_K[x_hat, (x - x_hat)/rho]
    y' = Pi_V[y, +grad_y L - (y - y_hat)/rho]     y_hat' = Pi_V[y_hat, (y - y_hat)/rho]

by projected forward Euler. For the C-RL Lagrangian the occupancy measure is
the maximizing player on the joint simplex while (mu, v) minimize over U x V.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .cmdp import CmdpModel, bellman_flow_residual, projection_radii
from .geometry import Box, ConvexSet, NonnegL1Ball, Simplex, contains, project, projected_step

Gradient = Callable[[np.ndarray, np.ndarray], np.ndarray]


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    rho: float = 1.0
    step: float = 1e-3
    horizon: float = 1e4
    tol: float = 1e-7
    record_every: int = 1000

    def __post_init__(self):
        for name in ("rho", "step", "horizon", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        if not self.step < self.rho / 2:
            raise ValueError("step must be below rho/2 to keep the hat dynamics contractive")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.horizon / self.step - 1e-9))


@dataclass(frozen=True)
class SaddlePointProblem:
    grad_x: Gradient
    grad_y: Gradient
    set_x: ConvexSet
    set_y: ConvexSet


@dataclass(frozen=True, eq=False)
class SaddleState:
    x: np.ndarray
    x_hat: np.ndarray
    y: np.ndarray
    y_hat: np.ndarray

    def as_tuple(self) -> tuple[np.ndarray, ...]:
        return self.x, self.x_hat, self.y, self.y_hat


def _finite(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if not np.all(np.isfinite(vec)):
        raise FlowError(f"non-finite {what} gradient")
    return vec


def saddle_drifts(problem: SaddlePointProblem, state: SaddleState, rho: float):
    """Pre-projection drifts (x, x_hat, y, y_hat)."""
    gx = _finite(problem.grad_x(state.x, state.y), "x")
    gy = _finite(problem.grad_y(state.x, state.y), "y")
    dx = state.x - state.x_hat
    dy = state.y - state.y_hat
    return -gx - dx / rho, dx / rho, gy - dy / rho, dy / rho


def _advance(problem: SaddlePointProblem, state: SaddleState, config: FlowConfig) -> SaddleState:
    # Projection keeps every component in its set, so membership is checked once by callers.
    drifts = saddle_drifts(problem, state, config.rho)
    sets = (problem.set_x, problem.set_x, problem.set_y, problem.set_y)
    return SaddleState(*(
        project(k, z + config.step * d) for k, z, d in zip(sets, state.as_tuple(), drifts)
    ))


def flow_step(problem: SaddlePointProblem, state: SaddleState, config: FlowConfig) -> SaddleState:
    drifts = saddle_drifts(problem, state, config.rho)
    sets = (problem.set_x, problem.set_x, problem.set_y, problem.set_y)
    return SaddleState(*(
        projected_step(k, z, d, config.step) for k, z, d in zip(sets, state.as_tuple(), drifts)
    ))


def _movement(a: tuple, b: tuple) -> float:
    return float(np.abs(np.concatenate(a) - np.concatenate(b)).max(initial=0.0))


def integrate(problem: SaddlePointProblem, state0: SaddleState, config: FlowConfig):
    """Run flow_step until the projected drift drops below tol or the horizon is spent.

    Returns (final state, [(time, state), ...] every record_every steps, converged).
    """
    sets = (problem.set_x, problem.set_x, problem.set_y, problem.set_y)
    if not all(contains(k, z) for k, z in zip(sets, state0.as_tuple())):
        raise ValueError("initial state must lie in the feasible sets")
    state = state0
    trajectory = [(0.0, state)]
    converged = False
    for k in range(1, config.max_steps + 1):
        new = _advance(problem, state, config)
        drift = _movement(new.as_tuple(), state.as_tuple()) / config.step
        state = new
        if k % config.record_every == 0:
            trajectory.append((k * config.step, state))
        if drift < config.tol:
            converged = True
            break
    if trajectory[-1][1] is not state:
        trajectory.append((k * config.step, state))
    return state, trajectory, converged


# ---------------------------------------------------------------------------
# The bilinear example L(x, y) = x y


def bilinear_problem(bound: float = 10.0) -> SaddlePointProblem:
    box = Box.symmetric(1, bound)
    return SaddlePointProblem(
        grad_x=lambda x, y: y.copy(),
        grad_y=lambda x, y: x.copy(),
        set_x=box,
        set_y=box,
    )


def classical_primal_dual_demo(state0=(1.0, 0.0), step: float = 0.01, n_steps: int = 10_000):
    """Unregularized Euler iterates x' = -y, y' = x for L = xy; shape (n_steps + 1, 2).

    The Euler map is a rotation scaled by sqrt(1 + step^2), so the squared
    radius grows by exactly (1 + step^2) per step.
    """
    traj = np.empty((n_steps + 1, 2))
    x, y = map(float, state0)
    traj[0] = x, y
    for k in range(1, n_steps + 1):
        x, y = x - step * y, y + step * x
        traj[k] = x, y
    return traj


def regularized_bilinear_demo(state0=(1.0, 0.0, 0.0, 0.0), rho: float = 1.0, step: float = 0.01,
                              n_steps: int = 100_000, tol: float = 1e-6, bound: float = 10.0,
                              record_every: int = 10):
    """Regularized flow for L = xy from (x, x_hat, y, y_hat); returns (final, trajectory, converged)."""
    x, x_hat, y, y_hat = (np.array([float(c)]) for c in state0)
    config = FlowConfig(rho=rho, step=step, horizon=n_steps * step, tol=tol,
                        record_every=record_every)
    return integrate(bilinear_problem(bound), SaddleState(x, x_hat, y, y_hat), config)


# ---------------------------------------------------------------------------
# C-RL specialization


@dataclass(frozen=True, eq=False)
class CrlSaddleState:
    lam: np.ndarray
    lam_hat: np.ndarray
    mu: np.ndarray
    mu_hat: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray

    def blocks(self) -> tuple[np.ndarray, ...]:
        return self.lam, self.lam_hat, self.mu, self.mu_hat, self.v, self.v_hat

    def copy(self) -> "CrlSaddleState":
        return CrlSaddleState(*(np.array(b, dtype=float) for b in self.blocks()))

    @classmethod
    def initial(cls, model: CmdpModel, lam=None, mu=None, v=None) -> "CrlSaddleState":
        """Hats equal to their primals; uniform lambda and zero duals by default."""
        lam = np.full(model.n_pairs, 1.0 / model.n_pairs) if lam is None else np.array(lam, float)
        mu = np.zeros(model.n_constraints) if mu is None else np.array(mu, float)
        v = np.zeros(model.n_states) if v is None else np.array(v, float)
        return cls(lam, lam.copy(), mu, mu.copy(), v, v.copy())


@dataclass(frozen=True)
class CrlSets:
    occupancy: Simplex
    multipliers: NonnegL1Ball
    values: Box

    def per_block(self) -> tuple:
        return (self.occupancy, self.occupancy, self.multipliers, self.multipliers,
                self.values, self.values)

    def contains(self, state: CrlSaddleState, tol: float = 1e-9) -> bool:
        return all(contains(k, b, tol) for k, b in zip(self.per_block(), state.blocks()))


def crl_sets(model: CmdpModel, psi: float, psi_cap: float = 1.0) -> CrlSets:
    """Delta x U x V with radii from the Slater slack (reward-range scaled).

    An infinite slack (no constraints) is replaced by ``psi_cap``.
    """
    if math.isinf(psi):
        psi = psi_cap
    mu_radius, v_radius = projection_radii(model, psi)
    return CrlSets(
        Simplex(model.n_pairs),
        NonnegL1Ball(model.n_constraints, mu_radius),
        Box.symmetric(model.n_states, v_radius),
    )


def crl_flow_field(model: CmdpModel, state: CrlSaddleState, rho: float) -> CrlSaddleState:
    """The six pre-projection drifts, packed in a CrlSaddleState."""
    F, G = model.flow_matrix, model.constraint_matrix
    lam, lam_hat, mu, mu_hat, v, v_hat = state.blocks()
    d_v = F @ lam - (1.0 - model.discount) * model.initial_dist - (v - v_hat) / rho
    d_mu = model.thresholds - G @ lam - (mu - mu_hat) / rho
    d_lam = model.reward_vector - F.T @ v + G.T @ mu - (lam - lam_hat) / rho
    return CrlSaddleState(
        lam=d_lam, lam_hat=(lam - lam_hat) / rho,
        mu=d_mu, mu_hat=(mu - mu_hat) / rho,
        v=d_v, v_hat=(v - v_hat) / rho,
    )


def crl_flow_step(model: CmdpModel, state: CrlSaddleState, sets: CrlSets,
                  config: FlowConfig) -> CrlSaddleState:
    """Reference (uncompiled) projected Euler step for the C-RL flow."""
    drift = crl_flow_field(model, state, config.rho)
    return CrlSaddleState(*(
        projected_step(k, b, d, config.step)
        for k, b, d in zip(sets.per_block(), state.blocks(), drift.blocks())
    ))


def projected_drift_norm(model: CmdpModel, state: CrlSaddleState, sets: CrlSets,
                         step: float, rho: float) -> float:
    drift = crl_flow_field(model, state, rho)
    moves = [
        np.abs(project(k, b + step * d) - b).max(initial=0.0)
        for k, b, d in zip(sets.per_block(), state.blocks(), drift.blocks())
    ]
    return float(max(moves)) / step


@dataclass(frozen=True, eq=False)
class CrlTrajectory:
    """Recorded states; index i holds the state after ``steps[i]`` Euler steps."""

    steps: np.ndarray
    time: np.ndarray
    drift: np.ndarray
    lam: np.ndarray
    lam_hat: np.ndarray
    mu: np.ndarray
    mu_hat: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray

    def __len__(self) -> int:
        return self.steps.size

    def state(self, i: int) -> CrlSaddleState:
        return CrlSaddleState(self.lam[i], self.lam_hat[i], self.mu[i], self.mu_hat[i],
                              self.v[i], self.v_hat[i])

    def rows(self, model: CmdpModel, reference=None) -> list[dict]:
        """Flat diagnostic rows: time, norms, objective, constraint values, residual, drift."""
        rows = []
        G, r = model.constraint_matrix, model.reward_vector
        for i in range(len(self)):
            lam = self.lam[i]
            row = {
                "step": int(self.steps[i]),
                "time": float(self.time[i]),
                "objective": float(r @ lam),
            }
            for j, value in enumerate(G @ lam, start=1):
                row[f"constraint_{j}"] = float(value)
            row["flow_residual"] = bellman_flow_residual(model, lam)
            row["lambda_norm"] = float(np.linalg.norm(lam))
            row["mu_norm"] = float(np.abs(self.mu[i]).sum())
            row["v_norm"] = float(np.abs(self.v[i]).max())
            if reference is not None:
                row.update(reference_gaps(reference, lam, self.mu[i], self.v[i]))
            row["drift_norm"] = float(self.drift[i])
            rows.append(row)
        return rows


def reference_gaps(reference, lam, mu, v) -> dict:
    """Distances to an exact solution; v is compared modulo constant shifts,
    under which the saddle set is invariant."""
    dv = np.asarray(v) - reference.v
    return {
        "lambda_gap_inf": float(np.abs(np.asarray(lam) - reference.lam).max()),
        "mu_gap_inf": float(np.abs(np.asarray(mu) - reference.mu).max(initial=0.0)),
        "v_gap_mod_shift": float((dv.max() - dv.min()) / 2.0),
    }


def crl_integrate(model: CmdpModel, state0: CrlSaddleState, sets: CrlSets,
                  config: FlowConfig | None = None):
    """Integrate the C-RL flow; returns (final state, CrlTrajectory, converged)."""
    config = config or FlowConfig()
    if not sets.contains(state0):
        raise ValueError("initial state must lie in Delta x U x V")
    state = state0.copy()
    max_steps = config.max_steps
    n_rec = max_steps // config.record_every + 2
    S, n, I = model.n_states, model.n_pairs, model.n_constraints
    rec = {
        "step": np.zeros(n_rec, dtype=np.int64),
        "drift": np.zeros(n_rec),
        "lam": np.zeros((n_rec, n)), "lam_hat": np.zeros((n_rec, n)),
        "mu": np.zeros((n_rec, I)), "mu_hat": np.zeros((n_rec, I)),
        "v": np.zeros((n_rec, S)), "v_hat": np.zeros((n_rec, S)),
    }
    mu_radius = sets.multipliers.radius
    _, count, converged = _kernels.crl_flow_run(
        np.ascontiguousarray(model.flow_matrix), np.ascontiguousarray(model.constraint_matrix),
        np.ascontiguousarray(model.reward_vector), np.ascontiguousarray(model.thresholds),
        (1.0 - model.discount) * model.initial_dist,
        *state.blocks(),
        config.rho, config.step, mu_radius, sets.values.lower, sets.values.upper,
        max_steps, config.tol, config.record_every,
        rec["step"], rec["drift"], rec["lam"], rec["lam_hat"], rec["mu"], rec["mu_hat"],
        rec["v"], rec["v_hat"],
    )
    trajectory = CrlTrajectory(
        steps=rec["step"][:count],
        time=rec["step"][:count] * config.step,
        drift=rec["drift"][:count],
        **{k: rec[k][:count] for k in ("lam", "lam_hat", "mu", "mu_hat", "v", "v_hat")},
    )
    return state, trajectory, bool(converged)

