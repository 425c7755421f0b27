"""Tabular constrained MDPs in occupancy-measure form.

Occupancy measures are flat vectors of length ``n_states * n_actions`` stored
action-major: entry ``a * n_states + s`` holds lambda(s, a), so the slice for
action ``a`` is the column lambda_a.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-12
SIMPLEX_TOL = 1e-9


class ModelError(ValueError):
    """Raised when a CMDP description violates its invariants."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CmdpModel:
    transition: np.ndarray  # P[a, s, s']
    reward: np.ndarray  # r[s, a]
    constraint_rewards: np.ndarray  # g[i, s, a]
    thresholds: np.ndarray  # h[i]
    discount: float
    initial_dist: np.ndarray  # q[s]

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        q = np.array(self.initial_dist, dtype=float)
        h = np.atleast_1d(np.array(self.thresholds, dtype=float))
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ModelError(f"transition must have shape (A, S, S), got {P.shape}")
        n_actions, n_states, _ = P.shape
        if n_states < 1 or n_actions < 1:
            raise ModelError("need at least one state and one action")
        g = np.array(self.constraint_rewards, dtype=float)
        if g.size == 0:
            g = np.zeros((0, n_states, n_actions))
        if r.shape != (n_states, n_actions):
            raise ModelError(f"reward must have shape {(n_states, n_actions)}, got {r.shape}")
        if g.ndim != 3 or g.shape[1:] != (n_states, n_actions):
            raise ModelError(
                f"constraint_rewards must have shape (I, {n_states}, {n_actions}), got {g.shape}"
            )
        if h.size == 0:
            h = np.zeros(0)
        if h.shape != (g.shape[0],):
            raise ModelError(f"expected {g.shape[0]} thresholds, got {h.shape[0]}")
        if not 0.0 < self.discount < 1.0:
            raise ModelError(f"discount must lie in (0, 1), got {self.discount}")
        for name, arr in (("transition", P), ("reward", r), ("constraint_rewards", g),
                          ("thresholds", h), ("initial_dist", q)):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} contains non-finite entries")
        if np.any(P < 0):
            a, s, t = np.argwhere(P < 0)[0]
            raise ModelError(f"negative transition probability P[{a}][{s}][{t}] = {float(P[a, s, t])}")
        row_err = np.abs(P.sum(axis=2) - 1.0)
        if np.any(row_err > STOCHASTIC_TOL):
            a, s = np.argwhere(row_err > STOCHASTIC_TOL)[0]
            raise ModelError(
                f"transition row P[{a}][{s}] (action {a}, state {s}) sums to "
                f"{float(P[a, s].sum())!r}, expected 1"
            )
        if q.shape != (n_states,) or np.any(q < 0) or abs(q.sum() - 1.0) > STOCHASTIC_TOL:
            raise ModelError("initial_dist must be a probability vector over states")
        for name, arr in (("transition", P), ("reward", r), ("constraint_rewards", g),
                          ("thresholds", h), ("initial_dist", q)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.constraint_rewards.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    # Flat action-major views used by every solver.

    @cached_property
    def reward_vector(self) -> np.ndarray:
        return _frozen(self.reward.T.reshape(-1))

    @cached_property
    def constraint_matrix(self) -> np.ndarray:
        """Row i is g^i flattened action-major, shape (I, S*A)."""
        g = self.constraint_rewards.transpose(0, 2, 1).reshape(self.n_constraints, self.n_pairs)
        return _frozen(g)

    @cached_property
    def flow_matrix(self) -> np.ndarray:
        """The (S, S*A) block matrix [I - gamma P_a^T]_a of the flow equality."""
        eye = np.eye(self.n_states)
        return _frozen(np.hstack([eye - self.discount * Pa.T for Pa in self.transition]))

    def reward_scale(self) -> float:
        """max(1, max|r|, max|g|): the factor mapping rewards into the unit range."""
        scale = max(1.0, float(np.abs(self.reward).max()))
        if self.n_constraints:
            scale = max(scale, float(np.abs(self.constraint_rewards).max()))
        return scale

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.discount,
            "q": self.initial_dist.tolist(),
            "P": self.transition.tolist(),
            "r": self.reward.tolist(),
            "g": self.constraint_rewards.tolist(),
            "h": self.thresholds.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CmdpModel":
        expected = {"n_states", "n_actions", "gamma", "q", "P", "r", "g", "h"}
        unknown = set(data) - expected
        missing = expected - set(data) - {"g", "h"}
        if unknown:
            raise ModelError(f"unknown model keys: {sorted(unknown)}")
        if missing:
            raise ModelError(f"missing model keys: {sorted(missing)}")
        model = cls(
            transition=np.asarray(data["P"], dtype=float),
            reward=np.asarray(data["r"], dtype=float),
            constraint_rewards=np.asarray(data.get("g", []), dtype=float),
            thresholds=np.asarray(data.get("h", []), dtype=float),
            discount=float(data["gamma"]),
            initial_dist=np.asarray(data["q"], dtype=float),
        )
        if (model.n_states, model.n_actions) != (data["n_states"], data["n_actions"]):
            raise ModelError(
                f"declared size ({data['n_states']}, {data['n_actions']}) does not match "
                f"arrays ({model.n_states}, {model.n_actions})"
            )
        return model


def save_model(model: CmdpModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2))


def load_model(path: str | Path) -> CmdpModel:
    """Read a model file (JSON, or YAML when the suffix says so)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ModelError(f"{path}: expected a mapping at top level")
    return CmdpModel.from_dict(data)


@dataclass(frozen=True, eq=False)
class DualVariables:
    mu: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass(frozen=True, eq=False)
class SlaterCertificate:
    slack: float
    witness: np.ndarray = field(repr=False)


def check_occupancy(model: CmdpModel, lam: np.ndarray, tol: float = SIMPLEX_TOL) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (model.n_pairs,):
        raise ValueError(f"occupancy measure must have length {model.n_pairs}, got {lam.shape}")
    if np.any(lam < -tol) or abs(lam.sum() - 1.0) > tol:
        raise ValueError("occupancy measure must be a distribution over state-action pairs")
    return lam


def as_matrix(model: CmdpModel, lam: np.ndarray) -> np.ndarray:
    """Flat action-major vector -> lambda[s, a]."""
    return np.asarray(lam, dtype=float).reshape(model.n_actions, model.n_states).T


def as_flat(matrix: np.ndarray) -> np.ndarray:
    """lambda[s, a] -> flat action-major vector."""
    return np.asarray(matrix, dtype=float).T.reshape(-1)


def occupancy_to_policy(model: CmdpModel, lam: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """pi(a|s) = lambda(s,a) / sum_a' lambda(s,a'); uniform where the marginal vanishes."""
    lam_sa = np.clip(as_matrix(model, lam), 0.0, None)
    marginal = lam_sa.sum(axis=1)
    pi = np.full_like(lam_sa, 1.0 / model.n_actions)
    visited = marginal > tol
    pi[visited] = lam_sa[visited] / marginal[visited, None]
    pi[visited] /= pi[visited].sum(axis=1, keepdims=True)
    return pi


def check_policy(model: CmdpModel, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (model.n_states, model.n_actions):
        raise ValueError(f"policy must have shape {(model.n_states, model.n_actions)}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
        raise ValueError("each policy row must be a probability distribution")
    return pi


def state_transition_matrix(model: CmdpModel, pi: np.ndarray) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P[a][s][s']."""
    return np.einsum("sa,ast->st", pi, model.transition)


def policy_to_occupancy(model: CmdpModel, pi: np.ndarray) -> np.ndarray:
    """Discounted state-action occupancy of a stationary policy.

    Solves (I - gamma P_pi^T) d = (1 - gamma) q for the state marginal d and
    sets lambda(s, a) = d(s) pi(a|s).
    """
    pi = check_policy(model, pi)
    P_pi = state_transition_matrix(model, pi)
    system = np.eye(model.n_states) - model.discount * P_pi.T
    d = np.linalg.solve(system, (1.0 - model.discount) * model.initial_dist)
    d = np.clip(d, 0.0, None)
    return as_flat(d[:, None] * pi)


def value_of_occupancy(model: CmdpModel, lam: np.ndarray) -> tuple[float, np.ndarray]:
    lam = np.asarray(lam, dtype=float)
    return float(model.reward_vector @ lam), model.constraint_matrix @ lam


def bellman_flow_residual(model: CmdpModel, lam: np.ndarray) -> float:
    lam = np.asarray(lam, dtype=float)
    residual = model.flow_matrix @ lam - (1.0 - model.discount) * model.initial_dist
    return float(np.abs(residual).max())


def lagrangian(model: CmdpModel, lam: np.ndarray, duals: DualVariables) -> float:
    lam = np.asarray(lam, dtype=float)
    reward, constraints = value_of_occupancy(model, lam)
    value = reward + float(duals.mu @ (constraints - model.thresholds))
    value += (1.0 - model.discount) * float(model.initial_dist @ duals.v)
    value -= float(lam @ (model.flow_matrix.T @ duals.v))
    return value


def augmented_lagrangian(
    model: CmdpModel,
    lam: np.ndarray,
    lam_hat: np.ndarray,
    duals: DualVariables,
    duals_hat: DualVariables,
    rho: float,
) -> float:
    """Lagrangian plus proximal terms: convex in (mu, v), concave in lambda."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    gap_v = duals.v - duals_hat.v
    gap_mu = duals.mu - duals_hat.mu
    gap_lam = np.asarray(lam, dtype=float) - np.asarray(lam_hat, dtype=float)
    return (
        lagrangian(model, lam, duals)
        + (gap_v @ gap_v + gap_mu @ gap_mu - gap_lam @ gap_lam) / (2.0 * rho)
    )


def dual_bounds(gamma: float, psi: float) -> tuple[float, float]:
    """Radii (||mu||_1, ||v||_inf) bounding the optimal duals for unit-range rewards."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not psi > 0.0:
        raise ValueError(f"Slater slack must be positive, got {psi}")
    return 2.0 / psi, 1.0 / (1.0 - gamma) + 2.0 / ((1.0 - gamma) * psi)


def projection_radii(model: CmdpModel, psi: float) -> tuple[float, float]:
    """Dual radii for ``model``, valid for rewards outside the unit range.

    Rescaling r, g, h by 1/c with c = model.reward_scale() puts the problem in
    the normalized range; mu is invariant under that map while psi and v scale
    by 1/c, so the normalized radii map back as (2c/psi, c/(1-g) + 2c^2/((1-g)psi)).
    """
    c = model.reward_scale()
    mu_radius, v_radius = dual_bounds(model.discount, psi / c)
    return mu_radius, c * v_radius
