"""Model-free projected stochastic gradient descent-ascent on the C-RL Lagrangian.

The learner sees the environment only through a generative model: initial
state draws, next-state draws and reward look-ups. Each iteration draws one
triple (s0, (s, a) ~ xi, s') and uses it for all six block updates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import _kernels
from .cmdp import CmdpModel, DualVariables, bellman_flow_residual
from .flow import CrlSaddleState, CrlSets, projected_drift_norm, reference_gaps
from .geometry import project

CHUNK = 1 << 16


class GenerativeModel(Protocol):
    n_states: int
    n_actions: int
    n_constraints: int
    discount: float
    thresholds: np.ndarray

    def sample_initial(self) -> int: ...

    def sample_transition(self, s: int, a: int) -> int: ...

    def rewards(self, s: int, a: int) -> tuple[float, ...]: ...


@dataclass(frozen=True)
class StepSchedule:
    """alpha_n = a0 / (n0 + n)^kappa with kappa in (0.5, 1]."""

    a0: float = 0.5
    n0: float = 10.0
    kappa: float = 0.6

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValueError("a0 must be positive")
        if not self.n0 >= 1:
            raise ValueError("n0 must be at least 1")
        if not 0.5 < self.kappa <= 1.0:
            raise ValueError(
                "kappa must lie in (0.5, 1] so that steps are not summable "
                "but their squares are"
            )

    def alpha(self, n):
        return self.a0 / (self.n0 + np.asarray(n, dtype=float)) ** self.kappa


def uniform_xi(n_states: int, n_actions: int) -> np.ndarray:
    return np.full(n_states * n_actions, 1.0 / (n_states * n_actions))


def check_xi(xi: np.ndarray, n_pairs: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (n_pairs,) or np.any(xi < 0) or abs(xi.sum() - 1.0) > 1e-12:
        raise ValueError(f"xi must be a probability vector of length {n_pairs}")
    return xi


@dataclass(eq=False)
class SgdaState:
    blocks: CrlSaddleState
    n: int = 0
    seed: int | None = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)


@dataclass(frozen=True)
class Sample:
    """One draw: initial state, action-major pair index, next state."""

    s0: int
    pair: int
    s_next: int


def reward_table(gen: GenerativeModel) -> tuple[np.ndarray, np.ndarray]:
    """Reward vector and constraint matrix (action-major) gathered by look-up."""
    S, A, I = gen.n_states, gen.n_actions, gen.n_constraints
    r = np.zeros(S * A)
    G = np.zeros((I, S * A))
    for a in range(A):
        for s in range(S):
            values = gen.rewards(s, a)
            r[a * S + s] = values[0]
            G[:, a * S + s] = values[1:]
    return r, G


def draw_sample(gen: GenerativeModel, xi: np.ndarray, rng: np.random.Generator) -> Sample:
    s0 = gen.sample_initial()
    pair = int(rng.choice(xi.size, p=xi))
    s, a = pair % gen.n_states, pair // gen.n_states
    return Sample(s0, pair, gen.sample_transition(s, a))


def draw_samples(gen: GenerativeModel, xi: np.ndarray, rng: np.random.Generator,
                 size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized draws (s0, pairs, s_next), falling back to scalar calls."""
    S = gen.n_states
    pairs = rng.choice(xi.size, size=size, p=xi)
    s, a = pairs % S, pairs // S
    if hasattr(gen, "sample_initial_batch") and hasattr(gen, "sample_transition_batch"):
        s0 = gen.sample_initial_batch(size)
        s_next = gen.sample_transition_batch(s, a)
    else:
        s0 = np.array([gen.sample_initial() for _ in range(size)])
        s_next = np.array([gen.sample_transition(int(x), int(b)) for x, b in zip(s, a)])
    return s0.astype(np.int64), pairs.astype(np.int64), s_next.astype(np.int64)


# ---------------------------------------------------------------------------
# Lagrangian estimator


def estimate_lagrangian(gen: GenerativeModel, xi: np.ndarray, lam: np.ndarray,
                        duals: DualVariables, rng: np.random.Generator) -> float:
    """One importance-weighted draw whose expectation is the exact Lagrangian."""
    sample = draw_sample(gen, xi, rng)
    S, gamma = gen.n_states, gen.discount
    mu, v = duals.mu, duals.v
    value = (1.0 - gamma) * v[sample.s0] - float(mu @ gen.thresholds)
    p = xi[sample.pair]
    if p > 0:
        s = sample.pair % S
        r, *g = gen.rewards(s, sample.pair // S)
        td = r - v[s] + gamma * v[sample.s_next] + float(mu @ np.asarray(g))
        value += lam[sample.pair] * td / p
    return value


def estimate_lagrangian_batch(gen: GenerativeModel, xi: np.ndarray, lam: np.ndarray,
                              duals: DualVariables, rng: np.random.Generator,
                              size: int) -> np.ndarray:
    """``size`` independent estimator draws, vectorized."""
    s0, pairs, s_next = draw_samples(gen, xi, rng, size)
    r, G = reward_table(gen)
    S, gamma = gen.n_states, gen.discount
    mu, v = duals.mu, duals.v
    s = pairs % S
    td = r[pairs] - v[s] + gamma * v[s_next] + mu @ G[:, pairs]
    p = xi[pairs]
    weight = np.divide(lam[pairs], p, out=np.zeros(size), where=p > 0)
    return (1.0 - gamma) * v[s0] - float(mu @ gen.thresholds) + weight * td


# ---------------------------------------------------------------------------
# One SGDA step (reference path)


def sgda_increments(r: np.ndarray, G: np.ndarray, thresholds: np.ndarray, gamma: float,
                    xi: np.ndarray, state: CrlSaddleState, sample: Sample, alpha: float,
                    rho: float, literal_hat: bool = False) -> CrlSaddleState:
    """Pre-projection increments of the six blocks for one sample.

    Their expectation over the sample equals alpha times the deterministic
    saddle-flow drift at ``state``.
    """
    lam, lam_hat, mu, mu_hat, v, v_hat = state.blocks()
    S = v.size
    j = sample.pair
    s = j % S
    inv_rho = 1.0 / rho
    if xi[j] > 0:
        w = lam[j] / xi[j]
        td = (r[j] - v[s] + gamma * v[sample.s_next] + mu @ G[:, j]) / xi[j]
    else:
        w = td = 0.0
    d_lam = -alpha * inv_rho * (lam - lam_hat)
    d_lam[j] += alpha * td
    hat_step = inv_rho if literal_hat else alpha * inv_rho
    d_lam_hat = hat_step * (lam - lam_hat)
    d_mu = alpha * (thresholds - w * G[:, j] - inv_rho * (mu - mu_hat))
    d_v_det = -inv_rho * (v - v_hat)
    d_v_det[s] += w
    d_v_det[sample.s_next] -= gamma * w
    d_v_det[sample.s0] -= 1.0 - gamma
    return CrlSaddleState(
        lam=d_lam, lam_hat=d_lam_hat,
        mu=d_mu, mu_hat=alpha * inv_rho * (mu - mu_hat),
        v=alpha * d_v_det, v_hat=alpha * inv_rho * (v - v_hat),
    )


def sgda_step(gen: GenerativeModel, xi: np.ndarray, state: SgdaState, schedule: StepSchedule,
              rho: float, sets: CrlSets, sample: Sample | None = None,
              literal_hat: bool = False) -> SgdaState:
    """Advance ``state`` by one projected SGDA iteration (in place) and return it.

    Pass ``sample`` to replay a fixed draw; otherwise one is drawn from the
    generative model and the state's generator.
    """
    if sample is None:
        sample = draw_sample(gen, xi, state.rng)
    r, G = reward_table(gen)
    alpha = float(schedule.alpha(state.n))
    inc = sgda_increments(r, G, np.asarray(gen.thresholds), gen.discount, xi, state.blocks,
                          sample, alpha, rho, literal_hat)
    state.blocks = CrlSaddleState(*(
        project(k, b + d) for k, b, d in zip(sets.per_block(), state.blocks.blocks(), inc.blocks())
    ))
    state.n += 1
    return state


# ---------------------------------------------------------------------------
# Full runs


@dataclass(frozen=True, eq=False)
class SgdaRecord:
    """Snapshots taken every ``stride`` iterations; row i is the state after steps[i]."""

    steps: np.ndarray
    alpha: np.ndarray
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


@dataclass(frozen=True, eq=False)
class SgdaResult:
    state: SgdaState
    record: SgdaRecord
    set_failures: int

    def metrics(self, model: CmdpModel, sets: CrlSets, rho: float, reference=None) -> list[dict]:
        """Diagnostic rows evaluated exactly on the true model."""
        return sgda_metrics(self.record, model, sets, rho, reference)


def sgda_metrics(record: SgdaRecord, model: CmdpModel, sets: CrlSets, rho: float,
                 reference=None) -> list[dict]:
    rows = []
    r, G = model.reward_vector, model.constraint_matrix
    for i in range(len(record)):
        lam = record.lam[i]
        row = {
            "step": int(record.steps[i]),
            "alpha": float(record.alpha[i]),
            "objective_exact": float(r @ lam),
        }
        for j, value in enumerate(G @ lam, start=1):
            row[f"constraint_{j}_exact"] = float(value)
        gaps = reference_gaps(reference, lam, record.mu[i], record.v[i]) if reference else {}
        row["lambda_gap_inf"] = gaps.get("lambda_gap_inf", math.nan)
        row["mu_norm"] = float(np.abs(record.mu[i]).sum())
        row["v_norm"] = float(np.abs(record.v[i]).max())
        row["mu_gap_inf"] = gaps.get("mu_gap_inf", math.nan)
        row["v_gap_mod_shift"] = gaps.get("v_gap_mod_shift", math.nan)
        row["flow_residual"] = bellman_flow_residual(model, lam)
        row["drift_norm"] = projected_drift_norm(model, record.state(i), sets,
                                                 float(record.alpha[i]), rho)
        rows.append(row)
    return rows


def run_sgda(gen: GenerativeModel, xi: np.ndarray, state0: SgdaState, schedule: StepSchedule,
             rho: float, sets: CrlSets, budget: int, stride: int = 1000,
             literal_hat: bool = False, check_sets: bool = False) -> SgdaResult:
    """Run ``budget`` iterations from ``state0`` (which is advanced in place).

    Samples are drawn in chunks and consumed by the compiled kernel; the
    result is a deterministic function of the generator states.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if not rho > 0:
        raise ValueError("rho must be positive")
    xi = check_xi(xi, gen.n_states * gen.n_actions)
    if not sets.contains(state0.blocks):
        raise ValueError("initial state must lie in Delta x U x V")
    r, G = reward_table(gen)
    h = np.ascontiguousarray(gen.thresholds, dtype=float)
    blocks = state0.blocks.copy()
    n, S, I = r.size, gen.n_states, gen.n_constraints
    first = state0.n
    n_rec = (first + budget) // stride - first // stride
    rec = {
        "step": np.zeros(n_rec, dtype=np.int64),
        "lam": np.zeros((n_rec, n)), "lam_hat": np.zeros((n_rec, n)),
        "mu": np.zeros((n_rec, I)), "mu_hat": np.zeros((n_rec, I)),
        "v": np.zeros((n_rec, S)), "v_hat": np.zeros((n_rec, S)),
    }
    written = failures = 0
    done = 0
    while done < budget:
        size = min(CHUNK, budget - done)
        s0, pairs, s_next = draw_samples(gen, xi, state0.rng, size)
        count, fails = _kernels.sgda_run(
            s0, pairs, s_next, r, G, h, float(gen.discount), xi, *blocks.blocks(),
            float(rho), float(schedule.a0), float(schedule.n0), float(schedule.kappa),
            first + done, sets.multipliers.radius, sets.values.lower, sets.values.upper,
            literal_hat, stride, *(rec[k][written:] for k in
                                   ("step", "lam", "lam_hat", "mu", "mu_hat", "v", "v_hat")),
            check_sets,
        )
        written += count
        failures += fails
        done += size
    state0.blocks = blocks
    state0.n = first + budget
    record = SgdaRecord(
        steps=rec["step"],
        # alpha at the last iteration taken before each snapshot
        alpha=schedule.alpha(rec["step"] - 1) if n_rec else np.zeros(0),
        **{k: rec[k] for k in ("lam", "lam_hat", "mu", "mu_hat", "v", "v_hat")},
    )
    return SgdaResult(state0, record, failures)


def seed_sweep(make_gen, xi: np.ndarray, make_state, schedule: StepSchedule, rho: float,
               sets: CrlSets, budget: int, seeds, stride: int = 1000, literal_hat: bool = False,
               check_sets: bool = False, workers: int | None = None) -> dict[int, SgdaResult]:
    """Independent runs, one per seed, fanned out over threads.

    ``make_gen(seed)`` and ``make_state(seed)`` must return fresh objects so
    no generator is shared between runs.
    """
    def one(seed):
        return run_sgda(make_gen(seed), xi, make_state(seed), schedule, rho, sets, budget,
                        stride, literal_hat, check_sets)

    seeds = list(seeds)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, seeds))
    return dict(zip(seeds, results))
