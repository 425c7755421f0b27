"""Exact occupancy-measure LP oracle built on a dense two-phase tableau simplex."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cmdp import CmdpModel, SlaterCertificate, policy_to_occupancy

PIVOT_TOL = 1e-9
MAX_ITERATIONS = 1_000_000


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class IterationLimitError(RuntimeError):
    pass


class InfeasibleModelError(RuntimeError):
    """The CMDP admits no occupancy measure meeting its thresholds."""


class SlaterConditionError(RuntimeError):
    """The constraints are feasible but not strictly feasible (psi <= 0)."""

    def __init__(self, psi: float, witness: np.ndarray):
        super().__init__(f"Slater condition fails: best uniform slack is {psi:.3e}")
        self.psi = psi
        self.witness = witness


@dataclass(frozen=True, eq=False)
class StandardFormLp:
    """maximize c @ x subject to A @ x = b, x >= 0."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if A.shape != (b.size, c.size):
            raise ValueError(f"inconsistent LP dimensions A{A.shape}, b({b.size}), c({c.size})")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    x_opt: np.ndarray | None = None
    objective: float | None = None
    dual_values: np.ndarray | None = None
    basis: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0

    @property
    def unique_primal(self) -> bool:
        """Strict dual nondegeneracy: every nonbasic reduced cost is negative."""
        if self.status is not LpStatus.OPTIMAL:
            return False
        nonbasic = np.ones(self.reduced_costs.size, dtype=bool)
        nonbasic[self.basis[self.basis < nonbasic.size]] = False
        return bool(np.all(self.reduced_costs[nonbasic] < -PIVOT_TOL))


class TableauSimplex:
    """Single-use dense tableau; Bland's rule for both entering and leaving choices.

    Artificial columns stay in the tableau for the whole solve so the final
    basis inverse (and hence the duals) can be read off them.
    """

    def __init__(self, lp: StandardFormLp, max_iterations: int = MAX_ITERATIONS):
        self.lp = lp
        self.max_iterations = max_iterations
        m, n = lp.A.shape
        self.m, self.n = m, n
        self.signs = np.where(lp.b < 0, -1.0, 1.0)
        self.T = np.zeros((m, n + m + 1))
        self.T[:, :n] = lp.A * self.signs[:, None]
        self.T[:, n:n + m] = np.eye(m)
        self.T[:, -1] = lp.b * self.signs
        self.basis = np.arange(n, n + m)
        self.iterations = 0

    def _pivot(self, row: int, col: int) -> None:
        T = self.T
        T[row] /= T[row, col]
        others = np.arange(self.m) != row
        T[others] -= np.outer(T[others, col], T[row])
        T[others, col] = 0.0
        T[row, col] = 1.0
        self.basis[row] = col

    def _reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        # cost covers structural + artificial columns
        return cost - cost[self.basis] @ self.T[:, :-1]

    def _run(self, cost: np.ndarray, eligible: np.ndarray) -> LpStatus:
        while True:
            if self.iterations >= self.max_iterations:
                raise IterationLimitError(
                    f"simplex exceeded {self.max_iterations} iterations"
                )
            d = self._reduced_costs(cost)
            candidates = np.nonzero(eligible & (d > PIVOT_TOL))[0]
            if candidates.size == 0:
                return LpStatus.OPTIMAL
            col = candidates[0]
            column = self.T[:, col]
            rows = np.nonzero(column > PIVOT_TOL)[0]
            if rows.size == 0:
                return LpStatus.UNBOUNDED
            ratios = self.T[rows, -1] / column[rows]
            best = ratios.min()
            tied = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
            row = tied[np.argmin(self.basis[tied])]
            self._pivot(row, col)
            self.iterations += 1

    def solve(self) -> LpSolution:
        m, n = self.m, self.n
        structural = np.zeros(n + m, dtype=bool)
        structural[:n] = True

        # Phase 1: maximize -sum(artificials).
        phase1 = np.zeros(n + m)
        phase1[n:] = -1.0
        self._run(phase1, np.ones(n + m, dtype=bool))
        infeasibility = -phase1[self.basis] @ self.T[:, -1]
        if infeasibility > PIVOT_TOL * max(1.0, np.abs(self.T[:, -1]).max()):
            return LpSolution(LpStatus.INFEASIBLE, iterations=self.iterations)

        # Drive zero-level artificials out of the basis; rows where that is
        # impossible are redundant and keep their artificial at zero.
        for row in range(m):
            if self.basis[row] >= n:
                nonzero = np.nonzero(np.abs(self.T[row, :n]) > PIVOT_TOL)[0]
                if nonzero.size:
                    self._pivot(row, nonzero[0])
        self.T[:, -1] = np.where(np.abs(self.T[:, -1]) < 1e-14, 0.0, self.T[:, -1])

        # Phase 2 on the true objective; artificials may never re-enter.
        phase2 = np.zeros(n + m)
        phase2[:n] = self.lp.c
        status = self._run(phase2, structural)
        if status is LpStatus.UNBOUNDED:
            return LpSolution(LpStatus.UNBOUNDED, iterations=self.iterations)

        x = np.zeros(n + m)
        x[self.basis] = self.T[:, -1]
        x = x[:n]
        # y^T = c_B^T B^{-1}; B^{-1} sits in the artificial block of the sign-flipped rows.
        y = (phase2[self.basis] @ self.T[:, n:n + m]) * self.signs
        reduced = self.lp.c - self.lp.A.T @ y
        return LpSolution(
            LpStatus.OPTIMAL,
            x_opt=x,
            objective=float(self.lp.c @ x),
            dual_values=y,
            basis=self.basis.copy(),
            reduced_costs=reduced,
            iterations=self.iterations,
        )


def simplex_solve(lp: StandardFormLp, max_iterations: int = MAX_ITERATIONS) -> LpSolution:
    return TableauSimplex(lp, max_iterations).solve()


# ---------------------------------------------------------------------------
# The CMDP linear program


def build_cmdp_lp(model: CmdpModel) -> StandardFormLp:
    """Occupancy LP in standard form.

    Columns: lambda (action-major) then one surplus per constraint.
    Rows: flow equalities, constraint rows g_i . lambda - surplus_i = h_i, and
    the normalization sum(lambda) = 1 (implied by the flow rows, kept for
    robustness).
    """
    S, n, I = model.n_states, model.n_pairs, model.n_constraints
    A = np.zeros((S + I + 1, n + I))
    A[:S, :n] = model.flow_matrix
    A[S:S + I, :n] = model.constraint_matrix
    A[S:S + I, n:] = -np.eye(I)
    A[-1, :n] = 1.0
    b = np.concatenate([(1.0 - model.discount) * model.initial_dist, model.thresholds, [1.0]])
    c = np.concatenate([model.reward_vector, np.zeros(I)])
    return StandardFormLp(A, b, c)


@dataclass(frozen=True, eq=False)
class CmdpSolution:
    lam: np.ndarray
    objective: float
    mu: np.ndarray
    v: np.ndarray
    lp: LpSolution

    @property
    def unique(self) -> bool:
        return self.lp.unique_primal


def _normalize(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def solve_cmdp_exact(model: CmdpModel) -> CmdpSolution:
    """Optimal occupancy measure with the multipliers (mu*, v*).

    The normalization row's multiplier is folded into v by the shift
    v -> v + eta/(1-gamma) * 1, which leaves the Lagrangian's saddle value
    unchanged and yields the representative with max_j [r + G^T mu - F^T v]_j = 0.
    """
    lp = build_cmdp_lp(model)
    solution = simplex_solve(lp)
    if solution.status is LpStatus.INFEASIBLE:
        raise InfeasibleModelError("no occupancy measure satisfies the constraints")
    if solution.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"occupancy LP returned {solution.status.value}")
    S, n, I = model.n_states, model.n_pairs, model.n_constraints
    lam = _normalize(solution.x_opt[:n])
    y = solution.dual_values
    v = y[:S].copy()
    mu = np.clip(-y[S:S + I], 0.0, None)
    eta = y[-1]
    v += eta / (1.0 - model.discount)
    return CmdpSolution(lam=lam, objective=float(model.reward_vector @ lam), mu=mu, v=v,
                        lp=solution)


def slater_slack(model: CmdpModel, tol: float = 1e-9) -> SlaterCertificate:
    """Largest psi with g_i . lambda >= h_i + psi for all i over valid occupancies.

    With no constraints the slack is +inf and the witness is the occupancy of
    the uniform policy.
    """
    S, n, I = model.n_states, model.n_pairs, model.n_constraints
    if I == 0:
        uniform = np.full((S, model.n_actions), 1.0 / model.n_actions)
        return SlaterCertificate(np.inf, policy_to_occupancy(model, uniform))
    # columns: lambda, psi+, psi-, surplus
    A = np.zeros((S + I + 1, n + 2 + I))
    A[:S, :n] = model.flow_matrix
    A[S:S + I, :n] = model.constraint_matrix
    A[S:S + I, n] = -1.0
    A[S:S + I, n + 1] = 1.0
    A[S:S + I, n + 2:] = -np.eye(I)
    A[-1, :n] = 1.0
    b = np.concatenate([(1.0 - model.discount) * model.initial_dist, model.thresholds, [1.0]])
    c = np.zeros(n + 2 + I)
    c[n], c[n + 1] = 1.0, -1.0
    solution = simplex_solve(StandardFormLp(A, b, c))
    if solution.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"Slater LP returned {solution.status.value}")
    psi = solution.objective
    witness = _normalize(solution.x_opt[:n])
    if psi <= tol:
        raise SlaterConditionError(psi, witness)
    return SlaterCertificate(psi, witness)
