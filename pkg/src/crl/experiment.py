"""End-to-end pipeline: build model, exact LP, deterministic flow, SGDA, CSV artifacts.

Every CSV starts with a ``# schema: <id>`` comment line followed by a header
row. Files are written to a temporary sibling and renamed into place, so a
failed run never leaves a partial file behind. Floats are written with
``repr`` so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cmdp import CmdpModel, bellman_flow_residual, load_model
from .config import ExperimentConfig
from .flow import (
    CrlSaddleState,
    FlowConfig,
    classical_primal_dual_demo,
    crl_integrate,
    crl_sets,
    reference_gaps,
    regularized_bilinear_demo,
)
from .lp import CmdpSolution, slater_slack, solve_cmdp_exact
from .queue import TabularGenerativeModel, build_queue_cmdp, queue_generative_model
from .sgda import SgdaState, StepSchedule, seed_sweep, uniform_xi

SCHEMA_VERSION = 1


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return "" if value is None else str(value)


@contextmanager
def atomic_csv(path: Path, schema: str, columns: list[str]):
    """Yield a row writer; the file appears at ``path`` only if the block succeeds."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", buffering=1) as handle:
            handle.write(f"# schema: crl.{schema}/{SCHEMA_VERSION}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)

            def write(row: dict):
                writer.writerow([_fmt(row.get(c)) for c in columns])
                handle.flush()

            yield write
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path: str | Path) -> list[dict]:
    """Rows of an artifact CSV as dicts of strings (schema line skipped)."""
    with open(path, newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_rows(path: Path, schema: str, rows: list[dict], columns: list[str] | None = None):
    columns = columns or (list(rows[0]) if rows else [])
    with atomic_csv(path, schema, columns) as write:
        for row in rows:
            write(row)


# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    files: list[Path] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)


def build_model(config: ExperimentConfig) -> CmdpModel:
    if config.model is not None:
        return load_model(config.model.path)
    return build_queue_cmdp(config.queue_or_default().to_queue_config())


def make_generative_model(config: ExperimentConfig, model: CmdpModel, seed) -> TabularGenerativeModel:
    if config.model is not None:
        return TabularGenerativeModel(model, seed)
    return queue_generative_model(config.queue_or_default().to_queue_config(), seed)


def run_seeds(seed: int):
    """Independent streams for the generative model and the learner's pair draws."""
    gen_seed, learner_seed = np.random.SeedSequence(seed).spawn(2)
    return gen_seed, learner_seed


def summary_row(solver: str, seed, model: CmdpModel, reference: CmdpSolution,
                lam, mu, v) -> dict:
    lam = np.asarray(lam, dtype=float)
    objective = float(model.reward_vector @ lam)
    row = {
        "solver": solver,
        "seed": seed,
        "objective": objective,
        "lp_objective": reference.objective,
        "objective_gap": objective - reference.objective,
    }
    constraints = model.constraint_matrix @ lam
    for i, (value, h) in enumerate(zip(constraints, model.thresholds), start=1):
        row[f"constraint_{i}"] = float(value)
        row[f"violation_{i}"] = max(0.0, float(h - value))
    row["flow_residual"] = bellman_flow_residual(model, lam)
    row.update(reference_gaps(reference, lam, mu, v))
    row["lp_unique"] = reference.unique
    return row


def _lp_rows(model: CmdpModel, solution: CmdpSolution) -> list[dict]:
    S = model.n_states
    rows = [{"quantity": "objective", "value": solution.objective}]
    for j, x in enumerate(solution.lam):
        rows.append({"quantity": "lambda", "state": j % S, "action": j // S, "value": x})
    for i, x in enumerate(solution.mu, start=1):
        rows.append({"quantity": "mu", "constraint": i, "value": x})
    for s, x in enumerate(solution.v):
        rows.append({"quantity": "v", "state": s, "value": x})
    for i, (x, h) in enumerate(zip(model.constraint_matrix @ solution.lam, model.thresholds),
                               start=1):
        rows.append({"quantity": "constraint_value", "constraint": i, "value": float(x)})
        rows.append({"quantity": "threshold", "constraint": i, "value": float(h)})
    return rows


def run_bilinear_demo(out: Path, result: ExperimentResult) -> None:
    classical = classical_primal_dual_demo()
    rows = [{"step": k, "x": x, "y": y, "radius": math.hypot(x, y)}
            for k, (x, y) in enumerate(classical)]
    path = out / "bilinear_classical.csv"
    write_rows(path, "bilinear_classical", rows)
    result.files.append(path)

    final, trajectory, converged = regularized_bilinear_demo()
    rows = []
    for t, state in trajectory:
        x, x_hat, y, y_hat = (float(c[0]) for c in state.as_tuple())
        rows.append({"time": t, "x": x, "x_hat": x_hat, "y": y, "y_hat": y_hat,
                     "radius": math.hypot(x, y)})
    path = out / "bilinear_regularized.csv"
    write_rows(path, "bilinear_regularized", rows)
    result.files.append(path)
    result.summary.append({
        "solver": "demo-bilinear",
        "classical_initial_radius": float(np.hypot(*classical[0])),
        "classical_final_radius": float(np.hypot(*classical[-1])),
        "regularized_final_radius": math.hypot(float(final.x[0]), float(final.y[0])),
        "regularized_converged": converged,
    })


def run_experiment(config: ExperimentConfig, log=None) -> ExperimentResult:
    """Run the selected solvers and write their artifacts under config.output.dir.

    Raises ModelError, InfeasibleModelError or SlaterConditionError for
    unusable models; nothing is written in that case.
    """
    log = log or (lambda message: None)
    out = Path(config.output.dir)
    result = ExperimentResult()
    solver = config.solver

    if solver == "demo-bilinear":
        run_bilinear_demo(out, result)
        write_rows(out / "summary.csv", "summary", result.summary)
        result.files.append(out / "summary.csv")
        return result

    model = build_model(config)
    reference = solve_cmdp_exact(model)
    log(f"LP objective {reference.objective!r} ({reference.lp.iterations} pivots)")
    sets = None
    if solver in ("flow", "sgda", "all"):
        sets = crl_sets(model, slater_slack(model).slack)

    path = out / "lp_solution.csv"
    write_rows(path, "lp_solution", _lp_rows(model, reference),
               ["quantity", "state", "action", "constraint", "value"])
    result.files.append(path)
    result.summary.append(summary_row("exact", None, model, reference, reference.lam,
                                      reference.mu, reference.v))

    if solver in ("flow", "all"):
        fc = config.flow
        flow_config = FlowConfig(rho=fc.rho, step=fc.step, horizon=fc.horizon, tol=fc.tol,
                                 record_every=fc.record_every)
        log(f"integrating flow for up to {flow_config.max_steps} steps")
        final, trajectory, converged = crl_integrate(model, CrlSaddleState.initial(model), sets,
                                                     flow_config)
        path = out / "flow_trajectory.csv"
        write_rows(path, "flow_trajectory", trajectory.rows(model, reference))
        result.files.append(path)
        row = summary_row("flow", None, model, reference, final.lam, final.mu, final.v)
        row["converged"] = converged
        result.summary.append(row)

    if solver in ("sgda", "all"):
        sc = config.sgda
        schedule = StepSchedule(sc.a0, sc.n0, sc.kappa)
        xi = uniform_xi(model.n_states, model.n_actions)
        seeds = [config.seed] + [s for s in sc.sweep if s != config.seed]
        log(f"running SGDA for {sc.budget} iterations on seeds {seeds}")

        def make_gen(seed):
            return make_generative_model(config, model, run_seeds(seed)[0])

        def make_state(seed):
            return SgdaState(CrlSaddleState.initial(model), seed=run_seeds(seed)[1])

        runs = seed_sweep(make_gen, xi, make_state, schedule, sc.rho, sets, sc.budget, seeds,
                          stride=sc.stride, literal_hat=sc.literal_hat_update)
        rows = []
        for seed in seeds:
            for row in runs[seed].metrics(model, sets, sc.rho, reference):
                rows.append({"seed": seed, **row})
        path = out / "sgda_metrics.csv"
        columns = None if rows else ["seed", "step"]
        write_rows(path, "sgda_metrics", rows, columns)
        result.files.append(path)
        for seed in seeds:
            b = runs[seed].state.blocks
            result.summary.append(summary_row("sgda", seed, model, reference, b.lam, b.mu, b.v))

    columns: list[str] = []
    for row in result.summary:
        columns += [c for c in row if c not in columns]
    path = out / "summary.csv"
    write_rows(path, "summary", result.summary, columns)
    result.files.append(path)
    return result
