"""Command-line entry point: ``crl run`` and ``crl validate``.

On failure a single JSON line ``{"error": kind, "message": ..., "exit_code": n}``
is printed to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cmdp import ModelError
from .config import ConfigError, parse_config
from .experiment import build_model, run_experiment
from .lp import InfeasibleModelError, SlaterConditionError, slater_slack, solve_cmdp_exact

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_INFEASIBLE = 4
EXIT_SLATER = 5

CONFIG_HELP = """\
config file (YAML, or JSON by suffix); unknown keys are rejected. Defaults:
  queue:   L=4, service_levels=[0.2,0.3,0.5,0.6,0.8], flow_levels=[0.1,0.3,0.5,0.9,0],
           h1=0, h2=0, gamma=0.9, action_mode=product,
           holding_reward={intercept: 5, slope: -1}, service_reward={intercept: 3, slope: -10},
           flow_reward={intercept: -3, slope: 10}
  model:   path=<JSON/YAML CMDP file> (instead of queue)
  flow:    rho=1, step=1e-3 (< rho/2), horizon=1e4, tol=1e-7, record_every=10000
  sgda:    rho=1, a0=0.5, n0=10, kappa=0.6 (0.5 < kappa <= 1), budget=2000000,
           stride=10000 (must divide budget), literal_hat_update=false, sweep=[]
  output:  dir=results
  solver:  all;  seed: 1
"""


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crl",
        description="Constrained RL by regularized saddle-flow dynamics on occupancy measures.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=CONFIG_HELP,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run solvers and write CSV artifacts",
                         formatter_class=argparse.RawDescriptionHelpFormatter, epilog=CONFIG_HELP)
    run.add_argument("--config", required=True, type=Path, help="experiment config file")
    run.add_argument("--solver", choices=["exact", "flow", "sgda", "demo-bilinear", "all"],
                     help="override config 'solver' (default: all)")
    run.add_argument("--seed", type=int, help="override config 'seed' (default: 1)")
    run.add_argument("--out", type=Path, help="override config 'output.dir' (default: results)")
    run.add_argument("--quiet", action="store_true", help="suppress progress messages")

    validate = sub.add_parser("validate", help="check a config file and its model",
                              formatter_class=argparse.RawDescriptionHelpFormatter,
                              epilog=CONFIG_HELP)
    validate.add_argument("--config", required=True, type=Path, help="experiment config file")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def _load(args):
    config = parse_config(args.config)
    overrides = {}
    if getattr(args, "solver", None):
        overrides["solver"] = args.solver
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("seed: must be nonnegative")
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["output"] = config.output.model_copy(update={"dir": args.out})
    return config.model_copy(update=overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = _load(args)
        if args.command == "validate":
            if config.solver != "demo-bilinear":
                model = build_model(config)
                solve_cmdp_exact(model)  # infeasibility is reported before the Slater check
                psi = slater_slack(model).slack
                print(json.dumps({"valid": True, "n_states": model.n_states,
                                  "n_actions": model.n_actions,
                                  "n_constraints": model.n_constraints, "slater_slack": psi}))
            else:
                print(json.dumps({"valid": True}))
            return EXIT_OK
        log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr))
        result = run_experiment(config, log)
        for path in result.files:
            print(path)
        return EXIT_OK
    except ConfigError as err:
        return _fail("config", str(err), EXIT_CONFIG)
    except ModelError as err:
        return _fail("model", str(err), EXIT_MODEL)
    except InfeasibleModelError as err:
        return _fail("infeasible", str(err), EXIT_INFEASIBLE)
    except SlaterConditionError as err:
        return _fail("slater", str(err), EXIT_SLATER)
    except Exception as err:  # noqa: BLE001 - last-resort machine-readable report
        return _fail("internal", f"{type(err).__name__}: {err}", EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
