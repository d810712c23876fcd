"""Command-line interface: ``vartd <command> [options]``.

Every command prints a JSON document on stdout. With ``--out DIR`` the same
document (plus per-state CSV tables where they make sense) is written to
``DIR``. Failures exit nonzero with ``{"error": kind, "message": ...}`` on
stderr.

Options may also come from a JSON ``--config`` file; flags win over the file.
Recognised config keys: ``model``, ``policy``, ``features``, ``lambda``,
``episodes``, ``seed``, ``start_state``, ``max_steps``, ``trajectories``,
``schedule``, ``constraints``, ``solver``, ``source``, ``thresholds``,
``result`` and ``benchmark``. ``model`` and ``features`` may be file paths or
inline objects.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .bench import run_chain_benchmark, run_maze_benchmark
from .constrained import IterationConfig, build_constraints, constrained_solve, sampled_system
from .estimators import LstdAccumulator, StepSchedule, lstd_lambda, td0
from .exact import diagnostics, projected_solution, solve_true
from .exceptions import StageError, StructuralError, VarTDError
from .features import EvalResult, from_spec, tabular
from .mdp import ActionMdp, compose, model_from_dict, validate
from .report import risk_report
from .simulator import read_trajectory_log, simulate, write_trajectory_log

EXIT_FAILURE = 2
EXIT_INVALID = 1

CLI_KEYS = {
    "model", "policy", "features", "lambda", "episodes", "seed", "start_state",
    "max_steps", "trajectories", "schedule", "constraints", "solver", "source",
    "thresholds", "result", "benchmark",
}


class UsageError(VarTDError, ValueError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path!r} is not valid JSON: {exc}") from None


def _maybe_file(value, what):
    return _load_json(value, what) if isinstance(value, str) else value


class Context:
    """Merged view of ``--config`` and command-line flags."""

    def __init__(self, args):
        self.args = args
        self.config = _load_json(args.config, "config") if args.config else {}
        if not isinstance(self.config, dict):
            raise UsageError("config file must hold a JSON object")

    def get(self, key, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        return self.config.get(key, default)

    @property
    def seed(self):
        seed = int(self.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        return seed

    def lam(self, default):
        lam = self.get("lambda", default)
        return float(lam)

    def chain(self, check=True):
        raw = self.get("model")
        if raw is None:
            raise UsageError("no model given (use --model or the 'model' config key)")
        model = model_from_dict(_maybe_file(raw, "model file"), check=check)
        if isinstance(model, ActionMdp):
            policy = self.config.get("policy")
            if policy is None:
                raise UsageError("an action model needs a 'policy' in the config")
            model = compose(model, policy)
        return model

    def features(self, n):
        raw = self.get("features")
        if raw is None:
            return tabular(n)
        feats = from_spec(_maybe_file(raw, "feature file"), n)
        if feats.n != n:
            raise StructuralError(f"features have {feats.n} rows but the model has {n} states")
        return feats

    def trajectories(self, chain):
        path = self.get("trajectories")
        if path is not None:
            return read_trajectory_log(path, chain.r)
        n_eps = int(self.get("episodes", 1000))
        kwargs = {}
        if self.get("max_steps") is not None:
            kwargs["max_steps"] = int(self.get("max_steps"))
        return simulate(chain, n_eps, self.seed, self.get("start_state"), **kwargs)

    def solver(self):
        cfg = dict(self.config.get("solver", {}))
        if self.args.gamma is not None:
            cfg["gamma"] = self.args.gamma
        if "max_iters" in cfg:
            cfg["max_iters"] = int(cfg["max_iters"])
        try:
            return IterationConfig(**cfg)
        except TypeError as exc:
            raise UsageError(f"bad solver config: {exc}") from None


def _states_csv(result, truth=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["state", "J", "M", "V"]
    if truth is not None:
        header += ["J_true", "M_true", "V_true"]
    w.writerow(header)
    V = result.V
    for x in range(result.J.shape[0]):
        row = [x, repr(float(result.J[x])), repr(float(result.M[x])), repr(float(V[x]))]
        if truth is not None:
            row += [repr(float(truth.J[x])), repr(float(truth.M[x])), repr(float(truth.V[x]))]
        w.writerow(row)
    return buf.getvalue()


def _emit(args, name, doc, files=None):
    doc = {"command": name, "version": __version__, **doc}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{name}.json"), "w") as fh:
            fh.write(text)
        for fname, content in (files or {}).items():
            with open(os.path.join(args.out, fname), "w", newline="") as fh:
                fh.write(content)
    sys.stdout.write(text)
    return 0


# --- commands ---------------------------------------------------------------


def cmd_validate(ctx):
    chain = ctx.chain(check=False)
    report = validate(chain)
    _emit(ctx.args, "validate", {"report": report.to_dict()})
    if not report.ok:
        report.raise_for_errors()
    return 0


def cmd_solve_exact(ctx):
    chain = ctx.chain()
    truth = solve_true(chain)
    doc = {"true": truth.to_dict()}
    files = {}
    if ctx.get("features") is not None or ctx.get("lambda") is not None:
        feats = ctx.features(chain.n)
        system, res = projected_solution(chain, feats, ctx.lam(0.0))
        doc["projected"] = res.to_dict()
        doc["system"] = {"lambda": system.lam, "cond_A": system.cond_A, "cond_C": system.cond_C}
        files["solve-exact.csv"] = _states_csv(res, truth)
    return _emit(ctx.args, "solve-exact", doc, files)


def _lstd_common(ctx, name, lam):
    chain = ctx.chain()
    feats = ctx.features(chain.n)
    trajs = ctx.trajectories(chain)
    res, acc = lstd_lambda(trajs, feats, lam)
    doc = {
        "lambda": lam,
        "n_episodes": acc.n_episodes,
        "result": res.to_dict(),
        "cond_A": float(np.linalg.cond(acc.A_N)),
        "cond_C": float(np.linalg.cond(acc.C_N)),
    }
    files = {f"{name}.csv": _states_csv(res)}
    if ctx.args.save_trajectories:
        buf_path = os.path.join(ctx.args.out or ".", "trajectories.csv")
        os.makedirs(os.path.dirname(buf_path) or ".", exist_ok=True)
        write_trajectory_log(trajs, buf_path)
        doc["trajectory_log"] = buf_path
    return _emit(ctx.args, name, doc, files)


def cmd_lstd(ctx):
    if ctx.lam(0.0) != 0.0:
        raise UsageError("lstd is the single-step estimator; use lstd-lambda for lambda > 0")
    return _lstd_common(ctx, "lstd", 0.0)


def cmd_lstd_lambda(ctx):
    lam = ctx.lam(0.9)
    if not 0.0 <= lam < 1.0:
        raise UsageError("lambda must lie in [0, 1)")
    return _lstd_common(ctx, "lstd-lambda", lam)


def cmd_td0(ctx):
    chain = ctx.chain()
    feats = ctx.features(chain.n)
    trajs = ctx.trajectories(chain)
    spec = dict(ctx.config.get("schedule", {}))
    if ctx.args.step_c is not None:
        spec["c"] = ctx.args.step_c
    if ctx.args.step_k0 is not None:
        spec["k0"] = ctx.args.step_k0
    schedule = StepSchedule.from_spec(spec)
    record = max(1, len(trajs) // 100)
    state = td0(trajs, feats, schedule, record_every=record)
    res = EvalResult.from_weights(feats, state.w_J, state.w_M)
    doc = {
        "episodes": state.k,
        "schedule": {"kind": "harmonic", "c": schedule.c, "k0": schedule.k0},
        "result": res.to_dict(),
        "history": [
            {"k": k, "w_J": wJ.tolist(), "w_M": wM.tolist()} for k, wJ, wM in state.history
        ],
    }
    return _emit(ctx.args, "td0", doc, {"td0.csv": _states_csv(res)})


def cmd_constrained(ctx):
    chain = ctx.chain()
    feats = ctx.features(chain.n)
    lam = ctx.lam(0.9)
    source = ctx.get("source", "exact")
    if source == "exact":
        system, unconstrained = projected_solution(chain, feats, lam)
        w_J = unconstrained.w_J
    elif source == "sampled":
        acc = LstdAccumulator.empty(feats.l_J, feats.l_M, lam)
        acc.update(ctx.trajectories(chain), feats)
        w_J, w_M = acc.solve()
        unconstrained = EvalResult.from_weights(feats, w_J, w_M)
        system = sampled_system(acc)
    else:
        raise UsageError(f"source must be 'exact' or 'sampled', got {source!r}")
    cs = build_constraints(ctx.get("constraints", "all"), feats, w_J)
    res = constrained_solve(system, cs, feats, ctx.solver())
    doc = {
        "lambda": lam,
        "source": source,
        "constrained_states": cs.states.tolist(),
        "unconstrained": unconstrained.to_dict(),
        "constrained": res.to_dict(),
    }
    return _emit(ctx.args, "constrained", doc, {"constrained.csv": _states_csv(res.result)})


def cmd_diagnostics(ctx):
    chain = ctx.chain()
    feats = ctx.features(chain.n)
    rep = diagnostics(chain, feats, ctx.lam(0.0))
    return _emit(ctx.args, "diagnostics", {"diagnostics": rep.to_dict()})


def _bench_config(ctx):
    cfg = ctx.config.get("benchmark")
    if cfg is None:
        cfg = {k: v for k, v in ctx.config.items() if k not in CLI_KEYS}
    cfg = dict(cfg)
    for key in ("seed", "episodes", "lambda"):
        if getattr(ctx.args, key, None) is not None:
            cfg[key] = getattr(ctx.args, key)
        elif key in ctx.config and key not in cfg:
            cfg[key] = ctx.config[key]
    return cfg


def _bench(ctx, name, runner):
    bundle = runner(_bench_config(ctx), ctx.args.out)
    doc = json.loads(json.dumps(bundle["summary"]))
    doc.pop("version", None)
    # the runner already wrote its bundle; only add the command echo
    return _emit(ctx.args, name, {"summary": doc})


def cmd_bench_chain(ctx):
    return _bench(ctx, "bench-chain", run_chain_benchmark)


def cmd_bench_maze(ctx):
    return _bench(ctx, "bench-maze", run_maze_benchmark)


def cmd_risk_report(ctx):
    raw = ctx.get("result")
    if raw is not None:
        data = _maybe_file(raw, "result file")
        # accept either a bare EvalResult or a command output that wraps one
        for key in ("result", "constrained", "projected"):
            if isinstance(data, dict) and "w_J" not in data and key in data:
                data = data[key]
                break
        try:
            result = EvalResult.from_dict(data)
        except (KeyError, TypeError):
            raise UsageError("result file must contain w_J, w_M, J and M") from None
    else:
        chain = ctx.chain()
        feats = ctx.features(chain.n)
        _, result = projected_solution(chain, feats, ctx.lam(0.0))
    thresholds = dict(ctx.config.get("thresholds", {}))
    for key in ("max_variance", "min_value", "risk_aversion"):
        if getattr(ctx.args, key) is not None:
            thresholds[key] = getattr(ctx.args, key)
    rep = risk_report(result, thresholds)
    return _emit(ctx.args, "risk-report", {"report": rep.to_dict()}, {"risk-report.csv": rep.to_csv()})


COMMANDS = {
    "validate": (cmd_validate, "check a model file (substochastic, proper, all states visited)"),
    "solve-exact": (cmd_solve_exact, "exact J, M, V and, with features, the projected solution"),
    "lstd": (cmd_lstd, "single-step LSTD from simulated or logged episodes"),
    "td0": (cmd_td0, "episode-batch TD(0) with harmonic steps"),
    "lstd-lambda": (cmd_lstd_lambda, "LSTD(lambda) from simulated or logged episodes"),
    "constrained": (cmd_constrained, "second-moment weights under a nonnegative-variance constraint"),
    "diagnostics": (cmd_diagnostics, "spectral radii and error-bound check of the projected operator"),
    "bench-chain": (cmd_bench_chain, "reflecting-chain benchmark bundle"),
    "bench-maze": (cmd_bench_maze, "noisy gridworld benchmark bundle"),
    "risk-report": (cmd_risk_report, "per-state risk criteria from an evaluation result"),
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--episodes", type=int, help="number of simulated episodes")
    common.add_argument("--lambda", dest="lambda", type=float, help="trace parameter in [0, 1)")
    common.add_argument("--model", help="JSON model file")
    common.add_argument("--features", help="JSON feature spec file")
    common.add_argument("--trajectories", help="CSV trajectory log to use instead of simulating")
    common.add_argument("--start-state", dest="start_state", type=int, help="start every episode here")

    parser = _Parser(prog="vartd", description="Variance-aware policy evaluation.")
    parser.add_argument("--version", action="version", version=f"vartd {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name in ("lstd", "lstd-lambda"):
            p.add_argument("--save-trajectories", action="store_true",
                           help="also write the episodes used as trajectories.csv")
        if name == "td0":
            p.add_argument("--step-c", dest="step_c", type=float, help="c in xi_k = c/(k+k0)")
            p.add_argument("--step-k0", dest="step_k0", type=float, help="k0 in xi_k = c/(k+k0)")
        if name == "constrained":
            p.add_argument("--gamma", type=float, help="initial step of the projected iteration")
            p.add_argument("--source", choices=("exact", "sampled"),
                           help="exact projected system or LSTD(lambda) sample averages")
        if name == "risk-report":
            p.add_argument("--result", help="JSON with w_J, w_M, J, M (e.g. lstd-lambda output)")
            p.add_argument("--max-variance", dest="max_variance", type=float, help="c for V <= c")
            p.add_argument("--min-value", dest="min_value", type=float, help="c for J >= c")
            p.add_argument("--risk-aversion", dest="risk_aversion", type=float, help="c in J - c sqrt(V)")
    return parser


def _error_doc(exc):
    doc = {"error": getattr(exc, "kind", "error"), "message": str(exc)}
    if isinstance(exc, StageError):
        doc["stage"] = exc.stage
        doc["cause"] = getattr(exc.cause, "kind", "error")
    for attr in ("recurrent_class", "n_episodes", "condition_numbers", "max_steps"):
        val = getattr(exc, attr, None)
        if val is not None and val != ():
            doc[attr] = list(val) if isinstance(val, tuple) else val
    residuals = getattr(exc, "residuals", None)
    if residuals:
        doc["last_residual"] = float(residuals[-1])
        doc["iterations"] = len(residuals)
    return doc


def main(argv=None):
    """Entry point; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
        ctx = Context(args)
        for attr in ("gamma", "source", "step_c", "step_k0", "max_variance", "min_value",
                     "risk_aversion", "result", "save_trajectories"):
            if not hasattr(args, attr):
                setattr(args, attr, None)
        return COMMANDS[args.command][0](ctx)
    except VarTDError as exc:
        code = EXIT_INVALID if getattr(exc, "kind", "") in ("properness", "occupancy", "structural") else EXIT_FAILURE
        sys.stderr.write(json.dumps(_error_doc(exc), default=str) + "\n")
        return code
    except (ValueError, OSError, KeyError, TypeError) as exc:
        kind = "io" if isinstance(exc, OSError) else "invalid-input"
        sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
