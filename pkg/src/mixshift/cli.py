"""Command-line interface: ``mixshift <command> ...``.

Every command that writes a file also writes ``<out>.manifest.json`` with
the command, a SHA-256 digest of the input configuration, the seed, the tool
version and the list of outputs. Exit codes: 0 success, 1 numerical
non-convergence, 2 invalid configuration.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .core import MixingSolution, MixtureProblem, _jsonable, curve_from_dict, mixture_loss
from .memorization import scaling_exponents, water_fill
from .pds import ErrorFieldProbe, stationarity_test
from .powerlaw import (
    ConvergenceError,
    asymptotic_losses,
    approximate_loss,
    majority_minority_ratio,
    powerlaw_problem,
    solve_lambda,
    solve_powerlaw,
)
from .simulate import (
    McConfig,
    SkillWorld,
    blend,
    multinomial_estimate,
    run_composition_experiment,
)
from .solver import SolverConfig, minimize_simplex, sample_complexity_ratio
from .transfer import solve_transfer


class ConfigError(Exception):
    """Invalid input; ``line`` points into the source file when known."""

    def __init__(self, message, source="<config>", line=None):
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


class Unconverged(Exception):
    def __init__(self, message, payload):
        super().__init__(message)
        self.payload = payload


# -- config parsing with line numbers ----------------------------------------


def json_line_map(text):
    """Map each JSON path (tuple of keys/indices) to its 1-based line."""
    dec = json.JSONDecoder()
    lines = {}
    n = len(text)

    def ws(i):
        while i < n and text[i] in " \t\r\n":
            i += 1
        return i

    def line_of(i):
        return text.count("\n", 0, i) + 1

    def walk(i, path):
        i = ws(i)
        lines[path] = line_of(i)
        c = text[i]
        if c == "{":
            i = ws(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                i = ws(i)
                key, i = json.decoder.scanstring(text, i + 1)
                i = ws(i) + 1  # colon
                i = ws(walk(i, path + (key,)))
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if c == "[":
            i = ws(i + 1)
            if text[i] == "]":
                return i + 1
            idx = 0
            while True:
                i = ws(walk(i, path + (idx,)))
                idx += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        _, end = dec.raw_decode(text, i)
        return end

    walk(0, ())
    return lines


def _fmt_path(path):
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else part)
    return out or "<root>"


class _Doc:
    def __init__(self, text, source):
        self.source = source
        try:
            self.data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", source, exc.lineno)
        self.lines = json_line_map(text)
        self.digest = hashlib.sha256(text.encode()).hexdigest()

    def fail(self, path, message):
        line = None
        for k in range(len(path), -1, -1):
            if path[:k] in self.lines:
                line = self.lines[path[:k]]
                break
        raise ConfigError(f"{_fmt_path(path)}: {message}", self.source, line)


def _read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", path)


def load_problem(path):
    doc = _Doc(_read(path), path)
    d = doc.data
    if not isinstance(d, dict):
        doc.fail((), "problem must be a JSON object")
    for key in ("p", "N", "curves"):
        if key not in d:
            doc.fail((), f"missing field {key!r}")
    if not isinstance(d["p"], list) or not all(_is_num(x) for x in d["p"]):
        doc.fail(("p",), "must be a list of numbers")
    if not isinstance(d["N"], int) or isinstance(d["N"], bool) or d["N"] < 1:
        doc.fail(("N",), "must be a positive integer")
    if not isinstance(d["curves"], list):
        doc.fail(("curves",), "must be a list")
    if len(d["curves"]) != len(d["p"]):
        doc.fail(("curves",), f"has {len(d['curves'])} entries but p has {len(d['p'])}")
    curves = []
    for i, c in enumerate(d["curves"]):
        path = ("curves", i)
        if not isinstance(c, dict):
            doc.fail(path, "curve must be an object")
        for key, val in c.items():
            if key not in ("kind", "values", "extrapolation") and not _is_num(val):
                doc.fail(path + (key,), "must be a number")
        try:
            curves.append(curve_from_dict(c))
        except (ValueError, TypeError) as exc:
            bad = next((k for k in c if k in str(exc)), None)
            doc.fail(path + ((bad,) if bad else ()), str(exc))
    try:
        problem = MixtureProblem(d["p"], curves, d["N"])
    except ValueError as exc:
        doc.fail(("p",), str(exc))
    return problem, doc.digest


def load_world(path):
    doc = _Doc(_read(path), path)
    d = doc.data
    if not isinstance(d, dict):
        doc.fail((), "world must be a JSON object")
    fields = SkillWorld().to_dict()
    for key, val in d.items():
        if key not in fields:
            doc.fail((key,), "unknown field")
        if not _is_num(val):
            doc.fail((key,), "must be a number")
    try:
        return SkillWorld(**d), doc.digest
    except (ValueError, TypeError) as exc:
        bad = next((k for k in d if k in str(exc)), None)
        doc.fail((bad,) if bad else (), str(exc))


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_vector(text, name):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{name} must be comma-separated numbers, got {text!r}", "--" + name)
    if not vals:
        raise ConfigError(f"{name} is empty", "--" + name)
    return vals


def parse_grid(text, name="grid"):
    """``a:b:step`` (linear) or ``a:b:log10[:n]`` (n points per decade, default 10)."""
    parts = text.split(":")
    try:
        a, b = float(parts[0]), float(parts[1])
        if len(parts) >= 3 and parts[2] == "log10":
            per = int(parts[3]) if len(parts) > 3 else 10
            count = int(round(np.log10(b / a) * per)) + 1
            return np.logspace(np.log10(a), np.log10(b), max(count, 2))
        step = float(parts[2])
    except (IndexError, ValueError, ZeroDivisionError):
        raise ConfigError(f"bad grid spec {text!r}", "--" + name)
    if step <= 0 or b < a:
        raise ConfigError(f"bad grid spec {text!r}", "--" + name)
    count = int(np.floor((b - a) / step + 1e-9)) + 1
    return np.round(a + step * np.arange(count), 12)


# -- output ------------------------------------------------------------------


def _atomic_write(path, data):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format(float(v), ".17g") if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def _digest_of_args(args):
    items = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return hashlib.sha256(json.dumps(items, sort_keys=True, default=str).encode()).hexdigest()


def emit(args, text, digest=None, seed=None):
    """Write ``text`` to ``--out`` with a manifest, or to stdout."""
    out = getattr(args, "out", None)
    if not out:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    _atomic_write(out, text)
    manifest = {
        "command": args.command,
        "config_digest": digest or _digest_of_args(args),
        "seed": getattr(args, "seed", 0) if seed is None else seed,
        "tool_version": __version__,
        "outputs": [out],
    }
    _atomic_write(out + ".manifest.json", json.dumps(manifest, indent=2) + "\n")


def _json(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n"


# -- commands ----------------------------------------------------------------


def _powerlaw_solution(problem, method):
    if method == "numeric":
        res = minimize_simplex(lambda q: approximate_loss(problem, q), problem.K)
        sol = MixingSolution(res.q, mixture_loss(problem, res.q), mixture_loss(problem, problem.p),
                             "numeric", {"residual": res.residual, "converged": res.converged})
        if not res.converged and res.source == "descent":
            raise Unconverged("mirror descent did not converge", sol.to_dict())
        return sol
    pl = solve_powerlaw(problem)
    return pl.to_mixing_solution(problem, "closed-form" if method == "asymptotic" else "lagrange")


def cmd_powerlaw(args):
    if args.sweep:
        name, _, spec = args.sweep.partition("=")
        if name != "p_major":
            raise ConfigError(f"only p_major can be swept, got {name!r}", "--sweep")
        if args.config:
            problem, digest = load_problem(args.config)
            c = problem.curves[0]
            K, alpha, A, N = problem.K, c.alpha, c.A, problem.N
        else:
            K, alpha, A, N, digest = args.K, args.alpha, args.A, args.N, None
        text = sweep_csv(parse_grid(spec, "sweep"), K, alpha, A, N)
        emit(args, text, digest)
        return 0
    if not args.config:
        raise ConfigError("--config is required", "powerlaw")
    problem, digest = load_problem(args.config)
    sol = _powerlaw_solution(problem, args.method)
    emit(args, _json(sol.to_dict()), digest)
    return 0


def sweep_rows(ps, K, alpha, A=1.0, N=1000):
    rows = []
    for p in ps:
        mm = majority_minority_ratio(p, K, alpha)
        pv = np.full(K, (1.0 - p) / (K - 1))
        pv[0] = p
        L_same, L_star = asymptotic_losses(powerlaw_problem(pv, A, 1.0, alpha, N))
        rows.append((p, mm.q_star[0], L_same, L_star, mm.N_ratio))
    return rows


def sweep_csv(ps, K, alpha, A=1.0, N=1000):
    return csv_text(["p", "q1_star", "L_same", "L_star", "N_ratio"], sweep_rows(ps, K, alpha, A, N))


def cmd_sweep(args):
    text = sweep_csv(parse_grid(args.p, "p"), args.K, args.alpha, args.A, args.N)
    emit(args, text)
    return 0


def cmd_memorize(args):
    if args.scaling:
        name, _, val = args.scaling.partition("=")
        if name != "alpha":
            raise ConfigError("expected --scaling alpha=<value>", "--scaling")
        try:
            alpha = float(val)
        except ValueError:
            raise ConfigError(f"bad alpha {val!r}", "--scaling")
        rule = args.k_rule.strip()
        c, K = None, None
        if rule.endswith("N"):
            c = float(rule[:-1] or 1)
        else:
            K = int(rule)
        grid = np.unique(np.round(parse_grid(args.grid)).astype(int))
        fit = scaling_exponents(alpha, grid, c=c or 4.0, K=K)
        rows = zip(fit.N_grid, fit.L_same, fit.L_star)
        emit(args, csv_text(["N", "L_same", "L_star"], rows))
        return 0
    if args.p is None or args.N is None:
        raise ConfigError("--p and --N are required", "memorize")
    try:
        res = water_fill(parse_vector(args.p, "p"), args.N)
    except ValueError as exc:
        raise ConfigError(str(exc), "--p")
    emit(args, _json(res.to_mixing_solution().to_dict()))
    return 0


def cmd_transfer(args):
    problem, digest = load_problem(args.config)
    if problem.kinds() != {"transfer"}:
        raise ConfigError("every curve must have kind 'transfer'", args.config)
    sol, dec = solve_transfer(problem)
    out = sol.to_dict()
    out["transfer_offset"] = dec.transfer_offset
    emit(args, _json(out), digest)
    return 0


def cmd_mc(args):
    problem, digest = load_problem(args.config)
    q = parse_vector(args.q, "q") if args.q else list(problem.p)
    mc = McConfig(args.draws, args.seed, args.streams)
    try:
        est, se = multinomial_estimate(problem, q, mc)
    except ValueError as exc:
        raise ConfigError(str(exc), "--q")
    emit(args, _json({"estimate": est, "stderr": se, "q": q, "draws": args.draws,
                      "seed": args.seed}), digest)
    return 0


def _world_mix(world, mix, N):
    f = world.test_freq
    if mix == "matched":
        return f
    if mix == "waterfill":
        return water_fill(f, N).q_star
    if mix.startswith("blend:"):
        try:
            gamma = float(mix.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad blend weight in {mix!r}", "--mix")
        return blend(gamma, None, f)
    raise ConfigError(f"unknown mix {mix!r}", "--mix")


def cmd_compose(args):
    if args.world:
        world, digest = load_world(args.world)
    else:
        world, digest = SkillWorld(), None
    q = _world_mix(world, args.mix, args.N)
    res = run_composition_experiment(world, q, args.N, McConfig(args.draws, args.seed, args.streams),
                                     k=args.k)
    out = dict(res.to_dict(), mix=args.mix, N=args.N, world=world.to_dict())
    emit(args, _json(out), digest)
    return 0


def cmd_check_pds(args):
    problem, digest = load_problem(args.config)
    p = parse_vector(args.p, "p") if args.p else list(problem.p)
    probe = ErrorFieldProbe.from_problem(problem, h=args.h)
    try:
        res = stationarity_test(probe, p)
    except ValueError as exc:
        raise ConfigError(str(exc), "--p")
    emit(args, _json(res.to_dict()), digest)
    return 0


def cmd_optimize(args):
    problem, digest = load_problem(args.config)
    if args.numeric or problem.kinds() - {"powerlaw", "memorization"} or len(problem.kinds()) > 1:
        res = minimize_simplex(lambda q: mixture_loss(problem, q), problem.K,
                               SolverConfig(grid_resolution=args.grid_resolution))
        sol = MixingSolution(res.q, res.value, mixture_loss(problem, problem.p), "numeric",
                             {"residual": res.residual, "converged": res.converged,
                              "iterations": res.iterations, "source": res.source})
        if not res.converged and res.source == "descent":
            raise Unconverged("mirror descent did not converge", sol.to_dict())
    elif problem.kinds() == {"memorization"}:
        sol = water_fill(problem.p, problem.N).to_mixing_solution()
    else:
        sol = _powerlaw_solution(problem, "lagrange")
    emit(args, _json(sol.to_dict()), digest)
    return 0


def cmd_nratio(args):
    problem, digest = load_problem(args.config)
    try:
        r = sample_complexity_ratio(problem, args.epsilon, args.N_max, fixed_q=args.fixed_q)
    except ValueError as exc:
        raise Unconverged(str(exc), {"error": str(exc), "epsilon": args.epsilon})
    out = {"N_ratio": r.ratio, "N_star": r.N_star, "N_same": r.N_same,
           "epsilon": args.epsilon, "loss": r.loss_kind, "fixed_q": r.fixed_q}
    emit(args, _json(out), digest)
    return 0


def fig1_rows(N=100, points=99):
    rows = []
    qs = np.linspace(0.01, 0.99, points)
    for alpha in (1.0, 2.0):
        problem = powerlaw_problem([0.9, 0.1], 1.0, 0.0, alpha, N)
        q_star = solve_lambda(problem)[0][0]
        for q in qs:
            loss = 0.9 / (N * q) ** alpha + 0.1 / (N * (1.0 - q)) ** alpha
            rows.append((alpha, q, loss, q_star))
    return rows


def cmd_fig1(args):
    emit(args, csv_text(["alpha", "q", "loss", "q_star"], fig1_rows(args.N, args.points)))
    return 0


def cmd_fig2(args):
    ps = np.round(np.arange(1, 100) / 100.0, 2)
    rows = [(p, Ls, Lt, r) for p, _, Ls, Lt, r in sweep_rows(ps, 100, 0.28, 1.0, args.N)]
    emit(args, csv_text(["p", "L_same", "L_star", "N_ratio"], rows))
    return 0


# -- argument parsing --------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="mixshift", description="Optimal training mixtures.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--out", help="output path (stdout if omitted)")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = add("powerlaw", cmd_powerlaw, "optimal mix for power-law curves")
    sp.add_argument("--config")
    sp.add_argument("--method", choices=["asymptotic", "lagrange", "numeric"], default="lagrange")
    sp.add_argument("--sweep", help="p_major=a:b:step, emits CSV")
    sp.add_argument("--K", type=int, default=2)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--A", type=float, default=1.0)
    sp.add_argument("--N", type=int, default=1000)

    sp = add("sweep", cmd_sweep, "majority/minority sweep over p (CSV)")
    sp.add_argument("--p", default="0.01:0.99:0.01")
    sp.add_argument("--K", type=int, default=100)
    sp.add_argument("--alpha", type=float, default=0.28)
    sp.add_argument("--A", type=float, default=1.0)
    sp.add_argument("--N", type=int, default=1000)

    sp = add("memorize", cmd_memorize, "water-filling for memorization curves")
    sp.add_argument("--p")
    sp.add_argument("--N", type=int)
    sp.add_argument("--scaling", help="alpha=<value>, emits CSV of L vs N")
    sp.add_argument("--k-rule", default="4N", help="cN or a fixed integer K")
    sp.add_argument("--grid", default="100:100000:log10:3")

    sp = add("transfer", cmd_transfer, "optimal mix for transfer curves")
    sp.add_argument("--config", required=True)

    sp = add("mc", cmd_mc, "Monte Carlo estimate of the mixture loss")
    sp.add_argument("--config", required=True)
    sp.add_argument("--q")
    sp.add_argument("--draws", type=int, default=100_000)
    sp.add_argument("--streams", type=int, default=1)

    sp = add("compose", cmd_compose, "skill-composition experiment")
    sp.add_argument("--world")
    sp.add_argument("--mix", default="matched", help="matched | waterfill | blend:<gamma>")
    sp.add_argument("--N", type=int, default=100_000)
    sp.add_argument("--k", type=int, help="fixed chain length")
    sp.add_argument("--draws", type=int, default=2000)
    sp.add_argument("--streams", type=int, default=1)

    sp = add("check-pds", cmd_check_pds, "is training on p stationary?")
    sp.add_argument("--config", required=True)
    sp.add_argument("--p")
    sp.add_argument("--h", type=float, default=1e-4)

    sp = add("optimize", cmd_optimize, "optimal mix for any problem")
    sp.add_argument("--config", required=True)
    sp.add_argument("--numeric", action="store_true")
    sp.add_argument("--grid-resolution", type=float, default=0.02)

    sp = add("nratio", cmd_nratio, "sample-complexity ratio at loss epsilon")
    sp.add_argument("--config", required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--N-max", dest="N_max", type=int, default=10**7)
    sp.add_argument("--fixed-q", action="store_true",
                    help="hold the mix optimal at the matched budget fixed")

    sp = add("fig1", cmd_fig1, "loss against q for the two-topic exam (CSV)")
    sp.add_argument("--N", type=int, default=100)
    sp.add_argument("--points", type=int, default=99)

    sp = add("fig2", cmd_fig2, "majority/minority losses and N ratio (CSV)")
    sp.add_argument("--N", type=int, default=1000)
    return ap


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (Unconverged, ConvergenceError) as exc:
        payload = getattr(exc, "payload", None) or {"error": str(exc),
                                                     "diagnostics": getattr(exc, "diagnostics", {})}
        print(f"error: {exc}", file=sys.stderr)
        try:
            emit(args, _json(payload))
        except OSError:
            pass
        return 1
    except ValueError as exc:
        # argument values rejected by the numerical layer
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
