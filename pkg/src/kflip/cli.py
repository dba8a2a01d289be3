"""Command-line front end: ``kflip <subcommand> [flags]``.

Every subcommand writes CSV or JSON to ``--out`` (stdout when omitted) and a
one-line summary (stdout when ``--out`` is given, stderr otherwise). Exit
status is 0 on success, 1 on a usage error and 2 on a numerical error.
"""

from __future__ import annotations

import argparse
import enum
import json
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._parallel import ENV_THREADS, resolve_threads
from .chain import hitting_curve, stationary_distribution
from .errors import KFlipError
from .escape import estimate_k_min, exact_rho_min, phase_diagram
from .model import GameParams, h_star, metastable_endpoints, solve_equilibria
from .montecarlo import DEFAULT_BINS, DEFAULT_MAX_STEPS, RunConfig, run_batch
from .transition import build_transition_matrix

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class Subject(str, enum.Enum):
    POTENTIAL = "potential"
    EQUILIBRIA = "equilibria"
    HITTING = "hitting"
    PHASE = "phase"
    RHOMIN = "rhomin"
    SIMULATE = "simulate"
    MATRIX_DUMP = "matrix-dump"


class Trajectory(str, enum.Enum):
    META = "meta"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class AxisRange:
    """Inclusive sweep ``lo..hi`` with ``count`` points; integer axes are rounded and deduplicated."""

    name: str
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise UsageError(f"--{self.name}-range: count must be >= 2, got {self.count}")
        if not self.lo < self.hi:
            raise UsageError(f"--{self.name}-range: need lo < hi, got {self.lo}:{self.hi}")
        if self.name == "gamma" and not (0 < self.lo and self.hi < 1):
            raise UsageError("--gamma-range must lie inside (0, 1)")
        if self.name == "beta" and self.lo <= 0:
            raise UsageError("--beta-range must be positive")
        if self.name == "n" and self.lo < 2:
            raise UsageError("--n-range must start at N >= 2")

    def values(self) -> np.ndarray:
        v = np.linspace(self.lo, self.hi, self.count)
        if self.name == "n":
            return np.unique(np.rint(v).astype(int))
        return v


@dataclass(frozen=True)
class SweepSpec:
    """Fully resolved invocation: subject, base parameters, swept axes and output."""

    subject: Subject
    base: dict
    axes: tuple = ()
    ks: Optional[tuple] = None
    trajectory: Trajectory = Trajectory.META
    out: Optional[str] = None
    seed: int = 0
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def params(self, k: int = 1, beta: Optional[float] = None, n: Optional[int] = None) -> GameParams:
        b = self.base
        beta = b["beta"] if beta is None else beta
        n = b["n"] if n is None else n
        if b.get("h") is not None:
            h = b["h"]
        else:
            h = b["gamma"] * h_star(beta, b["j"], b["noise"])
        return GameParams.create(n, k, beta, h, b["j"], b["noise"])

    def axis(self, name: str) -> AxisRange:
        for a in self.axes:
            if a.name == name:
                return a
        raise UsageError(f"missing --{name}-range")


# ---- argument parsing ------------------------------------------------------

DEFAULTS = {
    "j": 1.0,
    "noise": "gumbel",
    "trajectory": "meta",
    "seed": 0,
    "samples": 1000,
    "max_steps": DEFAULT_MAX_STEPS,
    "bins": DEFAULT_BINS,
    "plane": "beta-gamma",
    "n": None,
    "k": None,
    "beta": None,
    "gamma": None,
    "h": None,
    "out": None,
    "samples_out": None,
    "threads": None,
    "beta_range": None,
    "gamma_range": None,
    "n_range": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> tuple:
    """``"1,5,10"`` or an inclusive range ``"1:150"``."""
    try:
        if ":" in text:
            lo, hi = (int(x) for x in text.split(":"))
            return tuple(range(lo, hi + 1))
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like 1,5,10 or 1:150, got {text!r}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers like 2,2.5,3, got {text!r}")


def _range(text: str) -> tuple:
    parts = text.split(":")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"expected lo:hi:count, got {text!r}")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count, got {text!r}")
    return lo, hi, count


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kflip", description="k-flip Ising game: chains, escape times, simulation.")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sup = argparse.SUPPRESS

    def common(p, k_help=None, beta_type=float):
        p.add_argument("--config", help="JSON file with flag names as keys; flags override it")
        p.add_argument("--n", type=int, default=sup, help="number of agents N")
        p.add_argument("--beta", type=beta_type, default=sup, help="inverse noise strength")
        p.add_argument("--gamma", type=float, default=sup, help="field as a fraction of H*(beta)")
        p.add_argument("--h", type=float, default=sup, help="external field H")
        p.add_argument("--j", type=float, default=sup, help="coupling J (default 1)")
        p.add_argument("--noise", choices=("gumbel", "normal"), default=sup)
        p.add_argument("--out", default=sup, help="output file (default stdout)")
        p.add_argument("--threads", type=int, default=sup, help=f"worker threads (fallback ${ENV_THREADS})")
        if k_help:
            p.add_argument("--k", type=_int_list, default=sup, help=k_help)

    common(subs.add_parser("potential", help="-ln(pi) of the chain for several k"), "flip counts, e.g. 1,10,150")
    common(subs.add_parser("equilibria", help="fixed points, spinodal and trajectory states"))
    p = subs.add_parser("hitting", help="hitting-time moments and r_tau, r_sigma over k")
    common(p, "flip counts (default 1:N)")
    p.add_argument("--trajectory", choices=[t.value for t in Trajectory], default=sup)
    p = subs.add_parser("phase", help="end-slope sign grid")
    common(p)
    p.add_argument("--plane", choices=("beta-gamma", "beta-n"), default=sup)
    p.add_argument("--beta-range", type=_range, default=sup, help="lo:hi:count")
    p.add_argument("--gamma-range", type=_range, default=sup, help="lo:hi:count")
    p.add_argument("--n-range", type=_range, default=sup, help="lo:hi:count")
    p = subs.add_parser("rhomin", help="exact and estimated rho_min over beta")
    common(p, beta_type=_float_list)
    p.add_argument("--beta-range", type=_range, default=sup, help="lo:hi:count")
    p = subs.add_parser("simulate", help="Monte Carlo first-hitting times")
    common(p, "flip count")
    p.add_argument("--trajectory", choices=[t.value for t in Trajectory], default=sup)
    p.add_argument("--samples", type=int, default=sup)
    p.add_argument("--seed", type=int, default=sup)
    p.add_argument("--max-steps", type=int, default=sup)
    p.add_argument("--bins", type=int, default=sup)
    p.add_argument("--samples-out", default=sup, help="raw samples, one integer per line")
    common(subs.add_parser("matrix-dump", help="reachable transition probabilities"), "flip count")
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config {path}: {exc}")
    if not isinstance(data, dict):
        raise UsageError(f"--config {path}: expected a JSON object")
    out = {}
    for key, value in data.items():
        name = key.lstrip("-").replace("-", "_")
        if name not in DEFAULTS:
            raise UsageError(f"--config {path}: unknown key {key!r}")
        out[name] = value
    return out


def _coerce_config(cfg: dict) -> dict:
    """Bring JSON values into the shapes produced by the flag parsers."""
    out = dict(cfg)
    for key in ("beta_range", "gamma_range", "n_range"):
        if isinstance(out.get(key), str):
            out[key] = _range(out[key])
    if isinstance(out.get("k"), (int, str)):
        out["k"] = _int_list(str(out["k"]))
    elif isinstance(out.get("k"), list):
        out["k"] = tuple(int(x) for x in out["k"])
    return out


def resolve(argv: Sequence[str]) -> SweepSpec:
    """Parse flags, merge the optional config file and validate."""
    try:
        ns = build_parser().parse_args(argv)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc))
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    cfg = {}
    if ns.config:
        try:
            cfg = _coerce_config(_load_config(ns.config))
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"--config: {exc}")
    if "gamma" in given or "h" in given:
        # a field flag replaces any field choice from the config
        cfg.pop("gamma", None)
        cfg.pop("h", None)
    if "gamma" in given and "h" in given or "gamma" in cfg and "h" in cfg:
        raise UsageError("--gamma and --h are mutually exclusive")
    opts = {**DEFAULTS, **cfg, **given}
    subject = Subject(ns.command)

    try:
        threads = resolve_threads(opts["threads"])
    except ValueError as exc:
        raise UsageError(f"--threads: {exc}")
    try:
        trajectory = Trajectory(opts["trajectory"])
    except ValueError:
        raise UsageError(f"--trajectory: invalid choice {opts['trajectory']!r}")
    if opts["noise"] not in ("gumbel", "normal"):
        raise UsageError(f"--noise: invalid choice {opts['noise']!r}")

    needs = {"n"}
    if subject not in (Subject.PHASE, Subject.RHOMIN):
        needs |= {"beta"}
    if subject is Subject.PHASE:
        needs = set()
    for name in sorted(needs):
        if opts[name] is None:
            raise UsageError(f"--{name} is required")
    if subject is not Subject.PHASE and opts["gamma"] is None and opts["h"] is None:
        raise UsageError("one of --gamma or --h is required")
    if opts["n"] is not None and opts["n"] < 1:
        raise UsageError(f"--n must be >= 1, got {opts['n']}")

    ks = opts["k"]
    if subject in (Subject.SIMULATE, Subject.MATRIX_DUMP):
        if ks is None or len(ks) != 1:
            raise UsageError("--k takes exactly one flip count here")
    if subject is Subject.POTENTIAL and ks is None:
        raise UsageError("--k is required")
    if ks is not None:
        n = opts["n"]
        bad = [k for k in ks if not 1 <= k <= n]
        if bad or not ks:
            raise UsageError(f"--k values must lie in [1, {n}], got {list(ks) or 'none'}")

    axes = []
    if subject is Subject.PHASE:
        axes = _phase_axes(opts)
    elif subject is Subject.RHOMIN:
        if opts["beta_range"] is not None and opts["beta"] is not None:
            raise UsageError("--beta and --beta-range are mutually exclusive")
        if opts["beta_range"] is not None:
            axes = [AxisRange("beta", *opts["beta_range"])]
        elif opts["beta"] is None:
            raise UsageError("one of --beta or --beta-range is required")
        if opts["gamma"] is None:
            raise UsageError("rhomin needs --gamma")

    beta = opts["beta"]
    if subject is Subject.RHOMIN and beta is not None:
        beta = tuple(beta) if isinstance(beta, (list, tuple)) else (float(beta),)
    base = {"n": opts["n"], "beta": beta, "gamma": opts["gamma"], "h": opts["h"], "j": opts["j"], "noise": opts["noise"]}
    if not 0 <= opts["seed"] < 2**64:
        raise UsageError(f"--seed must be a 64-bit unsigned integer, got {opts['seed']}")
    for name in ("samples", "max_steps", "bins"):
        if opts[name] < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    extra = {
        "samples": opts["samples"],
        "max_steps": opts["max_steps"],
        "bins": opts["bins"],
        "samples_out": opts["samples_out"],
        "plane": opts["plane"],
    }
    return SweepSpec(
        subject=subject,
        base=base,
        axes=tuple(axes),
        ks=None if ks is None else tuple(ks),
        trajectory=trajectory,
        out=opts["out"],
        seed=opts["seed"],
        threads=threads,
        extra=extra,
    )


def _phase_axes(opts) -> list:
    if opts["h"] is not None:
        raise UsageError("phase takes --gamma, not --h")
    beta_range = opts["beta_range"] or (1.5, 3.0, 40)
    if opts["plane"] == "beta-gamma":
        if opts["n_range"] is not None:
            raise UsageError("--n-range belongs to --plane beta-n")
        if opts["n"] is None:
            opts["n"] = 80
        return [AxisRange("beta", *beta_range), AxisRange("gamma", *(opts["gamma_range"] or (0.7, 0.95, 40)))]
    if opts["plane"] == "beta-n":
        if opts["gamma_range"] is not None:
            raise UsageError("--gamma-range belongs to --plane beta-gamma")
        if opts["n_range"] is None:
            raise UsageError("--plane beta-n needs --n-range")
        if opts["gamma"] is None:
            opts["gamma"] = 0.8
        return [AxisRange("beta", *beta_range), AxisRange("n", *opts["n_range"])]
    raise UsageError(f"--plane: invalid choice {opts['plane']!r}")


# ---- subcommands -----------------------------------------------------------


@contextmanager
def _output(path: Optional[str]):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _g(x) -> str:
    return f"{x:.17g}"


def _trajectory_states(spec: SweepSpec, params: GameParams):
    ends = metastable_endpoints(params)
    start = ends.meta if spec.trajectory is Trajectory.META else ends.unstable
    return start, ends.stable


def cmd_potential(spec: SweepSpec, fh) -> str:
    fh.write("k,i,phi,V\n")
    n = spec.base["n"]
    for k in spec.ks:
        v = stationary_distribution(build_transition_matrix(spec.params(k))).potential
        for i, x in enumerate(v):
            fh.write(f"{k},{i},{_g(i / n)},{_g(x)}\n")
    return f"potential: N={n}, {len(spec.ks)} k values"


def cmd_equilibria(spec: SweepSpec, fh) -> str:
    params = spec.params()
    eq = solve_equilibria(params)
    out = {
        "beta": params.beta,
        "field": params.field,
        "coupling": params.coupling,
        "noise": params.noise.kind.value,
        "regime": eq.regime.value,
        "roots": list(eq.roots),
        "stable": list(eq.stable),
        "phi_plus": eq.phi_plus,
        "phi_minus": eq.phi_minus,
        "phi_zero": eq.phi_zero,
        "h_star": eq.h_star,
        "phi_star": eq.phi_star,
    }
    if eq.phi_minus is not None:
        out["endpoints"] = metastable_endpoints(params)._asdict()
    fh.write(json.dumps(out, indent=2) + "\n")
    return f"equilibria: regime={eq.regime.value}, {len(eq.roots)} roots"


def cmd_hitting(spec: SweepSpec, fh) -> str:
    params = spec.params()
    start, target = _trajectory_states(spec, params)
    curve = hitting_curve(params, start, target, spec.ks, spec.threads)
    curve.to_csv(fh)
    m = int(np.argmin(curve.r_tau))
    return (
        f"hitting: {start}->{target}, {len(curve.ks)} k values, "
        f"min r_tau={_g(curve.r_tau[m])} at k={int(curve.ks[m])}"
    )


def cmd_phase(spec: SweepSpec, fh) -> str:
    b = spec.base
    betas = spec.axis("beta").values()
    if spec.extra["plane"] == "beta-gamma":
        pd = phase_diagram(betas, spec.axis("gamma").values(), "gamma", b["n"], coupling=b["j"], noise=b["noise"], threads=spec.threads)
    else:
        pd = phase_diagram(betas, spec.axis("n").values(), "n", gamma=b["gamma"], coupling=b["j"], noise=b["noise"], threads=spec.threads)
    pd.to_csv(fh)
    x = pd.log_ratio
    return (
        f"phase: {x.size} cells, {int(np.sum(x > 0))} positive, "
        f"{int(np.sum(x < 0))} negative, {int(np.sum(np.isnan(x)))} missing"
    )


def cmd_rhomin(spec: SweepSpec, fh) -> str:
    betas = spec.axes[0].values() if spec.axes else spec.base["beta"]
    fh.write("beta,phi_mid,k_min_estimated,rho_min_estimated,k_min_exact,rho_min_exact\n")
    for beta in betas:
        params = spec.params(beta=float(beta))
        est = estimate_k_min(params)
        start, target = _trajectory_states(spec, params)
        exact = exact_rho_min(params, start, target, threads=spec.threads)
        fh.write(
            f"{_g(beta)},{_g(est.phi_mid)},{_g(est.k_min_estimated)},{_g(est.rho_min_estimated)},"
            f"{exact.k_min_exact},{_g(exact.rho_min_exact)}\n"
        )
    return f"rhomin: {len(betas)} beta values"


def cmd_simulate(spec: SweepSpec, fh) -> str:
    params = spec.params(spec.ks[0])
    start, target = _trajectory_states(spec, params)
    config = RunConfig(params, start, target, spec.extra["samples"], spec.seed, spec.extra["max_steps"])
    summary = run_batch(config, spec.threads, spec.extra["bins"])
    fh.write(json.dumps(summary.to_dict(), indent=2) + "\n")
    if spec.extra["samples_out"]:
        with open(spec.extra["samples_out"], "w", encoding="utf-8", newline="\n") as sfh:
            summary.dump_samples(sfh)
    return (
        f"simulate: {start}->{target}, n={summary.n}, censored={summary.n_censored}, "
        f"mean={_g(summary.mean)} +- {_g(summary.std_error)}"
    )


def cmd_matrix_dump(spec: SweepSpec, fh) -> str:
    tm = build_transition_matrix(spec.params(spec.ks[0]))
    tm.to_csv(fh)
    return f"matrix-dump: {tm.n_states} states, raw row deviation {tm.max_row_deviation:.3e}"


COMMANDS = {
    Subject.POTENTIAL: cmd_potential,
    Subject.EQUILIBRIA: cmd_equilibria,
    Subject.HITTING: cmd_hitting,
    Subject.PHASE: cmd_phase,
    Subject.RHOMIN: cmd_rhomin,
    Subject.SIMULATE: cmd_simulate,
    Subject.MATRIX_DUMP: cmd_matrix_dump,
}


def run_command(argv: Sequence[str]) -> int:
    try:
        spec = resolve(argv)
    except (TypeError, ValueError) as exc:
        # malformed values coming from a config file
        print(f"kflip: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"kflip: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with _output(spec.out) as fh:
            summary = COMMANDS[spec.subject](spec, fh)
    except KFlipError as exc:
        print(f"kflip: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"kflip: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(summary, file=sys.stdout if spec.out else sys.stderr)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
