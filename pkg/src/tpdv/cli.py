"""Command-line driver: quadratic saddle problems, the Darcy benchmark and
continuous flows.

Examples
--------
::

    tpdv-bench --problem quadratic --algo tpdv --param-mode theoretical
    tpdv-bench --problem darcy --algo tpdv --n 32 64 128
    tpdv-bench --problem flow --dim 20 --mdim 5 --flow-tend 10 --flow-dt 1e-3

Output files go to ``--output`` or, by default, to the directory named by the
``TPDV_OUTPUT_DIR`` environment variable (current directory if unset).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .solver import ConvergenceRecord, TpdvParams, solve

PROBLEMS = ("quadratic", "darcy", "flow")
ALGOS = ("tpdv", "tpdv-imex", "uzawa")
OUTPUT_ENV = "TPDV_OUTPUT_DIR"

_MODE = {"tpdv": "explicit", "tpdv-imex": "imex", "uzawa": "uzawa"}
_DARCY_VARIANT = {"tpdv": "tpdv", "tpdv-imex": "tpdv_imex", "uzawa": "uzawa"}
# practical step parameters for the quadratic problems when none are given
_QUADRATIC_DEFAULTS = {"tpdv": (0.1, 1.0), "tpdv-imex": (1.0, 1.0), "uzawa": (1.0, 0.1)}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class RunConfig:
    problem: str = "quadratic"
    algo: str = "tpdv"
    param_mode: str = "practical"
    n: List[int] = field(default_factory=lambda: [32])
    dim: int = 20
    mdim: int = 5
    cond: float = 10.0
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    tol: float = 1e-6
    max_iter: Optional[int] = None
    mg_cycles: int = 1
    seed: int = 0
    output: Optional[str] = None
    flow_tend: float = 10.0
    flow_dt: float = 1e-3

    def validate(self) -> "RunConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if self.problem not in PROBLEMS:
            bad("problem", f"must be one of {PROBLEMS}")
        if self.algo not in ALGOS:
            bad("algo", f"must be one of {ALGOS}")
        if self.param_mode not in ("practical", "theoretical"):
            bad("param_mode", "must be practical or theoretical")
        if self.alpha is not None and not self.alpha > 0:
            bad("alpha", "must be positive")
        if self.gamma is not None and not self.gamma > 0:
            bad("gamma", "must be positive")
        if not 0 < self.tol < 1:
            bad("tol", "must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            bad("max_iter", "must be >= 1")
        if self.mg_cycles < 1:
            bad("mg_cycles", "must be >= 1")
        if not self.n or any(int(k) < 2 for k in self.n):
            bad("n", "every mesh size must be >= 2")
        if not 1 <= self.mdim < self.dim:
            bad("mdim", "need 1 <= mdim < dim")
        if not self.cond >= 1:
            bad("cond", "must be >= 1")
        if not self.flow_dt > 0:
            bad("flow_dt", "must be positive")
        if not self.flow_tend >= 0:
            bad("flow_tend", "must be nonnegative")
        if self.problem == "darcy" and self.param_mode == "theoretical":
            bad("param_mode", "theoretical parameters need dense eigensolves; "
                "use practical for darcy")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
        return cls(**data)

    def output_path(self, suffix: str = "") -> Path:
        if self.output:
            p = Path(self.output)
            return p.with_name(p.stem + suffix + p.suffix) if suffix else p
        base = Path(os.environ.get(OUTPUT_ENV, "."))
        name = f"{self.problem}_{self.algo}_{self.param_mode}_seed{self.seed}{suffix}.csv"
        return base / name


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def report(records: Sequence[ConvergenceRecord]) -> str:
    """Aligned table sorted by dofs, with ``rho_hat = (E_K / E_0)^(1/K)``."""
    if not records:
        raise ValueError("no records")
    rows = sorted(records, key=lambda r: r.dofs)
    lines = [f"{'run':<24} {'dofs':>9} {'iterations':>10} {'vcycles':>8} {'seconds':>9} "
             f"{'rho_hat':>9}  status"]
    for r in rows:
        rate = r.empirical_rate()
        rate_s = "" if rate is None else f"{rate:.6f}"
        lines.append(f"{r.label:<24} {r.dofs:>9d} {r.iterations:>10d} {r.total_vcycles:>8d} "
                     f"{r.seconds:>9.2f} {rate_s:>9}  {r.status}")
    return "\n".join(lines)


def _summary(rec: ConvergenceRecord) -> str:
    return (f"{rec.label}: status={rec.status} iterations={rec.iterations} "
            f"final_residual={rec.final_residual:.3e} relative={rec.relative_residual:.3e}")


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def _quadratic_spec(cfg: RunConfig):
    from .problems import QuadraticSaddleSpec
    return QuadraticSaddleSpec(n=cfg.dim, m=cfg.mdim, cond_a=cfg.cond, seed=cfg.seed)


def _params(cfg: RunConfig, defaults) -> TpdvParams:
    a = cfg.alpha if cfg.alpha is not None else defaults[0]
    g = cfg.gamma if cfg.gamma is not None else defaults[1]
    return TpdvParams(a, g, mode=_MODE[cfg.algo], param_mode=cfg.param_mode)


def _run_quadratic(cfg: RunConfig, out):
    from .problems import make_quadratic_saddle

    q = make_quadratic_saddle(_quadratic_spec(cfg))
    params = _params(cfg, _QUADRATIC_DEFAULTS[cfg.algo])
    max_iter = cfg.max_iter or (100_000 if cfg.param_mode == "theoretical" else 10_000)
    rec = solve(q.problem, params, tol=cfg.tol, max_iter=max_iter,
                reference=(q.ustar, q.pstar), seed=cfg.seed)
    rec.label = f"quadratic-{cfg.algo}-{cfg.param_mode}"
    path = cfg.output_path()
    _write(path, rec.to_csv())
    print(_summary(rec), file=out)
    print(report([rec]), file=out)
    return [rec.converged]


def _run_darcy(cfg: RunConfig, out):
    from .darcy import DEFAULT_PARAMS, run_benchmark

    variant = _DARCY_VARIANT[cfg.algo]
    base = DEFAULT_PARAMS[variant]
    params = _params(cfg, (base.alpha, base.gamma))
    table = run_benchmark(variant, [int(k) for k in cfg.n], params, tol=cfg.tol,
                          max_iter=cfg.max_iter or 1000, mg_cycles=cfg.mg_cycles)
    _write(cfg.output_path(), table.to_csv())
    recs = []
    for row in table.rows:
        rec = row.record
        rec.label = f"darcy-{cfg.algo}-n{row.n}"
        rec.seconds = row.seconds
        _write(cfg.output_path(f"_n{row.n}"), rec.to_csv())
        print(_summary(rec), file=out)
        recs.append(rec)
    print(table.to_text(), file=out)
    print(report(recs), file=out)
    return [r.converged for r in recs]


def _run_flow(cfg: RunConfig, out):
    from .flowsim import FlowState, check_decay, integrate, quadratic_flow
    from .problems import kkt_solve, make_quadratic_saddle

    q = make_quadratic_saddle(_quadratic_spec(cfg))
    prob = q.problem
    A = prob.f.hessian
    iv = prob.iv_factory(None)
    fp = quadratic_flow(A, prob.B, _linear_term(prob), prob.b, lambda t: iv, constant=True)
    ustar, pstar = kkt_solve(A, prob.B, _linear_term(prob), prob.b)
    init = FlowState(np.zeros(prob.n_primal), np.zeros(prob.n_dual), np.eye(prob.n_dual))
    every = max(1, int(round(0.01 / cfg.flow_dt)))
    traj = integrate(fp, init, cfg.flow_tend, cfg.flow_dt, sample_every=every)
    rep = check_decay(traj, ustar, pstar, fp, rtol=1e-4)
    _write(cfg.output_path(), rep.to_csv())
    n_viol = int(rep.violations.size)
    print(f"flow: samples={len(traj)} t_end={traj[-1].t:g} E(0)={rep.energy[0]:.3e} "
          f"E(T)={rep.energy[-1]:.3e} bound(T)={rep.bound[-1]:.3e} violations={n_viol} "
          f"hypothesis_met={rep.hypothesis_met}", file=out)
    return [rep.ok]


def _linear_term(prob) -> np.ndarray:
    # f(u) = u^T A u / 2 - c^T u, so c = -grad f(0)
    return -prob.f.grad(np.zeros(prob.n_primal))


def _write(path: Path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def run(config: RunConfig, out=None) -> int:
    """Execute ``config``; returns 0 iff every requested run converged."""
    out = sys.stdout if out is None else out
    config.validate()
    runner = {"quadratic": _run_quadratic, "darcy": _run_darcy, "flow": _run_flow}[config.problem]
    ok = runner(config, out)
    return 0 if all(ok) else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpdv-bench", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--problem", choices=PROBLEMS, default="quadratic")
    p.add_argument("--algo", choices=ALGOS, default="tpdv")
    p.add_argument("--param-mode", choices=("practical", "theoretical"), default="practical")
    p.add_argument("--n", type=int, nargs="+", default=[32],
                   help="Darcy mesh subdivisions per side (h = 2/n); several allowed")
    p.add_argument("--dim", type=int, default=20, help="primal dimension (quadratic, flow)")
    p.add_argument("--mdim", type=int, default=5, help="dual dimension (quadratic, flow)")
    p.add_argument("--cond", type=float, default=10.0, help="condition number of A")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-6, help="relative residual tolerance")
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--mg-cycles", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None, help="CSV path")
    p.add_argument("--flow-tend", type=float, default=10.0)
    p.add_argument("--flow-dt", type=float, default=1e-3)
    p.add_argument("--dump-config", action="store_true", help="print the config as JSON")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(problem=ns.problem, algo=ns.algo, param_mode=ns.param_mode, n=list(ns.n),
                     dim=ns.dim, mdim=ns.mdim, cond=ns.cond, alpha=ns.alpha, gamma=ns.gamma,
                     tol=ns.tol, max_iter=ns.max_iter, mg_cycles=ns.mg_cycles, seed=ns.seed,
                     output=ns.output, flow_tend=ns.flow_tend, flow_dt=ns.flow_dt)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    cfg = config_from_args(ns)
    try:
        cfg.validate()
    except ConfigError as exc:
        parser.error(str(exc))
    if ns.dump_config:
        print(cfg.to_json())
    try:
        return run(cfg)
    except OSError as exc:
        print(f"tpdv-bench: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
