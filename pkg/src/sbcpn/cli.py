"""Experiment runner.

Config files are INI documents with four sections::

    [problem]
    kind = students_t          ; students_t | geman_mcclure | biweight_group
    n = 512
    lambda = 0.001             ; classification problems only
    path = data.libsvm         ; optional for the classification problems
    m_select = 240             ; optional libsvm subsample size
    m = 128                    ; synthetic classification sample count

    [solver]
    algorithm = linesearch     ; linesearch | unit | vm
    mu = 1e-5
    stop_tol = 1e-4

    [sampling]
    strategy = topk
    size = 128

    [run]
    trials = 3
    seed_base = 0
    output_dir = out

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .checks import check_trace
from .driver import Algorithm, SolverConfig, SolveTrace, Status, solve
from .problem import CompositeProblem
from .regularizers import GroupL2, Zero
from .sampling import STRATEGY_NAMES, make_strategy
from .experiments.classification import (
    BiweightGroupInstance,
    BiweightOracle,
    ClassificationInstance,
    GemanMcClureOracle,
    biweight_eta_rule,
    gen_biweight,
    gen_classification,
    geman_mcclure_eta_rule,
)
from .experiments.students_t import (
    gen_students_t,
    load_students_t,
    save_students_t,
    students_t_problem,
)

CSV_COLUMNS = ("iter", "time_s", "phi", "resid_norm", "step_size", "ls_trials",
               "block_size", "inner_iters", "cert_norm", "step_norm")
PROBLEM_KINDS = ("students_t", "geman_mcclure", "biweight_group")
WORKERS_ENV = "SBCPN_MAX_WORKERS"
PAPER_TAU = 1e-5
REFERENCE_MAX_OUTER = 20000


def _fmt(v) -> str:
    return f"{float(v):.17g}"


# ---------------------------------------------------------------- libsvm

def parse_libsvm(stream, n: Optional[int] = None):
    """Read ``label idx:val ...`` lines into unit-norm feature columns.

    Parameters
    ----------
    stream : iterable of str
        Open text file or list of lines. Blank lines and ``#`` comments are
        skipped.
    n : int, optional
        Feature dimension. Indices are 1-based and must not exceed ``n``;
        when omitted the largest index seen is used.

    Returns
    -------
    Z : scipy.sparse.csc_matrix
        ``n x m`` matrix whose columns are the normalized samples. Samples
        with no nonzero feature are dropped with a warning.
    labels : ndarray
        Raw labels of the kept samples.
    """
    rows, cols, vals, labels = [], [], [], []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            label = float(tok[0])
        except ValueError:
            raise ValueError(f"line {lineno}: bad label {tok[0]!r}") from None
        j = len(labels)
        seen = set()
        for item in tok[1:]:
            idx, sep, val = item.partition(":")
            try:
                if not sep:
                    raise ValueError
                i, v = int(idx), float(val)
            except ValueError:
                raise ValueError(f"line {lineno}: malformed feature {item!r}") from None
            if i < 1:
                raise ValueError(f"line {lineno}: feature index {i} is not 1-based")
            if n is not None and i > n:
                raise ValueError(f"line {lineno}: feature index {i} exceeds n={n}")
            if i in seen:
                raise ValueError(f"line {lineno}: duplicate feature index {i}")
            seen.add(i)
            rows.append(i - 1)
            cols.append(j)
            vals.append(v)
        labels.append(label)
    if n is None:
        n = max(rows) + 1 if rows else 0
    m = len(labels)
    Z = sp.csc_matrix((vals, (rows, cols)), shape=(n, m), dtype=float)
    Z.eliminate_zeros()
    norms = np.sqrt(np.asarray(Z.multiply(Z).sum(axis=0)).ravel())
    keep = np.flatnonzero(norms > 0)
    if keep.size < m:
        warnings.warn(f"dropped {m - keep.size} sample(s) with no nonzero feature",
                      stacklevel=2)
    Z = Z[:, keep] @ sp.diags(1.0 / norms[keep])
    return sp.csc_matrix(Z), np.asarray(labels, dtype=float)[keep]


def select_samples(Z, labels, m_select: Optional[int], seed: int):
    """Seeded shuffle of the samples, then the first ``m_select`` of them."""
    m = Z.shape[1]
    if m_select is None or m_select >= m:
        return Z, labels, np.arange(m)
    if m_select < 1:
        raise ValueError("m_select must be positive")
    idx = np.random.default_rng(seed).permutation(m)[:m_select]
    return Z[:, idx], labels[idx], idx


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    kind: str
    n: Optional[int] = None
    lam: Optional[float] = None
    path: Optional[Path] = None
    m: Optional[int] = None
    m_select: Optional[int] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    strategy: str = "full"
    size: Optional[int] = None
    trials: int = 1
    seed_base: int = 0
    output_dir: Path = Path("out")
    reference_tol: float = 1e-10
    source: Optional[Path] = None

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {PROBLEM_KINDS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.strategy not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGY_NAMES}")
        if self.path is None:
            if self.n is None:
                raise ValueError("problem.n is required for generated instances")
            if self.kind != "students_t" and self.m is None:
                raise ValueError("problem.m is required for synthetic classification data")

    @property
    def instance_per_trial(self) -> bool:
        """Generated problems draw a fresh instance for every trial seed."""
        return self.path is None


def _solver_from_section(sec, kind: str) -> SolverConfig:
    mu_default = 1e-3 if kind == "biweight_group" else 1e-5
    mu = sec.getfloat("mu", mu_default)
    # tau must stay below mu; the 1e-5 default is kept whenever it can be
    tau = sec.getfloat("tau", min(PAPER_TAU, 0.5 * mu))
    kw = {"mu": mu, "tau": tau}
    for f in fields(SolverConfig):
        if f.name in kw or f.name in ("seed", "record_iterates") or f.name not in sec:
            continue
        if f.name == "algorithm":
            kw[f.name] = Algorithm(sec[f.name])
        elif f.name == "timing":
            kw[f.name] = sec.getboolean(f.name)
        elif f.name in ("max_outer", "max_inner", "max_ls_trials", "vm_inner_iters"):
            kw[f.name] = sec.getint(f.name)
        else:
            kw[f.name] = sec.getfloat(f.name)
    known = {f.name for f in fields(SolverConfig)}
    unknown = set(sec) - known
    if unknown:
        raise ValueError(f"unknown solver option(s): {', '.join(sorted(unknown))}")
    return SolverConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise FileNotFoundError(f"cannot read config {path}")
    for name in ("problem", "solver", "sampling", "run"):
        if not cp.has_section(name):
            cp.add_section(name)
    prob, run, samp = cp["problem"], cp["run"], cp["sampling"]
    base = path.parent

    def opt_int(sec, key):
        return sec.getint(key) if key in sec else None

    kind = prob.get("kind", "students_t")
    data = Path(base, prob["path"]) if "path" in prob else None
    out = Path(base, run.get("output_dir", "out"))
    return ExperimentConfig(
        kind=kind,
        n=opt_int(prob, "n"),
        lam=prob.getfloat("lambda", 1e-3),
        path=data,
        m=opt_int(prob, "m"),
        m_select=opt_int(prob, "m_select"),
        solver=_solver_from_section(cp["solver"], kind),
        strategy=samp.get("strategy", "full"),
        size=opt_int(samp, "size"),
        trials=run.getint("trials", 1),
        seed_base=run.getint("seed_base", 0),
        output_dir=out,
        reference_tol=run.getfloat("reference_tol", 1e-10),
        source=path,
    )


# ---------------------------------------------------------------- instances

@dataclass
class Instance:
    problem: CompositeProblem
    eta_rule: object = None
    unit_bounds: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)


def _load_libsvm(cfg: ExperimentConfig):
    with open(cfg.path) as fh:
        Z, labels = parse_libsvm(fh, cfg.n)
    Z, labels, idx = select_samples(Z, labels, cfg.m_select, cfg.seed_base)
    info = {"data": str(cfg.path), "samples": int(Z.shape[1]),
            "selection": "seeded shuffle then first m_select",
            "selection_seed": cfg.seed_base, "selected": idx.tolist()}
    return Z, labels, info


def build_instance(cfg: ExperimentConfig, seed: int) -> Instance:
    """Problem for one trial. Every call returns fresh oracles."""
    if cfg.kind == "students_t":
        if cfg.path is not None:
            inst = load_students_t(cfg.path)
            info = {"data": str(cfg.path)}
        else:
            inst = gen_students_t(cfg.n, seed)
            info = {"instance_seed": seed}
        info.update(n=inst.n, m=inst.m, lam=inst.lam)
        return Instance(students_t_problem(inst), info=info)

    if cfg.path is not None:
        Z, labels, info = _load_libsvm(cfg)
    else:
        Z = labels = None
        info = {"instance_seed": seed}

    if cfg.kind == "geman_mcclure":
        if Z is None:
            ci = gen_classification(cfg.n, cfg.m, seed, cfg.lam)
        else:
            ci = ClassificationInstance(Z, (labels > 0).astype(float), cfg.lam)
        oracle = GemanMcClureOracle(ci)
        info.update(n=ci.n, m=ci.m, lam=ci.lam)
        return Instance(CompositeProblem(oracle, Zero(ci.n)),
                        geman_mcclure_eta_rule(oracle), info=info)

    if Z is None:
        bi, oracle, reg = gen_biweight(cfg.n, cfg.m, seed, cfg.lam)
    else:
        reg = GroupL2.contiguous(Z.shape[0], cfg.lam)
        bi = BiweightGroupInstance(Z, np.where(labels > 0, 1.0, -1.0), cfg.lam, reg.bounds)
        oracle = BiweightOracle(bi)
    info.update(n=bi.n, m=bi.m, lam=bi.lam)
    return Instance(CompositeProblem(oracle, reg), biweight_eta_rule(oracle),
                    reg.bounds, info)


def _trial_config(cfg: ExperimentConfig, seed: int, **over) -> SolverConfig:
    kw = {f.name: getattr(cfg.solver, f.name) for f in fields(SolverConfig)}
    kw.update(seed=seed, **over)
    return SolverConfig(**kw)


def run_trial(cfg: ExperimentConfig, seed: int, record_iterates=False):
    inst = build_instance(cfg, seed)
    strat = make_strategy(cfg.strategy, inst.problem.n, cfg.size, inst.unit_bounds)
    scfg = _trial_config(cfg, seed, record_iterates=record_iterates)
    return inst, solve(inst.problem, scfg, strat, eta_rule=inst.eta_rule)


def reference_solution(cfg: ExperimentConfig, seed: int) -> SolveTrace:
    """High-accuracy Full-sampling line-search run on the trial's instance."""
    inst = build_instance(cfg, seed)
    scfg = _trial_config(cfg, seed, algorithm=Algorithm.LINESEARCH,
                         stop_tol=cfg.reference_tol,
                         max_outer=max(cfg.solver.max_outer, REFERENCE_MAX_OUTER),
                         tau=min(cfg.solver.tau, 0.5 * cfg.solver.mu))
    strat = make_strategy("full", inst.problem.n, None, inst.unit_bounds)
    return solve(inst.problem, scfg, strat, eta_rule=inst.eta_rule)


# ---------------------------------------------------------------- output

def trace_rows(trace: SolveTrace):
    for r in trace.records:
        yield [str(r.k), _fmt(r.time_s), _fmt(r.phi), _fmt(r.resid_norm), _fmt(r.step_size),
               str(r.ls_trials), str(r.block_size), str(r.inner_iters),
               _fmt(r.cert_norm), _fmt(r.step_norm)]


def _write_rows(path, header, rows):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_csv(trace: SolveTrace, path) -> None:
    """One row per outer iteration (row 0 is the starting point), 17 significant digits."""
    _write_rows(path, CSV_COLUMNS, trace_rows(trace))


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


def average_rows(traces: list[SolveTrace]):
    """Mean ``time_s, phi, resid_norm`` per iteration index over the traces,
    truncated to the shortest one."""
    K = min(len(t.records) for t in traces)
    for k in range(K):
        recs = [t.records[k] for t in traces]
        yield [str(k)] + [_fmt(np.mean([getattr(r, name) for r in recs]))
                          for name in ("time_s", "phi", "resid_norm")]


def distance_rows(dists: list[np.ndarray]):
    K = min(d.size for d in dists)
    for k in range(K):
        col = [d[k] for d in dists]
        yield [str(k)] + [_fmt(v) for v in col] + [_fmt(np.mean(col))]


def _max_workers(trials: int) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ValueError(f"{WORKERS_ENV} must be positive")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(trials, cap))


@dataclass
class ExperimentResult:
    traces: list
    files: list
    statuses: list

    @property
    def all_converged(self) -> bool:
        return all(s is Status.CONVERGED for s in self.statuses)


def _parallel_map(fn, items, workers):
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_experiment(cfg: ExperimentConfig, with_reference: bool = True) -> ExperimentResult:
    """Run the seeded trials and write trace, average and distance CSVs.

    Trial ``t`` uses seed ``seed_base + t``. Trials that stop without
    converging are excluded from the averages with a warning.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed_base + t for t in range(cfg.trials)]
    workers = _max_workers(cfg.trials)
    results = _parallel_map(lambda s: run_trial(cfg, s, record_iterates=with_reference),
                            seeds, workers)
    traces = [tr for _, tr in results]

    files = []
    for t, tr in enumerate(traces):
        p = out / f"trial_{t:03d}.csv"
        emit_csv(tr, p)
        files.append(p)

    ok = [t for t, tr in enumerate(traces) if tr.status is Status.CONVERGED]
    if len(ok) < len(traces):
        bad = ", ".join(f"{t} ({traces[t].status.value})" for t in range(len(traces)) if t not in ok)
        warnings.warn(f"excluding trial(s) {bad} from the averages", stacklevel=2)
    if ok:
        p = out / "average.csv"
        _write_rows(p, ("iter", "time_s", "phi", "resid_norm"),
                    average_rows([traces[t] for t in ok]))
        files.append(p)

    meta = {"config": _config_summary(cfg), "trials": []}
    if with_reference and ok:
        ref_seeds = sorted({seeds[t] for t in ok}) if cfg.instance_per_trial else [cfg.seed_base]
        refs = dict(zip(ref_seeds, _parallel_map(lambda s: reference_solution(cfg, s),
                                                 ref_seeds, _max_workers(len(ref_seeds)))))
        dists = []
        for t in ok:
            ref = refs[seeds[t] if cfg.instance_per_trial else cfg.seed_base]
            dists.append(np.array([np.linalg.norm(x - ref.x) for x in traces[t].iterates]))
        p = out / "distance.csv"
        _write_rows(p, ["iter"] + [f"trial_{t:03d}" for t in ok] + ["mean"], distance_rows(dists))
        files.append(p)
        meta["references"] = {str(s): {"status": r.status.value, "iterations": len(r) - 1,
                                       "resid_norm": _fmt(r.records[-1].resid_norm)}
                              for s, r in refs.items()}
    for t, ((inst, tr), seed) in enumerate(zip(results, seeds)):
        meta["trials"].append({"trial": t, "seed": seed, "status": tr.status.value,
                               "iterations": len(tr) - 1, "message": tr.message,
                               "instance": inst.info})
    p = out / "metadata.json"
    p.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    files.append(p)
    return ExperimentResult(traces, files, [tr.status for tr in traces])


def _config_summary(cfg: ExperimentConfig) -> dict:
    solver = {f.name: getattr(cfg.solver, f.name) for f in fields(SolverConfig)}
    solver["algorithm"] = cfg.solver.algorithm.value
    return {"kind": cfg.kind, "n": cfg.n, "lambda": cfg.lam,
            "path": None if cfg.path is None else str(cfg.path),
            "m": cfg.m, "m_select": cfg.m_select, "strategy": cfg.strategy,
            "size": cfg.size, "trials": cfg.trials, "seed_base": cfg.seed_base,
            "reference_tol": cfg.reference_tol, "solver": solver}


def check_experiment(cfg: ExperimentConfig):
    """Invariant violations per trial and the traces; no files are written."""
    seeds = [cfg.seed_base + t for t in range(cfg.trials)]
    results = _parallel_map(lambda s: run_trial(cfg, s), seeds, _max_workers(cfg.trials))
    report = {}
    for t, (inst, tr) in enumerate(results):
        strat = make_strategy(cfg.strategy, inst.problem.n, cfg.size, inst.unit_bounds)
        c = strat.constants().c if cfg.strategy == "topk" else None
        report[t] = check_trace(tr, strategy_c=c)
    return report, [tr for _, tr in results]


# ---------------------------------------------------------------- entry point

def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    res = run_experiment(cfg, with_reference=not args.no_reference)
    for tr, p in zip(res.traces, res.files):
        print(f"{p}: {tr.status.value} after {len(tr) - 1} iterations, "
              f"||G|| = {tr.records[-1].resid_norm:.3e}")
    return 0 if res.all_converged else 1


def _cmd_check(args) -> int:
    cfg = load_config(args.config)
    report, traces = check_experiment(cfg)
    failed = False
    for t, checks in report.items():
        bad = {k: v for k, v in checks.items() if v}
        failed |= bool(bad)
        state = "ok" if not bad else "violations " + ", ".join(
            f"{k} at k={v[:5]}" for k, v in bad.items())
        print(f"trial {t}: {traces[t].status.value}, {len(traces[t]) - 1} iterations, {state}")
    return 1 if failed else 0


def _cmd_gen(args) -> int:
    inst = gen_students_t(args.n, args.seed)
    save_students_t(inst, args.out)
    print(f"wrote {args.out}: n={inst.n} m={inst.m} lambda={inst.lam:.6g}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sbcpn", description="Stochastic block proximal Newton experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config and write CSV traces")
    p.add_argument("config")
    p.add_argument("--no-reference", action="store_true",
                   help="skip the high-accuracy reference run and distance CSV")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("check", help="run the trials and report invariant violations only")
    p.add_argument("config")
    p.set_defaults(func=_cmd_check)
    p = sub.add_parser("gen-students-t", help="write a Student's t instance file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"sbcpn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
