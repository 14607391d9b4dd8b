"""Outer loops: block proximal Newton with backtracking, with unit steps, and
the variable-metric baseline."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .problem import CompositeProblem
from .residual import residual
from .sampling import SamplingStrategy
from .subproblem import (
    InexactSolution,
    InnerSolveError,
    RestrictedQuadraticModel,
    eta_bar_linesearch,
    eta_linesearch_policy,
    eta_unit_policy,
    estimate_curvature_floor,
    solve_subproblem,
)

MAX_LS_TRIALS = 60

# eta_rule(x, S, mu) -> eta; lets experiments plug in problem-specific rules
EtaRule = Callable[[np.ndarray, np.ndarray, float], float]


class Algorithm(str, enum.Enum):
    LINESEARCH = "linesearch"
    UNIT_STEP = "unit"
    VM_BASELINE = "vm"


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    INNER_FAILURE = "InnerFailure"
    LINESEARCH_FAILURE = "LineSearchFailure"


class LineSearchError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    mu: float = 1e-5
    tau: float = 5e-6
    theta: float = 0.6
    max_outer: int = 5000
    stop_tol: float = 1e-4
    algorithm: Algorithm = Algorithm.LINESEARCH
    seed: int = 0
    vm_gamma: float = 0.1
    vm_inner_iters: int = 10
    max_inner: int = 500
    max_ls_trials: int = MAX_LS_TRIALS
    record_iterates: bool = False
    timing: bool = True

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        if self.algorithm is Algorithm.UNIT_STEP:
            if not 0 < self.mu <= 1:
                raise ValueError("unit-step method needs 0 < mu <= 1")
        elif not 0 < self.tau < self.mu < 1:
            raise ValueError(f"need 0 < tau < mu < 1, got tau={self.tau}, mu={self.mu}")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.algorithm is Algorithm.VM_BASELINE and not 0 < self.vm_gamma < 1:
            raise ValueError("vm_gamma must lie in (0, 1)")
        if self.max_outer < 0 or self.max_inner < 1 or self.vm_inner_iters < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class IterationRecord:
    """State ``x^k`` plus data of the step that produced it (zeros for ``k = 0``)."""

    k: int
    phi: float
    resid_norm: float
    step_size: float = 0.0
    ls_trials: int = 0
    block_size: int = 0
    inner_iters: int = 0
    cert_norm: float = 0.0
    step_norm: float = 0.0
    time_s: float = 0.0
    eta: float = 0.0
    block_resid_norm: float = 0.0
    block: Optional[np.ndarray] = None


@dataclass
class SolveTrace:
    records: list[IterationRecord]
    status: Status
    x: np.ndarray
    config: SolverConfig
    iterates: Optional[list[np.ndarray]] = None
    constants: dict = field(default_factory=dict)
    message: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def _backtrack(phi_eval, x, S, d_S, phi_x, tau, theta, max_trials):
    """Return ``(alpha, trials, x_trial, phi_trial)`` for the sufficient-decrease search."""
    dsq = float(d_S @ d_S)
    if dsq == 0.0:
        raise ValueError("line search needs a nonzero direction")
    alpha = 1.0
    for j in range(max_trials + 1):
        x_trial = x.copy()
        x_trial[S] = x[S] + alpha * d_S
        phi_trial = phi_eval(x_trial)
        if phi_trial <= phi_x - 0.5 * tau * alpha * dsq:
            return alpha, j, x_trial, phi_trial
        alpha *= theta
    raise LineSearchError(f"no sufficient decrease after {max_trials} backtracking steps")


def backtracking_line_search(phi_eval, x, d, phi_x, tau, theta, max_trials=MAX_LS_TRIALS):
    """Step ``theta**j`` with the smallest ``j`` such that
    ``phi(x + theta**j d) <= phi_x - tau/2 * theta**j * ||d||^2``.

    Returns ``(alpha, j)``. Raises ``LineSearchError`` after ``max_trials``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    S = np.arange(x.size)
    alpha, j, _, _ = _backtrack(phi_eval, x, S, d, phi_x, tau, theta, max_trials)
    return alpha, j


def spectral_prox_grad(model: RestrictedQuadraticModel, iters: int,
                       alpha0: float = 1.0, alpha_min=1e-30, alpha_max=1e30):
    """Fixed number of Barzilai-Borwein proximal gradient steps on the model.

    Each step uses curvature ``alpha`` (step ``1/alpha``), increased by 2x
    until the model decreases. Returns the solution with the last certificate.
    """
    reg = model.reg_slice
    y = model.base.copy()
    gy = model.smooth_gradient(y)
    qy = model.smooth_value(y) + reg.value(y)
    alpha = alpha0
    cert = np.zeros_like(y)
    done = 0
    for done in range(1, iters + 1):
        for _ in range(60):
            y_new = reg.prox(y - gy / alpha, 1.0 / alpha)
            q_new = model.smooth_value(y_new) + reg.value(y_new)
            if q_new <= qy - 1e-4 * 0.5 * alpha * float((y_new - y) @ (y_new - y)):
                break
            alpha = min(2.0 * alpha, alpha_max)
        else:
            break
        g_new = model.smooth_gradient(y_new)
        s, dg = y_new - y, g_new - gy
        cert = alpha * (y - y_new) + g_new - gy
        ss = float(s @ s)
        if ss == 0.0:
            y, gy, qy = y_new, g_new, q_new
            break
        alpha = float(np.clip(float(s @ dg) / ss, alpha_min, alpha_max))
        y, gy, qy = y_new, g_new, q_new
    step = float(np.linalg.norm(y - model.base))
    return InexactSolution(y, float(np.linalg.norm(cert)), done, step, cert)


def solver_constants(problem: CompositeProblem, config: SolverConfig) -> dict:
    """Known constants for the runtime bounds (missing entries are ``None``)."""
    L, zeta, mu = problem.smooth.lipschitz_bound, problem.smooth.zeta, config.mu
    consts = {"mu": mu, "tau": config.tau, "theta": config.theta,
              "L_g": L, "zeta": zeta, "eta_bar": None, "c1": None}
    if L is not None and zeta is not None:
        if config.algorithm is Algorithm.UNIT_STEP:
            p = eta_unit_policy(L, zeta, mu)
            consts["theta_reg"] = p.theta_reg
            eta_bar = p.eta_bar
        else:
            eta_bar = eta_bar_linesearch(mu, L, zeta)
        consts["eta_bar"] = eta_bar
        consts["c1"] = 1.0 + L + zeta + eta_bar + 0.5 * mu
    return consts


def _solve(problem: CompositeProblem, config: SolverConfig, strategy: SamplingStrategy,
           x0=None, eta_rule: Optional[EtaRule] = None) -> SolveTrace:
    oracle, reg = problem.smooth, problem.regularizer
    n = problem.n
    if strategy.n != n:
        raise ValueError("sampling strategy dimension does not match the problem")
    alg = config.algorithm
    consts = solver_constants(problem, config)
    if alg is Algorithm.UNIT_STEP and consts["eta_bar"] is None:
        raise ValueError("the unit-step method needs lipschitz_bound and zeta on the oracle")

    rng = np.random.default_rng(config.seed)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    phi = problem.value(x)
    if not np.isfinite(phi):
        raise ValueError("starting point is outside the domain")
    grad = oracle.gradient(x)
    rep = residual(problem, x, grad)

    clock = time.perf_counter if config.timing else (lambda: 0.0)
    t0 = clock()
    records = [IterationRecord(0, phi, rep.norm, time_s=0.0)]
    iterates = [x.copy()] if config.record_iterates else None
    status, message = Status.MAX_ITER, ""

    for k in range(config.max_outer):
        if rep.norm <= config.stop_tol:
            status = Status.CONVERGED
            break
        S = strategy.sample(rng, rep.per_coordinate_abs)
        if not reg.respects_pieces(S):
            raise ValueError("sampled block splits a regularizer group")
        y = x[S]
        block_resid = float(np.linalg.norm(rep.g_full[S]))
        q_op = oracle.restricted_operator(x, S)
        floor = oracle.curvature_floor(x, S)
        if floor is None:
            floor = estimate_curvature_floor(q_op)
        if alg is Algorithm.UNIT_STEP:
            eta = eta_unit_policy(consts["L_g"], consts["zeta"], config.mu, floor).eta
        elif eta_rule is not None:
            eta = float(eta_rule(x, S, config.mu))
        else:
            eta = eta_linesearch_policy(floor, config.mu, consts["eta_bar"])
        reg_S = reg.restrict(S)
        model = RestrictedQuadraticModel(grad[S], q_op, eta, y, reg_S, phi - reg.value(x))

        try:
            if alg is Algorithm.VM_BASELINE:
                sol = spectral_prox_grad(model, config.vm_inner_iters)
            else:
                sol = solve_subproblem(model, config.mu, config.max_inner,
                                       oracle.operator_norm_bound(x, S))
        except InnerSolveError as exc:
            status, message = Status.INNER_FAILURE, str(exc)
            break

        d_S = sol.y_hat - y
        # a null step passes the first trial trivially
        alpha, trials = (1.0 if sol.step_norm == 0.0 else 0.0), 0
        x_new, phi_new = x, phi
        try:
            if sol.step_norm > 0.0:
                if alg is Algorithm.LINESEARCH:
                    alpha, trials, x_new, phi_new = _backtrack(
                        problem.value, x, S, d_S, phi, config.tau, config.theta,
                        config.max_ls_trials)
                elif alg is Algorithm.UNIT_STEP:
                    x_new = x.copy()
                    x_new[S] = sol.y_hat
                    phi_new, alpha = problem.value(x_new), 1.0
                else:
                    decr = float(grad[S] @ d_S) + reg_S.value(sol.y_hat) - reg_S.value(y)
                    if decr < 0.0:
                        alpha, trials, x_new, phi_new = _armijo(
                            problem.value, x, S, d_S, phi, decr, config.vm_gamma,
                            config.theta, config.max_ls_trials)
        except LineSearchError as exc:
            status, message = Status.LINESEARCH_FAILURE, str(exc)
            break

        if x_new is not x:
            x, phi = x_new, phi_new
            grad = oracle.gradient(x)
            rep = residual(problem, x, grad)
        records.append(IterationRecord(
            k + 1, phi, rep.norm, alpha, trials, len(S), sol.inner_iterations,
            sol.certificate_norm, sol.step_norm, clock() - t0, eta, block_resid, S))
        if iterates is not None:
            iterates.append(x.copy())
    else:
        if rep.norm <= config.stop_tol:
            status = Status.CONVERGED

    return SolveTrace(records, status, x, config, iterates, consts, message)


def _armijo(phi_eval, x, S, d_S, phi_x, decr, gamma, theta, max_trials):
    alpha = 1.0
    for j in range(max_trials + 1):
        x_trial = x.copy()
        x_trial[S] = x[S] + alpha * d_S
        phi_trial = phi_eval(x_trial)
        if phi_trial <= phi_x + alpha * gamma * decr:
            return alpha, j, x_trial, phi_trial
        alpha *= theta
    raise LineSearchError(f"no Armijo decrease after {max_trials} backtracking steps")


def _require(config: SolverConfig, alg: Algorithm):
    if config.algorithm is not alg:
        raise ValueError(f"config.algorithm is {config.algorithm.value!r}, expected {alg.value!r}")


def run_alg1(problem, config, strategy, x0=None, eta_rule=None) -> SolveTrace:
    """Block proximal Newton with backtracking line search."""
    _require(config, Algorithm.LINESEARCH)
    return _solve(problem, config, strategy, x0, eta_rule)


def run_alg2(problem, config, strategy, x0=None) -> SolveTrace:
    """Block proximal Newton with unit steps; needs a known Lipschitz bound."""
    _require(config, Algorithm.UNIT_STEP)
    return _solve(problem, config, strategy, x0)


def run_vm(problem, config, strategy, x0=None, eta_rule=None) -> SolveTrace:
    """Variable-metric baseline: a few spectral prox-gradient inner steps and an
    Armijo search on the model decrease."""
    _require(config, Algorithm.VM_BASELINE)
    return _solve(problem, config, strategy, x0, eta_rule)


def solve(problem, config, strategy, x0=None, eta_rule=None) -> SolveTrace:
    if config.algorithm is Algorithm.UNIT_STEP:
        return run_alg2(problem, config, strategy, x0)
    return _solve(problem, config, strategy, x0, eta_rule)
