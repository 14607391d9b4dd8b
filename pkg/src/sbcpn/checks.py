"""Runtime bounds re-checked on finished traces.

Each function returns the list of iteration numbers ``k`` (1-based step
index) where the bound fails; an empty list means the trace is clean.
"""
from __future__ import annotations

import numpy as np

from .driver import SolveTrace


def _steps(trace: SolveTrace):
    recs = trace.records
    return zip(recs[:-1], recs[1:])


def descent_violations(trace: SolveTrace, tau: float, rel_tol: float = 1e-10) -> list[int]:
    """``phi_{k+1} <= phi_k - tau/2 * alpha_k * ||d_k||^2``."""
    bad = []
    for prev, cur in _steps(trace):
        bound = prev.phi - 0.5 * tau * cur.step_size * cur.step_norm ** 2
        if cur.phi > bound + rel_tol * max(1.0, abs(prev.phi)):
            bad.append(cur.k)
    return bad


def monotone_violations(trace: SolveTrace) -> list[int]:
    return [cur.k for prev, cur in _steps(trace) if cur.phi > prev.phi]


def certificate_violations(trace: SolveTrace, mu: float) -> list[int]:
    """``||c_k|| <= mu/2 * ||y_hat - y^k||`` on every accepted inner solve."""
    return [cur.k for _, cur in _steps(trace) if cur.cert_norm > 0.5 * mu * cur.step_norm]


def step_floor(theta: float, mu: float, tau: float, L_bound: float) -> float:
    return min(1.0, theta * (mu - tau) / L_bound)


def step_floor_violations(trace: SolveTrace, theta, mu, tau, L_bound) -> list[int]:
    """``alpha_k >= min(1, theta (mu - tau) / L)`` for every step actually taken."""
    floor = step_floor(theta, mu, tau, L_bound)
    return [cur.k for _, cur in _steps(trace)
            if cur.step_norm > 0 and cur.step_size < floor]


def residual_bound_violations(trace: SolveTrace, c1: float) -> list[int]:
    """``||G_S(y^k)|| <= c1 ||d_k||``."""
    return [cur.k for _, cur in _steps(trace) if cur.block_resid_norm > c1 * cur.step_norm]


def rate_envelope(K, c, c1, tau, theta, mu, L_bound, phi0, phi_lb=0.0):
    """Upper bound on ``min_{k <= K} ||G(x^k)||^2`` under top-k style sampling."""
    K = np.asarray(K, dtype=float)
    return (1.0 / c) * 2.0 * c1 ** 2 * (phi0 - phi_lb) / (
        tau * step_floor(theta, mu, tau, L_bound) * K)


def rate_envelope_violations(trace: SolveTrace, c, c1, tau, theta, mu, L_bound,
                             phi_lb=0.0) -> list[int]:
    resid = trace.column("resid_norm")
    running_min = np.minimum.accumulate(resid ** 2)
    K = np.arange(1, len(resid))
    env = rate_envelope(K, c, c1, tau, theta, mu, L_bound, trace.records[0].phi, phi_lb)
    return [int(k) for k, m, e in zip(K, running_min[1:], env) if m > e]


def unit_decrease_violations(trace: SolveTrace, mu: float, rel_tol: float = 0.0) -> list[int]:
    """``phi_k - phi_{k+1} >= mu/2 * ||x^{k+1} - x^k||^2`` (unit steps)."""
    bad = []
    for prev, cur in _steps(trace):
        move = cur.step_size * cur.step_norm
        if prev.phi - cur.phi < 0.5 * mu * move ** 2 - rel_tol * max(1.0, abs(prev.phi)):
            bad.append(cur.k)
    return bad


def phi_consistency_violations(trace: SolveTrace, problem, rel_tol: float = 1e-12) -> list[int]:
    """Stored objective values against a fresh evaluation (needs recorded iterates)."""
    if trace.iterates is None:
        raise ValueError("trace has no recorded iterates")
    bad = []
    for rec, x in zip(trace.records, trace.iterates):
        phi = problem.value(x)
        if abs(phi - rec.phi) > rel_tol * max(1.0, abs(phi)):
            bad.append(rec.k)
    return bad


def check_trace(trace: SolveTrace, L_bound=None, strategy_c=None) -> dict[str, list[int]]:
    """Run every bound that applies to the trace's algorithm and known constants."""
    from .driver import Algorithm

    cfg, consts = trace.config, trace.constants
    mu, tau, theta = cfg.mu, cfg.tau, cfg.theta
    L = L_bound if L_bound is not None else consts.get("L_g")
    out = {"monotone": monotone_violations(trace)}
    if cfg.algorithm is not Algorithm.VM_BASELINE:
        out["certificate"] = certificate_violations(trace, mu)
        if consts.get("c1") is not None:
            out["residual_bound"] = residual_bound_violations(trace, consts["c1"])
    if cfg.algorithm is Algorithm.LINESEARCH:
        out["descent"] = descent_violations(trace, tau)
        if L is not None:
            out["step_floor"] = step_floor_violations(trace, theta, mu, tau, L)
            if strategy_c is not None and consts.get("c1") is not None:
                out["rate_envelope"] = rate_envelope_violations(
                    trace, strategy_c, consts["c1"], tau, theta, mu, L)
    if cfg.algorithm is Algorithm.UNIT_STEP:
        out["unit_decrease"] = unit_decrease_violations(trace, mu, 1e-12)
    return out
