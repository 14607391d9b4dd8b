"""Restricted quadratic models and their certified inexact solution.

The model on block ``S`` around ``y0 = x[S]`` is::

    q(y) = f(x) + <grad_S, y - y0> + 1/2 <Q_S (y - y0), y - y0>
           + eta/2 ||y - y0||^2 + g_S(y)

An approximate minimizer ``y_hat`` is accepted once a subgradient
``c in dq(y_hat)`` with ``||c|| <= (mu/2) ||y_hat - y0||`` is available.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .problem import DENSE_LIMIT
from .regularizers import SeparableRegularizer, Zero

POWER_ITERS = 20
NORM_SAFETY = 1.05
DEFAULT_MAX_INNER = 500


class InnerSolveError(RuntimeError):
    """Inner solver stopped without meeting the certificate test."""

    def __init__(self, message, certificate_norm=float("nan"), inner_iterations=0):
        super().__init__(message)
        self.certificate_norm = certificate_norm
        self.inner_iterations = inner_iterations


@dataclass(frozen=True)
class RestrictedQuadraticModel:
    grad_slice: np.ndarray
    q_op: LinearOperator
    eta: float
    base: np.ndarray
    reg_slice: SeparableRegularizer
    f_base: float

    @property
    def size(self) -> int:
        return self.base.size

    def apply(self, v):
        """``(Q_S + eta I) v``."""
        return self.q_op.matvec(v) + self.eta * v

    def smooth_gradient(self, y):
        return self.grad_slice + self.apply(y - self.base)

    def smooth_value(self, y):
        d = y - self.base
        return self.f_base + float(self.grad_slice @ d) + 0.5 * float(d @ self.apply(d))


def model_value(model: RestrictedQuadraticModel, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != model.base.shape:
        raise ValueError("y does not match the block size")
    return model.smooth_value(y) + model.reg_slice.value(y)


@dataclass
class InexactSolution:
    y_hat: np.ndarray
    certificate_norm: float
    inner_iterations: int
    step_norm: float
    certificate: Optional[np.ndarray] = None


def power_norm(op: LinearOperator, iters: int = POWER_ITERS) -> float:
    """Power-iteration estimate of ``||op||`` for a symmetric operator (seeded, deterministic)."""
    v = np.random.default_rng(0).standard_normal(op.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op.matvec(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def estimate_curvature_floor(op: LinearOperator) -> float:
    """Lower bound on the smallest eigenvalue of a symmetric operator.

    Gershgorin discs on the dense matrix for small blocks, otherwise
    ``-||op||`` from the inflated power-iteration norm estimate.
    """
    k = op.shape[0]
    if k <= DENSE_LIMIT:
        M = op.matmat(np.eye(k))
        M = 0.5 * (M + M.T)
        radius = np.abs(M).sum(axis=1) - np.abs(np.diag(M))
        return float(np.min(np.diag(M) - radius))
    return -NORM_SAFETY * power_norm(op)


def prox_grad_inner(model: RestrictedQuadraticModel, mu: float,
                    max_inner: int = DEFAULT_MAX_INNER,
                    norm_bound: Optional[float] = None) -> InexactSolution:
    """Proximal gradient on the model, started at ``model.base``.

    ``norm_bound`` is an upper bound on ``||Q_S||``; without one the norm is
    estimated by power iteration and inflated by 5%. The step is halved
    whenever the model value fails to decrease, which protects against an
    underestimated norm.
    """
    if max_inner < 1:
        raise ValueError("max_inner must be at least 1")
    L = NORM_SAFETY * power_norm(model.q_op) if norm_bound is None else float(norm_bound)
    t = 1.0 / (L + model.eta)
    reg = model.reg_slice
    base = model.base
    y = base.copy()
    gy = model.smooth_gradient(y)
    qy = model.smooth_value(y) + reg.value(y)
    cert_norm = float("inf")
    for it in range(1, max_inner + 1):
        y_new = reg.prox(y - t * gy, t)
        g_new = model.smooth_gradient(y_new)
        q_new = model.smooth_value(y_new) + reg.value(y_new)
        # prox-gradient steps with t <= 1/L never increase the model
        if q_new > qy + 1e-12 * max(1.0, abs(qy)):
            t *= 0.5
            continue
        cert = (y - y_new) / t + g_new - gy
        cert_norm = float(np.linalg.norm(cert))
        step = float(np.linalg.norm(y_new - base))
        if cert_norm <= 0.5 * mu * step:
            return InexactSolution(y_new, cert_norm, it, step, cert)
        y, gy, qy = y_new, g_new, q_new
    raise InnerSolveError(
        f"proximal gradient did not certify within {max_inner} iterations "
        f"(last certificate norm {cert_norm:.3e})", cert_norm, max_inner)


def cg_inner(model: RestrictedQuadraticModel, mu: float,
             max_inner: int = DEFAULT_MAX_INNER) -> InexactSolution:
    """Conjugate gradients on ``(Q_S + eta I) d = -grad_S`` (smooth models only).

    The certificate is the true linear residual ``grad_S + (Q_S + eta I) d``.
    """
    if not isinstance(model.reg_slice, Zero):
        raise ValueError("conjugate gradients needs a model without regularizer")
    if max_inner < 1:
        raise ValueError("max_inner must be at least 1")
    g = model.grad_slice
    d = np.zeros_like(g)
    r = -g.copy()
    rs = float(r @ r)
    if rs == 0.0:
        return InexactSolution(model.base.copy(), 0.0, 0, 0.0, np.zeros_like(g))
    p = r.copy()
    res_norm = np.sqrt(rs)
    for it in range(1, max_inner + 1):
        Ap = model.apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise InnerSolveError(
                f"model is not positive definite along a CG direction (p'Ap = {pAp:.3e})",
                res_norm, it)
        a = rs / pAp
        d += a * p
        r -= a * Ap
        rs_new = float(r @ r)
        step = float(np.linalg.norm(d))
        if np.sqrt(rs_new) <= 0.5 * mu * step:
            true_r = g + model.apply(d)
            res_norm = float(np.linalg.norm(true_r))
            if res_norm <= 0.5 * mu * step:
                return InexactSolution(model.base + d, res_norm, it, step, true_r)
            # recurrence drifted; restart from the true residual
            r = -true_r
            rs = float(r @ r)
            p = r.copy()
            continue
        res_norm = np.sqrt(rs_new)
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise InnerSolveError(
        f"conjugate gradients did not certify within {max_inner} iterations "
        f"(last residual {res_norm:.3e})", res_norm, max_inner)


def solve_subproblem(model: RestrictedQuadraticModel, mu: float,
                     max_inner: int = DEFAULT_MAX_INNER,
                     norm_bound: Optional[float] = None) -> InexactSolution:
    """CG for smooth models, proximal gradient otherwise."""
    if isinstance(model.reg_slice, Zero):
        return cg_inner(model, mu, max_inner)
    return prox_grad_inner(model, mu, max_inner, norm_bound)


def eta_linesearch_policy(curvature_floor: float, mu: float,
                          eta_bar: Optional[float] = None) -> float:
    """Regularization making ``Q_S + (eta - mu) I`` positive semidefinite with 1% margin."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    eta = 1.01 * (mu + max(0.0, -curvature_floor))
    if eta_bar is not None and eta > eta_bar:
        raise ValueError(
            f"required eta = {eta:.6g} exceeds the cap {eta_bar:.6g} "
            f"(curvature floor {curvature_floor:.6g}, mu {mu:.6g})")
    return eta


def eta_bar_linesearch(mu: float, L_g: float, zeta: float) -> float:
    return mu + 2.0 * L_g + zeta


class UnitStepParams(NamedTuple):
    theta_reg: float
    eta: float
    eta_bar: float


def unit_step_theta(L_g: float, zeta: float, mu: float) -> float:
    return 1.1 * mu * max(0.5 * (1.0 + 2.0 * zeta + 3.0 * L_g + mu),
                          (1.0 + 2.0 * zeta + 2.0 * L_g) / (2.0 - mu))


def eta_unit_policy(L_g: Optional[float], zeta: Optional[float], mu: float,
                    curvature_floor: Optional[float] = None) -> UnitStepParams:
    """Parameters for the unit-step method.

    ``eta`` is the smallest value with ``Q_S + (eta - theta_reg) I >= 0`` and
    ``Q_S + (eta - L_g - mu) I >= 0`` given the curvature floor. Without a
    floor the worst case ``-(L_g + zeta)`` is used.
    """
    if L_g is None or zeta is None:
        raise ValueError("the unit-step method needs known Lipschitz and Hessian-error bounds")
    if L_g < 0 or zeta < 0 or not 0 < mu <= 1:
        raise ValueError("need L_g >= 0, zeta >= 0 and 0 < mu <= 1")
    theta_reg = unit_step_theta(L_g, zeta, mu)
    eta_bar = max(mu + 2.0 * L_g + zeta, theta_reg + L_g + zeta)
    floor = -(L_g + zeta) if curvature_floor is None else curvature_floor
    eta = max(theta_reg, L_g + mu) - floor
    if eta > eta_bar * (1 + 1e-12):
        raise ValueError(f"unit-step eta = {eta:.6g} exceeds the cap {eta_bar:.6g}")
    return UnitStepParams(theta_reg, max(eta, 0.0), eta_bar)
