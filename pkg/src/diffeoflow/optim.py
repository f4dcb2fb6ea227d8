"""Polak-Ribiere conjugate gradient trainer with kernel-metric preconditioning.

The joint variable is (momenta, affine path, theta).  The a-block gradient is
preconditioned by the trajectory-dependent kernel metric (the "natural"
gradient (2a - p)/T whose plain differential is u = Gram @ natural); affine
and theta blocks use the Euclidean metric.  The Polak-Ribiere coefficient is
computed in this same block metric, evaluated at the current trajectory, and
clamped at zero.

sigma^2 annealing: start large, multiply by a decay factor on a fixed
iteration cadence while the training error exceeds the target delta, and
freeze sigma^2 permanently the first time the error reaches the target.

A generic Euclidean variant (``minimize_pr_cg``) drives the reference
logistic baseline and the conjugate-gradient oracle tests.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import adjoint, kernels, objective
from .flow import ControlPath, FlowDivergenceError
from .objective import Hyper, ThetaParams

TRACE_FIELDS = ("iter", "energy", "kinetic", "affine", "theta_penalty",
                "data_term", "sigma2", "train_error")


@dataclass
class Problem:
    """A training problem: kernel, augmented points, labels, fixed weights."""

    spec: object
    x0: np.ndarray
    labels: np.ndarray
    n_classes: int
    lam: float = 1.0
    T: int = 10
    kappa1: float = 1.0
    kappa2: float = 1.0
    use_affine: bool = True

    def __post_init__(self):
        self.x0 = np.ascontiguousarray(self.x0, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.x0.ndim != 2 or self.labels.shape != (self.x0.shape[0],):
            raise ValueError("x0 must be (N, d) with matching labels")
        if self.n_classes < 1 or self.labels.max(initial=0) >= self.n_classes:
            raise ValueError("labels must lie in 0..n_classes-1")

    def hyper(self, sigma2):
        return Hyper(lam=self.lam, sigma2=sigma2, T=self.T,
                     kappa1=self.kappa1, kappa2=self.kappa2)


@dataclass
class FitOptions:
    max_iter: int = 2000
    target_error: float = 0.005      # delta: anneal until here, then freeze
    anneal_factor: float = 0.9
    anneal_interval: int = 20
    sigma2_init: float = None        # default max(1, log c)
    tol_rel: float = 1e-8
    patience: int = 20
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 25
    step0: float = 1.0
    step_growth: float = 2.0
    seed: int = 0                    # provenance only; the loop is deterministic
    progress: object = None          # optional callable(TraceRecord)


@dataclass
class TraceRecord:
    iteration: int
    energy: float
    kinetic: float
    affine: float
    theta_penalty: float
    data_term: float
    sigma2: float
    train_error: float

    FIELDS = TRACE_FIELDS

    def row(self):
        return (self.iteration, self.energy, self.kinetic, self.affine,
                self.theta_penalty, self.data_term, self.sigma2,
                self.train_error)


@dataclass
class OptState:
    """Single-owner optimizer state; mutated in place by pr_cg_step."""

    momenta: np.ndarray
    affine_A: np.ndarray
    affine_b: np.ndarray
    theta: ThetaParams
    sigma2: float
    traj: object
    parts: object
    train_error: float
    seed: int = 0
    grad: dict = None          # blocks: a (natural), u, A, b, theta
    grad_norm2: float = 0.0    # <g, g> in the block metric at traj
    direction: dict = None
    step_size: float = 1.0
    iteration: int = 0
    last_anneal: int = -1
    frozen: bool = False
    converged: bool = False
    n_evals: int = 0

    def control(self):
        return ControlPath(self.momenta, self.affine_A, self.affine_b)

    def trace_record(self):
        p = self.parts
        return TraceRecord(self.iteration, p.total, p.kinetic, p.affine,
                           p.theta_penalty, p.data_term, self.sigma2,
                           self.train_error)


def _line_search(phi, f0, slope, step, c, factor, max_backtracks):
    """Backtracking Armijo search with one quadratic-interpolation refinement.

    ``phi`` maps a step length to (value, payload).  On an exactly quadratic
    objective the refinement recovers the exact line minimizer, which makes
    conjugate gradient terminate finitely there.  Returns
    (ok, alpha, value, payload, n_backtracks).
    """
    alpha = step
    val, payload = phi(alpha)
    n_back = 0
    # the strict val < f0 guard keeps accepted energies strictly decreasing
    # even when c * alpha * slope underflows next to f0
    while not (np.isfinite(val) and val < f0
               and val <= f0 + c * alpha * slope):
        n_back += 1
        if n_back > max_backtracks:
            return False, alpha, val, payload, n_back
        alpha *= factor
        val, payload = phi(alpha)
    denom = val - f0 - slope * alpha
    if denom > 0.0:
        refined = -slope * alpha * alpha / (2.0 * denom)
        if refined > 0.0 and abs(refined - alpha) > 1e-12 * alpha:
            val2, payload2 = phi(refined)
            if np.isfinite(val2) and val2 < val:
                return True, refined, val2, payload2, n_back
    return True, alpha, val, payload, n_back


def minimize_pr_cg(fun_grad, x0, max_iter=500, grad_tol=1e-10, tol_rel=1e-14,
                   patience=10, step0=1.0, armijo_c=1e-4, backtrack_factor=0.5,
                   max_backtracks=40, value_fn=None):
    """Euclidean Polak-Ribiere CG on a smooth function.

    ``fun_grad(x) -> (value, gradient)``; ``value_fn`` may supply a cheaper
    value-only evaluation for the line search.  Deterministic.
    """
    if value_fn is None:
        value_fn = lambda x: fun_grad(x)[0]
    x = np.array(x0, dtype=np.float64)
    f, g = fun_grad(x)
    d = -g
    gg = float(g @ g)
    step = step0
    flat = 0
    iterations = 0
    for _ in range(max_iter):
        if math.sqrt(gg) <= grad_tol:
            break
        slope = float(g @ d)
        if slope >= 0.0:
            d = -g
            slope = -gg
        ok, alpha, f_new, _, n_back = _line_search(
            lambda a: (value_fn(x + a * d), None), f, slope, step,
            armijo_c, backtrack_factor, max_backtracks)
        if not ok and not np.array_equal(d, -g):
            d = -g
            slope = -gg
            ok, alpha, f_new, _, n_back = _line_search(
                lambda a: (value_fn(x + a * d), None), f, slope, step,
                armijo_c, backtrack_factor, max_backtracks)
        if not ok:
            break
        x = x + alpha * d
        step = alpha * (2.0 if n_back == 0 else 1.0)
        f_old, g_old, gg_old = f, g, gg
        f, g = fun_grad(x)
        gg = float(g @ g)
        beta = max(0.0, float(g @ (g - g_old)) / gg_old)
        d = -g + beta * d
        iterations += 1
        flat = flat + 1 if abs(f_old - f) <= tol_rel * max(1.0, abs(f_old)) \
            else 0
        if flat >= patience:
            break
    return x, f, {"iterations": iterations, "grad_norm": math.sqrt(gg)}


# ---------------------------------------------------------------------------
# block-vector helpers for the joint (a, A, b, theta) variable


def _blocks_scale_add(x, alpha, y):
    """x + alpha * y over matching present blocks."""
    return {k: (None if x[k] is None else x[k] + alpha * y[k])
            for k in ("a", "A", "b", "theta")}


def _euclid_tail_dot(g1, g2):
    """Euclidean part of the block inner product (affine + theta blocks)."""
    out = float(np.sum(g1["theta"] * g2["theta"]))
    if g1["A"] is not None:
        out += float(np.sum(g1["A"] * g2["A"]))
        out += float(np.sum(g1["b"] * g2["b"]))
    return out


def _plain_slope(grad, direction):
    """Directional derivative of the energy: differential . direction."""
    out = float(np.sum(grad["u"] * direction["a"]))
    return out + _euclid_tail_dot(grad, direction)


def _gram_apply_path(spec, traj, vec):
    out = np.empty_like(vec)
    for t in range(vec.shape[0]):
        out[t] = kernels.apply_field(spec, traj.z[t], vec[t],
                                             traj.z[t])
    return out


def _training_error(traj, theta, labels):
    scores = traj.z[-1] @ theta.theta.T
    return float(np.mean(np.argmax(scores, axis=1) != labels))


def _evaluate(problem, variables, sigma2):
    """(value, (traj, parts)) at a joint variable dict; inf on divergence."""
    ctrl = ControlPath(variables["a"], variables["A"], variables["b"])
    theta = ThetaParams(variables["theta"])
    try:
        traj, parts = objective.energy_fused(problem.spec, problem.x0, ctrl,
                                             theta, problem.labels,
                                             problem.hyper(sigma2))
    except FlowDivergenceError:
        return np.inf, None
    return parts.total, (traj, parts)


def _compute_gradient(problem, state):
    """Gradient blocks at the current state; also the metric norm <g, g>."""
    ctrl = state.control()
    hyper = problem.hyper(state.sigma2)
    ctrl_grad, dtheta = adjoint.energy_gradients(
        problem.spec, state.traj, ctrl, state.theta, problem.labels, hyper)
    grad = {"a": ctrl_grad.natural, "u": ctrl_grad.u,
            "A": ctrl_grad.affine_A, "b": ctrl_grad.affine_b,
            "theta": dtheta}
    state.grad = grad
    state.grad_norm2 = (float(np.sum(grad["u"] * grad["a"]))
                        + _euclid_tail_dot(grad, grad))


def initial_state(problem, options=None):
    """Vanishing field, zero affine, zero theta; sigma2 = max(1, log c)."""
    options = options or FitOptions()
    T = problem.T
    n, d = problem.x0.shape
    mom = np.zeros((T, n, d))
    A = np.zeros((T, d, d)) if problem.use_affine else None
    b = np.zeros((T, d)) if problem.use_affine else None
    theta = ThetaParams.zeros(problem.n_classes, d)
    sigma2 = options.sigma2_init
    if sigma2 is None:
        sigma2 = max(1.0, math.log(max(problem.n_classes, 1)))
    variables = {"a": mom, "A": A, "b": b, "theta": theta.theta}
    value, payload = _evaluate(problem, variables, sigma2)
    if payload is None:
        raise FlowDivergenceError(0, "initial evaluation diverged")
    traj, parts = payload
    state = OptState(momenta=mom, affine_A=A, affine_b=b, theta=theta,
                     sigma2=sigma2, traj=traj, parts=parts,
                     train_error=_training_error(traj, theta, problem.labels),
                     seed=options.seed, step_size=options.step0)
    if state.train_error <= options.target_error:
        state.frozen = True
    return state


def pr_cg_step(state, problem, options=None):
    """One preconditioned PR-CG iteration; mutates and returns ``state``.

    Accepted steps strictly decrease the energy at fixed sigma^2.  When both
    the conjugate direction and a steepest-descent restart fail the line
    search, the state is left unchanged with ``converged`` set.
    """
    options = options or FitOptions()
    if state.grad is None:
        _compute_gradient(problem, state)
        state.direction = None
    if state.grad_norm2 <= 1e-30:
        state.converged = True
        return state

    grad = state.grad
    neg = {"a": -grad["a"],
           "A": None if grad["A"] is None else -grad["A"],
           "b": None if grad["b"] is None else -grad["b"],
           "theta": -grad["theta"]}
    if state.direction is None:
        direction = neg
        slope = -state.grad_norm2
    else:
        direction = state.direction
        slope = _plain_slope(grad, direction)
        if slope >= 0.0:
            direction = neg
            slope = -state.grad_norm2

    variables = {"a": state.momenta, "A": state.affine_A, "b": state.affine_b,
                 "theta": state.theta.theta}

    def phi(alpha):
        state.n_evals += 1
        return _evaluate(problem, _blocks_scale_add(variables, alpha,
                                                    direction), state.sigma2)

    f0 = state.parts.total
    ok, alpha, value, payload, n_back = _line_search(
        phi, f0, slope, state.step_size, options.armijo_c,
        options.backtrack_factor, options.max_backtracks)
    if not ok and direction is not neg:
        direction = neg
        slope = -state.grad_norm2
        ok, alpha, value, payload, n_back = _line_search(
            phi, f0, slope, state.step_size, options.armijo_c,
            options.backtrack_factor, options.max_backtracks)
    if not ok:
        state.converged = True
        return state

    new_vars = _blocks_scale_add(variables, alpha, direction)
    state.momenta = new_vars["a"]
    state.affine_A = new_vars["A"]
    state.affine_b = new_vars["b"]
    state.theta = ThetaParams(new_vars["theta"])
    state.traj, state.parts = payload
    state.train_error = _training_error(state.traj, state.theta,
                                        problem.labels)
    state.step_size = alpha * (options.step_growth if n_back == 0 else 1.0)
    state.iteration += 1

    old_grad = grad
    _compute_gradient(problem, state)
    new_grad = state.grad
    # Polak-Ribiere in the block metric, all terms at the current trajectory
    cross = (float(np.sum(new_grad["u"] * old_grad["a"]))
             + _euclid_tail_dot(new_grad, old_grad))
    u_old_here = _gram_apply_path(problem.spec, state.traj, old_grad["a"])
    denom = (float(np.sum(u_old_here * old_grad["a"]))
             + _euclid_tail_dot(old_grad, old_grad))
    beta = max(0.0, (state.grad_norm2 - cross) / denom) if denom > 0 else 0.0
    state.direction = _blocks_scale_add(
        {"a": -new_grad["a"],
         "A": None if new_grad["A"] is None else -new_grad["A"],
         "b": None if new_grad["b"] is None else -new_grad["b"],
         "theta": -new_grad["theta"]}, beta, direction)
    return state


def anneal_sigma(state, training_error, delta, factor=0.9, interval=20):
    """Decay sigma^2 on the iteration cadence until the error target latches.

    Returns the (possibly updated) sigma^2.  Once ``training_error <= delta``
    has been observed the value is frozen for the rest of the run.
    """
    if training_error <= delta:
        state.frozen = True
    if state.frozen:
        return state.sigma2
    if (state.iteration > 0 and state.iteration % interval == 0
            and state.iteration != state.last_anneal):
        new_sigma2 = state.sigma2 * factor
        state.parts = state.parts.with_sigma2(state.sigma2, new_sigma2)
        state.sigma2 = new_sigma2
        state.last_anneal = state.iteration
        # data-term weight changed: restart conjugacy from steepest descent
        state.grad = None
        state.direction = None
    return state.sigma2


@dataclass
class FitResult:
    ctrl: ControlPath
    theta: ThetaParams
    trace: list
    parts: object
    traj: object
    train_error: float
    sigma2: float
    iterations: int
    converged: bool


def fit(problem, options=None):
    """Minimize the objective from the identity initialization.

    Runs pr_cg_step with the sigma^2 annealing schedule until the relative
    energy change stays below tol_rel for a full patience window at fixed
    sigma^2, convergence is flagged, or max_iter is hit.
    """
    options = options or FitOptions()
    state = initial_state(problem, options)
    trace = [state.trace_record()]
    if options.progress:
        options.progress(trace[0])
    flat = 0
    while state.iteration < options.max_iter and not state.converged:
        sigma2_before = state.sigma2
        anneal_sigma(state, state.train_error, options.target_error,
                     options.anneal_factor, options.anneal_interval)
        energy_before = state.parts.total
        pr_cg_step(state, problem, options)
        if state.converged:
            break
        record = state.trace_record()
        trace.append(record)
        if options.progress:
            options.progress(record)
        if state.sigma2 != sigma2_before:
            flat = 0
        elif abs(energy_before - state.parts.total) \
                <= options.tol_rel * max(1.0, abs(energy_before)):
            flat += 1
        else:
            flat = 0
        if flat >= options.patience and state.frozen:
            state.converged = True
            break
    return FitResult(ctrl=state.control(), theta=state.theta, trace=trace,
                     parts=state.parts, traj=state.traj,
                     train_error=state.train_error, sigma2=state.sigma2,
                     iterations=state.iteration, converged=state.converged)
