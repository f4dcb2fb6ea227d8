"""Exact gradients of the discrete objective via the backward costate recursion.

The costate runs over t = 0..T-1 with boundary p(T-1) set from the terminal
loss covector and

    p(t-1) = p(t) + (1/T) d_z H_{a(t)}(p(t), z(t)),
    H_a(p, z) = sum_{k,l} (p_k - a_k)' K(z_k, z_l) a_l,

including (when present) the affine contribution A(t)' p_k.  Everything here
differentiates the exact discrete recursion; correctness is pinned by the
finite-difference tests, which fix all sign and indexing conventions.

Sign convention: ``u`` and the affine entries are plain differentials of the
energy (dE/da etc.), and ``natural`` is the kernel-preconditioned gradient,
so that u_k(t) = sum_l K(z_k(t), z_l(t)) natural_l(t) holds exactly and
descent directions are the negated outputs.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels, objective


@dataclass
class CostatePath:
    """Costate vectors p[t] for t = 0..T-1, shape (T, N, d)."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.ascontiguousarray(self.p, dtype=np.float64)
        if self.p.ndim != 3:
            raise ValueError("costate must have shape (T, N, d)")


@dataclass
class ControlGradient:
    """Differentials of the energy with respect to the control blocks.

    u : (T, N, d) differential in the momenta
    natural : (T, N, d) preconditioned (kernel-metric) gradient, (2a - p)/T
    affine_A : (T, d, d) or None, differential in A
    affine_b : (T, d) or None, differential in b
    """

    u: np.ndarray
    natural: np.ndarray
    affine_A: np.ndarray = None
    affine_b: np.ndarray = None


def hamiltonian(spec, a, p, z):
    """H_a(p, z) = gram_inner(z, p - a, a)."""
    a = np.asarray(a, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return kernels.gram_inner(spec, z, p - a, a)


def backward(spec, traj, ctrl, pT):
    """Run the costate recursion from the terminal covector pT.

    ``traj`` must come from ``flow.forward`` with the same control path.
    """
    pT = np.ascontiguousarray(pT, dtype=np.float64)
    T = ctrl.T
    n, d = traj.z.shape[1:]
    if pT.shape != (n, d):
        raise ValueError("terminal covector shape mismatch")
    p = np.empty((T, n, d))
    p[T - 1] = pT
    for t in range(T - 1, 0, -1):
        dzH = kernels.pair_energy_gradient(
            spec, traj.z[t], p[t] - ctrl.momenta[t], ctrl.momenta[t])
        if ctrl.has_affine:
            dzH = dzH + p[t] @ ctrl.affine_A[t]
        p[t - 1] = p[t] + dzH / T
    return CostatePath(p)


def grad_control(spec, traj, ctrl, costate, kappa1=None, kappa2=None):
    """Assemble the control differentials from a completed backward pass.

    The affine weights default to those stored on the kernel spec; they are
    required whenever the control path carries an affine component.
    """
    T = ctrl.T
    a = ctrl.momenta
    p = costate.p
    natural = (2.0 * a - p) / T
    u = np.empty_like(natural)
    for t in range(T):
        u[t] = kernels.apply_field(spec, traj.z[t], natural[t], traj.z[t])
    dA = db = None
    if ctrl.has_affine:
        if kappa1 is None or kappa2 is None:
            if spec.affine_weights is None:
                raise ValueError("affine weights required for affine gradients")
            kappa1, kappa2 = spec.affine_weights
        dA = np.empty_like(ctrl.affine_A)
        db = np.empty_like(ctrl.affine_b)
        for t in range(T):
            dA[t] = (2.0 * kappa1 * ctrl.affine_A[t] - p[t].T @ traj.z[t]) / T
            db[t] = (2.0 * kappa2 * ctrl.affine_b[t] - p[t].sum(axis=0)) / T
    return ControlGradient(u, natural, dA, db)


def energy_gradients(spec, traj, ctrl, theta, labels, hyper):
    """Full gradient bundle at a consistent (trajectory, control, theta) point.

    Returns (ControlGradient, dtheta) where dtheta has the pinned zero row.
    """
    final = objective.LabeledSet(traj.z[ctrl.T], labels)
    pT = objective.terminal_z_gradient(theta, final, hyper.sigma2)
    costate = backward(spec, traj, ctrl, pT)
    ctrl_grad = grad_control(spec, traj, ctrl, costate,
                             hyper.kappa1, hyper.kappa2)
    dtheta = objective.theta_gradient(theta, final, hyper.lam, hyper.sigma2)
    return ctrl_grad, dtheta
