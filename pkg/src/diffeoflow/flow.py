"""Discrete-time particle flow driven by a kernel field plus optional affine part.

The state recursion over T Euler steps is

    z_k(t+1) = z_k(t) + (1/T) (A(t) z_k(t) + b(t) + sum_l K(z_k(t), z_l(t)) a_l(t))

with the affine term omitted when absent.  ``forward`` evolves the training
points themselves; ``transport`` pushes arbitrary query points through the
field anchored on a stored training trajectory.  Both share one step kernel,
so transporting the training points reproduces the forward output exactly.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

# abort threshold on any coordinate magnitude
DIVERGENCE_LIMIT = 1.0e12


class FlowDivergenceError(RuntimeError):
    """Raised when the flow blows up; carries the offending step index."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"flow diverged at step {step}")


@dataclass
class ControlPath:
    """Momenta a[t] over T steps, plus optional per-step affine (A, b).

    momenta has shape (T, N, d); affine_A (T, d, d) and affine_b (T, d) are
    either both present or both None.
    """

    momenta: np.ndarray
    affine_A: np.ndarray = None
    affine_b: np.ndarray = None

    def __post_init__(self):
        self.momenta = np.ascontiguousarray(self.momenta, dtype=np.float64)
        if self.momenta.ndim != 3:
            raise ValueError("momenta must have shape (T, N, d)")
        if (self.affine_A is None) != (self.affine_b is None):
            raise ValueError("affine_A and affine_b must be given together")
        if not np.all(np.isfinite(self.momenta)):
            raise ValueError("momenta must be finite")
        if self.affine_A is not None:
            T, _, d = self.momenta.shape
            self.affine_A = np.ascontiguousarray(self.affine_A, dtype=np.float64)
            self.affine_b = np.ascontiguousarray(self.affine_b, dtype=np.float64)
            if self.affine_A.shape != (T, d, d) or self.affine_b.shape != (T, d):
                raise ValueError("affine arrays must have shapes (T, d, d), (T, d)")
            if not (np.all(np.isfinite(self.affine_A))
                    and np.all(np.isfinite(self.affine_b))):
                raise ValueError("affine arrays must be finite")

    @classmethod
    def zeros(cls, T, n, d, affine=False):
        if affine:
            return cls(np.zeros((T, n, d)), np.zeros((T, d, d)), np.zeros((T, d)))
        return cls(np.zeros((T, n, d)))

    @property
    def T(self):
        return self.momenta.shape[0]

    @property
    def has_affine(self):
        return self.affine_A is not None

    def copy(self):
        return ControlPath(
            self.momenta.copy(),
            None if self.affine_A is None else self.affine_A.copy(),
            None if self.affine_b is None else self.affine_b.copy())


@dataclass
class Trajectory:
    """Particle positions z[t] for t = 0..T, shape (T+1, N, d)."""

    z: np.ndarray

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        if self.z.ndim != 3:
            raise ValueError("trajectory must have shape (T+1, N, d)")

    @property
    def T(self):
        return self.z.shape[0] - 1


def _step(spec, ctrl, t, centers, positions):
    """One Euler step of ``positions`` through the field anchored at ``centers``."""
    v = kernels.apply_field(spec, centers, ctrl.momenta[t], positions)
    if ctrl.has_affine:
        v += positions @ ctrl.affine_A[t].T + ctrl.affine_b[t]
    return positions + v / ctrl.T


def forward_with_kinetic(spec, x0, ctrl):
    """Forward pass that also returns the per-step kinetic terms a(t)' K a(t).

    The kernel part of the step velocity is K(z(t)) a(t), so the kinetic
    energy falls out of the same product; this fused path keeps repeated
    energy evaluations (line searches) at one kernel build per step.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    T, n, d = ctrl.momenta.shape
    if x0.shape != (n, d):
        raise ValueError("x0 shape does not match the control path")
    z = np.empty((T + 1, n, d))
    z[0] = x0
    kinetic = np.empty(T)
    for t in range(T):
        vk = kernels.apply_field(spec, z[t], ctrl.momenta[t], z[t])
        kinetic[t] = float(np.sum(ctrl.momenta[t] * vk))
        if ctrl.has_affine:
            vk += z[t] @ ctrl.affine_A[t].T + ctrl.affine_b[t]
        z[t + 1] = z[t] + vk / T
        _guard(z[t + 1], t + 1)
    return Trajectory(z), kinetic


def _guard(state, t):
    if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > DIVERGENCE_LIMIT:
        raise FlowDivergenceError(t)


def forward(spec, x0, ctrl):
    """Integrate the training points; returns the full Trajectory."""
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    T, n, d = ctrl.momenta.shape
    if x0.shape != (n, d):
        raise ValueError("x0 shape does not match the control path")
    z = np.empty((T + 1, n, d))
    z[0] = x0
    for t in range(T):
        z[t + 1] = _step(spec, ctrl, t, z[t], z[t])
        _guard(z[t + 1], t + 1)
    return Trajectory(z)


def transport(spec, traj, ctrl, queries):
    """Push query points through the field carried by a stored trajectory.

    Returns an array of shape (T+1, M, d).  When ``queries`` are the training
    points themselves, the output coincides with ``traj`` (identical
    arithmetic path).
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    T = ctrl.T
    if traj.z.shape[0] != T + 1:
        raise ValueError("trajectory and control path disagree on T")
    if queries.ndim != 2 or queries.shape[1] != traj.z.shape[2]:
        raise ValueError("queries must match the trajectory dimension")
    y = np.empty((T + 1, queries.shape[0], queries.shape[1]))
    y[0] = queries
    for t in range(T):
        y[t + 1] = _step(spec, ctrl, t, traj.z[t], y[t])
        _guard(y[t + 1], t + 1)
    return y
