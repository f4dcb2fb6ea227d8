"""Training objective: kinetic energy, affine energy, logistic loss, theta penalty.

The discrete objective over T steps is

    E = (1/T) sum_t gram_inner(z(t), a(t), a(t))
      + (1/T) sum_t (kappa1 tr(A(t) A(t)') + kappa2 |b(t)|^2)
      + lambda |theta|^2
      + (1/sigma^2) Gamma(theta, z(T))

where Gamma is the multinomial logistic loss with the class-0 parameter
pinned at zero.
"""

from dataclasses import dataclass

import numpy as np

from . import flow, kernels

# probabilities are floored here before entering log
_PROB_FLOOR = 1.0e-300


@dataclass
class ThetaParams:
    """Per-class linear scores theta[y], y = 0..c-1, with theta[0] = 0."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ValueError("theta must have shape (c, d)")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")
        if np.any(self.theta[0] != 0.0):
            raise ValueError("theta[0] must be identically zero")

    @classmethod
    def zeros(cls, n_classes, dim):
        return cls(np.zeros((n_classes, dim)))

    @property
    def n_classes(self):
        return self.theta.shape[0]

    @property
    def dim(self):
        return self.theta.shape[1]

    def norm2(self):
        return float(np.sum(self.theta * self.theta))


@dataclass
class Hyper:
    """Objective weights: lambda, sigma^2, step count T, affine weights."""

    lam: float
    sigma2: float
    T: int
    kappa1: float = 1.0
    kappa2: float = 1.0

    def __post_init__(self):
        if not (self.sigma2 > 0):
            raise ValueError("sigma2 must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.T < 1 or self.T != int(self.T):
            raise ValueError("T must be a positive integer")
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError("affine weights must be positive")


@dataclass
class LabeledSet:
    """Points with integer class labels in 0..c-1.

    The container itself allows repeated points (evaluation sets of discrete
    families necessarily contain duplicates); training enforces distinctness
    at the pipeline level where the interpolation argument needs it.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("points must be (N, d) and labels (N,)")
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels disagree on N")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def has_duplicates(self):
        return np.unique(self.points, axis=0).shape[0] < self.points.shape[0]


@dataclass
class EnergyParts:
    """Energy value split into its four nonnegative terms."""

    kinetic: float
    affine: float
    theta_penalty: float
    data_term: float

    @property
    def total(self):
        return self.kinetic + self.affine + self.theta_penalty + self.data_term

    def with_sigma2(self, old_sigma2, new_sigma2):
        """Same configuration re-weighted for a new sigma^2 (data term scales)."""
        return EnergyParts(self.kinetic, self.affine, self.theta_penalty,
                           self.data_term * old_sigma2 / new_sigma2)


def softmax_prob(theta, z):
    """Class probabilities for one point (d,) or a batch (M, d)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    logits = np.atleast_2d(z) @ theta.theta.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def terminal_loss(theta, data):
    """Negative log-likelihood -sum_k log P(y_k | z_k)."""
    p = softmax_prob(theta, data.points)
    picked = p[np.arange(len(data)), data.labels]
    return float(-np.sum(np.log(np.maximum(picked, _PROB_FLOOR))))


def _energy_given_traj(spec, traj, ctrl, theta, labels, hyper):
    T = ctrl.T
    kinetic = 0.0
    for t in range(T):
        kinetic += kernels.gram_inner(spec, traj.z[t], ctrl.momenta[t],
                                      ctrl.momenta[t])
    kinetic /= T
    affine = 0.0
    if ctrl.has_affine:
        affine = (hyper.kappa1 * float(np.sum(ctrl.affine_A ** 2))
                  + hyper.kappa2 * float(np.sum(ctrl.affine_b ** 2))) / T
    theta_penalty = hyper.lam * theta.norm2()
    data_term = terminal_loss(theta, LabeledSet(traj.z[T], labels)) / hyper.sigma2
    return EnergyParts(kinetic, affine, theta_penalty, data_term)


def energy_fused(spec, x0, ctrl, theta, labels, hyper):
    """Evaluate the objective in one forward sweep; returns (Trajectory, EnergyParts)."""
    if hyper.T != ctrl.T:
        raise ValueError("hyper.T and the control path disagree")
    traj, kin_terms = flow.forward_with_kinetic(spec, x0, ctrl)
    kinetic = float(np.sum(kin_terms)) / ctrl.T
    affine = 0.0
    if ctrl.has_affine:
        affine = (hyper.kappa1 * float(np.sum(ctrl.affine_A ** 2))
                  + hyper.kappa2 * float(np.sum(ctrl.affine_b ** 2))) / ctrl.T
    theta_penalty = hyper.lam * theta.norm2()
    data_term = terminal_loss(theta, LabeledSet(traj.z[ctrl.T], labels)) \
        / hyper.sigma2
    return traj, EnergyParts(kinetic, affine, theta_penalty, data_term)


def energy(spec, x0, ctrl, theta, labels, hyper):
    """Evaluate the full objective; returns EnergyParts (total in .total)."""
    if hyper.T != ctrl.T:
        raise ValueError("hyper.T and the control path disagree")
    traj = flow.forward(spec, x0, ctrl)
    return _energy_given_traj(spec, traj, ctrl, theta, labels, hyper)


def theta_gradient(theta, data, lam, sigma2=1.0):
    """Gradient of lambda |theta|^2 + (1/sigma^2) Gamma in theta.

    Row 0 is pinned at zero.  With sigma2 = 1 this is the gradient of the
    plain penalized logistic loss.
    """
    p = softmax_prob(theta, data.points)
    p[np.arange(len(data)), data.labels] -= 1.0
    g = (p.T @ data.points) / sigma2 + 2.0 * lam * theta.theta
    g[0] = 0.0
    return g


def terminal_z_gradient(theta, data, sigma2):
    """Terminal covectors p_k = -(1/sigma^2) dGamma/dz_k, shape (N, d)."""
    p = softmax_prob(theta, data.points)
    p[np.arange(len(data)), data.labels] -= 1.0
    return -(p @ theta.theta) / sigma2
