"""End-to-end training and prediction.

``train`` augments the data with dummy dimensions, picks the kernel scale
from nearest-neighbor statistics unless given one, runs the optimizer, and
packages everything needed to classify new points into a ModelArtifact.
``predict`` carries queries through the stored flow and reads the softmax.

Artifacts serialize to a versioned JSON document (schema
"diffeoflow-model-v1"); float arrays embed inline or live in a sidecar
little-endian float64 blob, both layouts round-trip bit for bit.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from . import kernels
from .datasets import STREAM_AUGMENT, rng_stream
from .flow import ControlPath, Trajectory, forward, transport
from .objective import EnergyParts, Hyper, LabeledSet, ThetaParams, \
    softmax_prob
from .optim import FitOptions, Problem, fit

MODEL_SCHEMA = "diffeoflow-model-v1"
_REPLAY_TOL = 1e-12


@dataclass(frozen=True)
class AugmentConfig:
    """Dummy-dimension augmentation: count, training jitter scale, seed."""

    extra_dims: int
    delta_noise: float
    seed: int

    def __post_init__(self):
        if self.extra_dims < 0:
            raise ValueError("extra_dims must be nonnegative")
        if not (np.isfinite(self.delta_noise) and self.delta_noise >= 0):
            raise ValueError("delta_noise must be nonnegative")


def augment(data, cfg, mode):
    """Append extra coordinates: seeded jitter for train, zeros for test."""
    if mode not in ("train", "test"):
        raise ValueError("mode must be 'train' or 'test'")
    if cfg.extra_dims == 0:
        return data
    n = len(data)
    if mode == "train":
        noise = rng_stream(cfg.seed, STREAM_AUGMENT).standard_normal(
            (n, cfg.extra_dims)) * cfg.delta_noise
    else:
        noise = np.zeros((n, cfg.extra_dims))
    return LabeledSet(np.hstack([data.points, noise]), data.labels)


def _nearest_rank(values, q):
    """Nearest-rank (lower) q-th percentile; deterministic, no interpolation."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    idx = math.ceil(q / 100.0 * v.size)
    return float(v[max(idx, 1) - 1])


def select_scale(data):
    """Kernel scale from the data's nearest-neighbor statistics.

    rho1 is the 75th percentile over points of the 5th percentile of each
    point's distances to same-class points (self excluded); rho2 the 10th
    percentile of distances to the nearest other-class point; the scale is
    min(rho1, rho2).
    """
    labels = data.labels
    if len(data) < 2 or np.any(np.bincount(labels)[np.unique(labels)] < 2):
        raise ValueError("every class needs at least 2 points; "
                         "pass an explicit rho instead")
    dists = cdist(data.points, data.points)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    fifth = [_nearest_rank(row[mask], 5.0)
             for row, mask in zip(dists, same)]
    rho1 = _nearest_rank(fifth, 75.0)
    other = labels[:, None] != labels[None, :]
    if not other.any():
        return rho1
    nearest_other = np.where(other, dists, np.inf).min(axis=1)
    rho2 = _nearest_rank(nearest_other, 10.0)
    return min(rho1, rho2)


@dataclass
class TrainConfig:
    """Resolved defaults follow the experiment protocol; None means auto."""

    kernel: str = "matern3"
    rho: float = None            # None: select_scale on the augmented data
    timesteps: int = 10
    lam: float = 1.0
    delta: float = 0.005
    extra_dims: int = None       # None: one less than the class count
    affine: bool = True
    max_iter: int = 2000
    seed: int = 0
    delta_noise: float = None    # None: 0.01 * select_scale on raw data
    kappa1: float = 1.0
    kappa2: float = 1.0
    normalize: bool = False
    graph_shape: tuple = None    # (height, width), graph kernel only
    graph_radius: int = 1
    dataset_id: str = ""
    progress: object = None


def _parse_kernel_name(name):
    if name == "gaussian" or name == "graph":
        return name, None
    if name.startswith("matern") and name[len("matern"):].isdigit():
        order = int(name[len("matern"):])
        if order >= 1:
            return "matern", order
    raise ValueError(f"unknown kernel name {name!r} "
                     "(use gaussian, maternN, or graph)")


def _build_kernel(cfg, rho, original_dim, total_dim):
    family, order = _parse_kernel_name(cfg.kernel)
    if family == "gaussian":
        return kernels.gaussian(rho)
    if family == "matern":
        return kernels.matern(rho, order=order)
    if cfg.graph_shape is None:
        raise ValueError("graph kernel needs graph_shape=(height, width)")
    h, w = cfg.graph_shape
    if h * w != original_dim:
        raise ValueError(f"graph_shape {h}x{w} does not tile "
                         f"{original_dim} coordinates")
    nbs = list(kernels.grid_neighborhoods(h, w, cfg.graph_radius))
    # augmentation coordinates only see themselves
    nbs.extend((i,) for i in range(original_dim, total_dim))
    return kernels.graph_diagonal(rho, nbs)


@dataclass
class ModelArtifact:
    """Everything needed to classify new points, plus training provenance."""

    kernel: object
    augment: AugmentConfig
    z: np.ndarray               # training trajectory, (T+1, N, d_aug)
    ctrl: ControlPath
    theta: ThetaParams
    n_classes: int
    original_dim: int
    hyper: Hyper
    labels: np.ndarray
    train_error: float
    parts: EnergyParts
    provenance: dict
    normalize_mean: np.ndarray = None
    normalize_scale: np.ndarray = None

    def validate(self):
        """Shape consistency plus replay of the stored trajectory."""
        T1, n, d = self.z.shape
        if self.ctrl.momenta.shape != (T1 - 1, n, d):
            raise ValueError("control path does not match the trajectory")
        if self.theta.theta.shape != (self.n_classes, d):
            raise ValueError("theta does not match the trajectory")
        if self.labels.shape != (n,):
            raise ValueError("labels do not match the trajectory")
        replay = forward(self.kernel, self.z[0], self.ctrl)
        tol = _REPLAY_TOL * max(1.0, float(np.max(np.abs(self.z))))
        err = float(np.max(np.abs(replay.z - self.z)))
        if err > tol:
            raise ValueError(f"stored trajectory fails replay ({err:.3e})")
        return self

    def training_inputs(self):
        """Original-space training points recovered from the trajectory."""
        raw = self.z[0][:, :self.original_dim]
        if self.normalize_mean is not None:
            raw = raw * self.normalize_scale + self.normalize_mean
        return raw


def _prepare_inputs(data, cfg):
    """Normalize and augment training inputs, then pick the kernel scale."""
    n_classes = data.n_classes
    mean = scale = None
    working = data
    if cfg.normalize:
        mean = data.points.mean(axis=0)
        scale = data.points.std(axis=0)
        scale[scale == 0.0] = 1.0
        working = LabeledSet((data.points - mean) / scale, data.labels)

    extra = n_classes - 1 if cfg.extra_dims is None else cfg.extra_dims
    delta_noise = cfg.delta_noise
    if delta_noise is None:
        if extra == 0:
            delta_noise = 0.0
        else:
            base = cfg.rho if cfg.rho is not None else select_scale(working)
            delta_noise = 0.01 * base
    aug_cfg = AugmentConfig(extra_dims=extra, delta_noise=delta_noise,
                            seed=cfg.seed)
    augmented = augment(working, aug_cfg, "train")

    rho = cfg.rho if cfg.rho is not None else select_scale(augmented)
    return augmented, aug_cfg, rho, mean, scale


def auto_scale(data, config=None):
    """Kernel scale that train() would select for this data and config."""
    cfg = config or TrainConfig()
    if cfg.rho is not None:
        return cfg.rho
    return _prepare_inputs(data, cfg)[2]


def train(data, config=None):
    """Fit the flow classifier; returns (ModelArtifact, trace records)."""
    cfg = config or TrainConfig()
    if not isinstance(data, LabeledSet):
        raise TypeError("train expects a LabeledSet")
    if data.has_duplicates():
        raise ValueError("training points must be pairwise distinct")
    if cfg.timesteps < 1 or cfg.max_iter < 0 or cfg.lam < 0:
        raise ValueError("invalid training configuration")
    n_classes = data.n_classes
    if n_classes < 2:
        raise ValueError("training needs at least two classes")
    d = data.dim

    augmented, aug_cfg, rho, mean, scale = _prepare_inputs(data, cfg)
    spec = _build_kernel(cfg, rho, d, augmented.dim)

    problem = Problem(spec=spec, x0=augmented.points, labels=data.labels,
                      n_classes=n_classes, lam=cfg.lam, T=cfg.timesteps,
                      kappa1=cfg.kappa1, kappa2=cfg.kappa2,
                      use_affine=cfg.affine)
    options = FitOptions(max_iter=cfg.max_iter, target_error=cfg.delta,
                         seed=cfg.seed, progress=cfg.progress)
    result = fit(problem, options)

    artifact = ModelArtifact(
        kernel=spec, augment=aug_cfg, z=result.traj.z, ctrl=result.ctrl,
        theta=result.theta, n_classes=n_classes, original_dim=d,
        hyper=problem.hyper(result.sigma2), labels=problem.labels,
        train_error=result.train_error, parts=result.parts,
        provenance={"dataset_id": cfg.dataset_id, "seed": cfg.seed,
                    "version": _version()},
        normalize_mean=mean, normalize_scale=scale)
    return artifact, result.trace


def _version():
    from . import __version__
    return __version__


def _transport_queries(artifact, queries):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != artifact.original_dim:
        raise ValueError(f"queries must be (M, {artifact.original_dim})")
    if artifact.normalize_mean is not None:
        queries = (queries - artifact.normalize_mean) / artifact.normalize_scale
    probe = augment(LabeledSet(queries,
                               np.zeros(queries.shape[0], dtype=np.int64)),
                    artifact.augment, "test")
    return transport(artifact.kernel, Trajectory(artifact.z), artifact.ctrl,
                     probe.points)


def transform(artifact, queries):
    """Final-time images of query points under the stored flow."""
    return _transport_queries(artifact, queries)[-1]


def predict(artifact, queries):
    """Class labels and softmax probabilities for query points.

    Ties in the argmax resolve toward the smaller class index.
    """
    final = transform(artifact, queries)
    probs = softmax_prob(artifact.theta, final)
    return np.argmax(probs, axis=1).astype(np.int64), probs


def _principal_rows(x, k):
    """Top-k right singular vectors of a centered cloud, sign-normalized."""
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    rows = vt[:k].copy()
    for row in rows:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return rows


def export_flow_view(artifact, data=None):
    """Trajectories projected onto a 3-frame for external plotting.

    The frame stacks the unit discriminant direction (the first nonzero
    row of theta) with the top two principal components of the final-time
    cloud projected off it.  Degenerate theta falls back to the top three
    principal components.  Returns (rows, frame): rows hold
    (time, point id, label, 3 projected coordinates) per time slice.
    """
    if data is None:
        path = artifact.z
        labels = artifact.labels
    else:
        path = _transport_queries(artifact, data.points)
        labels = data.labels
    d = path.shape[2]
    if d < 3:
        raise ValueError("flow view needs at least 3 ambient dimensions")
    final = path[-1]
    disc = artifact.theta.theta[1] if artifact.n_classes >= 2 else None
    if disc is None or np.linalg.norm(disc) <= 1e-12:
        frame = _principal_rows(final, 3)
    else:
        u1 = disc / np.linalg.norm(disc)
        residual = final - np.outer(final @ u1, u1)
        frame = np.vstack([u1, _principal_rows(residual, 2)])
    coords = path @ frame.T  # (T+1, M, 3)
    t_count, m = path.shape[0], path.shape[1]
    rows = np.empty((t_count * m, 6))
    rows[:, 0] = np.repeat(np.arange(t_count), m)
    rows[:, 1] = np.tile(np.arange(m), t_count)
    rows[:, 2] = np.tile(labels, t_count)
    rows[:, 3:] = coords.reshape(t_count * m, 3)
    return rows, frame


# ---------------------------------------------------------------------------
# serialization


def _encode_array(arr, blob_parts, inline):
    if arr is None:
        return None
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if inline:
        return {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    offset = sum(p.size for p in blob_parts)
    blob_parts.append(arr.ravel())
    return {"shape": list(arr.shape), "offset": offset, "count": arr.size}


def _decode_array(entry, blob):
    if entry is None:
        return None
    shape = tuple(entry["shape"])
    if "data" in entry:
        flat = np.array(entry["data"], dtype=np.float64)
    else:
        flat = blob[entry["offset"]:entry["offset"] + entry["count"]].copy()
    if flat.size != int(np.prod(shape)):
        raise ValueError("array payload does not match its shape")
    return flat.reshape(shape)


def _kernel_to_doc(spec):
    return {"family": spec.family, "rho": spec.rho, "order": spec.order,
            "radial": spec.radial,
            "neighborhoods": (None if spec.neighborhoods is None
                              else [list(nb) for nb in spec.neighborhoods]),
            "affine_weights": (None if spec.affine_weights is None
                               else list(spec.affine_weights))}


def _kernel_from_doc(doc):
    return kernels.KernelSpec(
        family=doc["family"], rho=doc["rho"], order=doc["order"],
        radial=doc["radial"],
        neighborhoods=(None if doc["neighborhoods"] is None
                       else tuple(tuple(nb) for nb in doc["neighborhoods"])),
        affine_weights=(None if doc["affine_weights"] is None
                        else tuple(doc["affine_weights"])))


def write_json(path, doc):
    """Deterministic JSON write shared by every structured output file."""
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_model(path, artifact, arrays="inline"):
    """Write the artifact as a schema-tagged JSON document.

    ``arrays="inline"`` embeds float arrays in the document;
    ``arrays="blob"`` stores them in a sidecar little-endian float64 file
    named <model>.bin next to the document.
    """
    if arrays not in ("inline", "blob"):
        raise ValueError("arrays must be 'inline' or 'blob'")
    path = Path(path)
    inline = arrays == "inline"
    blob_parts = []

    def enc(a):
        return _encode_array(a, blob_parts, inline)

    doc = {
        "schema": MODEL_SCHEMA,
        "kernel": _kernel_to_doc(artifact.kernel),
        "augment": {"extra_dims": artifact.augment.extra_dims,
                    "delta_noise": artifact.augment.delta_noise,
                    "seed": artifact.augment.seed},
        "hyper": {"lam": artifact.hyper.lam, "sigma2": artifact.hyper.sigma2,
                  "T": artifact.hyper.T, "kappa1": artifact.hyper.kappa1,
                  "kappa2": artifact.hyper.kappa2},
        "n_classes": artifact.n_classes,
        "original_dim": artifact.original_dim,
        "train_error": artifact.train_error,
        "parts": {"kinetic": artifact.parts.kinetic,
                  "affine": artifact.parts.affine,
                  "theta_penalty": artifact.parts.theta_penalty,
                  "data_term": artifact.parts.data_term},
        "provenance": dict(artifact.provenance),
        "labels": [int(v) for v in artifact.labels],
        "arrays": {
            "z": enc(artifact.z),
            "momenta": enc(artifact.ctrl.momenta),
            "affine_A": enc(artifact.ctrl.affine_A),
            "affine_b": enc(artifact.ctrl.affine_b),
            "theta": enc(artifact.theta.theta),
            "normalize_mean": enc(artifact.normalize_mean),
            "normalize_scale": enc(artifact.normalize_scale),
        },
    }
    if not inline:
        blob_name = path.name + ".bin"
        doc["blob"] = blob_name
        payload = np.concatenate(blob_parts) if blob_parts else np.empty(0)
        (path.parent / blob_name).write_bytes(
            payload.astype("<f8").tobytes())
    write_json(path, doc)


def load_model(path, check=True):
    """Read a model document (and sidecar blob if referenced)."""
    path = Path(path)
    doc = read_json(path)
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"{path}: not a {MODEL_SCHEMA} document")
    blob = None
    if "blob" in doc:
        raw = (path.parent / doc["blob"]).read_bytes()
        blob = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    arrays = {k: _decode_array(v, blob) for k, v in doc["arrays"].items()}
    hyper = Hyper(lam=doc["hyper"]["lam"], sigma2=doc["hyper"]["sigma2"],
                  T=int(doc["hyper"]["T"]), kappa1=doc["hyper"]["kappa1"],
                  kappa2=doc["hyper"]["kappa2"])
    parts = EnergyParts(kinetic=doc["parts"]["kinetic"],
                        affine=doc["parts"]["affine"],
                        theta_penalty=doc["parts"]["theta_penalty"],
                        data_term=doc["parts"]["data_term"])
    artifact = ModelArtifact(
        kernel=_kernel_from_doc(doc["kernel"]),
        augment=AugmentConfig(extra_dims=int(doc["augment"]["extra_dims"]),
                              delta_noise=doc["augment"]["delta_noise"],
                              seed=int(doc["augment"]["seed"])),
        z=arrays["z"],
        ctrl=ControlPath(arrays["momenta"], arrays["affine_A"],
                         arrays["affine_b"]),
        theta=ThetaParams(arrays["theta"]),
        n_classes=int(doc["n_classes"]),
        original_dim=int(doc["original_dim"]),
        hyper=hyper,
        labels=np.array(doc["labels"], dtype=np.int64),
        train_error=doc["train_error"],
        parts=parts,
        provenance=dict(doc["provenance"]),
        normalize_mean=arrays["normalize_mean"],
        normalize_scale=arrays["normalize_scale"])
    return artifact.validate() if check else artifact
