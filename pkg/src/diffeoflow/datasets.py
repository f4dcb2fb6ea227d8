"""Seeded synthetic dataset generators and file ingestion.

Every generator draws from a counter-based Philox stream keyed by
(seed, stream id), so regeneration is reproducible bit for bit and the
train / test split never shares randomness:

==========  ==================================================
stream       use
==========  ==================================================
0 (train)    training draws
1 (test)     test draws
2 (rotation) seed-level random rotations (shared by both splits)
3 (pilot)    calibration draws (rbf threshold estimation)
4 (augment)  training-time jitter in the pipeline
==========  ==================================================

Generators return points grouped by class (labels 0, 1, ... in blocks)
with exactly the requested count per class.  Training draws are made
distinct by regenerating colliding samples; test draws may repeat
internally for small discrete families but never reproduce an excluded
(training) point.  Parallel generation must partition the counter space
to keep determinism.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .objective import LabeledSet

STREAM_TRAIN = 0
STREAM_TEST = 1
STREAM_ROTATION = 2
STREAM_PILOT = 3
STREAM_AUGMENT = 4

_U64 = (1 << 64) - 1

GENERATIVE_FAMILIES = ("tori", "spherical_layers", "rbf", "mog",
                       "curve_segments", "xor", "segment_lengths",
                       "segment_pairs")
FAMILY_NAMES = GENERATIVE_FAMILIES + ("csv", "idx")

_DEFAULT_DIM = {"tori": 3, "spherical_layers": 3, "rbf": 3, "mog": 20,
                "curve_segments": 50, "xor": 50, "segment_lengths": 100,
                "segment_pairs": 50}
_MIN_DIM = {"tori": 3, "spherical_layers": 1, "rbf": 1, "curve_segments": 2,
            "xor": 2, "segment_lengths": 12, "segment_pairs": 12}
_FIXED_DIM = {"mog": 20}
_N_CLASSES = {"mog": 3}


def rng_stream(seed, stream):
    """Philox generator for the given (seed, stream) pair."""
    key = [int(seed) & _U64, int(stream) & _U64]
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class DatasetSpec:
    """Name, dimension, per-class count, seed and family parameters."""

    name: str
    n_per_class: int
    seed: int
    dim: int = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FAMILY_NAMES:
            raise ValueError(f"unknown dataset family {self.name!r}")
        if self.name not in GENERATIVE_FAMILIES:
            raise ValueError(f"{self.name!r} is file-backed, not generative")
        if self.dim is None:
            object.__setattr__(self, "dim", _DEFAULT_DIM[self.name])
        fixed = _FIXED_DIM.get(self.name)
        if fixed is not None and self.dim != fixed:
            raise ValueError(f"{self.name} is defined in dimension {fixed}")
        if self.dim < _MIN_DIM.get(self.name, 1):
            raise ValueError(f"{self.name} needs dim >= "
                             f"{_MIN_DIM.get(self.name, 1)}")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be positive")
        if int(self.seed) < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def n_classes(self):
        return _N_CLASSES.get(self.name, 2)

    def to_dict(self):
        return {"name": self.name, "dim": self.dim,
                "n_per_class": self.n_per_class, "seed": self.seed,
                "params": dict(self.params)}

    @classmethod
    def from_dict(cls, doc):
        return cls(name=doc["name"], n_per_class=int(doc["n_per_class"]),
                   seed=int(doc["seed"]), dim=int(doc["dim"]),
                   params=dict(doc.get("params", {})))


def _fill_classes(sampler, rng, n_per_class, n_classes, distinct=True,
                  exclude=None, batch=512):
    """Draw batches until every class bucket holds n_per_class points.

    Duplicate rows (by exact bytes) are regenerated when ``distinct``;
    rows listed in ``exclude`` are always regenerated.  Surplus draws of
    already-full classes are discarded, which realizes exact per-class
    counts under the family's natural law.
    """
    buckets = [[] for _ in range(n_classes)]
    seen = set()
    exclude = exclude if exclude is not None else frozenset()
    remaining = n_classes * n_per_class
    draws = 0
    limit = max(200_000, 400 * n_classes * n_per_class)
    while remaining:
        pts, labels = sampler(rng, batch)
        draws += batch
        for x, y in zip(pts, labels):
            y = int(y)
            if len(buckets[y]) >= n_per_class:
                continue
            key = x.tobytes()
            if key in exclude or (distinct and key in seen):
                continue
            if distinct:
                seen.add(key)
            buckets[y].append(x)
            remaining -= 1
        if draws > limit and remaining:
            raise ValueError("family support too small for the requested "
                             "distinct per-class counts")
    points = np.concatenate([np.stack(b) for b in buckets])
    labels = np.repeat(np.arange(n_classes), n_per_class)
    return LabeledSet(points, labels)


def _random_rotation(d, seed):
    """Haar-distributed rotation (det +1) from the rotation stream."""
    rng = rng_stream(seed, STREAM_ROTATION)
    m = rng.standard_normal((d, d))
    q, r = np.linalg.qr(m)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _ball_uniform(rng, m, d):
    """Uniform draws from the d-dimensional unit ball."""
    x = rng.standard_normal((m, d))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radii = rng.uniform(0.0, 1.0, size=(m, 1)) ** (1.0 / d)
    return x / norms * radii


def _log_cosh(x):
    """log cosh x, stable for large |x|."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


# ---------------------------------------------------------------------------
# family samplers: factory(spec) -> callable(rng, m) -> (points, labels)


def _tori_factory(spec):
    d = spec.dim
    ring = float(spec.params.get("ring_radius", 1.0))
    tube = float(spec.params.get("tube_radius", 0.25))
    if not 0.0 < tube < ring:
        raise ValueError("need 0 < tube_radius < ring_radius")
    rot = _random_rotation(d, spec.seed)

    def sampler(rng, m):
        labels = rng.integers(0, 2, size=m)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=m)
        extra = rng.standard_normal((m, d - 3))
        r = ring + tube * np.cos(phi)
        # interlocked pair centered at the origin: torus 0 has axis e_z at
        # (-ring/2, 0, 0), torus 1 has axis e_y at (+ring/2, 0, 0) and
        # threads through it
        half = 0.5 * ring
        t0 = np.stack([r * np.cos(theta) - half, r * np.sin(theta),
                       tube * np.sin(phi)], axis=1)
        t1 = np.stack([half + r * np.cos(theta), tube * np.sin(phi),
                       r * np.sin(theta)], axis=1)
        base = np.where(labels[:, None] == 0, t0, t1)
        return np.hstack([base, extra]) @ rot.T, labels

    return sampler


def _spherical_labels(points):
    """1 where cos(9 |x|) >= 0, else 0."""
    radii = np.linalg.norm(points, axis=1)
    return (np.cos(9.0 * radii) >= 0.0).astype(np.int64)


def _spherical_factory(spec):
    d = spec.dim

    def sampler(rng, m):
        pts = _ball_uniform(rng, m, d)
        return pts, _spherical_labels(pts)

    return sampler


def _rbf_centers(d, n_centers):
    """c_j = (3j/L) e_((j mod d)+1) for j = 1..L, 1-based basis."""
    centers = np.zeros((n_centers, d))
    j = np.arange(1, n_centers + 1)
    centers[j - 1, j % d] = 3.0 * j / n_centers
    return centers


def _rbf_coeffs(n_centers):
    j = np.arange(1, n_centers + 1)
    return np.cos(6.0 * np.pi * j / n_centers)


def _rbf_statistic(points, centers, coeffs, alpha):
    """sin(sum_j exp(-(|x - c_j| / alpha)^2) a_j), evaluated in chunks."""
    out = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], 8192):
        block = points[lo:lo + 8192]
        weights = np.exp(-(cdist(block, centers) / alpha) ** 2)
        out[lo:lo + 8192] = np.sin(weights @ coeffs)
    return out


def _rbf_factory(spec):
    d = spec.dim
    alpha = float(spec.params.get("alpha", 0.1))
    n_centers = int(spec.params.get("n_centers", 100))
    pilot = int(spec.params.get("pilot", 100_000))
    if alpha <= 0 or n_centers < 1 or pilot < 2:
        raise ValueError("rbf parameters out of range")
    centers = _rbf_centers(d, n_centers)
    coeffs = _rbf_coeffs(n_centers)
    # the class threshold is the empirical median of the statistic, which
    # balances the two classes under the sampling law
    pilot_rng = rng_stream(spec.seed, STREAM_PILOT)
    mu = float(np.median(_rbf_statistic(_ball_uniform(pilot_rng, pilot, d),
                                        centers, coeffs, alpha)))

    def sampler(rng, m):
        pts = _ball_uniform(rng, m, d)
        stat = _rbf_statistic(pts, centers, coeffs, alpha)
        return pts, (stat - mu >= 0.0).astype(np.int64)

    return sampler


def _mog_means_covs():
    d = 20
    means = np.zeros((3, d))
    means[1, :3] = [-1.0, -1.0, -1.0]
    means[2, :3] = [-1.0, 1.0, -1.0]
    idx = np.arange(d)
    gaps = np.abs(idx[:, None] - idx[None, :])
    covs = np.stack([10.0 * np.eye(d),
                     20.0 * np.exp(-gaps / 20.0),
                     20.0 * np.exp(-gaps / 60.0)])
    return means, covs


def _mog_factory(spec):
    means, covs = _mog_means_covs()
    chols = np.stack([np.linalg.cholesky(c) for c in covs])

    def sampler(rng, m):
        labels = rng.integers(0, 3, size=m)
        z = rng.standard_normal((m, 20))
        pts = np.empty((m, 20))
        for y in range(3):
            mask = labels == y
            pts[mask] = means[y] + z[mask] @ chols[y].T
        return pts, labels

    return sampler


def _curve_factory(spec):
    d = spec.dim
    betas = np.array([float(spec.params.get("beta0", 0.02)),
                      float(spec.params.get("beta1", 0.021))])
    if np.any(betas <= 0):
        raise ValueError("curve steepness parameters must be positive")
    grid = np.arange(d) / d

    def sampler(rng, m):
        labels = rng.integers(0, 2, size=m)
        shift = rng.uniform(-2.0, 2.0, size=m)
        noise = rng.standard_normal((m, d))
        arg = (grid[None, :] - shift[:, None]) / betas[labels][:, None]
        return _log_cosh(arg) + noise, labels

    return sampler


def _xor_factory(spec):
    d = spec.dim

    def sampler(rng, m):
        i = rng.integers(0, d, size=m)
        j = rng.integers(0, d - 1, size=m)
        j = j + (j >= i)
        s1 = 2 * rng.integers(0, 2, size=m) - 1
        s2 = 2 * rng.integers(0, 2, size=m) - 1
        pts = np.zeros((m, d))
        rows = np.arange(m)
        pts[rows, i] = s1
        pts[rows, j] = s2
        return pts, (s1 != s2).astype(np.int64)

    return sampler


def _cyclic_run_mask(starts, lengths, d):
    """Boolean (m, d) mask of a cyclic run per row."""
    cols = np.arange(d)
    return (cols[None, :] - starts[:, None]) % d < lengths[:, None]


def _segment_lengths_factory(spec):
    d = spec.dim
    lengths = np.array([int(spec.params.get("len0", 10)),
                        int(spec.params.get("len1", 11))])
    if np.any(lengths < 1) or np.any(lengths >= d):
        raise ValueError("run lengths must lie in 1..dim-1")

    def sampler(rng, m):
        labels = rng.integers(0, 2, size=m)
        starts = rng.integers(0, d, size=m)
        # one multiplier per sample: the run keeps a constant height, so
        # thresholding entries separates the classes while the coordinate
        # sum (the best shift-invariant linear statistic) stays ambiguous
        scale = rng.uniform(0.75, 1.25, size=(m, 1))
        mask = _cyclic_run_mask(starts, lengths[labels], d)
        return scale * mask, labels

    return sampler


def _segment_pairs_factory(spec):
    d = spec.dim
    # class 0 carries two runs of 5, class 1 runs of 4 and 6
    len_a = np.array([5, 4])
    len_b = np.array([5, 6])

    def sampler(rng, m):
        labels = rng.integers(0, 2, size=m)
        s1 = rng.integers(0, d, size=m)
        s2 = rng.integers(0, d, size=m)
        l1 = len_a[labels]
        l2 = len_b[labels]
        run1 = _cyclic_run_mask(s1, l1, d)
        run2 = _cyclic_run_mask(s2, l2, d)
        # overlap or zero-gap adjacency rejected: the second run must miss
        # the first run dilated by one position on each side
        dilated = _cyclic_run_mask((s1 - 1) % d, l1 + 2, d)
        valid = ~np.any(dilated & run2, axis=1)
        pts = (run1 | run2).astype(np.float64)
        return pts[valid], labels[valid]

    return sampler


_FACTORIES = {"tori": _tori_factory, "spherical_layers": _spherical_factory,
              "rbf": _rbf_factory, "mog": _mog_factory,
              "curve_segments": _curve_factory, "xor": _xor_factory,
              "segment_lengths": _segment_lengths_factory,
              "segment_pairs": _segment_pairs_factory}


def generate(spec, stream=STREAM_TRAIN, distinct=True, exclude=None):
    """Draw a LabeledSet for ``spec`` from the given stream."""
    sampler = _FACTORIES[spec.name](spec)
    rng = rng_stream(spec.seed, stream)
    return _fill_classes(sampler, rng, spec.n_per_class, spec.n_classes,
                         distinct=distinct, exclude=exclude)


def make_split(spec, n_test_per_class=2000):
    """Training set plus a test set that never repeats a training point.

    Training points are pairwise distinct.  Test points are drawn from the
    independent test stream with the training patterns excluded; internal
    repeats are allowed there, which small discrete families need.
    """
    train = generate(spec, STREAM_TRAIN, distinct=True)
    taken = frozenset(row.tobytes() for row in train.points)
    test_spec = replace(spec, n_per_class=n_test_per_class)
    test = generate(test_spec, STREAM_TEST, distinct=False, exclude=taken)
    return train, test


# spec-per-family convenience entry points


def gen_tori(d, n_per_class, seed, **params):
    """Two interlocked tori in the first three coordinates, standard normal
    noise in the rest, one seeded random rotation applied to everything."""
    return generate(DatasetSpec("tori", n_per_class, seed, d, params))


def gen_spherical_layers(d, n_per_class, seed, **params):
    """Class = indicator of cos(9 |x|) >= 0, x uniform on the unit ball."""
    return generate(DatasetSpec("spherical_layers", n_per_class, seed, d,
                                params))


def gen_rbf(d, n_per_class, seed, **params):
    """Sign of a sine of a radial-basis sum, thresholded at its median."""
    return generate(DatasetSpec("rbf", n_per_class, seed, d, params))


def gen_mog(n_per_class, seed, **params):
    """Three 20-dimensional Gaussians with long-range correlations."""
    return generate(DatasetSpec("mog", n_per_class, seed, None, params))


def gen_curve_segments(n_per_class, seed, d=50, **params):
    """Noisy log-cosh ramps with nearly identical steepness per class."""
    return generate(DatasetSpec("curve_segments", n_per_class, seed, d,
                                params))


def gen_xor(n_per_class, seed, d=50, **params):
    """Two +-1 spikes; class 0 when the spikes carry equal signs."""
    return generate(DatasetSpec("xor", n_per_class, seed, d, params))


def gen_segment_lengths(n_per_class, seed, d=100, **params):
    """One cyclic run of 10 (class 0) or 11 (class 1) ones, the whole run
    scaled by a single Uniform[0.75, 1.25] factor drawn per sample."""
    return generate(DatasetSpec("segment_lengths", n_per_class, seed, d,
                                params))


def gen_segment_pairs(n_per_class, seed, d=50, **params):
    """Two separated cyclic runs of ones: lengths (5, 5) against (4, 6)."""
    return generate(DatasetSpec("segment_pairs", n_per_class, seed, d,
                                params))


# ---------------------------------------------------------------------------
# file ingestion


def _read_idx(path, expected_magic):
    raw = Path(path).read_bytes()
    ndim = expected_magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated header")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic {magic:#010x}, "
                         f"expected {expected_magic:#010x}")
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big")
            for i in range(ndim)]
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise ValueError(f"{path}: truncated data section")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header, count=count)
    return data.reshape(dims)


def load_idx(images_path, labels_path, n_per_class, downsample=2):
    """Load IDX images + labels, mean-pool, scale to [0, 1].

    Takes the first ``n_per_class`` examples of every digit present, in
    file order, pools ``downsample`` x ``downsample`` pixel blocks to
    their mean, and flattens.  Labels keep their stored digit values.
    """
    images = _read_idx(images_path, 0x00000803)
    labels = _read_idx(labels_path, 0x00000801).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image and label counts disagree")
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise ValueError("labels must be digits 0..9")
    n, h, w = images.shape
    if downsample < 1 or h % downsample or w % downsample:
        raise ValueError(f"{h}x{w} images do not tile into "
                         f"{downsample}x{downsample} blocks")
    keep = []
    for digit in np.unique(labels):
        idx = np.flatnonzero(labels == digit)[:n_per_class]
        if idx.size < n_per_class:
            raise ValueError(f"class {digit} has only {idx.size} examples, "
                             f"need {n_per_class}")
        keep.append(idx)
    keep = np.concatenate(keep)
    hh, ww = h // downsample, w // downsample
    pooled = images[keep].astype(np.float64).reshape(
        keep.size, hh, downsample, ww, downsample).mean(axis=(2, 4))
    return LabeledSet(pooled.reshape(keep.size, hh * ww) / 255.0,
                      labels[keep])


def write_csv(path, data):
    """Write a LabeledSet as x0,...,x{d-1},label rows, 17 significant digits."""
    d = data.dim
    lines = [",".join([f"x{i}" for i in range(d)] + ["label"])]
    for x, y in zip(data.points, data.labels):
        lines.append(",".join(["%.17g" % v for v in x] + [str(int(y))]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path):
    """Read a LabeledSet written by write_csv; rejects malformed rows."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    d = len(header) - 1
    if d < 1 or header != [f"x{i}" for i in range(d)] + ["label"]:
        raise ValueError(f"{path}: malformed header")
    points = np.empty((len(lines) - 1, d))
    labels = np.empty(len(lines) - 1, dtype=np.int64)
    for k, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != d + 1:
            raise ValueError(f"{path}: row {k + 2} has {len(parts)} fields, "
                             f"expected {d + 1}")
        try:
            points[k] = [float(v) for v in parts[:d]]
            labels[k] = int(parts[d])
        except ValueError as exc:
            raise ValueError(f"{path}: row {k + 2}: {exc}") from None
    return LabeledSet(points, labels)
