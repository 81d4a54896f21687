"""Operator network mapping far-field matrices to indicator fields.

The network has a fixed, interpretable decoder: a trunk of Gaussian
radial basis functions on a uniform grid of centers covering the search
domain, so the learned part is only the branch that maps measurement
data to nonnegative basis coefficients.  Training data is synthetic and
fully deterministic: disks of random radius on a dense grid of centers,
labeled by their own characteristic function at the trunk centers.

The same trained object also supplies the spatial profile for learned
regularization: the indicator is scaled by an estimated perturbation
norm to produce a per-point Tikhonov parameter.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import nn, noisenet
from .forward import FarFieldMatrix, disk_farfield, fourier_resample, add_noise
from .regsolve import IndicatorField, RegField, SamplingGrid

logger = logging.getLogger(__name__)

MAGIC_MODEL = b"RDON"
MAGIC_DATASET = b"RDS1"

# Width floor for the basis: below exp(-2) neighboring bumps decouple and
# the trunk Gram matrix turns numerically singular.
S_MIN = math.exp(-2.0)

# Keeps learned regularization fields strictly positive where the
# indicator underflows; relative to the estimated perturbation norm.
ALPHA_FLOOR_REL = 1e-8

_HIDDEN_FACTOR = 3
_SAMPLES_PER_CENTER = 16
_POSITION_REFINEMENT = 4
_EVAL_CHUNK = 16384


@dataclass(frozen=True)
class RbfTrunk:
    """Gaussian basis exp(-epsilon r^2) on an n_h x n_h grid of centers.

    The shape parameter is tied to the grid: epsilon = -ln(s)/h^2, so a
    basis function evaluated at the neighboring center equals s.  Centers
    cover [-lam*L, lam*L]^2 row-major with x varying fastest.
    """

    lam: float
    L: float
    h: float
    s: float
    epsilon: float
    n_h: int
    p_h: int
    centers: np.ndarray


def make_trunk(lam: float, L: float, h: float, s: float,
               allow_low_s: bool = False) -> RbfTrunk:
    """Build the basis grid for a domain halfwidth lam*L and spacing h."""
    if lam <= 0.0 or L <= 0.0 or h <= 0.0:
        raise ValueError("wavelength, domain factor, and spacing must be positive")
    if not 0.0 < s < 1.0:
        raise ValueError(f"neighbor value s must lie in (0, 1), got {s}")
    if s < S_MIN:
        if not allow_low_s:
            raise ValueError(
                f"s = {s:.4g} is below the conditioning floor {S_MIN:.4g}; "
                f"pass allow_low_s=True to override")
        logger.warning("basis neighbor value s = %.4g below recommended floor %.4g",
                       s, S_MIN)
    halfwidth = lam * L
    n_h = int(math.floor(2.0 * halfwidth / h)) + 1
    axis = np.linspace(-halfwidth, halfwidth, n_h)
    xs, ys = np.meshgrid(axis, axis)
    centers = np.column_stack([xs.ravel(), ys.ravel()])
    epsilon = -math.log(s) / h ** 2
    return RbfTrunk(float(lam), float(L), float(h), float(s), epsilon,
                    n_h, n_h * n_h, centers)


def trunk_eval(trunk: RbfTrunk, points) -> np.ndarray:
    """Basis matrix at query points: row p, column i is exp(-eps |z_p - c_i|^2)."""
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    if single:
        points = points[None, :]
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("query points must be 2-vectors")
    sq = ((points[:, None, :] - trunk.centers[None, :, :]) ** 2).sum(axis=2)
    values = np.exp(-trunk.epsilon * sq)
    return values[0] if single else values


@dataclass
class RbfDeepOnet:
    """Branch network plus trunk; input is a far field on the m0 x n0 grid."""

    trunk: RbfTrunk
    branch: nn.Mlp
    m0: int
    n0: int

    def __post_init__(self):
        expected = (2 * self.m0 * self.n0,
                    _HIDDEN_FACTOR * self.trunk.p_h, self.trunk.p_h)
        if self.branch.sizes != expected:
            raise ValueError(f"branch sizes {self.branch.sizes} do not match "
                             f"the required {expected}")
        if self.branch.activation != "tanh" or self.branch.output != "square":
            raise ValueError("branch must use tanh hidden layers and a squared output")


def make_deeponet(trunk: RbfTrunk, m0: int, n0: int, seed: int) -> RbfDeepOnet:
    branch = nn.init_mlp(
        (2 * m0 * n0, _HIDDEN_FACTOR * trunk.p_h, trunk.p_h),
        "tanh", "square", seed)
    return RbfDeepOnet(trunk, branch, int(m0), int(n0))


def branch_features(farfield: FarFieldMatrix) -> np.ndarray:
    """Real input vector: row-major real parts then row-major imaginary parts."""
    return np.concatenate([farfield.entries.real.ravel(),
                           farfield.entries.imag.ravel()])


@dataclass(frozen=True)
class TrainingSet:
    """Disk far fields with their characteristic functions at trunk centers."""

    matrices: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    etas: np.ndarray
    labels: np.ndarray
    k: float

    def __post_init__(self):
        count = self.matrices.shape[0]
        if self.matrices.ndim != 3:
            raise ValueError("matrices must be (count, m0, n0)")
        if (self.centers.shape != (count, 2) or self.radii.shape != (count,)
                or self.etas.shape != (count,) or self.labels.shape[0] != count):
            raise ValueError("training arrays disagree on sample count")
        if self.labels.ndim != 2 or not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be a binary (count, p_h) array")
        if np.any(self.radii <= 0.0) or np.any(self.etas < 0.0):
            raise ValueError("radii must be positive and noise levels nonnegative")

    @property
    def count(self) -> int:
        return self.matrices.shape[0]


def gen_training_set(trunk: RbfTrunk, k: float, m0: int, n0: int, seed: int,
                     radius_range=None, noise_eta_range=None) -> TrainingSet:
    """Deterministic disk corpus: 16 samples per basis function.

    Disk centers run over a position grid refined 4x from the trunk grid
    (so 16 p_h samples), radii are uniform on radius_range (default half
    to one and a half wavelengths), and labels mark which trunk centers
    fall inside the disk, boundary included.  Draw order is fixed: all
    radii first, then, when noise is requested, all levels and all seeds.
    """
    if radius_range is None:
        radius_range = (0.5 * trunk.lam, 1.5 * trunk.lam)
    r_lo, r_hi = radius_range
    if not 0.0 < r_lo <= r_hi:
        raise ValueError(f"bad radius range {radius_range}")
    rng = np.random.Generator(np.random.PCG64(seed))
    side = _POSITION_REFINEMENT * trunk.n_h
    axis = np.linspace(-trunk.lam * trunk.L, trunk.lam * trunk.L, side)
    xs, ys = np.meshgrid(axis, axis)
    positions = np.column_stack([xs.ravel(), ys.ravel()])
    count = positions.shape[0]

    radii = rng.uniform(r_lo, r_hi, size=count)
    if noise_eta_range is not None:
        e_lo, e_hi = noise_eta_range
        if not 0.0 < e_lo <= e_hi:
            raise ValueError(f"bad noise range {noise_eta_range}")
        etas = np.exp(rng.uniform(np.log(e_lo), np.log(e_hi), size=count))
        seeds = rng.integers(0, 2 ** 63, size=count)
    else:
        etas = np.zeros(count)

    matrices = np.empty((count, m0, n0), dtype=complex)
    labels = np.empty((count, trunk.p_h), dtype=np.uint8)
    for i in range(count):
        farfield = disk_farfield(positions[i], radii[i], k, m0, n0)
        if noise_eta_range is not None:
            farfield, _ = add_noise(farfield, etas[i], int(seeds[i]))
        matrices[i] = farfield.entries
        inside = np.linalg.norm(trunk.centers - positions[i], axis=1) <= radii[i]
        labels[i] = inside.astype(np.uint8)
    return TrainingSet(matrices, positions, radii, etas, labels, float(k))


def train_deeponet(model: RbfDeepOnet, training_set: TrainingSet, seed: int,
                   epochs: int = 300, batch_size: int = 64,
                   lr_start: float = 1e-3, lr_end: float = 1e-5,
                   weight_decay: float = 5e-5, decoupled: bool = True) -> list:
    """Train the branch in place; returns the per-epoch mean losses.

    The loss is the mean squared error between predicted indicator values
    at the trunk centers and the binary labels, averaged over both the
    batch and the centers.  Minibatches are drawn by a seeded shuffle each
    epoch, the learning rate follows a half-cosine over all steps, and a
    non-finite loss aborts with the failing epoch in the message.
    """
    if training_set.labels.shape[1] != model.trunk.p_h:
        raise ValueError("training labels do not match the trunk size")
    if training_set.matrices.shape[1:] != (model.m0, model.n0):
        raise ValueError("training matrices do not match the model input shape")
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be nonnegative and batch size positive")
    if epochs == 0:
        return []

    count = training_set.count
    features = np.concatenate(
        [training_set.matrices.real.reshape(count, -1),
         training_set.matrices.imag.reshape(count, -1)], axis=1)
    targets = training_set.labels.astype(float)
    gram = trunk_eval(model.trunk, model.trunk.centers)

    params = nn.parameters(model.branch)
    steps_per_epoch = -(-count // batch_size)
    schedule = nn.LrSchedule("cosine", lr_start, lr_end, epochs * steps_per_epoch)
    state = nn.make_adam(params, lr_start, weight_decay=weight_decay,
                         decoupled=decoupled)
    rng = np.random.Generator(np.random.PCG64(seed))

    losses = []
    for epoch in range(epochs):
        order = rng.permutation(count)
        squared_sum = 0.0
        for start in range(0, count, batch_size):
            idx = order[start:start + batch_size]
            xb = features[idx]
            trace = nn.forward_trace(model.branch, xb)
            predicted = trace[1][-1] @ gram
            err = predicted - targets[idx]
            squared_sum += float(np.sum(err ** 2))
            upstream = (2.0 / err.size) * (err @ gram)
            wg, bg, _ = nn.backward(model.branch, xb, upstream, trace=trace)
            grads = []
            for w, b in zip(wg, bg):
                grads.extend([w, b])
            nn.adam_step(state, params, grads, nn.lr_at(schedule, state.step))
        mean_loss = squared_sum / (count * model.trunk.p_h)
        if not np.isfinite(mean_loss):
            raise RuntimeError(f"training diverged at epoch {epoch + 1}: "
                               f"loss {mean_loss}")
        losses.append(mean_loss)
    return losses


def indicator_eval(model: RbfDeepOnet, farfield: FarFieldMatrix,
                   grid: SamplingGrid) -> IndicatorField:
    """Indicator field of one measurement: trunk combination of branch outputs.

    Data on a finer grid than the model's native m0 x n0 is folded down by
    trigonometric resampling first.  The branch runs once; evaluation over
    the grid is then a basis expansion with nonnegative coefficients, so
    the field is nonnegative by construction.
    """
    wavelength = 2.0 * np.pi / farfield.k
    if abs(wavelength - model.trunk.lam) > 1e-6 * model.trunk.lam:
        logger.warning("far field at wavelength %.6g fed to a model trained "
                       "for %.6g", wavelength, model.trunk.lam)
    native = fourier_resample(farfield, model.m0, model.n0)
    coefficients = nn.forward(model.branch, branch_features(native))
    points = grid.points
    values = np.empty(points.shape[0])
    for start in range(0, points.shape[0], _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, points.shape[0])
        values[start:stop] = trunk_eval(model.trunk, points[start:stop]) @ coefficients
    return IndicatorField(grid, values, "deeponet")


def learned_regularizer(model: RbfDeepOnet, noise_model, farfield: FarFieldMatrix,
                        grid: SamplingGrid) -> RegField:
    """Spatial Tikhonov parameter: estimated perturbation norm times indicator."""
    delta = noisenet.predict_delta(noise_model, farfield)
    indicator = indicator_eval(model, farfield, grid)
    alpha = np.maximum(delta * indicator.values, ALPHA_FLOOR_REL * delta)
    return RegField(grid, alpha)


def save_deeponet(path, model: RbfDeepOnet) -> None:
    """Model archive: trunk scalars, input grid shape, then the branch blob."""
    trunk = model.trunk
    header = MAGIC_MODEL + struct.pack("<5d2I", trunk.lam, trunk.L, trunk.h,
                                       trunk.s, trunk.epsilon, model.m0, model.n0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(nn.mlp_to_bytes(model.branch))


def load_deeponet(path) -> RbfDeepOnet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC_MODEL:
        raise ValueError(f"not a model archive: bad magic {blob[:4]!r}")
    lam, L, h, s, epsilon, m0, n0 = struct.unpack_from("<5d2I", blob, 4)
    offset = 4 + struct.calcsize("<5d2I")
    trunk = make_trunk(lam, L, h, s, allow_low_s=True)
    if abs(trunk.epsilon - epsilon) > 1e-12 * max(epsilon, 1.0):
        raise ValueError("archived shape parameter disagrees with trunk geometry")
    branch, end = nn.mlp_from_bytes(blob, offset)
    if end != len(blob):
        raise ValueError(f"trailing bytes in model archive: {len(blob) - end}")
    return RbfDeepOnet(trunk, branch, m0, n0)


def save_training_set(path, training_set: TrainingSet) -> None:
    """Dataset archive: counts and k, then the arrays in declaration order."""
    count = training_set.count
    m0, n0 = training_set.matrices.shape[1:]
    p_h = training_set.labels.shape[1]
    header = MAGIC_DATASET + struct.pack("<4Id", count, m0, n0, p_h,
                                         training_set.k)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(training_set.matrices, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(training_set.centers, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(training_set.radii, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(training_set.etas, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(training_set.labels, dtype=np.uint8).tobytes())


def load_training_set(path) -> TrainingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC_DATASET:
        raise ValueError(f"not a dataset archive: bad magic {blob[:4]!r}")
    count, m0, n0, p_h, k = struct.unpack_from("<4Id", blob, 4)
    offset = 4 + struct.calcsize("<4Id")

    def take(dtype, size, shape):
        nonlocal offset
        flat = np.frombuffer(blob, dtype=dtype, count=size, offset=offset)
        offset += flat.nbytes
        return flat.reshape(shape).copy()

    matrices = take("<c16", count * m0 * n0, (count, m0, n0))
    centers = take("<f8", count * 2, (count, 2))
    radii = take("<f8", count, (count,))
    etas = take("<f8", count, (count,))
    labels = take(np.uint8, count * p_h, (count, p_h))
    if offset != len(blob):
        raise ValueError(f"trailing bytes in dataset archive: {len(blob) - offset}")
    return TrainingSet(matrices, centers, radii, etas, labels, k)


def write_loss_csv(path, losses) -> None:
    lines = ["epoch,loss"]
    for epoch, loss in enumerate(losses, start=1):
        lines.append(f"{epoch},{loss:.17g}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
