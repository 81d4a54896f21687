"""Perturbation-norm estimation from the singular-value profile.

Multiplicative noise lifts the decaying tail of the far-field spectrum to
a plateau whose height tracks the perturbation norm, so the log spectrum
of the noisy matrix is enough to recover that norm without clean data.
A small network regresses ln(delta/(sqrt(m)+sqrt(n))) from the log
singular values; the normalization makes the label transfer across
measurement-grid sizes, since the operator norm of an i.i.d. perturbation
scales like sqrt(m)+sqrt(n).  Inputs on finer grids are folded to the
native training shape, but the scale factor uses the original shape.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .forward import FarFieldMatrix, add_noise, disk_farfield, _resample_axis

logger = logging.getLogger(__name__)

MAGIC_ESTIMATOR = b"NNET"
MAGIC_DATASET = b"NDS1"

# Training labels live in a narrow band of nats; a prediction this far
# outside it means the input spectrum looks nothing like the training
# distribution.
LABEL_MARGIN = 0.5

_HIDDEN = 100
_SV_FLOOR = 1e-300


@dataclass
class NoiseNet:
    """Spectrum regressor with the label range seen during training."""

    mlp: nn.Mlp
    m0: int
    n0: int
    label_min: float = float("nan")
    label_max: float = float("nan")

    def __post_init__(self):
        expected = (min(self.m0, self.n0), _HIDDEN, 1)
        if self.mlp.sizes != expected:
            raise ValueError(f"network sizes {self.mlp.sizes} do not match "
                             f"the required {expected}")
        if self.mlp.activation != "relu" or self.mlp.output != "identity":
            raise ValueError("estimator must use relu hidden layers and a "
                             "plain linear output")


def make_noisenet(m0: int, n0: int, seed: int) -> NoiseNet:
    mlp = nn.init_mlp((min(m0, n0), _HIDDEN, 1), "relu", "identity", seed)
    return NoiseNet(mlp, int(m0), int(n0))


def spectrum_features(farfield: FarFieldMatrix) -> np.ndarray:
    """Log singular values of the matrix, floored to stay finite."""
    values = np.linalg.svd(farfield.entries, compute_uv=False)
    return np.log(np.maximum(values, _SV_FLOOR))


def _alias_fold_axis(spectrum: np.ndarray, new_size: int, axis: int) -> np.ndarray:
    """Fold DFT coefficients onto a coarser axis by frequency congruence.

    This is the mode-space form of sampling the trigonometric interpolant
    at the coarse nodes: every source mode lands on its frequency mod the
    new size, with the even-size shared bin acting as a half-weight
    cosine pair.  Nothing is discarded, so white noise stays white with
    the same per-entry variance.
    """
    old = spectrum.shape[axis]
    spectrum = np.moveaxis(spectrum, axis, 0)
    coeff = spectrum.copy()
    freqs = np.rint(np.fft.fftfreq(old) * old).astype(int)
    out = np.zeros((new_size,) + spectrum.shape[1:], dtype=complex)
    if old % 2 == 0:
        coeff[old // 2] *= 0.5
    np.add.at(out, np.mod(freqs, new_size), coeff)
    if old % 2 == 0:
        out[(old // 2) % new_size] += coeff[old // 2]
    out *= new_size / old
    return np.moveaxis(out, 0, axis)


def fold_to_shape(farfield: FarFieldMatrix, m0: int, n0: int) -> FarFieldMatrix:
    """Samples of the trigonometric interpolant on the m0 x n0 angle grids.

    Upsampling coincides with zero-padded resampling.  Downsampling
    differs from mode truncation in exactly the way that matters here: it
    keeps all the high-frequency noise energy by folding it onto the
    coarse grid, so the spectral plateau of a noisy matrix survives at
    full height and norm estimates transfer across grid sizes.
    """
    spectrum = np.fft.fft2(farfield.entries)
    for axis, new_size in ((0, m0), (1, n0)):
        old = spectrum.shape[axis]
        if new_size < old:
            spectrum = _alias_fold_axis(spectrum, new_size, axis)
        elif new_size > old:
            spectrum = _resample_axis(spectrum, new_size, axis)
    return FarFieldMatrix.from_entries(np.fft.ifft2(spectrum), farfield.k)


@dataclass(frozen=True)
class NoiseDataset:
    """Noisy centered-disk spectra with normalized log-norm labels."""

    features: np.ndarray
    labels: np.ndarray
    etas: np.ndarray
    radii: np.ndarray
    deltas: np.ndarray
    m0: int
    n0: int
    k: float

    def __post_init__(self):
        count = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be (count, n_features)")
        for arr in (self.labels, self.etas, self.radii, self.deltas):
            if arr.shape != (count,):
                raise ValueError("dataset arrays disagree on sample count")
        if np.any(self.etas <= 0.0) or np.any(self.radii <= 0.0):
            raise ValueError("noise levels and radii must be positive")

    @property
    def count(self) -> int:
        return self.features.shape[0]


def gen_noise_dataset(k: float, m0: int, n0: int, seed: int, count: int = 400,
                      eta_range=(5e-3, 3e-1), radius_range=(0.5, 1.5)) -> NoiseDataset:
    """Deterministic corpus of noisy centered-disk spectra.

    Noise levels are log-uniform on eta_range, radii uniform on
    radius_range, and each sample gets its own noise seed.  Draw order is
    fixed (all levels, all radii, all seeds) so one master seed pins the
    whole corpus.  The label is the log perturbation norm normalized by
    sqrt(m0) + sqrt(n0).
    """
    e_lo, e_hi = eta_range
    r_lo, r_hi = radius_range
    if not 0.0 < e_lo <= e_hi:
        raise ValueError(f"bad noise range {eta_range}")
    if not 0.0 < r_lo <= r_hi:
        raise ValueError(f"bad radius range {radius_range}")
    if count < 1:
        raise ValueError(f"need at least one sample, got {count}")
    rng = np.random.Generator(np.random.PCG64(seed))
    etas = np.exp(rng.uniform(np.log(e_lo), np.log(e_hi), size=count))
    radii = rng.uniform(r_lo, r_hi, size=count)
    seeds = rng.integers(0, 2 ** 63, size=count)

    scale = np.sqrt(m0) + np.sqrt(n0)
    features = np.empty((count, min(m0, n0)))
    deltas = np.empty(count)
    for i in range(count):
        clean = disk_farfield((0.0, 0.0), radii[i], k, m0, n0)
        noisy, realization = add_noise(clean, etas[i], int(seeds[i]))
        features[i] = spectrum_features(noisy)
        deltas[i] = realization.delta
    labels = np.log(deltas / scale)
    return NoiseDataset(features, labels, etas, radii, deltas,
                        int(m0), int(n0), float(k))


def train_noisenet(net: NoiseNet, dataset: NoiseDataset, epochs: int = 300,
                   lr: float = 5e-3, weight_decay: float = 1e-4,
                   decoupled: bool = True) -> list:
    """Full-batch training in place; returns per-epoch mean squared errors.

    Full-batch gradients make the run deterministic without a shuffle
    seed.  The label range of the dataset is recorded on the net up
    front, so even a zero-epoch call leaves the extrapolation guard
    armed while the parameters stay untouched.
    """
    if dataset.features.shape[1] != net.mlp.sizes[0]:
        raise ValueError("dataset features do not match the network input")
    if epochs < 0:
        raise ValueError(f"epochs must be nonnegative, got {epochs}")
    net.label_min = float(dataset.labels.min())
    net.label_max = float(dataset.labels.max())

    targets = dataset.labels[:, None]
    params = nn.parameters(net.mlp)
    state = nn.make_adam(params, lr, weight_decay=weight_decay, decoupled=decoupled)
    losses = []
    for epoch in range(epochs):
        trace = nn.forward_trace(net.mlp, dataset.features)
        err = trace[1][-1] - targets
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise RuntimeError(f"training diverged at epoch {epoch + 1}: loss {loss}")
        upstream = (2.0 / err.size) * err
        wg, bg, _ = nn.backward(net.mlp, dataset.features, upstream, trace=trace)
        grads = []
        for w, b in zip(wg, bg):
            grads.extend([w, b])
        nn.adam_step(state, params, grads)
        losses.append(loss)
    return losses


def predict_delta(net: NoiseNet, farfield: FarFieldMatrix) -> float:
    """Estimated perturbation norm of one measurement.

    The spectrum is taken after folding to the native training shape, but
    the returned norm is rescaled with the original grid shape, matching
    how operator norms of i.i.d. perturbations grow with matrix size.
    Predictions outside the recorded label range (plus a margin) log a
    warning: the estimate is an extrapolation.
    """
    native = fold_to_shape(farfield, net.m0, net.n0)
    output = float(nn.forward(net.mlp, spectrum_features(native))[0])
    if np.isfinite(net.label_min) and not (
            net.label_min - LABEL_MARGIN <= output <= net.label_max + LABEL_MARGIN):
        logger.warning("norm estimate %.4g nats outside the training range "
                       "[%.4g, %.4g]", output, net.label_min, net.label_max)
    m, n = farfield.shape
    return (np.sqrt(m) + np.sqrt(n)) * np.exp(output)


def save_noisenet(path, net: NoiseNet) -> None:
    header = MAGIC_ESTIMATOR + struct.pack("<2I2d", net.m0, net.n0,
                                           net.label_min, net.label_max)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(nn.mlp_to_bytes(net.mlp))


def load_noisenet(path) -> NoiseNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC_ESTIMATOR:
        raise ValueError(f"not an estimator archive: bad magic {blob[:4]!r}")
    m0, n0, label_min, label_max = struct.unpack_from("<2I2d", blob, 4)
    offset = 4 + struct.calcsize("<2I2d")
    mlp, end = nn.mlp_from_bytes(blob, offset)
    if end != len(blob):
        raise ValueError(f"trailing bytes in estimator archive: {len(blob) - end}")
    return NoiseNet(mlp, m0, n0, label_min, label_max)


def save_noise_dataset(path, dataset: NoiseDataset) -> None:
    header = MAGIC_DATASET + struct.pack("<3Id", dataset.count,
                                         dataset.m0, dataset.n0, dataset.k)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.etas, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.radii, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.deltas, dtype="<f8").tobytes())


def load_noise_dataset(path) -> NoiseDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC_DATASET:
        raise ValueError(f"not a dataset archive: bad magic {blob[:4]!r}")
    count, m0, n0, k = struct.unpack_from("<3Id", blob, 4)
    offset = 4 + struct.calcsize("<3Id")
    width = min(m0, n0)

    def take(size, shape):
        nonlocal offset
        flat = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        offset += flat.nbytes
        return flat.reshape(shape).copy()

    features = take(count * width, (count, width))
    labels = take(count, (count,))
    etas = take(count, (count,))
    radii = take(count, (count,))
    deltas = take(count, (count,))
    if offset != len(blob):
        raise ValueError(f"trailing bytes in dataset archive: {len(blob) - offset}")
    return NoiseDataset(features, labels, etas, radii, deltas, m0, n0, k)
