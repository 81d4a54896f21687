"""Linear sampling reconstruction with pluggable regularization.

For every sampling point z the far-field equation F g = phi_z is solved
in Tikhonov-regularized form, and the reconstruction indicator is the
reciprocal density norm 1/||g_z||.  Everything is expressed through one
SVD of the far-field matrix, so the per-point work reduces to filter
factors applied to projected right-hand sides.

The regularization parameter comes from a strategy object: a discrepancy
match against a known perturbation norm, a fixed constant, or a
precomputed spatial field.  The discrepancy root is found by bisection in
log alpha on a bracket spanning 22 decades around the top singular value,
which is wide enough that a missing sign change signals a genuinely
rootless instance rather than a bad bracket.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import FarFieldMatrix

PROVENANCE_TAGS = ("lsm_morozov", "lsm_constant", "lsm_learned", "deeponet")

# Bracket for the discrepancy root, relative to sigma_1^2, and the fixed
# bisection depth.  60 halvings resolve log alpha to ~5e-17 relative, so
# the returned alpha is converged to rounding; no early exit is needed.
ALPHA_BRACKET = (1e-16, 1e6)
BISECT_ITERATIONS = 60

_CHUNK = 8192


class NoRootError(ArithmeticError):
    """The discrepancy function has no sign change on the search bracket."""


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform square grid on [-halfwidth, halfwidth]^2, row-major points.

    Point p = iy * resolution + ix sits at (axis[ix], axis[iy]): x varies
    fastest and y runs bottom to top.
    """

    halfwidth: float
    resolution: int
    points: np.ndarray

    def __post_init__(self):
        if self.halfwidth <= 0.0:
            raise ValueError(f"halfwidth must be positive, got {self.halfwidth}")
        if self.resolution < 2:
            raise ValueError(f"resolution must be at least 2, got {self.resolution}")
        points = np.asarray(self.points, dtype=float)
        if points.shape != (self.resolution ** 2, 2):
            raise ValueError("points do not match resolution")
        object.__setattr__(self, "points", points)

    @classmethod
    def make(cls, halfwidth: float, resolution: int) -> "SamplingGrid":
        axis = np.linspace(-halfwidth, halfwidth, resolution)
        xs, ys = np.meshgrid(axis, axis)
        return cls(float(halfwidth), int(resolution),
                   np.column_stack([xs.ravel(), ys.ravel()]))

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.halfwidth, self.halfwidth, self.resolution)

    def compatible(self, other: "SamplingGrid") -> bool:
        return (self.resolution == other.resolution
                and abs(self.halfwidth - other.halfwidth) < 1e-12)


@dataclass(frozen=True)
class SvdTriple:
    """Thin SVD with F = u @ diag(s) @ vh; factors validated on build."""

    u: np.ndarray
    s: np.ndarray
    vh: np.ndarray

    def __post_init__(self):
        u, s, vh = self.u, self.s, self.vh
        r = s.size
        if u.ndim != 2 or vh.ndim != 2 or u.shape[1] != r or vh.shape[0] != r:
            raise ValueError("inconsistent SVD factor shapes")
        if np.any(s < 0.0) or np.any(np.diff(s) > 0.0):
            raise ValueError("singular values must be nonnegative and non-increasing")
        eye = np.eye(r)
        if (np.max(np.abs(u.conj().T @ u - eye)) > 1e-10
                or np.max(np.abs(vh @ vh.conj().T - eye)) > 1e-10):
            raise ValueError("SVD factors are not orthonormal")


def svd(farfield) -> SvdTriple:
    """Thin SVD of a far-field matrix (or a plain 2-d array)."""
    entries = farfield.entries if isinstance(farfield, FarFieldMatrix) else np.asarray(farfield)
    u, s, vh = np.linalg.svd(entries, full_matrices=False)
    return SvdTriple(u, s, vh)


def testfunction_rhs(z, theta: np.ndarray, k: float) -> np.ndarray:
    """Right-hand side of the far-field equation for sampling point z.

    phi_z(x_i) = exp(i*pi/4)/sqrt(8*pi*k) * exp(-i*k*xhat_i.z); this is
    the far field of the free-space point source at z.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (2,):
        raise ValueError("sampling point must be a 2-vector")
    if k <= 0.0:
        raise ValueError(f"wavenumber must be positive, got {k}")
    return _rhs_batch(z[None, :], theta, k)[:, 0]


def _rhs_batch(points: np.ndarray, theta: np.ndarray, k: float) -> np.ndarray:
    """Test-function right-hand sides for many points, one per column."""
    xhat = np.column_stack([np.cos(theta), np.sin(theta)])
    amplitude = np.exp(1j * np.pi / 4.0) / np.sqrt(8.0 * np.pi * k)
    return amplitude * np.exp(-1j * k * (xhat @ points.T))


def tikhonov_solve(svdt: SvdTriple, rhs: np.ndarray, alpha: float) -> np.ndarray:
    """Minimizer of ||F g - rhs||^2 + alpha ||g||^2 through filter factors."""
    if alpha <= 0.0:
        raise ValueError(f"regularization parameter must be positive, got {alpha}")
    beta = svdt.u.conj().T @ rhs
    factors = svdt.s / (svdt.s ** 2 + alpha)
    return svdt.vh.conj().T @ (factors * beta)


def discrepancy(svdt: SvdTriple, rhs: np.ndarray, alpha: float, delta: float) -> float:
    """d(alpha) = ||F g_alpha - rhs||^2 - delta^2 ||g_alpha||^2, in closed form.

    With beta = U^H rhs the two norms share the SVD expansion and the
    difference telescopes to

        sum_i (alpha^2 - delta^2 s_i^2)/(s_i^2 + alpha)^2 |beta_i|^2
        + ||(I - U U^H) rhs||^2.

    The function is strictly increasing in alpha, so it has at most one
    root.  The out-of-range term is evaluated as an explicit residual:
    the difference of norms cancels catastrophically when rhs is nearly
    in range, and the leftover rounding shifts small roots.
    """
    if alpha <= 0.0:
        raise ValueError(f"regularization parameter must be positive, got {alpha}")
    if delta < 0.0:
        raise ValueError(f"perturbation norm must be nonnegative, got {delta}")
    beta = svdt.u.conj().T @ rhs
    beta2 = np.abs(beta) ** 2
    outside = float(np.sum(np.abs(rhs - svdt.u @ beta) ** 2))
    s2 = svdt.s ** 2
    terms = (alpha ** 2 - delta ** 2 * s2) / (s2 + alpha) ** 2
    return float(terms @ beta2 + outside)


def _bisect_alpha(s: np.ndarray, beta2: np.ndarray, outside: np.ndarray,
                  delta: float):
    """Vectorized log-bisection of the discrepancy root for many points.

    beta2 is (r, P) with squared projections per point, outside is the
    (P,) out-of-range energy.  Returns the root array and a mask of
    points without a sign change on the bracket.
    """
    s2 = (s ** 2)[:, None]
    d2s2 = (delta ** 2) * s2

    def disc(alpha):
        return np.sum((alpha[None, :] ** 2 - d2s2) / (s2 + alpha[None, :]) ** 2
                      * beta2, axis=0) + outside

    top = s[0] ** 2
    lo = np.full(outside.shape, ALPHA_BRACKET[0] * top)
    hi = np.full(outside.shape, ALPHA_BRACKET[1] * top)
    no_root = (disc(lo) > 0.0) | (disc(hi) < 0.0)
    for _ in range(BISECT_ITERATIONS):
        mid = np.sqrt(lo * hi)
        below = disc(mid) < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.sqrt(lo * hi), no_root


def morozov_alpha(svdt: SvdTriple, rhs: np.ndarray, delta: float) -> float:
    """Unique root of the discrepancy function for one right-hand side.

    Raises NoRootError when the discrepancy has no sign change on the
    bracket, which happens when the perturbation norm is too small (or
    too large) relative to the data.
    """
    if delta <= 0.0:
        raise ValueError(f"perturbation norm must be positive, got {delta}")
    beta = svdt.u.conj().T @ rhs
    beta2 = np.abs(beta) ** 2
    outside = np.array([float(np.sum(np.abs(rhs - svdt.u @ beta) ** 2))])
    alpha, no_root = _bisect_alpha(svdt.s, beta2[:, None], outside, delta)
    if no_root[0]:
        raise NoRootError(
            f"discrepancy has no root for delta = {delta:.6g} on bracket "
            f"[{ALPHA_BRACKET[0]:.0e}, {ALPHA_BRACKET[1]:.0e}] * sigma_1^2")
    return float(alpha[0])


@dataclass(frozen=True)
class Morozov:
    """Choose alpha per point by matching the recorded perturbation norm."""

    delta: float

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValueError(f"perturbation norm must be positive, got {self.delta}")


@dataclass(frozen=True)
class Constant:
    """One fixed alpha for every sampling point."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError(f"regularization parameter must be positive, got {self.alpha}")


@dataclass(frozen=True)
class RegField:
    """Spatially varying regularization parameter on a sampling grid."""

    grid: SamplingGrid
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.shape != (self.grid.points.shape[0],):
            raise ValueError("alpha field does not match the grid")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0.0):
            raise ValueError("alpha field must be finite and positive")
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class Field:
    """Use a precomputed regularization field (one alpha per point)."""

    field: RegField


@dataclass(frozen=True)
class IndicatorField:
    """Nonnegative reconstruction indicator sampled on a grid."""

    grid: SamplingGrid
    values: np.ndarray
    provenance: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.points.shape[0],):
            raise ValueError("indicator values do not match the grid")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValueError("indicator values must be finite and nonnegative")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"unknown provenance {self.provenance!r}; "
                             f"expected one of {PROVENANCE_TAGS}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class LsmResult:
    indicator: IndicatorField
    alpha: RegField
    fallback_count: int


def lsm_indicator(farfield: FarFieldMatrix, grid: SamplingGrid, strategy,
                  svdt: SvdTriple | None = None) -> LsmResult:
    """Sampling indicator 1/||g_z|| over the grid under one alpha strategy.

    The density norm never needs the density itself:
    ||g_z||^2 = sum_i (s_i/(s_i^2 + alpha_z))^2 |beta_i|^2 with
    beta = U^H phi_z, so each point costs O(rank) after the shared SVD.
    Morozov points without a discrepancy root fall back to
    alpha = delta * sigma_1 and are counted in the result.

    A precomputed decomposition of the same matrix may be passed when
    several strategies share one far field; it is trusted apart from a
    shape check.
    """
    if svdt is None:
        svdt = svd(farfield)
    elif svdt.u.shape[0] != farfield.shape[0]:
        raise ValueError("decomposition does not match the far-field shape")
    if svdt.s[0] <= 0.0:
        raise ValueError("far-field matrix is identically zero")
    if isinstance(strategy, Field) and not strategy.field.grid.compatible(grid):
        raise ValueError("regularization field lives on a different grid")

    total = grid.points.shape[0]
    alphas = np.empty(total)
    gnorm2 = np.empty(total)
    fallbacks = 0
    s = svdt.s
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        rhs = _rhs_batch(grid.points[start:stop], farfield.theta, farfield.k)
        beta = svdt.u.conj().T @ rhs
        beta2 = np.abs(beta) ** 2
        if isinstance(strategy, Morozov):
            # Residual form: the norm difference cancels to rounding noise
            # when the data is square, shifting small discrepancy roots.
            outside = np.sum(np.abs(rhs - svdt.u @ beta) ** 2, axis=0)
            alpha, no_root = _bisect_alpha(s, beta2, outside, strategy.delta)
            alpha[no_root] = strategy.delta * s[0]
            fallbacks += int(no_root.sum())
        elif isinstance(strategy, Constant):
            alpha = np.full(stop - start, strategy.alpha)
        elif isinstance(strategy, Field):
            alpha = strategy.field.alpha[start:stop]
        else:
            raise TypeError(f"unknown regularization strategy {type(strategy).__name__}")
        alphas[start:stop] = alpha
        filters = (s[:, None] / (s[:, None] ** 2 + alpha[None, :])) ** 2
        gnorm2[start:stop] = np.sum(filters * beta2, axis=0)

    tag = {Morozov: "lsm_morozov", Constant: "lsm_constant",
           Field: "lsm_learned"}[type(strategy)]
    indicator = IndicatorField(grid, 1.0 / np.sqrt(gnorm2), tag)
    return LsmResult(indicator, RegField(grid, alphas), fallbacks)


def normalized(values: np.ndarray) -> np.ndarray:
    """Scale a nonnegative field to peak 1 for display and thresholding."""
    peak = float(np.max(values))
    if peak <= 0.0:
        return np.zeros_like(values)
    return values / peak


def write_field_csv(path, grid: SamplingGrid, values: np.ndarray) -> None:
    """Raw field dump, one `x,y,value` row per grid point in grid order."""
    values = np.asarray(values, dtype=float)
    axis = grid.axis
    res = grid.resolution
    lines = ["x,y,value"]
    for iy in range(res):
        for ix in range(res):
            lines.append(f"{axis[ix]:.17g},{axis[iy]:.17g},"
                         f"{values[iy * res + ix]:.17g}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_field_pgm(path, grid: SamplingGrid, values: np.ndarray) -> None:
    """Binary PGM rendering, min-max scaled; the top image row is y = +halfwidth."""
    values = np.asarray(values, dtype=float)
    res = grid.resolution
    image = values.reshape(res, res)
    low, high = float(image.min()), float(image.max())
    if high > low:
        scaled = np.round((image - low) / (high - low) * 255.0).astype(np.uint8)
    else:
        scaled = np.full((res, res), 128, dtype=np.uint8)
    header = f"P5\n{res} {res}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(scaled[::-1, :].tobytes())
