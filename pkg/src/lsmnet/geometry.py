"""Obstacle scenes, boundary parametrizations, and membership tests.

Obstacles are smooth closed curves (disks, ellipses, kites) traversed
counterclockwise with period 2*pi. Scenes are non-empty collections of
pairwise disjoint obstacles inside the probing square [-hw, hw]^2; the
boundary-integral solver assumes disjointness, so it is rejected at
construction rather than discovered later.

Membership for ellipses and kites uses a winding-number test on a dense
boundary polygon; disks are answered analytically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

# Boundary samples used by the winding-number membership test. Points closer
# to the boundary than the sample spacing may be misclassified; the probing
# grids used here are far coarser than that.
_WINDING_SAMPLES = 2048
# Samples per boundary for scene validation (disjointness, containment).
_VALIDATION_SAMPLES = 512


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    semi_axis_a: float
    semi_axis_b: float
    rotation: float = 0.0

    def __post_init__(self):
        if not (self.semi_axis_a > 0 and self.semi_axis_b > 0):
            raise ValueError("semi-axes must be > 0")


@dataclass(frozen=True)
class Kite:
    """Colton-Kress kite scaled by `scale` and translated to `center`.

    Table entries quoting a kite "radius" are read as this scale factor.
    """

    center: tuple[float, float]
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


Obstacle = Union[Disk, Ellipse, Kite]


@dataclass(frozen=True)
class BoundaryParametrization:
    """Closed regular curve t -> x(t), period 2*pi, with analytic derivatives."""

    position: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray]
    period: float = 2.0 * np.pi
    analytic: bool = True


def parametrize(obstacle: Obstacle) -> BoundaryParametrization:
    """Counterclockwise boundary parametrization of a single obstacle.

    Position and derivative maps accept an array of parameters t and return
    arrays of shape t.shape + (2,).
    """
    if isinstance(obstacle, Disk):
        c = np.asarray(obstacle.center, dtype=float)
        R = float(obstacle.radius)

        def pos(t):
            t = np.asarray(t, dtype=float)
            return c + R * np.stack([np.cos(t), np.sin(t)], axis=-1)

        def der(t):
            t = np.asarray(t, dtype=float)
            return R * np.stack([-np.sin(t), np.cos(t)], axis=-1)

        def der2(t):
            t = np.asarray(t, dtype=float)
            return -R * np.stack([np.cos(t), np.sin(t)], axis=-1)

        return BoundaryParametrization(pos, der, der2)

    if isinstance(obstacle, Ellipse):
        c = np.asarray(obstacle.center, dtype=float)
        a, b = float(obstacle.semi_axis_a), float(obstacle.semi_axis_b)
        cr, sr = np.cos(obstacle.rotation), np.sin(obstacle.rotation)
        rot = np.array([[cr, -sr], [sr, cr]])

        def pos(t):
            t = np.asarray(t, dtype=float)
            xy = np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)
            return c + xy @ rot.T

        def der(t):
            t = np.asarray(t, dtype=float)
            xy = np.stack([-a * np.sin(t), b * np.cos(t)], axis=-1)
            return xy @ rot.T

        def der2(t):
            t = np.asarray(t, dtype=float)
            xy = np.stack([-a * np.cos(t), -b * np.sin(t)], axis=-1)
            return xy @ rot.T

        return BoundaryParametrization(pos, der, der2)

    if isinstance(obstacle, Kite):
        c = np.asarray(obstacle.center, dtype=float)
        s = float(obstacle.scale)

        def pos(t):
            t = np.asarray(t, dtype=float)
            x = np.cos(t) + 0.65 * np.cos(2 * t) - 0.65
            y = 1.5 * np.sin(t)
            return c + s * np.stack([x, y], axis=-1)

        def der(t):
            t = np.asarray(t, dtype=float)
            x = -np.sin(t) - 1.3 * np.sin(2 * t)
            y = 1.5 * np.cos(t)
            return s * np.stack([x, y], axis=-1)

        def der2(t):
            t = np.asarray(t, dtype=float)
            x = -np.cos(t) - 2.6 * np.cos(2 * t)
            y = -1.5 * np.sin(t)
            return s * np.stack([x, y], axis=-1)

        return BoundaryParametrization(pos, der, der2)

    raise TypeError(f"unknown obstacle type {type(obstacle).__name__}")


@dataclass(frozen=True)
class Scene:
    """Non-empty collection of pairwise disjoint obstacles inside the domain.

    Parameters
    ----------
    obstacles : tuple of Obstacle
    domain_halfwidth : float
        Half-width of the probing square the scene must fit inside.
    """

    obstacles: tuple[Obstacle, ...]
    domain_halfwidth: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if len(self.obstacles) == 0:
            raise ValueError("scene must contain at least one obstacle")
        if not self.domain_halfwidth > 0:
            raise ValueError("domain_halfwidth must be > 0")
        t = np.linspace(0.0, 2.0 * np.pi, _VALIDATION_SAMPLES, endpoint=False)
        samples = [parametrize(ob).position(t) for ob in self.obstacles]
        hw = self.domain_halfwidth
        for ob, pts in zip(self.obstacles, samples):
            if np.any(np.abs(pts) > hw):
                raise ValueError(
                    f"{type(ob).__name__} at {ob.center} leaves the probing "
                    f"domain [-{hw}, {hw}]^2"
                )
        for i in range(len(samples)):
            for j in range(i + 1, len(samples)):
                d2 = np.sum((samples[i][:, None, :] - samples[j][None, :, :]) ** 2, axis=-1)
                if np.min(d2) == 0.0 or _boundaries_cross(samples[i], samples[j]):
                    raise ValueError(f"obstacles {i} and {j} overlap")


def _boundaries_cross(a: np.ndarray, b: np.ndarray) -> bool:
    # Disjointness via winding: any vertex of one curve inside the other.
    return bool(
        np.any(np.abs(_winding(a, b)) > 0.5) or np.any(np.abs(_winding(b, a)) > 0.5)
    )


def _winding(boundary: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Winding number of a closed sampled curve around each query point.

    boundary: (S, 2) samples in traversal order; points: (P, 2).
    Returns a float array (P,), ~ +1 inside a counterclockwise curve.
    """
    v = boundary[None, :, :] - points[:, None, :]  # (P, S, 2)
    vn = np.roll(v, -1, axis=1)
    cross = v[:, :, 0] * vn[:, :, 1] - v[:, :, 1] * vn[:, :, 0]
    dot = v[:, :, 0] * vn[:, :, 0] + v[:, :, 1] * vn[:, :, 1]
    return np.sum(np.arctan2(cross, dot), axis=1) / (2.0 * np.pi)


def contains_mask(scene: Scene, points: np.ndarray, samples: int = _WINDING_SAMPLES) -> np.ndarray:
    """Vectorized membership over an array of query points of shape (P, 2)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    inside = np.zeros(points.shape[0], dtype=bool)
    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    for ob in scene.obstacles:
        if isinstance(ob, Disk):
            d = np.hypot(points[:, 0] - ob.center[0], points[:, 1] - ob.center[1])
            inside |= d <= ob.radius
        else:
            boundary = parametrize(ob).position(t)
            # Chunk queries to bound the (P, S) intermediate.
            for lo in range(0, points.shape[0], 4096):
                sl = slice(lo, lo + 4096)
                inside[sl] |= np.abs(_winding(boundary, points[sl])) > 0.5
    return inside


def contains(scene: Scene, z) -> bool:
    """True iff the point z lies inside (or on) any obstacle of the scene."""
    return bool(contains_mask(scene, np.asarray(z, dtype=float).reshape(1, 2))[0])


def boundary_distance(scene: Scene, points: np.ndarray, samples: int = 1024) -> np.ndarray:
    """Approximate distance from each query point to the nearest boundary.

    Sample-based (minimum over `samples` boundary points per obstacle), good
    to the boundary sample spacing; used for far-exterior masks, not for
    anything requiring exact distances.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    dmin = np.full(points.shape[0], np.inf)
    for ob in scene.obstacles:
        boundary = parametrize(ob).position(t)
        for lo in range(0, points.shape[0], 4096):
            sl = slice(lo, lo + 4096)
            d2 = np.sum((points[sl, None, :] - boundary[None, :, :]) ** 2, axis=-1)
            dmin[sl] = np.minimum(dmin[sl], np.sqrt(np.min(d2, axis=1)))
    return dmin
