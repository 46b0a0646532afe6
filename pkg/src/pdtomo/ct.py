"""2D circular fan-beam CT forward model on a square pixel grid.

The projector traces one ray per detector-bin center and accumulates
exact pixel intersection lengths (Siddon traversal), stored as a sparse
matrix so forward and adjoint are an exactly matched pair.  The full
system matrix is X = X_grid * M_FOV: the field-of-view mask is applied
before ray tracing.

Conventions fixed here: images are row-major (ny, nx) arrays flattened
C-order, pixel (ix, iy) covers a square of side `pixel_size` centered
on a grid symmetric about the origin; the first view places the source
on the +x axis and views advance counter-clockwise with the arc
endpoint excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import convolve1d

from .linop import LinearMap, Vector, compose, diagonal

# Segments shorter than this fraction of the ray parameter are corner
# grazes and are dropped.
_T_EPS = 1e-13


@dataclass(frozen=True)
class ImageGrid:
    """Square pixel grid covering side_length x side_length (cm)."""

    nx: int
    ny: int
    side_length: float

    def __post_init__(self):
        if self.nx != self.ny:
            raise ValueError(f"grid must be square, got {self.nx}x{self.ny}")
        if self.nx < 1 or self.side_length <= 0:
            raise ValueError("grid needs nx >= 1 and positive side length")

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def pixel_size(self) -> float:
        return self.side_length / self.nx

    def centers(self) -> np.ndarray:
        """Pixel-center coordinates along one axis, origin at grid center."""
        return (np.arange(self.nx) + 0.5) * self.pixel_size - self.side_length / 2


@dataclass(frozen=True)
class FanBeamGeometry:
    """Circular fan-beam scan description.

    Angles are in radians; distances in cm.  View angles are uniform on
    [start_angle, start_angle + arc_length) with the endpoint excluded.
    """

    n_views: int
    arc_length: float
    n_bins: int
    source_to_center: float
    source_to_detector: float
    detector_length: float
    start_angle: float = 0.0

    def __post_init__(self):
        if not (self.source_to_detector > self.source_to_center > 0):
            raise ValueError(
                "need source_to_detector > source_to_center > 0, got "
                f"{self.source_to_detector} and {self.source_to_center}"
            )
        if self.n_views < 1 or self.n_bins < 1:
            raise ValueError("need n_views >= 1 and n_bins >= 1")
        if self.detector_length <= 0 or self.arc_length <= 0:
            raise ValueError("detector_length and arc_length must be positive")

    @property
    def n_rays(self) -> int:
        return self.n_views * self.n_bins

    def view_angles(self) -> np.ndarray:
        return self.start_angle + self.arc_length * np.arange(self.n_views) / self.n_views


@dataclass
class Sinogram:
    """Projection data: view-major vector of length n_views * n_bins."""

    values: np.ndarray
    geometry: FanBeamGeometry

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.geometry.n_rays:
            raise ValueError(
                f"sinogram length {self.values.size} does not match "
                f"{self.geometry.n_views} views x {self.geometry.n_bins} bins"
            )

    def as_views(self) -> np.ndarray:
        return self.values.reshape(self.geometry.n_views, self.geometry.n_bins)


def detector_length_for_fov(
    source_to_center: float, source_to_detector: float, fov_diameter: float
) -> float:
    """Flat-detector length whose fan exactly covers the given FOV circle."""
    half_fan = np.arcsin(0.5 * fov_diameter / source_to_center)
    return 2.0 * source_to_detector * np.tan(half_fan)


def _scan_preset(n_views: int, arc: float, n_bins: int) -> dict:
    return dict(
        n_views=n_views,
        arc_length=arc,
        n_bins=n_bins,
        source_to_center=36.0,
        source_to_detector=72.0,
        detector_length=detector_length_for_fov(36.0, 72.0, 18.0),
    )


# Bench-scale presets quarter the bin/view counts so studies finish in
# minutes; physical distances and FOV are unchanged.  "desk-oversampled"
# gives more rays than unknowns for the inverse-crime least-squares
# studies.
GEOMETRY_PRESETS = {
    "full": _scan_preset(128, 2 * np.pi, 512),
    "sparse": _scan_preset(32, 2 * np.pi, 512),
    "limited": _scan_preset(128, 3 * np.pi / 4, 512),
    "desk-full": _scan_preset(32, 2 * np.pi, 128),
    "desk-sparse": _scan_preset(8, 2 * np.pi, 128),
    "desk-limited": _scan_preset(32, 3 * np.pi / 4, 128),
    "desk-oversampled": _scan_preset(64, 2 * np.pi, 128),
}


def build_geometry(preset: str | None = None, **fields) -> FanBeamGeometry:
    """Construct a geometry from a named preset and/or explicit fields."""
    if preset is not None:
        if preset not in GEOMETRY_PRESETS:
            raise ValueError(
                f"unknown geometry preset {preset!r}; choices: {sorted(GEOMETRY_PRESETS)}"
            )
        base = dict(GEOMETRY_PRESETS[preset])
        base.update(fields)
        return FanBeamGeometry(**base)
    return FanBeamGeometry(**fields)


def fov_active(grid: ImageGrid) -> np.ndarray:
    """Boolean mask of pixels whose center lies strictly inside the FOV.

    The FOV is the inscribed circle of the grid (diameter = side_length).
    """
    c = grid.centers()
    xx, yy = np.meshgrid(c, c)
    r = grid.side_length / 2
    return (xx**2 + yy**2 < r**2).ravel()


def fov_mask(grid: ImageGrid) -> LinearMap:
    """Diagonal 0/1 map zeroing pixels outside the FOV (idempotent)."""
    return diagonal(fov_active(grid).astype(float), label="M_fov")


def _siddon_coo(grid: ImageGrid, geom: FanBeamGeometry):
    """COO triplets (ray, pixel, length) of the unmasked ray transform."""
    nx, ny = grid.nx, grid.ny
    h = grid.pixel_size
    x0 = -grid.side_length / 2
    # planes of the pixel lattice, shared by x and y (square grid)
    planes = x0 + h * np.arange(nx + 1)

    half_grid = grid.side_length / 2
    rows, cols, vals = [], [], []
    t_hat_of = lambda phi: np.array([-np.sin(phi), np.cos(phi)])

    for v, phi in enumerate(geom.view_angles()):
        sx = geom.source_to_center * np.cos(phi)
        sy = geom.source_to_center * np.sin(phi)
        if abs(sx) <= half_grid and abs(sy) <= half_grid:
            raise ValueError(
                f"degenerate ray geometry: source at view {v} lies inside the grid"
            )
        det_center = (geom.source_to_center - geom.source_to_detector) * np.array(
            [np.cos(phi), np.sin(phi)]
        )
        u = ((np.arange(geom.n_bins) + 0.5) / geom.n_bins - 0.5) * geom.detector_length
        ends = det_center[None, :] + u[:, None] * t_hat_of(phi)[None, :]
        dx = ends[:, 0] - sx
        dy = ends[:, 1] - sy

        with np.errstate(divide="ignore", invalid="ignore"):
            tx = (planes[None, :] - sx) / dx[:, None]
            ty = (planes[None, :] - sy) / dy[:, None]
            t_lo_x = (x0 - sx) / dx
            t_hi_x = (x0 + grid.side_length - sx) / dx
            t_lo_y = (x0 - sy) / dy
            t_hi_y = (x0 + grid.side_length - sy) / dy

        # slab bounds; axis-parallel rays pass every plane of their axis
        txmin = np.minimum(t_lo_x, t_hi_x)
        txmax = np.maximum(t_lo_x, t_hi_x)
        tymin = np.minimum(t_lo_y, t_hi_y)
        tymax = np.maximum(t_lo_y, t_hi_y)
        par_x = dx == 0.0
        inside_x = par_x & (np.abs(sx) <= half_grid)
        txmin = np.where(par_x, np.where(inside_x, -np.inf, np.inf), txmin)
        txmax = np.where(par_x, np.where(inside_x, np.inf, -np.inf), txmax)
        par_y = dy == 0.0
        inside_y = par_y & (np.abs(sy) <= half_grid)
        tymin = np.where(par_y, np.where(inside_y, -np.inf, np.inf), tymin)
        tymax = np.where(par_y, np.where(inside_y, np.inf, -np.inf), tymax)

        t_in = np.maximum.reduce([txmin, tymin, np.zeros_like(dx)])
        t_out = np.minimum.reduce([txmax, tymax, np.ones_like(dx)])
        miss = t_in >= t_out
        t_in = np.where(miss, 0.0, t_in)
        t_out = np.where(miss, 0.0, t_out)

        t_all = np.concatenate([tx, ty], axis=1)
        np.nan_to_num(t_all, copy=False, nan=0.0, posinf=np.inf, neginf=-np.inf)
        t_all = np.clip(t_all, t_in[:, None], t_out[:, None])
        t_all.sort(axis=1)

        dt = np.diff(t_all, axis=1)
        mid = 0.5 * (t_all[:, :-1] + t_all[:, 1:])
        mx = sx + mid * dx[:, None]
        my = sy + mid * dy[:, None]
        ix = np.floor((mx - x0) / h).astype(np.int64)
        iy = np.floor((my - x0) / h).astype(np.int64)
        ok = (dt > _T_EPS) & (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)

        ray_len = np.hypot(dx, dy)
        lengths = dt * ray_len[:, None]
        ray_idx = v * geom.n_bins + np.arange(geom.n_bins)
        ray_idx = np.broadcast_to(ray_idx[:, None], dt.shape)

        rows.append(ray_idx[ok])
        cols.append((iy * nx + ix)[ok])
        vals.append(lengths[ok])

    return (
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(vals),
    )


@lru_cache(maxsize=8)
def _system_matrices(grid: ImageGrid, geom: FanBeamGeometry):
    """Cached (X_grid, X_grid^T) CSR pair for a grid/geometry combination."""
    rows, cols, vals = _siddon_coo(grid, geom)
    mat = sp.csr_matrix(
        (vals, (rows, cols)), shape=(geom.n_rays, grid.n), dtype=np.float64
    )
    # the CSC transpose shares the data buffer, halving storage
    return mat, mat.T


def ray_transform(grid: ImageGrid, geom: FanBeamGeometry) -> LinearMap:
    """Unmasked intersection-length projector X_grid (n -> n_rays)."""
    mat, mat_t = _system_matrices(grid, geom)
    return LinearMap(
        grid.n,
        geom.n_rays,
        lambda x: mat @ x,
        lambda y: mat_t @ y,
        label="X_grid",
    )


def projector(grid: ImageGrid, geom: FanBeamGeometry) -> LinearMap:
    """Masked system matrix X = X_grid * M_FOV."""
    x = compose(ray_transform(grid, geom), fov_mask(grid), label="X")
    return x


def project(grid: ImageGrid, geom: FanBeamGeometry, image: Vector) -> Sinogram:
    """Apply the masked projector to an image vector."""
    return Sinogram(projector(grid, geom)(np.asarray(image, dtype=float)), geom)


def gradient(grid: ImageGrid) -> LinearMap:
    """Forward-difference gradient D: n -> 2n.

    The first n outputs are horizontal differences f[y, x+1] - f[y, x]
    (zero in the last column), the last n are vertical differences
    (zero in the last row); the adjoint is the exact transpose.
    """
    nx, ny, n = grid.nx, grid.ny, grid.n

    def fwd(f: Vector) -> Vector:
        img = f.reshape(ny, nx)
        gx = np.zeros_like(img)
        gy = np.zeros_like(img)
        gx[:, :-1] = img[:, 1:] - img[:, :-1]
        gy[:-1, :] = img[1:, :] - img[:-1, :]
        return np.concatenate([gx.ravel(), gy.ravel()])

    def adj(p: Vector) -> Vector:
        px = p[:n].reshape(ny, nx)
        py = p[n:].reshape(ny, nx)
        out = np.zeros((ny, nx))
        out[:, :-1] -= px[:, :-1]
        out[:, 1:] += px[:, :-1]
        out[:-1, :] -= py[:-1, :]
        out[1:, :] += py[:-1, :]
        return out.ravel()

    return LinearMap(n, 2 * n, fwd, adj, label="D")


def gaussian_kernel(width_pixels: float) -> np.ndarray:
    """Normalized Gaussian taps truncated at four widths (odd length)."""
    if width_pixels <= 0:
        raise ValueError("width must be positive")
    radius = int(np.floor(4.0 * width_pixels))
    if radius < 1:
        return np.array([1.0])
    offsets = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (offsets / width_pixels) ** 2)
    return k / k.sum()


def gaussian_smooth(grid: ImageGrid, width_pixels: float) -> LinearMap:
    """Separable Gaussian blur with zero padding; symmetric (S = S^T)."""
    k = gaussian_kernel(width_pixels)
    nx, ny = grid.nx, grid.ny

    def smooth(f: Vector) -> Vector:
        img = f.reshape(ny, nx)
        img = convolve1d(img, k, axis=0, mode="constant", cval=0.0)
        img = convolve1d(img, k, axis=1, mode="constant", cval=0.0)
        return img.ravel()

    return LinearMap(grid.n, grid.n, smooth, smooth, label="S_blur")


def scaled_grid(grid: ImageGrid, factor: int) -> ImageGrid:
    """Same physical extent with nx, ny multiplied by `factor`."""
    return replace(grid, nx=grid.nx * factor, ny=grid.ny * factor)
