"""On-disk formats: raw images, windowed 16-bit PGM, sinograms, eigensets.

Raw image files are bare little-endian float64 vectors.  Sinograms and
eigensets carry a small binary header; sinogram headers embed a digest
of the scan geometry so stale data cannot silently be reused with a
different scan.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .ct import FanBeamGeometry, ImageGrid, Sinogram
from .spectral import EigenSet

_SINO_MAGIC = b"SNG1"
_EIG_MAGIC = b"EIG1"


def geometry_digest(geom: FanBeamGeometry, grid: ImageGrid | None = None) -> bytes:
    """16-byte stable digest of the scan (and optionally grid) fields."""
    parts = [
        f"{geom.n_views}",
        f"{geom.arc_length!r}",
        f"{geom.n_bins}",
        f"{geom.source_to_center!r}",
        f"{geom.source_to_detector!r}",
        f"{geom.detector_length!r}",
        f"{geom.start_angle!r}",
    ]
    if grid is not None:
        parts += [f"{grid.nx}", f"{grid.ny}", f"{grid.side_length!r}"]
    return hashlib.sha256("|".join(parts).encode()).digest()[:16]


def save_raw(path, values: np.ndarray) -> None:
    """Write a float64 little-endian vector with no header."""
    np.asarray(values, dtype="<f8").ravel().tofile(path)


def load_raw(path, n: int | None = None) -> np.ndarray:
    """Read a raw float64 vector; checks the length when n is given."""
    out = np.fromfile(path, dtype="<f8")
    if n is not None and out.size != n:
        raise ValueError(f"{path}: expected {n} values, found {out.size}")
    return out


def save_pgm(path, image: np.ndarray, shape: tuple[int, int], window: tuple[float, float]) -> None:
    """Export a 16-bit binary PGM with the given gray window (lo, hi)."""
    lo, hi = window
    if not hi > lo:
        raise ValueError(f"window must satisfy hi > lo, got {window}")
    img = np.asarray(image, dtype=float).reshape(shape)
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    # PGM stores multi-byte samples big-endian
    pixels = (scaled * 65535.0).round().astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{shape[1]} {shape[0]}\n65535\n".encode())
        fh.write(pixels.tobytes())


def save_sinogram(path, sino: Sinogram, grid: ImageGrid | None = None) -> None:
    """Write the sinogram with a header binding it to its geometry."""
    with open(path, "wb") as fh:
        fh.write(_SINO_MAGIC)
        fh.write(struct.pack("<II", sino.geometry.n_views, sino.geometry.n_bins))
        fh.write(geometry_digest(sino.geometry, grid))
        fh.write(np.asarray(sino.values, dtype="<f8").tobytes())


def load_sinogram(path, geom: FanBeamGeometry, grid: ImageGrid | None = None) -> Sinogram:
    """Read a sinogram, verifying shape and geometry digest."""
    with open(path, "rb") as fh:
        if fh.read(4) != _SINO_MAGIC:
            raise ValueError(f"{path}: not a sinogram file")
        n_views, n_bins = struct.unpack("<II", fh.read(8))
        digest = fh.read(16)
        if (n_views, n_bins) != (geom.n_views, geom.n_bins):
            raise ValueError(
                f"{path}: holds {n_views}x{n_bins} rays, geometry expects "
                f"{geom.n_views}x{geom.n_bins}"
            )
        if digest != geometry_digest(geom, grid):
            raise ValueError(f"{path}: geometry digest mismatch")
        values = np.frombuffer(fh.read(), dtype="<f8")
    return Sinogram(values.copy(), geom)


def save_eigenset(path, eigs: EigenSet) -> None:
    """Persist eigenpairs so spectral precomputation can be reused."""
    with open(path, "wb") as fh:
        fh.write(_EIG_MAGIC)
        fh.write(struct.pack("<II", eigs.n, eigs.k))
        fh.write(np.asarray(eigs.values, dtype="<f8").tobytes())
        fh.write(np.asarray(eigs.vectors, dtype="<f8").tobytes())


def load_eigenset(path) -> EigenSet:
    with open(path, "rb") as fh:
        if fh.read(4) != _EIG_MAGIC:
            raise ValueError(f"{path}: not an eigenset file")
        n, k = struct.unpack("<II", fh.read(8))
        values = np.frombuffer(fh.read(8 * k), dtype="<f8").copy()
        vectors = np.frombuffer(fh.read(8 * k * n), dtype="<f8").reshape(k, n).copy()
    return EigenSet(vectors, values)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
