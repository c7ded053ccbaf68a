"""Coordinate handling on a spherical globe.

Longitude/latitude locations are embedded as points on a sphere of radius
6.371 Mm (megameters) and all distances downstream are chordal, i.e.
straight-line through the globe rather than great-circle. Range parameters
elsewhere in the package share the Mm unit.
"""

import numpy as np

EARTH_RADIUS_MM = 6.371
EARTH_DIAMETER_MM = 2.0 * EARTH_RADIUS_MM

# Cartesian coordinates are rounded to this many decimals at ingestion so
# neighbor structures are bit-reproducible across platforms.
COORD_DECIMALS = 4


def to_xyz(lon_deg, lat_deg, radius: float = EARTH_RADIUS_MM) -> np.ndarray:
    """Convert longitude/latitude in degrees to 3-D Cartesian coordinates.

    Parameters
    ----------
    lon_deg, lat_deg : array_like
        Coordinates in degrees. Broadcast against each other.
    radius : float
        Sphere radius in Mm.

    Returns
    -------
    ndarray with shape ``broadcast(lon, lat).shape + (3,)``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    lon = np.deg2rad(np.asarray(lon_deg, dtype=float))
    lat = np.deg2rad(np.asarray(lat_deg, dtype=float))
    x = radius * np.cos(lat) * np.cos(lon)
    y = radius * np.cos(lat) * np.sin(lon)
    z = radius * np.sin(lat) * np.ones_like(lon)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def euclid(a, b) -> np.ndarray | float:
    """Euclidean (chordal) distance between Cartesian points.

    Operates on the trailing axis, so ``(n, 3)`` against ``(3,)`` or
    ``(n, 3)`` inputs work elementwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(a - b, axis=-1)


def pairwise_distances(points_a: np.ndarray, points_b: np.ndarray | None = None) -> np.ndarray:
    """All pairwise chordal distances between two point sets.

    Returns the ``(len(a), len(b))`` distance matrix; with one argument the
    matrix is against itself (exactly symmetric, zero diagonal).
    """
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = a if points_b is None else np.atleast_2d(np.asarray(points_b, dtype=float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def round_coords(xyz: np.ndarray) -> np.ndarray:
    """Round Cartesian coordinates to the ingestion precision."""
    return np.round(np.asarray(xyz, dtype=float), COORD_DECIMALS)
