"""Dataset container and CSV ingestion.

The model-ready table has one row per grid cell with columns
``cell_id, longitude, latitude, ind_land, rv20`` (blank response =
missing). Ensemble tables carry ``cell_id, year, member, value`` rows for
the extreme-value stage. Pole cells beyond +-89 degrees latitude are
dropped at ingestion and Cartesian coordinates are rounded to four
decimals so neighbor structures reproduce across platforms.
"""

import csv
import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .geo import round_coords, to_xyz

logger = logging.getLogger(__name__)

POLE_LATITUDE_DEG = 89.0

RETURN_VALUE_COLUMNS = ("cell_id", "longitude", "latitude", "ind_land", "rv20")
ENSEMBLE_COLUMNS = ("cell_id", "year", "member", "value")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class SpatialDataset:
    """Per-cell coordinates, covariates, and (possibly missing) response."""

    cell_id: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    land: np.ndarray
    rv: np.ndarray
    xyz: np.ndarray

    @property
    def n(self) -> int:
        return len(self.cell_id)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.rv)

    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.missing_mask)

    def missing_indices(self) -> np.ndarray:
        return np.flatnonzero(self.missing_mask)


def make_dataset(cell_id, lon, lat, land, rv) -> SpatialDataset:
    """Validate arrays, trim pole cells, and attach rounded coordinates."""
    cell_id = np.asarray(cell_id)
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    land = np.asarray(land)
    rv = np.asarray(rv, dtype=float)

    n = len(cell_id)
    if not all(len(a) == n for a in (lon, lat, land, rv)):
        raise DataError("all dataset columns must have equal length")
    if n == 0:
        raise DataError("empty dataset")

    uniq, counts = np.unique(cell_id, return_counts=True)
    if np.any(counts > 1):
        dups = uniq[counts > 1][:10].tolist()
        raise DataError(f"duplicate cell ids: {dups}")
    if np.any(lat <= -90) or np.any(lat >= 90):
        bad = int(np.flatnonzero((lat <= -90) | (lat >= 90))[0])
        raise DataError(f"latitude out of (-90, 90) for cell {cell_id[bad]}")
    if np.any(lon < -180) or np.any(lon >= 360):
        bad = int(np.flatnonzero((lon < -180) | (lon >= 360))[0])
        raise DataError(f"longitude out of [-180, 360) for cell {cell_id[bad]}")
    if not np.isin(land, (0, 1)).all():
        bad = int(np.flatnonzero(~np.isin(land, (0, 1)))[0])
        raise DataError(f"ind_land must be 0 or 1 for cell {cell_id[bad]}")

    keep = np.abs(lat) < POLE_LATITUDE_DEG
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.info("dropped %d pole cell(s) with |latitude| >= %.0f", n_dropped, POLE_LATITUDE_DEG)
    if not keep.any():
        raise DataError("no cells remain after pole trimming")

    cell_id, lon, lat = cell_id[keep], lon[keep], lat[keep]
    land, rv = land[keep].astype(np.int8), rv[keep]

    xyz = round_coords(to_xyz(lon, lat))
    _, counts = np.unique(xyz, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise DataError("duplicate rounded coordinates; cells are not distinct at 4 decimals")

    return SpatialDataset(cell_id=cell_id, lon=lon, lat=lat, land=land, rv=rv, xyz=xyz)


def _open_csv(path, required: tuple[str, ...]):
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        fh.close()
        raise DataError(f"{path}: missing required column(s) {missing}")
    extra = [c for c in header if c not in required]
    if extra:
        logger.info("%s: ignoring unrecognized column(s) %s", path, extra)
    return fh, reader


def _parse_float(row, col, path, line_no) -> float:
    raw = (row.get(col) or "").strip()
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"{path}:{line_no}: cannot parse {col}={raw!r}") from None


def load_return_values(path) -> SpatialDataset:
    """Read a model-ready return-value table; blank rv20 means missing."""
    fh, reader = _open_csv(path, RETURN_VALUE_COLUMNS)
    cells, lons, lats, lands, rvs = [], [], [], [], []
    with fh:
        for line_no, row in enumerate(reader, start=2):
            cells.append((row["cell_id"] or "").strip())
            lons.append(_parse_float(row, "longitude", path, line_no))
            lats.append(_parse_float(row, "latitude", path, line_no))
            land_raw = (row["ind_land"] or "").strip()
            if land_raw not in ("0", "1"):
                raise DataError(f"{path}:{line_no}: ind_land must be 0 or 1, got {land_raw!r}")
            lands.append(int(land_raw))
            rv_raw = (row.get("rv20") or "").strip()
            rvs.append(np.nan if rv_raw in ("", "NA", "nan") else _parse_float(row, "rv20", path, line_no))
    if not cells:
        raise DataError(f"{path}: no data rows")
    return make_dataset(np.array(cells, dtype=object), lons, lats, lands, rvs)


def load_ensemble_maxima(path):
    """Read an ensemble table; returns (cell_ids, years, members, values)."""
    fh, reader = _open_csv(path, ENSEMBLE_COLUMNS)
    cells, years, members, values = [], [], [], []
    with fh:
        for line_no, row in enumerate(reader, start=2):
            cells.append((row["cell_id"] or "").strip())
            try:
                years.append(int((row["year"] or "").strip()))
            except ValueError:
                raise DataError(f"{path}:{line_no}: cannot parse year={row['year']!r}") from None
            members.append((row["member"] or "").strip())
            values.append(_parse_float(row, "value", path, line_no))
    if not cells:
        raise DataError(f"{path}: no data rows")
    return (
        np.array(cells, dtype=object),
        np.array(years),
        np.array(members, dtype=object),
        np.array(values, dtype=float),
    )


def atomic_write_text(path, text: str):
    """Write a file via temp-file-plus-rename so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset_csv(path, dataset: SpatialDataset):
    """Write a dataset back out in the ingestion schema."""
    lines = [",".join(RETURN_VALUE_COLUMNS)]
    for i in range(dataset.n):
        rv = "" if np.isnan(dataset.rv[i]) else format(dataset.rv[i], ".17g")
        lines.append(
            f"{dataset.cell_id[i]},{dataset.lon[i]:.6f},{dataset.lat[i]:.6f},"
            f"{int(dataset.land[i])},{rv}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
