from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6371000.0


def haversine_m(p1, p2) -> float:
    """Great-circle distance in metres between two (lat, lon) points in degrees."""
    lat1, lon1 = np.radians(p1[0]), np.radians(p1[1])
    lat2, lon2 = np.radians(p2[0]), np.radians(p2[1])
    a = (
        np.sin((lat2 - lat1) / 2) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    )
    return float(2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(min(1.0, a))))


class LocalProjection:
    """Equirectangular projection about a fixed origin, in metres (east, north)."""

    def __init__(self, lat0: float, lon0: float):
        self.lat0 = float(lat0)
        self.lon0 = float(lon0)
        self._coslat = np.cos(np.radians(self.lat0))

    @classmethod
    def around(cls, gps) -> "LocalProjection":
        gps = np.asarray(gps, dtype=float).reshape(-1, 2)
        lat, lon = gps.mean(axis=0)
        return cls(lat, lon)

    def to_xy(self, gps) -> np.ndarray:
        gps = np.asarray(gps, dtype=float)
        lat, lon = gps[..., 0], gps[..., 1]
        x = EARTH_RADIUS_M * np.radians(lon - self.lon0) * self._coslat
        y = EARTH_RADIUS_M * np.radians(lat - self.lat0)
        return np.stack([x, y], axis=-1)

    def to_gps(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        lat = self.lat0 + np.degrees(xy[..., 1] / EARTH_RADIUS_M)
        lon = self.lon0 + np.degrees(xy[..., 0] / (EARTH_RADIUS_M * self._coslat))
        return np.stack([lat, lon], axis=-1)
