"""Prediction lattices."""

import math

import numpy as np


def make_grid(bbox: tuple[float, float, float, float], resolution: float) -> np.ndarray:
    """Axis-aligned lattice over ``(lon_min, lat_min, lon_max, lat_max)``.

    Rows run west to east within each latitude, south to north. The upper
    edges are included when they fall on the lattice.
    """
    if resolution <= 0:
        raise ValueError("Grid resolution must be positive")
    lon_min, lat_min, lon_max, lat_max = bbox
    nx = int(math.floor((lon_max - lon_min) / resolution + 1e-9)) + 1
    ny = int(math.floor((lat_max - lat_min) / resolution + 1e-9)) + 1
    lon = lon_min + resolution * np.arange(nx)
    lat = lat_min + resolution * np.arange(ny)
    grid_lon, grid_lat = np.meshgrid(lon, lat)
    return np.column_stack([grid_lon.ravel(), grid_lat.ravel()])
