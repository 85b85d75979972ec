"""Exploratory variogram diagnostics for spotting nonstationarity."""

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq
from scipy.optimize import least_squares
from scipy.spatial.distance import pdist, squareform

from partkrige.errors import DataError, NumericError
from partkrige.models import (
    EmpiricalSemivariogram,
    ExponentialVariogramFit,
    SpatialDataset,
    bounding_box,
)
from partkrige.rng import stream
from partkrige.spatial.covariance import jittered_cholesky

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariogramResult:
    label: str
    n: int
    empirical: EmpiricalSemivariogram
    fit: ExponentialVariogramFit
    lower: np.ndarray  # per reported bin
    upper: np.ndarray
    bbox: tuple[float, float, float, float]


def detrend_ols(data: SpatialDataset) -> np.ndarray:
    """Residuals of z on (1, lon, lat, lon*lat)."""
    if data.n < 5:
        raise DataError(f"Detrending needs at least 5 observations, got {data.n}")
    # centring leaves the column space, and so the residuals, unchanged
    centred = data.coords - data.coords.mean(axis=0)
    lon, lat = centred[:, 0], centred[:, 1]
    design = np.column_stack([np.ones(data.n), lon, lat, lon * lat])
    coef, _, rank, _ = lstsq(design, data.values)
    if rank < design.shape[1]:
        raise NumericError("Trend design is rank-deficient (collinear coordinates)")
    return data.values - design @ coef


def _pairs(coords: np.ndarray, residuals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dist = pdist(coords)
    sq = pdist(np.asarray(residuals, dtype=float)[:, None], "sqeuclidean")
    return dist, sq


def _bin_index(dist: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin of each distance, -1 beyond the last edge; the last bin is closed."""
    idx = np.searchsorted(edges, dist, side="right") - 1
    idx[dist == edges[-1]] = len(edges) - 2
    idx[(dist > edges[-1]) | (dist < edges[0])] = -1
    return idx


def empirical_semivariogram(
    residuals: np.ndarray,
    coords: np.ndarray,
    n_bins: int = 15,
    max_dist: float | None = None,
    bin_edges: np.ndarray | None = None,
) -> EmpiricalSemivariogram:
    """Method-of-moments semivariogram; only bins holding pairs are reported.

    ``max_dist`` defaults to half the largest pairwise distance.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if coords.shape[0] < 2:
        raise DataError("A semivariogram needs at least two locations")
    dist, sq = _pairs(coords, residuals)
    if bin_edges is None:
        limit = float(dist.max()) / 2.0 if max_dist is None else float(max_dist)
        bin_edges = np.linspace(0.0, limit, n_bins + 1)
    edges = np.asarray(bin_edges, dtype=float)
    idx = _bin_index(dist, edges)
    inside = idx >= 0
    if not np.any(inside):
        raise DataError(f"Every pair lies beyond max_dist={edges[-1]:g}")
    n_total = len(edges) - 1
    counts = np.bincount(idx[inside], minlength=n_total)
    sums = np.bincount(idx[inside], weights=sq[inside], minlength=n_total)
    nonempty = np.flatnonzero(counts > 0)
    centers = (edges[:-1] + edges[1:]) / 2.0
    return EmpiricalSemivariogram(
        bin_centers=centers[nonempty],
        gamma=sums[nonempty] / (2.0 * counts[nonempty]),
        counts=counts[nonempty],
        bin_edges=edges,
        bin_ids=nonempty,
    )


def _exponential(params: np.ndarray, h: np.ndarray) -> np.ndarray:
    nugget, psill, rng_ = params
    return nugget + psill * (1.0 - np.exp(-h / rng_))


def fit_exponential(emp: EmpiricalSemivariogram) -> ExponentialVariogramFit:
    """Count-weighted least squares over (nugget, partial sill, range).

    Starts from a fixed grid and keeps the lowest cost; when a pure nugget
    fits as well, the range is reported as unidentified.
    """
    h, gamma, counts = emp.bin_centers, emp.gamma, emp.counts.astype(float)
    if h.size < 3:
        raise DataError(f"Fitting needs at least 3 nonempty bins, got {h.size}")
    weights = np.sqrt(counts)
    g_scale = float(gamma.max()) if gamma.max() > 0 else 1.0
    h_max = float(h.max())
    lower = np.array([0.0, 0.0, 1e-3 * h_max])
    upper = np.array([2.0 * g_scale, 4.0 * g_scale, 10.0 * h_max])

    def residuals(params: np.ndarray) -> np.ndarray:
        return weights * (_exponential(params, h) - gamma)

    best = None
    for nugget_frac, range_frac in itertools.product((0.0, 0.1, 0.5), (0.1, 0.3, 1.0)):
        nugget0 = nugget_frac * g_scale
        x0 = np.array([nugget0, max(g_scale - nugget0, 1e-3 * g_scale), range_frac * h_max])
        x0 = np.clip(x0, lower + 1e-12 * (upper - lower), upper - 1e-12 * (upper - lower))
        try:
            res = least_squares(residuals, x0, bounds=(lower, upper), ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=5000)
        except ValueError as exc:
            logger.debug("Variogram start %s failed: %s", x0, exc)
            continue
        if res.status > 0 and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise NumericError("Exponential variogram fit failed from every start")

    nugget, psill, rng_ = (float(v) for v in best.x)
    cost = float(2.0 * best.cost)
    identified = psill > 1e-8 * max(nugget + psill, 1e-300) and lower[2] * 1.001 < rng_ < upper[2] * 0.999

    flat = float(np.sum(counts * gamma) / np.sum(counts))
    flat_cost = float(np.sum(counts * (gamma - flat) ** 2))
    if flat_cost <= cost + 1e-12 * max(1.0, flat_cost):
        nugget, psill, rng_, cost, identified = flat, 0.0, h_max, flat_cost, False

    return ExponentialVariogramFit(
        nugget=nugget,
        partial_sill=psill,
        range=rng_,
        range_identified=identified,
        cost=cost,
        lower=tuple(lower),
        upper=tuple(upper),
    )


def bootstrap_bands(
    fit: ExponentialVariogramFit,
    coords: np.ndarray,
    emp: EmpiricalSemivariogram,
    n_boot: int = 500,
    seed: int = 0,
    key: str = "all",
) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin 2.5% and 97.5% semivariance under fields simulated from ``fit``.

    Replicates reuse the binning of ``emp``; each draws from its own stream.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    n = coords.shape[0]
    sill = fit.nugget + fit.partial_sill
    if sill <= 0:
        zeros = np.zeros(emp.bin_ids.size)
        return zeros, zeros.copy()

    dist = squareform(pdist(coords))
    cov = fit.partial_sill * np.exp(-dist / fit.range) + fit.nugget * np.eye(n)
    factor = jittered_cholesky(cov, sill)

    pair_dist = pdist(coords)
    idx = _bin_index(pair_dist, emp.bin_edges)
    inside = idx >= 0
    rows, cols = np.triu_indices(n, k=1)
    rows, cols, idx = rows[inside], cols[inside], idx[inside]
    n_total = len(emp.bin_edges) - 1
    counts = np.bincount(idx, minlength=n_total)[emp.bin_ids]

    gammas = np.empty((n_boot, emp.bin_ids.size))
    for b in range(n_boot):
        z = factor.lower @ stream(seed, "bootstrap", key, b).standard_normal(n)
        sums = np.bincount(idx, weights=(z[rows] - z[cols]) ** 2, minlength=n_total)[emp.bin_ids]
        gammas[b] = sums / (2.0 * counts)
    lower, upper = np.percentile(gammas, [2.5, 97.5], axis=0)
    return lower, upper


def variogram_analysis(
    data: SpatialDataset,
    residuals: np.ndarray | None = None,
    n_bins: int = 15,
    max_dist: float | None = None,
    n_boot: int = 500,
    seed: int = 0,
    label: str = "all",
) -> VariogramResult:
    residuals = detrend_ols(data) if residuals is None else residuals
    emp = empirical_semivariogram(residuals, data.coords, n_bins, max_dist)
    fit = fit_exponential(emp)
    lower, upper = bootstrap_bands(fit, data.coords, emp, n_boot, seed, key=label)
    return VariogramResult(label, data.n, emp, fit, lower, upper, bounding_box(data.coords))


def subregion_variograms(
    data: SpatialDataset,
    nx: int,
    ny: int,
    n_bins: int = 15,
    max_dist: float | None = None,
    n_boot: int = 500,
    seed: int = 0,
    min_points: int = 10,
) -> list[VariogramResult]:
    """One analysis per cell of an nx-by-ny grid over the bounding box.

    Residuals come from the global trend fit; cells with fewer than
    ``min_points`` observations, or too few pairs to fit, are skipped.
    """
    residuals = detrend_ols(data)
    lon_min, lat_min, lon_max, lat_max = bounding_box(data.coords)
    width = (lon_max - lon_min) / nx or 1.0
    height = (lat_max - lat_min) / ny or 1.0
    ix = np.clip(((data.coords[:, 0] - lon_min) / width).astype(int), 0, nx - 1)
    iy = np.clip(((data.coords[:, 1] - lat_min) / height).astype(int), 0, ny - 1)

    results = []
    for j in range(ny):
        for i in range(nx):
            members = np.flatnonzero((ix == i) & (iy == j))
            label = f"r{j + 1}c{i + 1}"
            if members.size < min_points:
                logger.warning("Subregion %s has %d observations, skipping", label, members.size)
                continue
            cell = data.subset(members)
            try:
                result = variogram_analysis(
                    cell, residuals[members], n_bins, max_dist, n_boot, seed, label=label
                )
            except (DataError, NumericError) as exc:
                logger.warning("Subregion %s: %s", label, exc)
                continue
            results.append(
                VariogramResult(
                    label,
                    result.n,
                    result.empirical,
                    result.fit,
                    result.lower,
                    result.upper,
                    (lon_min + i * width, lat_min + j * height, lon_min + (i + 1) * width, lat_min + (j + 1) * height),
                )
            )
    return results
