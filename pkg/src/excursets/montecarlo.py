"""Simulation oracle: exact Gaussian sampling on discretized segments and chords.

Segments and chords are one-dimensional point sets, so the field is sampled
exactly from the dense covariance of the points.  Gaussian kernels make these
matrices numerically low-rank, so the factor is a truncated eigendecomposition
rather than a jittered Cholesky factor, whose added noise would create
spurious crossings.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .gauss import EstimateWithError
from .geometry import KSegmentProblem, TwoSegmentProblem

__all__ = [
    "SampledPath",
    "sqrt_factor",
    "segment_points",
    "sample_points",
    "empirical_capacity",
    "count_crossings_on_line",
    "empirical_crossing_product",
    "rice_check",
    "full_field_oracle",
]

POINT_BUDGET = 4000
BATCH = 5000


@dataclass(frozen=True)
class SampledPath:
    """Field values along an ordered 1-D point set.

    ``values`` may carry leading sample axes; the last axis follows ``points``.
    """

    points: np.ndarray
    values: np.ndarray
    step: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        if pts.shape[0] == 0:
            raise ValueError("path is empty")
        if vals.shape[-1] != pts.shape[0]:
            raise ValueError("one value per point is required")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        if pts.shape[0] > 1:
            d = np.diff(pts, axis=0)
            t = d @ (pts[-1] - pts[0])
            if np.any(t <= 0):
                raise ValueError("points must be strictly ordered along the path")


def sqrt_factor(cov, rel_tol=1e-14):
    """``F`` with ``F F^T = cov`` from the eigendecomposition, dropping
    eigenvalues below ``rel_tol`` times the largest."""
    lam, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    keep = lam > rel_tol * lam[-1]
    return V[:, keep] * np.sqrt(lam[keep])


def sample_points(model, pts, count, seed, workers=1, batch_size=BATCH):
    """Yield batches of exact field samples at ``pts`` (rows), seeded by ``(seed, k)``.

    With ``workers > 1`` batches are generated in a pool and yielded in index
    order, so the stream is the same for any worker count.
    """
    pts = np.asarray(pts, dtype=float)
    if pts.shape[0] > POINT_BUDGET:
        raise ValueError(f"{pts.shape[0]} points exceed the budget of {POINT_BUDGET}")
    F = sqrt_factor(model.r(pts[:, None, :] - pts[None, :, :]))
    n_batches = -(-int(count) // batch_size)

    def batch(k):
        n = min(batch_size, count - k * batch_size)
        z = np.random.default_rng([seed, k]).standard_normal((n, F.shape[1]))
        return z @ F.T

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(batch, range(n_batches))
    else:
        for k in range(n_batches):
            yield batch(k)


def _segment(direction, length, step):
    n = max(int(np.ceil(length / step - 1e-9)), 1)
    t = np.linspace(0.0, length, n + 1)
    return t[:, None] * np.asarray(direction)[None, :]


def segment_points(K, step):
    """Points of a segment bundle at spacing at most ``step``; the origin first, once."""
    if isinstance(K, TwoSegmentProblem):
        dirs = [K.v1, K.v2]
        lengths = [K.l1, K.l2]
    elif isinstance(K, KSegmentProblem):
        dirs = list(K.directions)
        lengths = list(K.lengths)
    else:
        raise TypeError("K must be a TwoSegmentProblem or KSegmentProblem")
    pts = [np.zeros((1, 2))]
    for d, ln in zip(dirs, lengths):
        if ln > 0:
            pts.append(_segment(d, ln, step)[1:])
    return np.concatenate(pts)


def _hit_fraction(model, u, pts, subsets, N, seed, workers):
    hits = np.zeros(len(subsets))
    for z in sample_points(model, pts, N, seed, workers):
        for q, idx in enumerate(subsets):
            hits[q] += np.count_nonzero(z[:, idx].max(axis=1) >= u)
    p = hits / N
    return p, np.sqrt(p * (1 - p) / N)


def empirical_capacity(model, u, K, step=0.01, N=100_000, seed=0, refine=True,
                       workers=1):
    """Fraction of sampled fields whose maximum over the discretized ``K`` reaches ``u``.

    The discrete maximum misses short excursions, so the estimate is biased
    low.  With ``refine`` the bundle is sampled at half the step and the
    estimate on the coarse sub-grid is compared with the fine one; halving
    continues while the two differ by at least one standard error and the
    point budget allows.  The finest estimate is returned with three binomial
    standard errors; ``info["probes"]`` lists ``(step, value)`` pairs.
    """
    model = K.model if model is None else model
    u = K.u if u is None else u
    if step <= 0:
        raise ValueError("step must be positive")
    probes = []
    h = step
    while True:
        if not refine:
            pts = segment_points(K, h)
            p, se = _hit_fraction(model, u, pts, [slice(None)], N, seed, workers)
            probes.append((h, float(p[0])))
            break
        fine = segment_points(K, h / 2)
        coarse = segment_points(K, h)
        # the coarse grid is a subset of the fine one when lengths are multiples of h
        idx = np.array([int(np.argmin(np.sum((fine - c) ** 2, axis=1))) for c in coarse])
        p, se = _hit_fraction(model, u, fine, [idx, slice(None)], N, seed, workers)
        probes.append((h, float(p[0])))
        probes.append((h / 2, float(p[1])))
        p, se = p[1:], se[1:]
        if abs(probes[-1][1] - probes[-2][1]) < se[0] or 2 * len(fine) > POINT_BUDGET:
            break
        h /= 2
    return EstimateWithError(float(p[0]), float(3 * se[0]), "mc-capacity",
                             {"se": float(se[0]), "probes": probes, "N": N})


def count_crossings_on_line(path, u):
    """Sign changes of ``values - u`` along the path; exact ties take the previous sign.

    Works on batched values (leading axes) and returns an integer array then.
    """
    vals = path.values if isinstance(path, SampledPath) else np.asarray(path, dtype=float)
    above = vals > u
    tie = vals == u
    if np.any(tie):
        above = above.copy()
        for i in range(1, vals.shape[-1]):
            above[..., i] = np.where(tie[..., i], above[..., i - 1], above[..., i])
    n = np.count_nonzero(above[..., 1:] != above[..., :-1], axis=-1)
    return int(n) if np.ndim(n) == 0 else n


def _chord_points(line, chord, step):
    if chord is None or chord[1] <= chord[0]:
        return np.zeros((0, 2))
    n = max(int(np.ceil((chord[1] - chord[0]) / step - 1e-9)), 1)
    return line.point(np.linspace(chord[0], chord[1], n + 1))


def empirical_crossing_product(model, u, pair, B1, B2, step=0.01, N=20_000, seed=0,
                               workers=1):
    """Mean of ``C(g1 n B1) C(g2 n B2)`` over jointly sampled fields on both chords."""
    p1 = _chord_points(pair.g1, B1.chord(pair.g1), step)
    p2 = _chord_points(pair.g2, B2.chord(pair.g2), step)
    if len(p1) == 0 or len(p2) == 0:
        return EstimateWithError(0.0, 0.0, "mc-crossings", {"se": 0.0, "N": N})
    pts = np.concatenate([p1, p2])
    n1 = len(p1)
    prods = []
    for z in sample_points(model, pts, N, seed, workers):
        prods.append(count_crossings_on_line(z[:, :n1], u) * count_crossings_on_line(z[:, n1:], u))
    prods = np.concatenate(prods).astype(float)
    se = float(prods.std(ddof=1) / np.sqrt(N))
    return EstimateWithError(float(prods.mean()), 3 * se, "mc-crossings", {"se": se, "N": N})


def rice_check(model, u, length=20.0, step=0.01, N=10_000, seed=0, angle=0.0, workers=1):
    """Crossings per unit length on a straight chord against the Rice intensity.

    Returns ``(estimate, rice_value)``; the estimate's error is three standard
    errors.
    """
    d = np.array([np.cos(angle), np.sin(angle)])
    pts = _segment(d, length, step)
    counts = np.concatenate([count_crossings_on_line(z, u)
                             for z in sample_points(model, pts, N, seed, workers)])
    rate = counts / length
    se = float(rate.std(ddof=1) / np.sqrt(N))
    lam = float(d @ model.spectral_matrix() @ d)
    rice = np.sqrt(lam) * np.exp(-0.5 * u * u) / np.pi
    return EstimateWithError(float(rate.mean()), 3 * se, "mc-rice", {"se": se}), float(rice)


def _grid_fields(scale, half_width, spacing, count, seed):
    """Fields with the Gaussian kernel on a square grid, by the separable factor."""
    x = np.arange(-half_width, half_width + 0.5 * spacing, spacing)
    F = sqrt_factor(np.exp(-0.5 * ((x[:, None] - x[None, :]) / scale) ** 2))
    rng = np.random.default_rng(seed)
    for _ in range(count):
        z = rng.standard_normal((F.shape[1], F.shape[1]))
        yield x, F @ z @ F.T


def full_field_oracle(u, radius=1.0, scale=1.0, fields=200, line_pairs=200,
                      spacing=0.02, step=0.01, seed=0):
    """Whole-field simulation for the Gaussian kernel on a disc window.

    Fields are simulated on a grid covering the disc (separable covariance).
    For each field, level contours are traced with marching squares and
    clipped to the disc, giving the boundary length ``L`` in the window; and
    crossing counts on Crofton-sampled line pairs are read off a cubic
    interpolation of the field along the chords.  Returns a dict with
    estimates of ``E L / area`` (``length_intensity``), ``E L^2``
    (``mu2_contour``) and the line-pair estimate of ``mu2`` (``mu2_lines``),
    each as an ``EstimateWithError`` with three standard errors.
    """
    from scipy.ndimage import map_coordinates
    from skimage.measure import find_contours

    from .geometry import Disc, sample_crofton_lines

    disc = Disc((0.0, 0.0), radius)
    rng = np.random.default_rng([seed, 1])
    lines1 = sample_crofton_lines(disc, line_pairs, int(rng.integers(2**63)))
    lines2 = sample_crofton_lines(disc, line_pairs, int(rng.integers(2**63)))
    chords = []
    for (g1, _), (g2, _) in zip(lines1, lines2):
        chords.append((_chord_points(g1, disc.chord(g1), step),
                       _chord_points(g2, disc.chord(g2), step)))
    half = radius + 2 * spacing
    lengths, pair_means = [], []
    for x, f in _grid_fields(scale, half, spacing, fields, seed):
        total = 0.0
        for c in find_contours(f, u):
            pts = x[0] + spacing * c
            mid = 0.5 * (pts[1:] + pts[:-1])
            seg = np.hypot(*np.diff(pts, axis=0).T)
            total += float(np.sum(seg[np.hypot(*mid.T) <= radius]))
        lengths.append(total)
        prods = []
        for p1, p2 in chords:
            v1 = map_coordinates(f, ((p1 - x[0]) / spacing).T, order=3)
            v2 = map_coordinates(f, ((p2 - x[0]) / spacing).T, order=3)
            prods.append(count_crossings_on_line(v1, u) * count_crossings_on_line(v2, u))
        pair_means.append(np.mean(prods))
    L = np.array(lengths)
    area = disc.area
    W = disc.perimeter**2 / 4

    def est(sample, tag):
        se = float(sample.std(ddof=1) / np.sqrt(len(sample)))
        return EstimateWithError(float(sample.mean()), 3 * se, tag, {"se": se})

    return {
        "length_intensity": est(L / area, "mc-contour"),
        "mu2_contour": est(L**2, "mc-contour"),
        "mu2_lines": est(W * np.array(pair_means), "mc-lines"),
    }
