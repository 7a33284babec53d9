"""Segment bundles, the arc-length map of a two-segment bundle, and lines.

Lines use the fixed convention ``{t (cos a, sin a) + p (-sin a, cos a)}`` with
``a`` in ``[0, pi)``; the invariant measure is ``da dp``, under which the lines
hitting the unit disc have total measure ``2 pi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import CorrelationModel, GaussianModel

__all__ = [
    "TwoSegmentProblem",
    "KSegmentProblem",
    "Line",
    "Disc",
    "Rectangle",
    "make_window",
    "rho_map",
    "rho_direction",
    "interval_I",
    "sample_crofton_lines",
]


@dataclass(frozen=True)
class TwoSegmentProblem:
    """Threshold ``u`` and two segments from the origin, symmetric about e2.

    ``phi_tilde`` is the half-angle between each segment and the second axis.
    """

    u: float
    l1: float
    l2: float
    phi_tilde: float = np.pi / 4
    model: CorrelationModel = field(default_factory=GaussianModel)

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("segment lengths must be nonnegative")
        if not 0 < self.phi_tilde <= np.pi / 2:
            raise ValueError("phi_tilde must lie in (0, pi/2]")
        if not np.isfinite(self.u):
            raise ValueError("threshold must be finite")

    @property
    def v1(self):
        return np.array([-np.sin(self.phi_tilde), np.cos(self.phi_tilde)])

    @property
    def v2(self):
        return np.array([np.sin(self.phi_tilde), np.cos(self.phi_tilde)])

    @property
    def total_length(self):
        return self.l1 + self.l2

    def swapped(self):
        return TwoSegmentProblem(self.u, self.l2, self.l1, self.phi_tilde, self.model)

    def as_k_segments(self):
        """Same set as a k-segment bundle (segments of zero length dropped)."""
        angles, lengths = [], []
        for ang, ln in ((np.pi / 2 + self.phi_tilde, self.l1),
                        (np.pi / 2 - self.phi_tilde, self.l2)):
            if ln > 0:
                angles.append(ang)
                lengths.append(ln)
        return KSegmentProblem(self.u, tuple(angles), tuple(lengths), self.model)


@dataclass(frozen=True)
class KSegmentProblem:
    """Threshold ``u`` and ``k`` segments ``[0, l_j v_j]`` from the origin.

    ``angles[j]`` is the angle of ``v_j`` against the first axis.
    """

    u: float
    angles: tuple
    lengths: tuple
    model: CorrelationModel = field(default_factory=GaussianModel)

    def __post_init__(self):
        angles = tuple(float(a) for a in np.atleast_1d(self.angles))
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "lengths", lengths)
        if len(angles) != len(lengths) or not angles:
            raise ValueError("need one length per direction and k >= 1")
        if any(x <= 0 for x in lengths):
            raise ValueError("all segment lengths must be positive")
        reduced = np.mod(np.asarray(angles), 2 * np.pi)
        gaps = np.abs(reduced[:, None] - reduced[None, :])
        gaps = np.minimum(gaps, 2 * np.pi - gaps)
        np.fill_diagonal(gaps, np.inf)
        if np.any(gaps < 1e-9):
            raise ValueError("segment directions must be pairwise distinct")

    @property
    def k(self):
        return len(self.angles)

    @property
    def directions(self):
        a = np.asarray(self.angles)
        return np.stack([np.cos(a), np.sin(a)], axis=-1)

    @property
    def total_length(self):
        return float(sum(self.lengths))


def rho_map(problem, theta):
    """Point of the bundle at arc-length ``theta`` (from the tip of segment 1)."""
    theta = np.asarray(theta, dtype=float)
    L = problem.l1 + problem.l2
    if np.any(theta < -1e-12) or np.any(theta > L + 1e-12):
        raise ValueError(f"theta outside [0, {L}]")
    first = theta <= problem.l1
    coef = np.where(first, problem.l1 - theta, theta - problem.l1)
    vec = np.where(first[..., None], problem.v1, problem.v2)
    return coef[..., None] * vec


def rho_direction(problem, theta):
    """Outward unit direction of the segment carrying ``rho(theta)``.

    ``theta == l1`` belongs to segment 1.
    """
    theta = np.asarray(theta, dtype=float)
    return np.where((theta <= problem.l1)[..., None], problem.v1, problem.v2)


def interval_I(problem, theta):
    """Parameter interval of the bundle lying below the sweeping line at ``theta``.

    Returns ``(left, right)``.  Valid ranges: for ``l1 <= l2``,
    ``[0, l1]`` and ``[2 l1, l1 + l2]``; for ``l1 > l2``, ``[0, l1]``.
    """
    l1, l2 = problem.l1, problem.l2
    tol = 1e-12
    if l1 <= l2:
        if -tol <= theta <= l1 + tol:
            return (theta, 2 * l1 - theta)
        if 2 * l1 - tol <= theta <= l1 + l2 + tol:
            return (0.0, theta)
    else:
        if -tol <= theta <= l1 - l2 + tol:
            return (theta, l1 + l2)
        if l1 - l2 < theta <= l1 + tol:
            return (theta, 2 * l1 - theta)
    raise ValueError(f"theta={theta!r} is outside every case range for l1={l1}, l2={l2}")


@dataclass(frozen=True)
class Line:
    angle: float
    offset: float

    def __post_init__(self):
        if not 0 <= self.angle < np.pi:
            raise ValueError("line angle must lie in [0, pi)")

    @property
    def direction(self):
        return np.array([np.cos(self.angle), np.sin(self.angle)])

    @property
    def normal(self):
        return np.array([-np.sin(self.angle), np.cos(self.angle)])

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return t[..., None] * self.direction + self.offset * self.normal

    def intersection(self, other):
        """Parameter ``(t_self, t_other)`` of the crossing point, or ``None`` if parallel."""
        d1, d2 = self.direction, other.direction
        det = d1[0] * (-d2[1]) - d1[1] * (-d2[0])
        if abs(det) < 1e-14:
            return None
        rhs = other.offset * other.normal - self.offset * self.normal
        t1 = (rhs[0] * (-d2[1]) - rhs[1] * (-d2[0])) / det
        t2 = (d1[0] * rhs[1] - d1[1] * rhs[0]) / det
        return t1, t2


@dataclass(frozen=True)
class Disc:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")

    @property
    def area(self):
        return np.pi * self.radius**2

    @property
    def perimeter(self):
        return 2 * np.pi * self.radius

    @property
    def bounding_radius(self):
        return self.radius

    def support(self, normal):
        c = np.asarray(self.center) @ normal
        return c - self.radius, c + self.radius

    def contains(self, pts):
        d = np.asarray(pts, dtype=float) - np.asarray(self.center)
        return np.sum(d * d, axis=-1) <= self.radius**2

    def chord(self, line):
        """Parameter interval ``(t0, t1)`` of ``line`` inside the disc, or ``None``."""
        c = np.asarray(self.center)
        d = line.offset - c @ line.normal
        if abs(d) >= self.radius:
            return None
        half = np.sqrt(self.radius**2 - d * d)
        tc = c @ line.direction
        return tc - half, tc + half

    def translated(self, shift):
        return Disc(tuple(np.asarray(self.center) + shift), self.radius)


@dataclass(frozen=True)
class Rectangle:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(c) for c in self.lower))
        object.__setattr__(self, "upper", tuple(float(c) for c in self.upper))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if np.any(hi < lo):
            raise ValueError("rectangle corners must satisfy lower <= upper")
        if np.all(hi == lo):
            raise ValueError("rectangle is a single point")

    @property
    def center(self):
        return tuple(0.5 * (np.asarray(self.lower) + np.asarray(self.upper)))

    @property
    def area(self):
        w, h = np.asarray(self.upper) - np.asarray(self.lower)
        return float(w * h)

    @property
    def perimeter(self):
        w, h = np.asarray(self.upper) - np.asarray(self.lower)
        return float(2 * (w + h))

    @property
    def bounding_radius(self):
        return float(0.5 * np.hypot(*(np.asarray(self.upper) - np.asarray(self.lower))))

    def _corners(self):
        (x0, y0), (x1, y1) = self.lower, self.upper
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def support(self, normal):
        proj = self._corners() @ normal
        return proj.min(axis=0), proj.max(axis=0)

    def contains(self, pts):
        p = np.asarray(pts, dtype=float)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)

    def chord(self, line):
        t0, t1 = -np.inf, np.inf
        base = line.offset * line.normal
        d = line.direction
        for ax in range(2):
            lo, hi = self.lower[ax], self.upper[ax]
            if abs(d[ax]) < 1e-15:
                if not lo <= base[ax] <= hi:
                    return None
                continue
            a, b = (lo - base[ax]) / d[ax], (hi - base[ax]) / d[ax]
            t0, t1 = max(t0, min(a, b)), min(t1, max(a, b))
        if t0 > t1:
            return None
        return t0, t1

    def translated(self, shift):
        s = np.asarray(shift)
        return Rectangle(tuple(np.asarray(self.lower) + s), tuple(np.asarray(self.upper) + s))


def make_window(spec):
    """Window from a config mapping: ``{kind: disc, center, radius}`` or
    ``{kind: rectangle, lower, upper}``."""
    if isinstance(spec, (Disc, Rectangle)):
        return spec
    kind = spec.get("kind")
    if kind == "disc":
        return Disc(tuple(spec.get("center", (0.0, 0.0))), float(spec["radius"]))
    if kind == "rectangle":
        return Rectangle(tuple(spec["lower"]), tuple(spec["upper"]))
    raise ValueError(f"unknown window kind {kind!r}")


def _sample_line_params(window, count, rng):
    """Angles and offsets uniform in ``da dp`` over lines hitting ``window``."""
    angles = np.empty(0)
    offsets = np.empty(0)
    c = np.asarray(window.center)
    R = window.bounding_radius
    while angles.size < count:
        need = 2 * (count - angles.size) + 16
        a = rng.uniform(0.0, np.pi, need)
        normals = np.stack([-np.sin(a), np.cos(a)], axis=-1)
        p = normals @ c + rng.uniform(-R, R, need)
        lo, hi = window.support(normals.T)
        ok = (p >= lo) & (p <= hi)
        angles = np.concatenate([angles, a[ok]])
        offsets = np.concatenate([offsets, p[ok]])
    return angles[:count], offsets[:count]


def sample_crofton_lines(window, count, seed):
    """Lines hitting ``window``, uniform in ``da dp``, with equal weights.

    Each weight is the invariant measure of the hitting set (the perimeter, by
    Cauchy's formula) divided by ``count``, so weighted sums estimate
    integrals over lines hitting the window.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if not window.perimeter > 0:
        raise ValueError("empty window")
    rng = np.random.default_rng(seed)
    angles, offsets = _sample_line_params(window, count, rng)
    w = window.perimeter / count
    return [(Line(float(a), float(p)), w) for a, p in zip(angles, offsets)]
