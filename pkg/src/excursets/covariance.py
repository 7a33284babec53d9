"""Stationary correlation models on the plane and field/derivative covariances.

A model evaluates ``r(h)`` and its partial derivatives up to total order two at
arrays of lags with trailing dimension 2.  Derivative orders are written as
``(j, k)``: ``j`` derivatives along the first axis, ``k`` along the second.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CorrelationModel",
    "QuadraticGaussianModel",
    "GaussianModel",
    "FiniteDifferenceModel",
    "check_derivatives",
    "deriv_cov",
    "directional_deriv_variance",
    "make_model",
]

_FD_STEP = 1e-4


class CorrelationModel:
    """Base class for stationary correlation functions ``r: R^2 -> [-1, 1]``.

    Subclasses implement ``r``, ``grad`` and ``hess``.  Users must supply models
    smooth enough for the field to have C^1 paths; this is documented, not
    enforced (only twice-differentiability of ``r`` is checked numerically).
    """

    descriptor = "abstract"

    def r(self, h):
        raise NotImplementedError

    def grad(self, h):
        """First partials ``(d10 r, d01 r)`` stacked on the last axis."""
        raise NotImplementedError

    def hess(self, h):
        """Second partials as ``[[d20, d11], [d11, d02]]`` on the last two axes."""
        raise NotImplementedError

    def one_minus_r(self, h):
        return 1.0 - self.r(h)

    @property
    def isotropic(self) -> bool:
        return False

    def partial(self, h, order):
        j, k = order
        if j < 0 or k < 0 or j + k > 2:
            raise ValueError(f"unsupported derivative order {order!r}")
        if j + k == 0:
            return self.r(h)
        if j + k == 1:
            return self.grad(h)[..., 0 if j == 1 else 1]
        H = self.hess(h)
        if j == 2:
            return H[..., 0, 0]
        if k == 2:
            return H[..., 1, 1]
        return H[..., 0, 1]

    def spectral_matrix(self) -> np.ndarray:
        """Negative Hessian of ``r`` at the origin (covariance of the gradient)."""
        return -np.asarray(self.hess(np.zeros(2)), dtype=float)

    def __repr__(self):
        return f"{type(self).__name__}({self.descriptor})"


class QuadraticGaussianModel(CorrelationModel):
    """``r(h) = exp(-h^T A h / 2)`` for a symmetric positive definite ``A``.

    ``A`` is also the spectral-moment matrix, so ``A = I`` gives the unit
    isotropic kernel and an off-diagonal entry makes ``d11 r(0)`` nonzero.
    """

    def __init__(self, A, check=True):
        A = np.array(A, dtype=float)
        if A.shape != (2, 2) or not np.allclose(A, A.T):
            raise ValueError("A must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(A) <= 0):
            raise ValueError("A must be positive definite")
        self.A = A
        self.descriptor = (
            f"anisotropic_gaussian(a11={A[0, 0]:g}, a12={A[0, 1]:g}, a22={A[1, 1]:g})"
        )
        if check:
            check_derivatives(self)

    @property
    def isotropic(self) -> bool:
        return bool(self.A[0, 1] == 0.0 and self.A[0, 0] == self.A[1, 1])

    def _q(self, h):
        h = np.asarray(h, dtype=float)
        return np.einsum("...i,ij,...j->...", h, self.A, h)

    def r(self, h):
        return np.exp(-0.5 * self._q(h))

    def one_minus_r(self, h):
        return -np.expm1(-0.5 * self._q(h))

    def grad(self, h):
        h = np.asarray(h, dtype=float)
        Ah = h @ self.A
        return -Ah * self.r(h)[..., None]

    def hess(self, h):
        h = np.asarray(h, dtype=float)
        Ah = h @ self.A
        outer = Ah[..., :, None] * Ah[..., None, :]
        return (outer - self.A) * self.r(h)[..., None, None]


class GaussianModel(QuadraticGaussianModel):
    """Isotropic Gaussian kernel ``r(h) = exp(-|h|^2 / (2 scale^2))``."""

    def __init__(self, scale=1.0, check=True):
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)
        super().__init__(np.eye(2) / self.scale**2, check=check)
        self.descriptor = f"gaussian(scale={self.scale:g})"


class FiniteDifferenceModel(CorrelationModel):
    """Wraps a user correlation function; derivatives by central differences.

    The second differences use a Richardson-extrapolated central stencil, which
    keeps the truncation error at O(step^4).
    """

    def __init__(self, func, step=1e-3, name="custom", check=True):
        self.func = func
        self.step = float(step)
        self.descriptor = f"{name}(finite-difference, step={self.step:g})"
        r0 = float(np.asarray(self.r(np.zeros(2))))
        if abs(r0 - 1.0) > 1e-12:
            raise ValueError(f"correlation must satisfy r(0) = 1, got {r0!r}")
        if check:
            lags = np.random.default_rng(0).uniform(-2, 2, size=(20, 2))
            if np.any(np.abs(self.r(lags)) > 1 + 1e-12):
                raise ValueError("correlation exceeds 1 in absolute value")
            if np.any(np.abs(self.r(lags) - self.r(-lags)) > 1e-12):
                raise ValueError("correlation must be even: r(h) = r(-h)")

    def r(self, h):
        return np.asarray(self.func(np.asarray(h, dtype=float)), dtype=float)

    def _shift(self, h, d1, d2):
        return self.r(h + np.array([d1, d2]))

    def grad(self, h):
        h = np.asarray(h, dtype=float)
        out = []
        for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
            def d(s):
                return (self.r(h + s * e) - self.r(h - s * e)) / (2 * s)
            s = self.step
            out.append((4 * d(s / 2) - d(s)) / 3)
        return np.stack(out, axis=-1)

    def hess(self, h):
        h = np.asarray(h, dtype=float)
        f = self._shift

        def second(s):
            f0 = self.r(h)
            d20 = (f(h, s, 0) - 2 * f0 + f(h, -s, 0)) / s**2
            d02 = (f(h, 0, s) - 2 * f0 + f(h, 0, -s)) / s**2
            d11 = (f(h, s, s) - f(h, s, -s) - f(h, -s, s) + f(h, -s, -s)) / (4 * s**2)
            return d20, d11, d02

        s = self.step
        coarse = second(s)
        fine = second(s / 2)
        d20, d11, d02 = ((4 * b - a) / 3 for a, b in zip(coarse, fine))
        H = np.empty(np.shape(d20) + (2, 2))
        H[..., 0, 0] = d20
        H[..., 1, 1] = d02
        H[..., 0, 1] = H[..., 1, 0] = d11
        return H


def _fd_partials(model, h, step=_FD_STEP):
    r = model.r
    e1 = np.array([step, 0.0])
    e2 = np.array([0.0, step])
    d10 = (r(h + e1) - r(h - e1)) / (2 * step)
    d01 = (r(h + e2) - r(h - e2)) / (2 * step)
    d20 = (r(h + e1) - 2 * r(h) + r(h - e1)) / step**2
    d02 = (r(h + e2) - 2 * r(h) + r(h - e2)) / step**2
    d11 = (r(h + e1 + e2) - r(h + e1 - e2) - r(h - e1 + e2) + r(h - e1 - e2)) / (
        4 * step**2
    )
    return {(1, 0): d10, (0, 1): d01, (2, 0): d20, (0, 2): d02, (1, 1): d11}


def check_derivatives(model, n_lags=100, seed=0, rtol=1e-6, atol=1e-6, radius=3.0):
    """Compare analytic partials with central differences at random lags.

    Raises ``ValueError`` naming the first failing partial.  The absolute
    floor covers lags where a partial crosses zero and the finite-difference
    roundoff (about ``eps / step^2``) dominates.
    """
    lags = np.random.default_rng(seed).uniform(-radius, radius, size=(n_lags, 2))
    fd = _fd_partials(model, lags)
    for order, approx in fd.items():
        exact = model.partial(lags, order)
        bad = np.abs(exact - approx) > rtol * np.abs(approx) + atol
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(
                f"partial {order} of {model.descriptor} disagrees with finite "
                f"differences at lag {lags[i]}: {exact[i]!r} vs {approx[i]!r}"
            )
    r0 = float(model.r(np.zeros(2)))
    if r0 != 1.0:
        raise ValueError(f"r(0) must be exactly 1, got {r0!r}")
    if not np.allclose(model.grad(np.zeros(2)), 0.0, atol=1e-12):
        raise ValueError("first partials must vanish at the origin")
    lam = model.spectral_matrix()
    if np.min(np.linalg.eigvalsh(0.5 * (lam + lam.T))) < -1e-10:
        raise ValueError("spectral-moment matrix is not positive semidefinite")
    return True


def deriv_cov(model, lag, left_order, right_order):
    """Covariance ``E[d_left X_{s+lag} * d_right X_s]``.

    Equals ``(-1)^(l+m) * d_{j+l, k+m} r(lag)`` for ``left_order=(j, k)``,
    ``right_order=(l, m)``.
    """
    j, k = left_order
    l, m = right_order
    if min(j, k, l, m) < 0:
        raise ValueError("derivative orders must be nonnegative")
    if j + k + l + m > 2:
        raise ValueError(
            f"unsupported derivative order {left_order}+{right_order}: total order "
            "above 2 needs derivatives of r beyond second order"
        )
    sign = -1.0 if (l + m) % 2 else 1.0
    return sign * model.partial(np.asarray(lag, dtype=float), (j + l, k + m))


def directional_deriv_variance(model, v):
    """Variance of the directional derivative along the unit vector ``v``."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return float(v @ model.spectral_matrix() @ v)


def make_model(spec=None):
    """Build a model from a config value.

    Accepts ``None`` (unit Gaussian kernel), a family name, or a mapping with
    ``family`` and ``params``.  Families: ``gaussian`` with ``[scale]`` and
    ``anisotropic_gaussian`` with ``[a11, a12, a22]``.
    """
    if spec is None:
        return GaussianModel()
    if isinstance(spec, CorrelationModel):
        return spec
    if isinstance(spec, str):
        spec = {"family": spec}
    family = spec.get("family", "gaussian")
    params = list(spec.get("params", []) or [])
    if family == "gaussian":
        if len(params) > 1:
            raise ValueError("gaussian takes at most one parameter (scale)")
        return GaussianModel(*params)
    if family == "anisotropic_gaussian":
        if len(params) != 3:
            raise ValueError("anisotropic_gaussian takes [a11, a12, a22]")
        a11, a12, a22 = params
        return QuadraticGaussianModel([[a11, a12], [a12, a22]])
    raise ValueError(f"unknown model family {family!r}")
