"""Exposure weights implied by the least-squares contrast ``(a - pi)/beta``.

For a conditional exposure density ``f`` with CDF ``F``, mean ``mu`` and
variance ``beta`` the implied weight is::

    w(a) = F(a) (1 - F(a)) {E(A | A > a) - E(A | A <= a)} / (f(a) beta)

It is non-negative and ``w * f`` integrates to one. ``weight_closed_form``
gives the known forms for six parametric families; ``weight_numeric``
evaluates the display above by adaptive quadrature and serves as the
independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, stats

FAMILIES = ("normal", "gamma", "inverse_gamma", "beta", "beta_prime", "student_t")


class QuadratureError(ArithmeticError):
    def __init__(self, what: str, achieved: float, requested: float):
        super().__init__(
            f"quadrature for {what} did not converge: estimated relative error "
            f"{achieved:.3g} > requested {requested:.3g}"
        )
        self.achieved = achieved
        self.requested = requested


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for the adaptive Gauss-Kronrod integration (QUADPACK)."""

    rel_tol: float = 1e-8
    abs_tol: float = 1e-300
    limit: int = 500


@dataclass(frozen=True)
class ExposureFamily:
    """A parametric conditional exposure distribution.

    Parameters follow these conventions: ``normal(mean, variance)``,
    ``gamma(shape, rate)``, ``inverse_gamma(shape, scale)``,
    ``beta(a, b)``, ``beta_prime(a, b)``, ``student_t(dof, loc, scale)``.
    Constraints that guarantee a finite variance are enforced.
    """

    family: str
    params: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        expected = {"student_t": 3}.get(self.family, 2)
        if len(params) != expected:
            raise ValueError(f"{self.family} takes {expected} parameters, got {len(params)}")
        if not all(math.isfinite(p) for p in params):
            raise ValueError("parameters must be finite")
        f, p = self.family, params
        if f == "normal":
            ok, msg = p[1] > 0, "variance > 0"
        elif f in ("gamma", "beta"):
            ok, msg = p[0] > 0 and p[1] > 0, "both parameters > 0"
        elif f == "inverse_gamma":
            ok, msg = p[0] > 2 and p[1] > 0, "shape > 2 and scale > 0"
        elif f == "beta_prime":
            ok, msg = p[0] > 0 and p[1] > 2, "a > 0 and b > 2"
        else:
            ok, msg = p[0] > 2 and p[2] > 0, "dof > 2 and scale > 0"
        if not ok:
            raise ValueError(f"{f} needs {msg} (finite variance), got {p}")

    @classmethod
    def normal(cls, mean=0.0, variance=1.0):
        return cls("normal", (mean, variance))

    @classmethod
    def gamma(cls, shape, rate):
        return cls("gamma", (shape, rate))

    @classmethod
    def inverse_gamma(cls, shape, scale):
        return cls("inverse_gamma", (shape, scale))

    @classmethod
    def beta(cls, a, b):
        return cls("beta", (a, b))

    @classmethod
    def beta_prime(cls, a, b):
        return cls("beta_prime", (a, b))

    @classmethod
    def student_t(cls, dof, loc=0.0, scale=1.0):
        return cls("student_t", (dof, loc, scale))

    @cached_property
    def dist(self):
        f, p = self.family, self.params
        if f == "normal":
            return stats.norm(loc=p[0], scale=math.sqrt(p[1]))
        if f == "gamma":
            return stats.gamma(p[0], scale=1.0 / p[1])
        if f == "inverse_gamma":
            return stats.invgamma(p[0], scale=p[1])
        if f == "beta":
            return stats.beta(p[0], p[1])
        if f == "beta_prime":
            return stats.betaprime(p[0], p[1])
        return stats.t(p[0], loc=p[1], scale=p[2])

    @property
    def support(self) -> tuple[float, float]:
        if self.family in ("normal", "student_t"):
            return -math.inf, math.inf
        if self.family == "beta":
            return 0.0, 1.0
        return 0.0, math.inf

    @property
    def mean(self) -> float:
        f, p = self.family, self.params
        if f == "normal":
            return p[0]
        if f == "gamma":
            return p[0] / p[1]
        if f == "inverse_gamma":
            return p[1] / (p[0] - 1.0)
        if f == "beta":
            return p[0] / (p[0] + p[1])
        if f == "beta_prime":
            return p[0] / (p[1] - 1.0)
        return p[1]

    @property
    def variance(self) -> float:
        f, p = self.family, self.params
        if f == "normal":
            return p[1]
        if f == "gamma":
            return p[0] / p[1] ** 2
        if f == "inverse_gamma":
            return p[1] ** 2 / ((p[0] - 1.0) ** 2 * (p[0] - 2.0))
        if f == "beta":
            s = p[0] + p[1]
            return p[0] * p[1] / (s * s * (s + 1.0))
        if f == "beta_prime":
            return p[0] * (p[0] + p[1] - 1.0) / ((p[1] - 2.0) * (p[1] - 1.0) ** 2)
        return p[2] ** 2 * p[0] / (p[0] - 2.0)

    @cached_property
    def pdf(self):
        """Scalar density ``f(a)``; a plain closure, cheap enough for quadrature."""
        f, p = self.family, self.params
        lg, log, exp = math.lgamma, math.log, math.exp
        if f == "normal":
            m, v = p
            c = -0.5 * log(2.0 * math.pi * v)
            return lambda a: exp(c - 0.5 * (a - m) ** 2 / v)
        if f == "student_t":
            nu, loc, sc = p
            c = lg((nu + 1) / 2) - lg(nu / 2) - 0.5 * log(nu * math.pi) - log(sc)
            return lambda a: exp(c - (nu + 1) / 2 * math.log1p(((a - loc) / sc) ** 2 / nu))
        x, y = p
        if f == "gamma":
            c = x * log(y) - lg(x)
            core = lambda a: c + (x - 1) * log(a) - y * a  # noqa: E731
        elif f == "inverse_gamma":
            c = x * log(y) - lg(x)
            core = lambda a: c - (x + 1) * log(a) - y / a  # noqa: E731
        elif f == "beta":
            c = lg(x + y) - lg(x) - lg(y)
            core = lambda a: c + (x - 1) * log(a) + (y - 1) * math.log1p(-a)  # noqa: E731
        else:
            c = lg(x + y) - lg(x) - lg(y)
            core = lambda a: c + (x - 1) * log(a) - (x + y) * math.log1p(a)  # noqa: E731
        lo, hi = self.support

        def density(a):
            if not lo < a < hi:
                return 0.0
            return exp(core(a))

        return density

    def in_support(self, a: float, strict: bool = False) -> bool:
        lo, hi = self.support
        if strict:
            return lo < a < hi
        return lo <= a <= hi


def ls_contrast(a: float, pi: float, beta: float) -> float:
    """The least-squares contrast ``(a - pi) / beta``."""
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    return (a - pi) / beta


def _check_support(fam: ExposureFamily, a: float, strict: bool = False) -> None:
    if not fam.in_support(a, strict=strict):
        raise ValueError(f"a={a} is outside the support {fam.support} of the {fam.family} family")


def weight_unnormalized(fam: ExposureFamily, a: float) -> float:
    """Exposure weight up to a factor constant in ``a``.

    Student-t is returned in location-scale form ``1 + ((a-loc)/scale)**2/dof``,
    which reduces to ``1 + a**2/dof`` for the standard t.
    """
    _check_support(fam, a)
    f, p = fam.family, fam.params
    if f == "normal":
        return 1.0
    if f == "gamma":
        return a
    if f == "inverse_gamma":
        return a * a
    if f == "beta":
        return a * (1.0 - a)
    if f == "beta_prime":
        return a * (1.0 + a)
    return 1.0 + (a - p[1]) ** 2 / (p[0] * p[2] ** 2)


def weight_closed_form(fam: ExposureFamily, a: float) -> float:
    """Normalized exposure weight, ``E{w(A)} = 1``."""
    _check_support(fam, a)
    f, p = fam.family, fam.params
    mu, var = fam.mean, fam.variance
    if f == "normal":
        return 1.0
    if f == "gamma":
        return a / mu
    if f == "inverse_gamma":
        return a * a / (var + mu * mu)
    if f == "beta":
        return a * (1.0 - a) / (mu * (1.0 - mu) - var)
    if f == "beta_prime":
        return a * (1.0 + a) / (mu * (1.0 + mu) + var)
    return (1.0 + (a - p[1]) ** 2 / (p[0] * p[2] ** 2)) / (1.0 + 1.0 / (p[0] - 2.0))


def _half_line(fn, a: float, scale: float, direction: int):
    """Map ``[a, inf)`` (direction +1) or ``(-inf, a]`` (-1) onto ``(0, 1]``
    through ``t = a +/- scale * (1 - x) / x``."""

    def g(x):
        if x <= 0.0:
            return 0.0
        return fn(a + direction * scale * (1.0 - x) / x) * scale / (x * x)

    return g


def _breakpoints(lo: float, hi: float, anchor: float, scale: float, support=None) -> list[float]:
    pts = {anchor} if lo < anchor < hi else set()
    step = scale
    for _ in range(32):
        for p in (anchor - step, anchor + step):
            if lo < p < hi:
                pts.add(p)
        step *= 4.0
    # a limit close to a finite support edge, where densities may blow up,
    # gets points spaced geometrically away from that edge
    s_lo, s_hi = support if support is not None else (-math.inf, math.inf)
    if math.isfinite(s_lo) and lo > s_lo:
        d = (lo - s_lo) * 4.0
        while s_lo + d < min(hi, anchor):
            pts.add(s_lo + d)
            d *= 4.0
    if math.isfinite(s_hi) and hi < s_hi:
        d = (s_hi - hi) * 4.0
        while s_hi - d > max(lo, anchor):
            pts.add(s_hi - d)
            d *= 4.0
    return sorted(pts)


def _quad(
    fn,
    lo: float,
    hi: float,
    quad: QuadratureConfig,
    what: str,
    anchor: float = 0.0,
    scale: float = 1.0,
    abs_ok: float = 0.0,
    support=None,
) -> float:
    """Adaptive Gauss-Kronrod integral of ``fn`` over ``[lo, hi]``.

    The range is cut at ``anchor +/- scale * 4**k`` so every piece has the
    integrand's mass at a comparable scale, and infinite ends are mapped to
    ``(0, 1]`` with a scale matched to their distance from ``anchor``;
    QUADPACK's own unit-scale transform misplaces heavy tails that start far
    out. Limits near a finite edge of ``support`` get extra geometric cuts so
    a density that blows up at the edge is resolved at its own scale.
    """
    if lo == hi:
        return 0.0
    inner = _breakpoints(lo, hi, anchor, scale, support)
    edges = [lo, *inner, hi]
    total, err_total, magnitude = 0.0, 0.0, 0.0
    opts = dict(epsabs=quad.abs_tol, epsrel=quad.rel_tol, limit=quad.limit, full_output=1)
    for left, right in zip(edges[:-1], edges[1:]):
        if math.isinf(left) and math.isinf(right):
            pieces = [(_half_line(fn, anchor, scale, -1), 0.0, 1.0), (_half_line(fn, anchor, scale, +1), 0.0, 1.0)]
        elif math.isinf(right):
            pieces = [(_half_line(fn, left, max(abs(left - anchor), scale), +1), 0.0, 1.0)]
        elif math.isinf(left):
            pieces = [(_half_line(fn, right, max(abs(right - anchor), scale), -1), 0.0, 1.0)]
        else:
            pieces = [(fn, left, right)]
        for g, a, b in pieces:
            val, err, *_ = integrate.quad(g, a, b, **opts)
            total += val
            err_total += err
            magnitude += abs(val)
    if not math.isfinite(total):
        raise QuadratureError(what, math.inf, quad.rel_tol)
    achieved = err_total / magnitude if magnitude > 0 else err_total
    # QUADPACK's error estimate is conservative; allow slack before failing
    if achieved > max(100.0 * quad.rel_tol, 1e-6) and not err_total <= abs_ok:
        raise QuadratureError(what, achieved, quad.rel_tol)
    return total


def _anchor_scale(fam: ExposureFamily) -> tuple[float, float]:
    return float(fam.dist.median()), float(fam.dist.ppf(0.75) - fam.dist.ppf(0.25))


def _moments(fam: ExposureFamily, quad: QuadratureConfig) -> tuple[float, float]:
    key = (fam, quad)
    if key not in _MOMENT_CACHE:
        lo, hi = fam.support
        pdf = fam.pdf
        anchor, sc = _anchor_scale(fam)

        def both_sides(fn, what):
            return _quad(fn, lo, hi, quad, what, anchor, sc)

        mass = both_sides(pdf, "mass")
        m1 = both_sides(lambda t: t * pdf(t), "mean") / mass
        var = both_sides(lambda t: (t - m1) ** 2 * pdf(t), "variance") / mass
        if len(_MOMENT_CACHE) > 256:
            _MOMENT_CACHE.clear()
        _MOMENT_CACHE[key] = (m1, var)
    return _MOMENT_CACHE[key]


_MOMENT_CACHE: dict = {}


def _weight_pieces(fam: ExposureFamily, a: float, quad: QuadratureConfig, abs_ok: float = 0.0):
    lo, hi = fam.support
    pdf = fam.pdf
    anchor, sc = _anchor_scale(fam)
    kw = dict(anchor=anchor, scale=sc, abs_ok=abs_ok, support=fam.support)
    f_lo = _quad(pdf, lo, a, quad, "F(a)", **kw)
    f_hi = _quad(pdf, a, hi, quad, "1 - F(a)", **kw)
    m_lo = _quad(lambda t: t * pdf(t), lo, a, quad, "E(A; A <= a)", **kw)
    m_hi = _quad(lambda t: t * pdf(t), a, hi, quad, "E(A; A > a)", **kw)
    return f_lo, f_hi, m_lo, m_hi


def weight_numeric(fam: ExposureFamily, a: float, quadrature: QuadratureConfig | None = None) -> float:
    """Exposure weight from its defining integral representation.

    The CDF, both truncated means and the variance are all integrated from
    the density, split at ``a``; only the density value ``f(a)`` is
    evaluated directly.
    """
    quad = quadrature or QuadratureConfig()
    _check_support(fam, a, strict=True)
    f_a = fam.pdf(a)
    if not f_a > 0:
        raise ValueError(f"density is zero at a={a}")
    _, var = _moments(fam, quad)
    f_lo, f_hi, m_lo, m_hi = _weight_pieces(fam, a, quad)
    total = f_lo + f_hi
    F, S = f_lo / total, f_hi / total
    gap = m_hi / f_hi - m_lo / f_lo
    return F * S * gap / (f_a * var)


def check_normalization(
    fam: ExposureFamily,
    quadrature: QuadratureConfig | None = None,
    method: str = "closed",
) -> float:
    """Integral of ``w(a) f(a)`` over the support (should be 1).

    ``method="numeric"`` integrates the quadrature weight instead of the
    closed form (nested quadrature, much slower).
    """
    quad = quadrature or QuadratureConfig()
    lo, hi = fam.support
    pdf = fam.pdf
    if method == "closed":

        def wf(t):
            return weight_closed_form(fam, t) * pdf(t) if fam.in_support(t) else 0.0

    elif method == "numeric":
        inner = QuadratureConfig(rel_tol=min(quad.rel_tol, 1e-10), abs_tol=quad.abs_tol, limit=quad.limit)
        _, var = _moments(fam, inner)

        def wf(t):
            # w f = (F * E(A; A > t) - S * E(A; A <= t)) / var; deep-tail pieces
            # only need absolute accuracy since they enter scaled by tiny masses
            if not fam.in_support(t, strict=True) or pdf(t) <= 0:
                return 0.0
            f_lo, f_hi, m_lo, m_hi = _weight_pieces(fam, t, inner, abs_ok=1e-13)
            total = f_lo + f_hi
            return (f_lo * m_hi - f_hi * m_lo) / (total * total * var)

    else:
        raise ValueError("method must be 'closed' or 'numeric'")
    anchor, sc = _anchor_scale(fam)
    return _quad(wf, lo, hi, quad, "normalization", anchor, sc)


def weight_grid(fam: ExposureFamily, grid, method: str = "closed") -> np.ndarray:
    """Weights on a grid of exposure values."""
    fn = weight_closed_form if method == "closed" else weight_numeric
    return np.array([fn(fam, float(a)) for a in np.asarray(grid, dtype=np.float64)])
