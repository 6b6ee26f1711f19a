"""Stieltjes transforms of sample-covariance spectra evaluated at ``z = -lam``.

Everything here works on the negative real axis, where the resolvent
``(S + lam I)^{-1}`` is positive definite and all transforms are real.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import CrossTermSingularityError

#: relative gap below which the general-covariance cross terms refuse to evaluate
SEPARATION_RTOL = 1e-6
#: relative tolerance used to decide that two studies share (gamma, lambda)
EQUAL_DESIGN_RTOL = 1e-12


@dataclass(frozen=True)
class SpectralSummary:
    """Resolvent moments of one study's sample covariance at ``-lam``.

    ``m`` and ``m_prime`` are the normalised traces of the first and second
    powers of the resolvent; the companion quantities ``v`` and ``v_prime``
    are derived from them, so the identity
    ``gamma * (m - 1/lam) == v - 1/lam`` holds by construction.
    """

    lam: float
    gamma: float
    m: float
    m_prime: float
    #: optional eigenvalues behind ``m``; lets cross terms use the whole spectrum
    eigenvalues: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def v(self) -> float:
        return self.gamma * self.m - (self.gamma - 1.0) / self.lam

    @property
    def v_prime(self) -> float:
        return self.gamma * self.m_prime + (1.0 - self.gamma) / self.lam**2


class CrossTermMode(enum.Enum):
    EQUAL_DESIGN = "equal_design"
    IDENTITY_COV = "identity_cov"
    GENERAL = "general"


def spectral_summary(eigenvalues, lam: float, gamma: float) -> SpectralSummary:
    """Empirical ``m``, ``m'`` from the eigenvalues of a sample covariance."""
    ell = np.asarray(eigenvalues, dtype=float).ravel()
    if ell.size == 0:
        raise ValueError("need at least one eigenvalue")
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if np.any(ell < 0):
        raise ValueError("eigenvalues must be nonnegative")
    inv = 1.0 / (ell + lam)
    return SpectralSummary(lam=float(lam), gamma=float(gamma),
                           m=float(inv.mean()), m_prime=float(np.mean(inv * inv)),
                           eigenvalues=ell)


def mp_identity_stieltjes(gamma: float, lam: float) -> tuple[float, float]:
    """Marchenko-Pastur ``m(-lam)`` and ``m'(-lam)`` for identity covariance.

    Uses ``m = 2 / (b + s)`` with ``b = 1 - gamma + lam`` and
    ``s = sqrt(b^2 + 4 gamma lam)``, with ``b + s`` rationalised when ``b < 0``
    so neither branch loses digits to cancellation.
    """
    if not gamma > 0 or not lam > 0:
        raise ValueError(f"gamma and lam must be positive, got gamma={gamma}, lam={lam}")
    b = 1.0 - gamma + lam
    s = np.sqrt(b * b + 4.0 * gamma * lam)
    bs = b + s if b >= 0 else 4.0 * gamma * lam / (s - b)
    m = 2.0 / bs
    # m' = -dm/dlam = 2 (1 + ds/dlam) / (b + s)^2
    m_prime = 0.5 * m * m * (1.0 + (b + 2.0 * gamma) / s)
    return float(m), float(m_prime)


def mp_identity_summary(gamma: float, lam: float) -> SpectralSummary:
    m, mp = mp_identity_stieltjes(gamma, lam)
    return SpectralSummary(lam=float(lam), gamma=float(gamma), m=m, m_prime=mp)


def same_design(a: SpectralSummary, b: SpectralSummary, rtol: float = EQUAL_DESIGN_RTOL) -> bool:
    return (abs(a.gamma - b.gamma) <= rtol * max(a.gamma, b.gamma)
            and abs(a.lam - b.lam) <= rtol * max(a.lam, b.lam))


def _check_equal_design(a, b):
    if not same_design(a, b):
        raise ValueError(
            "EQUAL_DESIGN mode needs matching gamma and lam "
            f"(got gamma {a.gamma} vs {b.gamma}, lam {a.lam} vs {b.lam})")
    # both summaries estimate the same limit; pool them so the term is symmetric
    return (0.5 * (a.gamma + b.gamma), 0.5 * (a.lam + b.lam),
            0.5 * (a.m + b.m), 0.5 * (a.m_prime + b.m_prime))


def _check_separated(xa, xb, rtol, what):
    if abs(xa - xb) < rtol * max(abs(xa), abs(xb)):
        raise CrossTermSingularityError(
            f"{what} values {xa!r} and {xb!r} are not separated; "
            "use EQUAL_DESIGN mode or perturb one of the penalties")


def _curve_point(ell, gamma, lam):
    """``(v, lam m)`` at ``lam``, counting numerically null eigenvalues exactly."""
    p = ell.size
    n = p / gamma
    pos = ell[ell > 1e-10 * max(ell.max(), 1e-300)]
    r = pos.size
    v = (np.sum(1.0 / (pos + lam)) + (n - r) / lam) / n
    h = (np.sum(lam / (pos + lam)) + (p - r)) / p
    return v, h


def _curve_at(ell, gamma, v_target):
    """``lam m`` on one spectrum's curve at the penalty where ``v`` hits ``v_target``.

    ``v`` falls monotonically in ``lam``; returns None when the target lies
    outside its range (``v`` stays bounded as ``lam -> 0`` once ``gamma > 1``).
    """
    scale = max(float(ell.mean()), 1e-12)

    def f(t):
        return _curve_point(ell, gamma, scale * np.exp(t))[0] - v_target

    lo, hi = -40.0, 40.0
    if f(lo) < 0 or f(hi) > 0:
        return None
    t = brentq(f, lo, hi, xtol=1e-13, rtol=1e-13)
    return _curve_point(ell, gamma, scale * np.exp(t))[1]


#: half-width (relative) of the stencil used when two companion values nearly coincide
CURVE_STENCIL = 1e-4


def _curve_cross(sa, sb, rtol):
    """Divided differences of ``v h(v)`` and ``h(v)`` along the empirical spectral curves.

    Both studies share the population covariance, so each spectrum traces
    the same curve ``v -> lam m`` up to sampling noise.  Taking both ends of
    a difference from one curve removes most of that noise; the two curves'
    answers are averaged.  Nearly equal ``v`` are spread to a small symmetric
    stencil, which turns the difference into a derivative along the curve.
    Returns None when neither curve spans both points.
    """
    va, vb = sa.v, sb.v
    if abs(va - vb) < rtol * max(va, vb):
        mid = 0.5 * (va + vb)
        va, vb = mid * (1 + CURVE_STENCIL), mid * (1 - CURVE_STENCIL)
    out = []
    for s in (sa, sb):
        ha = _curve_at(s.eigenvalues, s.gamma, va)
        hb = _curve_at(s.eigenvalues, s.gamma, vb)
        if ha is not None and hb is not None:
            out.append(((va * ha - vb * hb) / (va - vb), (hb - ha) / (va - vb)))
    if not out:
        return None
    e, q = np.mean(out, axis=0)
    return float(e), float(q)


def _general_terms(sa, sb, rtol):
    la, lb = sa.lam, sb.lam
    if sa.eigenvalues is not None and sb.eigenvalues is not None:
        curve = _curve_cross(sa, sb, rtol)
        if curve is not None:
            return curve[0] / (la * lb), curve[1] / (la * lb)
    va, vb = sa.v, sb.v
    _check_separated(va, vb, rtol, "companion Stieltjes")
    E = (va * la * sa.m - vb * lb * sb.m) / (la * lb * (va - vb))
    P = (la * sa.m - lb * sb.m) / (la * lb * (vb - va))
    return E, P


def cross_term_E(sa: SpectralSummary, sb: SpectralSummary, mode: CrossTermMode,
                 *, printed: bool = False, rtol: float = SEPARATION_RTOL) -> float:
    """Limit of ``tr{(S_a + lam_a I)^{-1} (S_b + lam_b I)^{-1}} / p``.

    For ``GENERAL`` the default evaluates the anisotropic deterministic
    equivalent ``(S + lam I)^{-1} ~ (I + v Sigma)^{-1} / lam`` with a partial
    fraction split in the companion transforms ``v``.  When both summaries
    carry eigenvalues the split is read off the empirical spectral curves,
    which is far less noisy at moderate ``p``.  ``printed=True``
    evaluates the alternative expression written with ``m`` throughout; it
    disagrees with direct trace simulation and is kept only for comparison.
    """
    mode = CrossTermMode(mode)
    if mode is CrossTermMode.IDENTITY_COV:
        return sa.m * sb.m
    if mode is CrossTermMode.EQUAL_DESIGN:
        g, lam, m, mp = _check_equal_design(sa, sb)
        num = (1 - g) * mp + 2 * g * lam * m * mp - g * m * m
        return num / (1 - g + g * lam * lam * mp)

    la, lb = sa.lam, sb.lam
    if printed:
        _check_separated(sa.m, sb.m, rtol, "Stieltjes")
        cross = (la - lb) * sa.m * sb.m / (sa.m - sb.m)
        return (la * sa.m + lb * sb.m + cross) / (la * lb)
    return _general_terms(sa, sb, rtol)[0]


def cross_term_P(sa: SpectralSummary, sb: SpectralSummary, mode: CrossTermMode,
                 *, printed: bool = False, rtol: float = SEPARATION_RTOL) -> float:
    """Limit of ``tr{Sigma (S_a + lam_a I)^{-1} (S_b + lam_b I)^{-1}} / p``.

    Same conventions as :func:`cross_term_E`; in ``GENERAL`` mode the
    denominator uses the companion transforms unless ``printed`` is set.
    """
    mode = CrossTermMode(mode)
    if mode is CrossTermMode.IDENTITY_COV:
        return sa.m * sb.m
    if mode is CrossTermMode.EQUAL_DESIGN:
        g, lam, m, mp = _check_equal_design(sa, sb)
        return (m - lam * mp) / (1 - g + g * lam * lam * mp)

    if printed:
        la, lb = sa.lam, sb.lam
        _check_separated(sa.m, sb.m, rtol, "Stieltjes")
        return (la * sa.m - lb * sb.m) / (la * lb * (sb.m - sa.m))
    return _general_terms(sa, sb, rtol)[1]


def select_mode(summaries, identity_cov: bool = False) -> CrossTermMode:
    """Pick the cross-term regime for a set of studies.

    Shared ``(gamma, lam)`` across all studies wins, then a caller-asserted
    identity covariance, otherwise the general formula.
    """
    first = summaries[0]
    if all(same_design(first, s) for s in summaries[1:]):
        return CrossTermMode.EQUAL_DESIGN
    if identity_cov:
        return CrossTermMode.IDENTITY_COV
    return CrossTermMode.GENERAL
