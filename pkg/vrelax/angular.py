"""
Angular-momentum algebra: half-integer quantum numbers, Clebsch-Gordan
coefficients, the rank-1 Wigner d/D functions and Racah W / 6j symbols.

Quantum numbers are stored as twice their value so that J, M, F and I are
exact. CG and 6j use the explicit Racah single-sum formulas evaluated in
exact rational arithmetic; only the final square root is floating point.
"""

import math
import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, total_ordering

import numpy as np

from .errors import AngularDomainError

logger = logging.getLogger(__name__)

# 64! covers every factorial needed by CG and 6j symbols with J <= 25/2
FACTORIAL_CAP = 64

_FACTORIALS = [1]
for _n in range(1, FACTORIAL_CAP + 1):
    _FACTORIALS.append(_FACTORIALS[-1] * _n)
_FACTORIALS = tuple(_FACTORIALS)

SIGMAS = (-1, 0, 1)


@total_ordering
@dataclass(frozen=True)
class HalfInt:
    """Exact half-integer; ``twice`` holds 2*value."""

    twice: int

    def __post_init__(self):
        if isinstance(self.twice, bool) or not isinstance(self.twice, (int, np.integer)):
            raise AngularDomainError(f'HalfInt needs an integer twice-value, got {self.twice!r}')
        object.__setattr__(self, 'twice', int(self.twice))

    @classmethod
    def parse(cls, value):
        """Accept HalfInt, int, float multiples of 1/2 or strings like '3/2', '1', '0.5'."""
        if isinstance(value, HalfInt):
            return value
        if isinstance(value, str):
            text = value.strip()
            try:
                frac = Fraction(text)
            except (ValueError, ZeroDivisionError):
                raise AngularDomainError(f'not a half-integer: {value!r}')
        elif isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            frac = Fraction(int(value))
        elif isinstance(value, (float, np.floating)):
            if not math.isfinite(value):
                raise AngularDomainError(f'not a half-integer: {value!r}')
            frac = Fraction(float(value))
        else:
            raise AngularDomainError(f'not a half-integer: {value!r}')
        doubled = frac * 2
        if doubled.denominator != 1:
            raise AngularDomainError(f'not a half-integer: {value!r}')
        return cls(int(doubled))

    @property
    def is_integer(self):
        return self.twice % 2 == 0

    def __float__(self):
        return self.twice / 2

    def __add__(self, other):
        return HalfInt(self.twice + half(other).twice)

    __radd__ = __add__

    def __sub__(self, other):
        return HalfInt(self.twice - half(other).twice)

    def __rsub__(self, other):
        return HalfInt(half(other).twice - self.twice)

    def __neg__(self):
        return HalfInt(-self.twice)

    def __lt__(self, other):
        return self.twice < half(other).twice

    def __str__(self):
        if self.twice % 2 == 0:
            return str(self.twice // 2)
        return f'{self.twice}/2'

    def __repr__(self):
        return f'HalfInt({self})'

    def projections(self):
        """Projections -J..J in ascending order."""
        if self.twice < 0:
            raise AngularDomainError(f'J must be nonnegative, got {self}')
        return tuple(HalfInt(t) for t in range(-self.twice, self.twice + 1, 2))

    def multiplicity(self):
        return self.twice + 1


def half(value):
    return HalfInt.parse(value)


def check_sigma(value):
    """Validate a dipole polarization index."""
    if isinstance(value, bool) or value not in SIGMAS:
        raise AngularDomainError(f'sigma must be -1, 0 or +1, got {value!r}')
    return int(value)


def _check_jm(j, m):
    if j.twice < 0:
        raise AngularDomainError(f'J must be nonnegative, got {j}')
    if abs(m.twice) > j.twice:
        raise AngularDomainError(f'|M| > J for J={j}, M={m}')
    if (j.twice - m.twice) % 2:
        raise AngularDomainError(f'J={j} and M={m} differ in parity class')


def _fact(n):
    if n < 0:
        raise AngularDomainError(f'negative factorial argument {n}')
    if n > FACTORIAL_CAP:
        raise AngularDomainError(
            f'factorial argument {n} exceeds the table cap {FACTORIAL_CAP}')
    return _FACTORIALS[n]


def triangle(a, b, c):
    """True when (a, b, c) satisfy the triangle rule with integer perimeter."""
    ta, tb, tc = half(a).twice, half(b).twice, half(c).twice
    if min(ta, tb, tc) < 0:
        return False
    return abs(ta - tb) <= tc <= ta + tb and (ta + tb + tc) % 2 == 0


def _signed_sqrt(total, radicand):
    """sign(total) * sqrt(total**2 * radicand) computed from exact rationals."""
    if total == 0:
        return 0.0
    value = math.sqrt(total * total * radicand)
    return value if total > 0 else -value


@lru_cache(maxsize=None)
def _cg_twice(tj1, tm1, tj2, tm2, tj, tm):
    if tm1 + tm2 != tm:
        return 0.0
    if not (abs(tj1 - tj2) <= tj <= tj1 + tj2) or (tj1 + tj2 + tj) % 2:
        return 0.0
    # all of these are integers once the triangle rule holds
    a = (tj1 + tj2 - tj) // 2
    b = (tj1 - tm1) // 2
    c = (tj2 + tm2) // 2
    d = (tj - tj2 + tm1) // 2
    e = (tj - tj1 - tm2) // 2
    kmin = max(0, -d, -e)
    kmax = min(a, b, c)
    if kmin > kmax:
        return 0.0
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        denom = _fact(k) * _fact(a - k) * _fact(b - k) * _fact(c - k) * _fact(d + k) * _fact(e + k)
        total += Fraction(-1 if k % 2 else 1, denom)
    radicand = Fraction(
        (tj + 1)
        * _fact((tj1 + tj2 - tj) // 2)
        * _fact((tj1 - tj2 + tj) // 2)
        * _fact((-tj1 + tj2 + tj) // 2),
        _fact((tj1 + tj2 + tj) // 2 + 1),
    )
    radicand *= (
        _fact((tj1 + tm1) // 2) * _fact((tj1 - tm1) // 2)
        * _fact((tj2 + tm2) // 2) * _fact((tj2 - tm2) // 2)
        * _fact((tj + tm) // 2) * _fact((tj - tm) // 2)
    )
    return _signed_sqrt(total, radicand)


def clebsch_gordan(j1, m1, j2, m2, j, m):
    """
    Clebsch-Gordan coefficient C^{J M}_{j1 m1 j2 m2} (Condon-Shortley).

    Returns 0 when M != m1 + m2 or the triangle rule fails; raises
    AngularDomainError for malformed (j, m) pairs.
    """
    j1, m1, j2, m2, j, m = (half(x) for x in (j1, m1, j2, m2, j, m))
    _check_jm(j1, m1)
    _check_jm(j2, m2)
    _check_jm(j, m)
    return _cg_twice(j1.twice, m1.twice, j2.twice, m2.twice, j.twice, m.twice)


def _delta(ta, tb, tc):
    return Fraction(
        _fact((ta + tb - tc) // 2) * _fact((ta - tb + tc) // 2) * _fact((-ta + tb + tc) // 2),
        _fact((ta + tb + tc) // 2 + 1),
    )


def _triad(ta, tb, tc):
    return abs(ta - tb) <= tc <= ta + tb and (ta + tb + tc) % 2 == 0


@lru_cache(maxsize=None)
def _sixj_twice(t1, t2, t3, t4, t5, t6):
    if min(t1, t2, t3, t4, t5, t6) < 0:
        return 0.0
    if not (_triad(t1, t2, t3) and _triad(t1, t5, t6) and _triad(t4, t2, t6) and _triad(t4, t5, t3)):
        return 0.0
    a1 = (t1 + t2 + t3) // 2
    a2 = (t1 + t5 + t6) // 2
    a3 = (t4 + t2 + t6) // 2
    a4 = (t4 + t5 + t3) // 2
    b1 = (t1 + t2 + t4 + t5) // 2
    b2 = (t2 + t3 + t5 + t6) // 2
    b3 = (t3 + t1 + t6 + t4) // 2
    total = Fraction(0)
    for t in range(max(a1, a2, a3, a4), min(b1, b2, b3) + 1):
        denom = (_fact(t - a1) * _fact(t - a2) * _fact(t - a3) * _fact(t - a4)
                 * _fact(b1 - t) * _fact(b2 - t) * _fact(b3 - t))
        total += Fraction((-1 if t % 2 else 1) * _fact(t + 1), denom)
    radicand = _delta(t1, t2, t3) * _delta(t1, t5, t6) * _delta(t4, t2, t6) * _delta(t4, t5, t3)
    return _signed_sqrt(total, radicand)


def wigner_6j(j1, j2, j3, j4, j5, j6):
    """6j symbol {j1 j2 j3; j4 j5 j6}; 0 when any triad fails the triangle rule."""
    return _sixj_twice(*(half(x).twice for x in (j1, j2, j3, j4, j5, j6)))


def racah_w(l1, l2, l3, l4, l5, l6):
    """Racah coefficient W(l1 l2 l3 l4; l5 l6) = (-1)^(-l1-l2-l3-l4) {l1 l2 l5; l4 l3 l6}."""
    ls = [half(x) for x in (l1, l2, l3, l4, l5, l6)]
    if any(x.twice < 0 for x in ls):
        raise AngularDomainError('Racah W needs nonnegative arguments')
    sixj = _sixj_twice(ls[0].twice, ls[1].twice, ls[4].twice, ls[3].twice, ls[2].twice, ls[5].twice)
    if sixj == 0.0:
        return 0.0
    # integer whenever the triads hold
    exponent = (ls[0].twice + ls[1].twice + ls[2].twice + ls[3].twice) // 2
    return -sixj if exponent % 2 else sixj


def wigner_d1(lam, sig, beta):
    """
    Rank-1 reduced rotation function s^1_{lam sig}(beta).

    Follows the sign layout
        s_{1,0} = s_{0,-1} = -s_{0,1} = -s_{-1,0} = sin(beta)/sqrt(2)
        s_{1,1} = s_{-1,-1} = (1 + cos beta)/2
        s_{1,-1} = s_{-1,1} = (1 - cos beta)/2
    completed with s_{0,0} = cos(beta).
    """
    lam = check_sigma(lam)
    sig = check_sigma(sig)
    c = math.cos(beta)
    if lam == sig:
        return c if lam == 0 else (1.0 + c) / 2.0
    if lam == -sig:
        return (1.0 - c) / 2.0
    s = math.sin(beta) / math.sqrt(2.0)
    if (lam, sig) in ((1, 0), (0, -1)):
        return s
    return -s


def d1_matrix(beta):
    """3x3 array s^1(beta) indexed [lam + 1, sig + 1]."""
    beta = np.asarray(beta, dtype=float)
    c = np.cos(beta)
    s = np.sin(beta) / np.sqrt(2.0)
    plus = (1.0 + c) / 2.0
    minus = (1.0 - c) / 2.0
    # rows lam = -1, 0, +1; columns sig = -1, 0, +1
    return np.array([
        [plus, -s, minus],
        [s, c, -s],
        [minus, s, plus],
    ])


def wigner_D1(lam, sig, phi, theta):
    """
    Phase-carrying Wigner function D^1_{lam sig}(phi, theta) = exp(i sig phi) s^1_{lam sig}(theta).

    The phase makes conj(D_{lam sig'}) * D_{lam sig} = exp(i (sig - sig') phi) s_{lam sig'} s_{lam sig}.
    """
    sig = check_sigma(sig)
    return complex(np.exp(1j * sig * phi)) * wigner_d1(lam, sig, theta)
