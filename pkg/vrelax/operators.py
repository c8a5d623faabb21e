"""
Rate coefficients and relaxation/stimulated superoperators for degenerate
V-type systems b, c -> d, in the fine (J, M) or hyperfine (F, M_F) basis.

Every coefficient is assembled from single-photon coupling amplitudes
(CG coefficients, with Racah weights for hyperfine structure) contracted
with an environment K(sigma, sigma') matrix evaluated at the transition
frequency of the second index.
"""

import csv
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .angular import HalfInt, half, clebsch_gordan, triangle, wigner_6j
from .environment import (
    DEFAULT_PHI_NODES, DEFAULT_QUAD_ORDER, VACUUM_K, k_spontaneous, k_stimulated,
)
from .errors import RateContractError, SchemeError

logger = logging.getLogger(__name__)

UPPER_LEVELS = ('b', 'c')
# basis enumeration order
LEVEL_ORDER = ('d', 'c', 'b')
TRACE_TOL = 1e-12


def get_memory_info():
    """Current process memory for diagnostics (zeros when psutil is unavailable)."""
    try:
        import psutil
        process = psutil.Process()
        memory_info = process.memory_info()
        return {
            'rss_mb': memory_info.rss / 1024 / 1024,
            'vms_mb': memory_info.vms / 1024 / 1024,
            'percent': process.memory_percent()
        }
    except ImportError:
        return {'rss_mb': 0, 'vms_mb': 0, 'percent': 0}


@dataclass(frozen=True)
class Sublevel:
    level: str
    J: HalfInt
    M: HalfInt
    F: HalfInt = None

    @property
    def momentum(self):
        """Total momentum the projection M refers to (F when hyperfine)."""
        return self.J if self.F is None else self.F

    def label(self):
        if self.F is None:
            return f'{self.level}(J={self.J},M={self.M})'
        return f'{self.level}(F={self.F},M={self.M})'

    def __str__(self):
        return self.label()


class Basis:
    """Ordered sublevel enumeration: levels d, c, b; within a level (F,) M ascending."""

    def __init__(self, sublevels):
        self.sublevels = tuple(sublevels)
        self._index = {s: i for i, s in enumerate(self.sublevels)}
        if len(self._index) != len(self.sublevels):
            raise SchemeError('basis contains duplicate sublevels')

    def __len__(self):
        return len(self.sublevels)

    def __iter__(self):
        return iter(self.sublevels)

    def __getitem__(self, i):
        return self.sublevels[i]

    def __eq__(self, other):
        return isinstance(other, Basis) and self.sublevels == other.sublevels

    def __hash__(self):
        return hash(self.sublevels)

    @property
    def n(self):
        return len(self.sublevels)

    @property
    def hyperfine(self):
        return any(s.F is not None for s in self.sublevels)

    def index(self, sublevel):
        return self._index[sublevel]

    def of_level(self, level):
        return tuple(s for s in self.sublevels if s.level == level)

    def indices_of(self, level):
        return [i for i, s in enumerate(self.sublevels) if s.level == level]

    def find(self, level, M, F=None):
        M = half(M)
        F = None if F is None else half(F)
        for s in self.sublevels:
            if s.level == level and s.M == M and s.F == F:
                return s
        raise KeyError(f'no sublevel {level} F={F} M={M} in basis')

    def labels(self):
        return [s.label() for s in self.sublevels]


def _dipole_allowed(j_upper, j_lower):
    return (abs(j_upper.twice - j_lower.twice) <= 2
            and (j_upper.twice - j_lower.twice) % 2 == 0
            and not (j_upper.twice == 0 and j_lower.twice == 0))


@dataclass(frozen=True)
class LevelScheme:
    """
    V-type level scheme. ``j_c`` may be None for the two-level reduction.

    dipole_mode 'normalized' sets every S_{j1j2} = s_scale. In 'explicit' mode
    S_{j1j2} = s_scale * mu1 * mu2 * (omega_{j2d}/omega_bd)^3 / sqrt((2J1+1)(2J2+1)).
    """

    j_b: HalfInt
    j_d: HalfInt
    omega_bd: float
    j_c: HalfInt = None
    omega_cd: float = None
    s_scale: float = 1.0
    dipole_mode: str = 'normalized'
    mu_bd: float = 1.0
    mu_cd: float = 1.0
    alkali: bool = True

    def __post_init__(self):
        for name in ('j_b', 'j_c', 'j_d'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, half(value))
        if self.j_b.twice < 0 or self.j_d.twice < 0 or (self.j_c is not None and self.j_c.twice < 0):
            raise SchemeError('total angular momenta must be nonnegative')
        if not (self.omega_bd > 0 and math.isfinite(self.omega_bd)):
            raise SchemeError(f'omega_bd must be positive, got {self.omega_bd}')
        if not _dipole_allowed(self.j_b, self.j_d):
            raise SchemeError(f'b -> d is not dipole allowed (J_b={self.j_b}, J_d={self.j_d})')
        if self.j_c is not None:
            if self.omega_cd is None or not (self.omega_cd > 0 and math.isfinite(self.omega_cd)):
                raise SchemeError(f'omega_cd must be positive, got {self.omega_cd}')
            if not _dipole_allowed(self.j_c, self.j_d):
                raise SchemeError(f'c -> d is not dipole allowed (J_c={self.j_c}, J_d={self.j_d})')
        if not (self.s_scale > 0 and math.isfinite(self.s_scale)):
            raise SchemeError(f's_scale must be positive, got {self.s_scale}')
        if self.dipole_mode not in ('normalized', 'explicit'):
            raise SchemeError(f'unknown dipole mode {self.dipole_mode!r}')
        if self.dipole_mode == 'explicit':
            if not (self.mu_bd > 0 and self.mu_cd > 0):
                raise SchemeError('reduced dipole moments must be positive')
            if self.alkali and self.j_c is not None:
                left = self.mu_bd / math.sqrt(self.j_b.twice + 1)
                right = self.mu_cd / math.sqrt(self.j_c.twice + 1)
                if abs(left - right) > 1e-9 * max(left, right):
                    raise SchemeError(
                        'alkali scheme requires mu_bd/sqrt(2J_b+1) == mu_cd/sqrt(2J_c+1), '
                        f'got {left:.12g} vs {right:.12g}')

    @property
    def upper_levels(self):
        return ('b',) if self.j_c is None else UPPER_LEVELS

    def J(self, level):
        return {'b': self.j_b, 'c': self.j_c, 'd': self.j_d}[level]

    def omega(self, level):
        """Transition frequency to d (0 for d itself)."""
        return {'b': self.omega_bd, 'c': self.omega_cd, 'd': 0.0}[level]

    def mu(self, level):
        return {'b': self.mu_bd, 'c': self.mu_cd}[level]

    def s_factor(self, j1, j2):
        if self.dipole_mode == 'normalized':
            return self.s_scale
        ratio = self.omega(j2) / self.omega_bd
        return (self.s_scale * self.mu(j1) * self.mu(j2) * ratio ** 3
                / math.sqrt((self.J(j1).twice + 1) * (self.J(j2).twice + 1)))

    def scaled(self, factor):
        return LevelScheme(self.j_b, self.j_d, self.omega_bd, self.j_c, self.omega_cd,
                           self.s_scale * factor, self.dipole_mode, self.mu_bd, self.mu_cd, self.alkali)


@dataclass(frozen=True)
class HyperfineScheme:
    """Fine scheme plus nuclear spin I and optional per-F energies {level: {F: omega}}."""

    fine: LevelScheme
    nuclear_spin: HalfInt
    f_energies: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'nuclear_spin', half(self.nuclear_spin))
        if self.nuclear_spin.twice < 0:
            raise SchemeError('nuclear spin must be nonnegative')
        energies = {}
        for level, table in (self.f_energies or {}).items():
            if level not in ('b', 'c', 'd') or (level == 'c' and self.fine.j_c is None):
                raise SchemeError(f'unknown level {level!r} in hyperfine energies')
            allowed = set(self.f_values(level))
            parsed = {}
            for f_value, omega in table.items():
                f_value = half(f_value)
                if f_value not in allowed:
                    raise SchemeError(
                        f'F={f_value} is not in |J-I|..J+I for level {level} '
                        f'(J={self.fine.J(level)}, I={self.nuclear_spin})')
                parsed[f_value] = float(omega)
            energies[level] = parsed
        object.__setattr__(self, 'f_energies', energies)

    @property
    def upper_levels(self):
        return self.fine.upper_levels

    def f_values(self, level):
        j = self.fine.J(level)
        lo = abs(j.twice - self.nuclear_spin.twice)
        hi = j.twice + self.nuclear_spin.twice
        return tuple(HalfInt(t) for t in range(lo, hi + 1, 2))

    def energy(self, level, f_value):
        return self.f_energies.get(level, {}).get(half(f_value), self.fine.omega(level))


def fine_basis(scheme):
    levels = [lvl for lvl in LEVEL_ORDER if lvl == 'd' or lvl in scheme.upper_levels]
    return Basis(Sublevel(lvl, scheme.J(lvl), m) for lvl in levels for m in scheme.J(lvl).projections())


def hyperfine_basis(scheme):
    levels = [lvl for lvl in LEVEL_ORDER if lvl == 'd' or lvl in scheme.upper_levels]
    return Basis(
        Sublevel(lvl, scheme.fine.J(lvl), m, f_value)
        for lvl in levels
        for f_value in scheme.f_values(lvl)
        for m in f_value.projections()
    )


@dataclass(frozen=True)
class RateSet:
    """
    All rate coefficients of one scheme in one environment.

    ``upper[(a, b)]`` is Gamma_{j1j2}(M1, M2); ``feeding[(a, md1, b, md2)]`` is
    Gamma_{j1j2}(M1 Md1, M2 Md2), which is also the absorption table
    Gamma_dd(Md1 M1, Md2 M2) for stimulated sets; ``ground[(md1, md2)]`` is
    Gamma_dd(Md1, Md2) (stimulated sets only).
    """

    kind: str
    basis: Basis
    upper: dict
    feeding: dict
    ground: dict = field(default_factory=dict)

    @property
    def hyperfine(self):
        return self.basis.hyperfine

    def gamma(self, a, b):
        return self.upper.get((a, b), 0j)

    def feed(self, a, md1, b, md2):
        return self.feeding.get((a, md1, b, md2), 0j)

    def ground_gamma(self, md1, md2):
        return self.ground.get((md1, md2), 0j)

    def absorption(self, md1, a, md2, b):
        """Gamma_dd(Md1 M1, Md2 M2), identical to the emission feeding table."""
        return self.feed(a, md1, b, md2)

    def max_rate(self):
        values = [abs(v) for v in self.upper.values()] + [abs(v) for v in self.ground.values()]
        return max(values) if values else 0.0

    def nonzero_count(self):
        return sum(1 for v in self.feeding.values() if v != 0)


def _amplitude(scheme_like, a, md):
    """(sigma, coupling amplitude) of a -> md, or None when sigma is out of range."""
    diff = a.M.twice - md.M.twice
    if diff % 2 or abs(diff) > 2:
        return None
    sig = diff // 2
    one = HalfInt(2)
    if a.F is None:
        value = clebsch_gordan(md.J, md.M, one, HalfInt(diff), a.J, a.M)
    else:
        nuclear = scheme_like.nuclear_spin
        if not (triangle(a.F, md.F, one)):
            return None
        sixj = wigner_6j(a.J, a.F, nuclear, md.F, md.J, one)
        if sixj == 0.0:
            return None
        # J + I + Fd + 1 is an integer for every dipole-coupled pair
        exponent = (a.J.twice + nuclear.twice + md.F.twice + 2) // 2
        phase = -1.0 if exponent % 2 else 1.0
        value = (phase * math.sqrt(md.F.twice + 1) * sixj
                 * clebsch_gordan(md.F, md.M, one, HalfInt(diff), a.F, a.M))
    if value == 0.0:
        return None
    return sig, value


def _pair_prefactor(scheme_like, j1, j2):
    if isinstance(scheme_like, HyperfineScheme):
        fine = scheme_like.fine
        return fine.s_factor(j1, j2) * math.sqrt((fine.J(j1).twice + 1) * (fine.J(j2).twice + 1))
    return scheme_like.s_factor(j1, j2)


def assemble_rates(scheme_like, basis, k_for_pair, kind, workers=1):
    """Shared assembly for fine and hyperfine schemes."""
    ground = basis.of_level('d')
    uppers = [s for s in basis if s.level != 'd']
    amplitudes = {}
    for a in uppers:
        for md in ground:
            amp = _amplitude(scheme_like, a, md)
            if amp is not None:
                amplitudes[(a, md)] = amp
    prefactors = {}
    k_tables = {}
    for j1 in scheme_like.upper_levels:
        for j2 in scheme_like.upper_levels:
            prefactors[(j1, j2)] = _pair_prefactor(scheme_like, j1, j2)
            k_tables[(j1, j2)] = k_for_pair(j1, j2)

    def pair_terms(pair):
        a, b = pair
        prefactor = prefactors[(a.level, b.level)]
        k = k_tables[(a.level, b.level)]
        terms = []
        for md1 in ground:
            amp1 = amplitudes.get((a, md1))
            if amp1 is None:
                continue
            for md2 in ground:
                amp2 = amplitudes.get((b, md2))
                if amp2 is None:
                    continue
                k_value = k[amp1[0], amp2[0]]
                if k_value == 0:
                    continue
                terms.append((md1, md2, complex(prefactor * amp1[1] * amp2[1] * k_value)))
        return pair, terms

    pairs = [(a, b) for a in uppers for b in uppers]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(pair_terms, pairs))
    else:
        results = [pair_terms(p) for p in pairs]

    upper, feeding = {}, {}
    for (a, b), terms in results:
        total = 0j
        for md1, md2, value in terms:
            feeding[(a, md1, b, md2)] = value
            if md1 == md2:
                total += value
        if total != 0:
            upper[(a, b)] = total

    ground_table = {}
    if kind == 'stimulated':
        for md1 in ground:
            for md2 in ground:
                total = 0j
                for a in uppers:
                    total += feeding.get((a, md1, a, md2), 0j)
                if total != 0:
                    ground_table[(md1, md2)] = total

    rates = RateSet(kind, basis, upper, feeding, ground_table)
    logger.debug('Assembled %s rates: %d upper, %d feeding, %d ground coefficients',
                 kind, len(upper), len(feeding), len(ground_table))
    return rates


def rates_fine(scheme, k_b, k_c=None, k_cross=None, kind='relaxation', workers=1):
    """
    Fine-structure rates from explicit K matrices: K_b for (b, b), K_c for
    (c, c) and K_cross for the b-c interference pairs.
    """
    k_c = k_b if k_c is None else k_c
    k_cross = k_b if k_cross is None else k_cross
    for k in (k_b, k_c, k_cross):
        if not k.is_hermitian(1e-10):
            raise RateContractError('K matrix is not Hermitian')
    table = {('b', 'b'): k_b, ('c', 'c'): k_c, ('b', 'c'): k_cross, ('c', 'b'): k_cross}
    return assemble_rates(scheme, fine_basis(scheme), lambda j1, j2: table[(j1, j2)], kind, workers)


def frequency_resolved(scheme, k_at):
    """K per pair evaluated at omega_{j2 d}, memoized per frequency."""
    fine = scheme.fine if isinstance(scheme, HyperfineScheme) else scheme
    cache = {}

    def k_for_pair(j1, j2):
        omega = fine.omega(j2)
        if omega not in cache:
            cache[omega] = k_at(omega)
        return cache[omega]

    return k_for_pair


def rates_spontaneous(scheme, mod, workers=1):
    """Relaxation rates with K^R evaluated at each second-index transition frequency."""
    k_for_pair = frequency_resolved(scheme, lambda omega: k_spontaneous(mod, omega))
    return assemble_rates(scheme, fine_basis(scheme), k_for_pair, 'relaxation', workers)


def rates_stimulated(scheme, dist, mod, quad_order=DEFAULT_QUAD_ORDER,
                     phi_nodes=DEFAULT_PHI_NODES, workers=1):
    """Stimulated emission and absorption coefficients with K^S at omega_{j2 d}."""
    k_for_pair = frequency_resolved(
        scheme, lambda omega: k_stimulated(dist, mod, omega, quad_order, phi_nodes))
    return assemble_rates(scheme, fine_basis(scheme), k_for_pair, 'stimulated', workers)


def rates_with_k(scheme, k, kind='relaxation', workers=1):
    """Rates from one literal K used for every pair (the injection path)."""
    basis = hyperfine_basis(scheme) if isinstance(scheme, HyperfineScheme) else fine_basis(scheme)
    return assemble_rates(scheme, basis, lambda j1, j2: k, kind, workers)


def rates_hyperfine(scheme, k, kind='relaxation', workers=1):
    """Hyperfine coefficients with a single frequency-flat K."""
    return assemble_rates(scheme, hyperfine_basis(scheme), lambda j1, j2: k, kind, workers)


def rates_hyperfine_spontaneous(scheme, mod, workers=1):
    k_for_pair = frequency_resolved(scheme, lambda omega: k_spontaneous(mod, omega))
    return assemble_rates(scheme, hyperfine_basis(scheme), k_for_pair, 'relaxation', workers)


def rates_hyperfine_stimulated(scheme, dist, mod, quad_order=DEFAULT_QUAD_ORDER,
                               phi_nodes=DEFAULT_PHI_NODES, workers=1):
    k_for_pair = frequency_resolved(
        scheme, lambda omega: k_stimulated(dist, mod, omega, quad_order, phi_nodes))
    return assemble_rates(scheme, hyperfine_basis(scheme), k_for_pair, 'stimulated', workers)


def hyperfine_vacuum_rate(scheme, level):
    """Closed-form diagonal hyperfine coefficient in a frequency-flat vacuum: (2/3) S_jj."""
    fine = scheme.fine if isinstance(scheme, HyperfineScheme) else scheme
    return VACUUM_K * fine.s_factor(level, level)


def check_rates(rates, tol=TRACE_TOL):
    """Raise RateContractError unless sum_Md feeding(a Md, b Md) == upper(a, b)."""
    ground = rates.basis.of_level('d')
    uppers = [s for s in rates.basis if s.level != 'd']
    scale = max(1.0, rates.max_rate())
    for a in uppers:
        for b in uppers:
            total = sum((rates.feed(a, md, b, md) for md in ground), 0j)
            if abs(total - rates.gamma(a, b)) > tol * scale:
                raise RateContractError('feeding coefficients do not sum to the upper rate',
                                        index=(a.label(), b.label()))
    if rates.kind == 'stimulated':
        for md1 in ground:
            for md2 in ground:
                total = sum((rates.feed(a, md1, a, md2) for a in uppers), 0j)
                if abs(total - rates.ground_gamma(md1, md2)) > tol * scale:
                    raise RateContractError('absorption coefficients do not sum to the ground rate',
                                            index=(md1.label(), md2.label()))


@dataclass(frozen=True)
class Superoperator:
    """Dense map on row-major vectorized n x n density matrices."""

    matrix: np.ndarray
    basis: Basis
    label: str = ''

    @property
    def n(self):
        return self.basis.n

    def apply(self, rho):
        rho = np.asarray(rho, dtype=complex)
        return (self.matrix @ rho.reshape(-1)).reshape(self.n, self.n)

    def __add__(self, other):
        if self.basis != other.basis:
            raise ValueError('cannot add superoperators on different bases')
        return Superoperator(self.matrix + other.matrix, self.basis, f'{self.label}+{other.label}')


def _check_basis(rates, basis):
    if basis is None:
        return rates.basis
    if basis != rates.basis:
        raise RateContractError('rate set and basis enumerate different sublevels')
    return basis


def _add_emission(matrix, rates, basis):
    n = basis.n
    idx = basis.index
    # depopulation G rho + rho G^dagger
    for (a, b), gamma in rates.upper.items():
        ia, ib = idx(a), idx(b)
        for s in range(n):
            matrix[ia * n + s, ib * n + s] -= gamma
            matrix[s * n + ia, s * n + ib] -= gamma.conjugate()
    # feeding |md2><b| rho |a><md1| + H.c.
    for (a, md1, b, md2), gamma in rates.feeding.items():
        ia, ib, i1, i2 = idx(a), idx(b), idx(md1), idx(md2)
        matrix[i2 * n + i1, ib * n + ia] += gamma
        matrix[i1 * n + i2, ia * n + ib] += gamma.conjugate()


def _add_absorption(matrix, rates, basis):
    n = basis.n
    idx = basis.index
    for (md1, md2), gamma in rates.ground.items():
        i1, i2 = idx(md1), idx(md2)
        for s in range(n):
            matrix[i1 * n + s, i2 * n + s] -= gamma
            matrix[s * n + i1, s * n + i2] -= gamma.conjugate()
    # |b><md2| rho |md1><a| + H.c.
    for (a, md1, b, md2), gamma in rates.feeding.items():
        ia, ib, i1, i2 = idx(a), idx(b), idx(md1), idx(md2)
        matrix[ib * n + ia, i2 * n + i1] += gamma
        matrix[ia * n + ib, i1 * n + i2] += gamma.conjugate()


def build_relaxation_superop(rates, basis=None):
    """Superoperator of dρ/dt = -i Gamma^R[ρ] (depopulation plus feeding of d)."""
    check_rates(rates)
    basis = _check_basis(rates, basis)
    n = basis.n
    before = get_memory_info()
    matrix = np.zeros((n * n, n * n), dtype=complex)
    _add_emission(matrix, rates, basis)
    after = get_memory_info()
    logger.debug('Relaxation superoperator %dx%d built, memory %.1fMB -> %.1fMB',
                 n * n, n * n, before['rss_mb'], after['rss_mb'])
    return Superoperator(matrix, basis, 'relaxation')


def build_stimulated_superop(rates, basis=None):
    """Superoperator of dρ/dt = -i Gamma^S[ρ]: stimulated emission plus absorption."""
    if rates.kind != 'stimulated':
        raise RateContractError('stimulated superoperator needs a stimulated rate set')
    check_rates(rates)
    basis = _check_basis(rates, basis)
    n = basis.n
    matrix = np.zeros((n * n, n * n), dtype=complex)
    _add_emission(matrix, rates, basis)
    _add_absorption(matrix, rates, basis)
    logger.debug('Stimulated superoperator %dx%d built', n * n, n * n)
    return Superoperator(matrix, basis, 'stimulated')


@dataclass
class InterferenceReport:
    """
    p = Gamma_bc / sqrt(Gamma_bb Gamma_cc) per shared projection, None when 0/0.

    Equal-M pairs couple through the diagonal of K only, so Gamma_bc there is
    real and p carries its sign. Coefficients between different projections
    turn complex in fields without axial symmetry; ``off_diagonal`` keeps
    them as complex values (a, b, Gamma).
    """

    p: dict
    off_diagonal: list

    def rows(self):
        out = []
        for (b, c), value in self.p.items():
            out.append((b.label(), c.label(), value))
        return out


def interference_report(rates, tol=1e-14):
    basis = rates.basis
    p = {}
    b_levels = basis.of_level('b')
    c_levels = basis.of_level('c')
    for b in b_levels:
        for c in c_levels:
            if b.M != c.M or b.F != c.F:
                continue
            gbb = rates.gamma(b, b).real
            gcc = rates.gamma(c, c).real
            gbc = rates.gamma(b, c)
            denom = gbb * gcc
            if denom <= 0:
                p[(b, c)] = None
                continue
            p[(b, c)] = gbc.real / math.sqrt(denom)
    scale = max(1.0, rates.max_rate())
    off = [(a, b, value) for (a, b), value in rates.upper.items()
           if a != b and abs(value) > tol * scale]
    off.sort(key=lambda item: (basis.index(item[0]), basis.index(item[1])))
    return InterferenceReport(p, off)


def p_value(report, M, F=None):
    """p for the b-c pair with projection M (and F in hyperfine bases)."""
    M = half(M)
    F = None if F is None else half(F)
    for (b, c), value in report.p.items():
        if b.M == M and b.F == F:
            return value
    raise KeyError(f'no b-c pair with M={M}')


def _num(x):
    return repr(float(x) + 0.0)


def _ground_cell(md, hyperfine):
    return f'{md.F}:{md.M}' if hyperfine else str(md.M)


RATE_COLUMNS = ('kind', 'j1', 'F1', 'M1', 'j2', 'F2', 'M2', 'Md1', 'Md2', 're', 'im')


def rate_rows(rates):
    """Deterministic CSV rows in basis order."""
    hf = rates.hyperfine
    idx = rates.basis.index
    rows = []

    def f(s):
        return '' if s.F is None else str(s.F)

    for (a, b) in sorted(rates.upper, key=lambda k: (idx(k[0]), idx(k[1]))):
        v = rates.upper[(a, b)]
        rows.append(('upper', a.level, f(a), str(a.M), b.level, f(b), str(b.M), '', '', _num(v.real), _num(v.imag)))
    for key in sorted(rates.feeding, key=lambda k: tuple(idx(x) for x in k)):
        a, md1, b, md2 = key
        v = rates.feeding[key]
        rows.append(('feeding', a.level, f(a), str(a.M), b.level, f(b), str(b.M),
                     _ground_cell(md1, hf), _ground_cell(md2, hf), _num(v.real), _num(v.imag)))
    for (md1, md2) in sorted(rates.ground, key=lambda k: (idx(k[0]), idx(k[1]))):
        v = rates.ground[(md1, md2)]
        rows.append(('ground', 'd', f(md1), str(md1.M), 'd', f(md2), str(md2.M), '', '', _num(v.real), _num(v.imag)))
    return rows


def write_rates_csv(rates, handle, header_lines=()):
    for line in header_lines:
        handle.write(f'# {line}\n')
    writer = csv.writer(handle, lineterminator='\n')
    writer.writerow(RATE_COLUMNS)
    writer.writerows(rate_rows(rates))


def read_rates_csv(handle, basis, kind='relaxation'):
    """Rebuild a RateSet from ``write_rates_csv`` output on a known basis."""
    lines = [line for line in handle if not line.startswith('#')]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != RATE_COLUMNS:
        raise RateContractError(f'rate CSV header must be {",".join(RATE_COLUMNS)}')

    def upper_of(level, F, M):
        return basis.find(level, M, F or None)

    def ground_of(cell):
        if ':' in cell:
            F, M = cell.split(':', 1)
            return basis.find('d', M, F)
        return basis.find('d', cell)

    upper, feeding, ground = {}, {}, {}
    for row in reader:
        value = complex(float(row['re']), float(row['im']))
        if row['kind'] == 'upper':
            upper[(upper_of(row['j1'], row['F1'], row['M1']), upper_of(row['j2'], row['F2'], row['M2']))] = value
        elif row['kind'] == 'feeding':
            key = (upper_of(row['j1'], row['F1'], row['M1']), ground_of(row['Md1']),
                   upper_of(row['j2'], row['F2'], row['M2']), ground_of(row['Md2']))
            feeding[key] = value
        elif row['kind'] == 'ground':
            ground[(upper_of('d', row['F1'], row['M1']), upper_of('d', row['F2'], row['M2']))] = value
            kind = 'stimulated'
        else:
            raise RateContractError(f"unknown rate row kind {row['kind']!r}")
    return RateSet(kind, basis, upper, feeding, ground)


def write_superop_csv(superop, handle, header_lines=()):
    """Dense matrix CSV; a legend block maps basis indices to sublevels."""
    basis = superop.basis
    n = basis.n
    for line in header_lines:
        handle.write(f'# {line}\n')
    handle.write(f'# basis legend ({n} sublevels, row-major vec index = i*{n}+j)\n')
    for i, label in enumerate(basis.labels()):
        handle.write(f'# {i}: {label}\n')
    writer = csv.writer(handle, lineterminator='\n')
    writer.writerow(['row'] + [f'{i}.{j}' for i in range(n) for j in range(n)])
    for r in range(n * n):
        cells = []
        for value in superop.matrix[r]:
            cells.append(f'{_num(value.real)}{"+" if value.imag + 0.0 >= 0 else "-"}{_num(abs(value.imag))}j')
        writer.writerow([f'{r // n}.{r % n}'] + cells)
