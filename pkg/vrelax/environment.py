"""
Photon environments and the K(sigma, sigma') matrices they induce.

K is normalized with the dOmega/4pi measure: the free-space spontaneous
matrix is (2/3)*identity and an isotropic field of N photons per mode gives
2N/3 on the diagonal. Absolute prefactors are carried by the rate scale S.
"""

import csv
import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.interpolate import RegularGridInterpolator

from .angular import SIGMAS, check_sigma, d1_matrix, wigner_D1
from .errors import EnvironmentDomainError

logger = logging.getLogger(__name__)

DEFAULT_QUAD_ORDER = 16
DEFAULT_PHI_NODES = 64
MIN_QUAD_ORDER = 4

VACUUM_K = 2.0 / 3.0

CSV_COLUMNS = ('theta_rad', 'phi_rad', 'lambda', 'n_mean')


def _frozen(array):
    array = np.array(array, dtype=complex)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class KMatrix:
    """3x3 Hermitian matrix K(sigma, sigma') stored in (-1, 0, +1) order."""

    entries: np.ndarray
    evaluated_at: float = None
    provenance: str = 'quadrature'

    def __post_init__(self):
        entries = _frozen(self.entries)
        if entries.shape != (3, 3):
            raise EnvironmentDomainError(f'K matrix must be 3x3, got shape {entries.shape}')
        object.__setattr__(self, 'entries', entries)

    def __getitem__(self, key):
        sig, sig_p = key
        return self.entries[check_sigma(sig) + 1, check_sigma(sig_p) + 1]

    @property
    def frequency_flat(self):
        return self.evaluated_at is None

    def diagonal(self):
        return tuple(float(self.entries[i, i].real) for i in range(3))

    def is_hermitian(self, tol=1e-12):
        return bool(np.max(np.abs(self.entries - self.entries.conj().T)) <= tol)

    def scaled(self, factor):
        return KMatrix(self.entries * factor, self.evaluated_at, self.provenance)

    def to_rows(self):
        rows = []
        for sig in SIGMAS:
            for sig_p in SIGMAS:
                value = self[sig, sig_p]
                rows.append((sig, sig_p, float(value.real), float(value.imag)))
        return rows


@dataclass(frozen=True)
class AngularDistribution:
    """
    Mean photon number per mode N(theta, phi, lambda), lambda = +-1.

    ``profile`` is the unscaled shape; ``scale`` multiplies the integrated
    K so that scaling a distribution scales K exactly.
    """

    kind: str
    profile: object
    scale: float = 1.0
    description: str = ''

    @classmethod
    def isotropic(cls, n_mean):
        return cls('isotropic', _constant_profile, float(n_mean), f'N={n_mean}')

    @classmethod
    def cos2(cls, n_mean):
        return cls('axisymmetric-cos2', _cos2_profile, float(n_mean), f'N={n_mean} cos^2(theta)')

    @classmethod
    def custom(cls, func, scale=1.0, description='custom'):
        return cls('custom', func, float(scale), description)

    @classmethod
    def tabulated(cls, thetas, phis, table, scale=1.0, description='tabulated'):
        """
        Bilinear interpolation of ``table[lam]`` (shape len(thetas) x len(phis))
        for lam in (-1, +1). phi is periodic with period 2*pi.
        """
        interpolants = {}
        thetas = np.asarray(thetas, dtype=float)
        phis = np.asarray(phis, dtype=float)
        if thetas.ndim != 1 or phis.ndim != 1 or len(thetas) < 2 or len(phis) < 1:
            raise EnvironmentDomainError('tabulated grid needs >= 2 theta and >= 1 phi values')
        if np.any(np.diff(thetas) <= 0) or np.any(np.diff(phis) <= 0):
            raise EnvironmentDomainError('tabulated grid axes must be strictly increasing')
        if thetas[0] < 0 or thetas[-1] > math.pi + 1e-12:
            raise EnvironmentDomainError('tabulated theta values must lie in [0, pi]')
        if phis[0] < 0 or phis[-1] >= 2 * math.pi:
            raise EnvironmentDomainError('tabulated phi values must lie in [0, 2pi)')
        for lam in (-1, 1):
            if lam not in table:
                raise EnvironmentDomainError(f'tabulated distribution missing lambda={lam}')
            values = np.asarray(table[lam], dtype=float)
            if values.shape != (len(thetas), len(phis)):
                raise EnvironmentDomainError(
                    f'table for lambda={lam} has shape {values.shape}, '
                    f'expected {(len(thetas), len(phis))}')
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise EnvironmentDomainError(f'table for lambda={lam} has NaN or negative cells')
            # wrap phi so interpolation is periodic
            wrapped_phis = np.concatenate([phis, [phis[0] + 2 * math.pi]])
            wrapped = np.concatenate([values, values[:, :1]], axis=1)
            if phis[0] > 0:
                wrapped_phis = np.concatenate([[phis[-1] - 2 * math.pi], wrapped_phis])
                wrapped = np.concatenate([values[:, -1:], wrapped], axis=1)
            interpolants[lam] = RegularGridInterpolator((thetas, wrapped_phis), wrapped, method='linear')

        theta_lo, theta_hi = thetas[0], thetas[-1]

        def profile(theta, phi, lam):
            theta = np.clip(np.asarray(theta, dtype=float), theta_lo, theta_hi)
            phi = np.mod(np.asarray(phi, dtype=float), 2 * math.pi)
            points = np.stack(np.broadcast_arrays(theta, phi), axis=-1)
            return interpolants[lam](points)

        return cls('custom-tabulated', profile, float(scale), description)

    def scaled(self, factor):
        return AngularDistribution(self.kind, self.profile, self.scale * factor, self.description)

    def evaluate(self, theta, phi, lam):
        """N(theta, phi, lambda), broadcast over array arguments."""
        if lam not in (-1, 1):
            raise EnvironmentDomainError(f'photon helicity must be +-1, got {lam!r}')
        theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
        return self.scale * np.broadcast_to(np.asarray(self.profile(theta, phi, lam), dtype=float), theta.shape)


def _constant_profile(theta, phi, lam):
    return np.ones(np.broadcast(theta, phi).shape)


def _cos2_profile(theta, phi, lam):
    return np.broadcast_to(np.cos(theta) ** 2, np.broadcast(theta, phi).shape)


@dataclass(frozen=True)
class ModeDensityModifier:
    """Relative electromagnetic mode density per frequency and sigma channel."""

    kind: str = 'vacuum'
    reflectivity: float = 0.0
    band_edge: float = 0.0
    curvature: float = 1.0
    gap_channels: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in ('vacuum', 'planar-cavity', 'photonic-crystal'):
            raise EnvironmentDomainError(f'unknown mode density kind {self.kind!r}')
        if self.kind == 'planar-cavity' and not (0.0 <= abs(self.reflectivity) < 1.0):
            raise EnvironmentDomainError(f'cavity reflectivity must satisfy 0 <= |r| < 1, got {self.reflectivity}')
        if self.kind == 'photonic-crystal':
            if not (self.band_edge > 0 and math.isfinite(self.band_edge)):
                raise EnvironmentDomainError(f'band edge must be a positive frequency, got {self.band_edge}')
            if not (self.curvature > 0 and math.isfinite(self.curvature)):
                raise EnvironmentDomainError(f'band curvature A must be positive, got {self.curvature}')
        object.__setattr__(self, 'gap_channels', frozenset(check_sigma(s) for s in self.gap_channels))

    @classmethod
    def vacuum(cls):
        return cls('vacuum')

    @classmethod
    def planar_cavity(cls, reflectivity):
        return cls('planar-cavity', reflectivity=float(reflectivity))

    @classmethod
    def photonic_crystal(cls, band_edge, curvature, gap_channels):
        return cls('photonic-crystal', band_edge=float(band_edge), curvature=float(curvature),
                   gap_channels=frozenset(gap_channels))

    @property
    def frequency_flat(self):
        return self.kind != 'photonic-crystal'

    def relative_density(self, omega, sig):
        sig = check_sigma(sig)
        if self.kind == 'vacuum':
            return 1.0
        if self.kind == 'planar-cavity':
            r = abs(self.reflectivity)
            if sig == 0:
                return (1.0 + r) / (1.0 - r)
            return (1.0 - r) / (1.0 + r)
        if sig not in self.gap_channels:
            return 1.0
        if omega <= self.band_edge:
            return 0.0
        crystal = math.sqrt((omega - self.band_edge) / self.curvature ** 3)
        free_space = 2.0 * omega ** 2 / SPEED_OF_LIGHT ** 3
        return crystal / free_space

    def channel_weights(self, omega):
        return np.array([self.relative_density(omega, s) for s in SIGMAS])


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Legendre in cos(theta) times uniform trapezoid in phi, weights summing to 1."""

    order: int
    phi_nodes: int
    theta: np.ndarray
    theta_weights: np.ndarray
    phi: np.ndarray
    phi_weight: float


@lru_cache(maxsize=32)
def get_quadrature(order=DEFAULT_QUAD_ORDER, phi_nodes=DEFAULT_PHI_NODES):
    if order < MIN_QUAD_ORDER:
        raise EnvironmentDomainError(f'quadrature order must be >= {MIN_QUAD_ORDER}, got {order}')
    if phi_nodes < 1:
        raise EnvironmentDomainError(f'need at least one phi node, got {phi_nodes}')
    x, w = np.polynomial.legendre.leggauss(order)
    theta = np.arccos(x)
    phi = 2 * math.pi * np.arange(phi_nodes) / phi_nodes
    for arr in (theta, w, phi):
        arr.setflags(write=False)
    # dOmega/4pi = d(cos theta) dphi / 4pi
    return Quadrature(order, phi_nodes, theta, w / 2.0, phi, 1.0 / phi_nodes)


def scale_k(k, mod, omega):
    """Apply per-channel mode-density multipliers: K(s, s') * sqrt(rho_s rho_s')."""
    weights = mod.channel_weights(omega)
    factor = np.sqrt(np.outer(weights, weights))
    return KMatrix(k.entries * factor, None if mod.frequency_flat else omega, k.provenance)


def k_spontaneous(mod, omega):
    """Spontaneous K^R at transition frequency ``omega`` (closed form)."""
    if not omega > 0:
        raise EnvironmentDomainError(f'transition frequency must be positive, got {omega}')
    base = KMatrix(np.eye(3) * VACUUM_K, None, 'closed-form')
    if mod.kind == 'vacuum':
        return base
    return scale_k(base, mod, omega)


def _integrate_profile(dist, quad):
    """Unscaled K of the distribution's profile on the quadrature grid."""
    theta_grid, phi_grid = np.meshgrid(quad.theta, quad.phi, indexing='ij')
    d = d1_matrix(quad.theta)  # [lam, sig, node]
    deltas = np.arange(-2, 3)
    phase = np.exp(1j * np.outer(deltas, quad.phi))  # [delta, phi]
    entries = np.zeros((3, 3), dtype=complex)
    for lam in (-1, 1):
        samples = np.asarray(dist.profile(theta_grid, phi_grid, lam), dtype=float)
        samples = np.broadcast_to(samples, theta_grid.shape)
        bad = ~np.isfinite(samples) | (samples < 0)
        if np.any(bad):
            i, k = np.argwhere(bad)[0]
            raise EnvironmentDomainError(
                f'negative or non-finite photon number {samples[i, k]!r} at '
                f'theta={quad.theta[i]:.6g}, phi={quad.phi[k]:.6g}, lambda={lam}')
        # harmonic[delta, node] = sum_phi w_phi N e^{i delta phi}
        harmonic = quad.phi_weight * samples @ phase.T  # [node, delta]
        row = d[lam + 1]
        for a, sig in enumerate(SIGMAS):
            for b, sig_p in enumerate(SIGMAS):
                integrand = harmonic[:, sig - sig_p + 2] * row[a] * row[b]
                entries[a, b] += np.dot(quad.theta_weights, integrand)
    return entries


def k_stimulated(dist, mod, omega, quad_order=DEFAULT_QUAD_ORDER, phi_nodes=DEFAULT_PHI_NODES):
    """
    Stimulated K^S(s, s') = sum_lam int N exp(i(s - s')phi) s_{lam s'} s_{lam s} dOmega/4pi.
    """
    if not omega > 0:
        raise EnvironmentDomainError(f'transition frequency must be positive, got {omega}')
    quad = get_quadrature(quad_order, phi_nodes)
    entries = _integrate_profile(dist, quad) * dist.scale
    logger.debug('K^S %s order=%d phi=%d at omega=%g', dist.kind, quad_order, phi_nodes, omega)
    k = KMatrix(entries, None, 'quadrature')
    if mod.kind == 'vacuum':
        return k
    return scale_k(k, mod, omega)


def inject_k(values):
    """Literal K from three diagonal values (-1, 0, +1) or nine row-major entries."""
    values = [complex(v) for v in values]
    if len(values) == 3:
        entries = np.diag(values)
    elif len(values) == 9:
        entries = np.array(values).reshape(3, 3)
    else:
        raise EnvironmentDomainError(f'literal K needs 3 or 9 values, got {len(values)}')
    if not np.all(np.isfinite(entries)):
        raise EnvironmentDomainError('literal K has non-finite entries')
    k = KMatrix(entries, None, 'injected')
    if not k.is_hermitian(1e-12):
        raise EnvironmentDomainError('literal K must be Hermitian')
    if any(v < 0 for v in k.diagonal()):
        raise EnvironmentDomainError('literal K diagonal must be nonnegative')
    return k


def load_tabulated_csv(path, scale=1.0):
    """Read ``theta_rad,phi_rad,lambda,n_mean`` rows into a tabulated distribution."""
    cells = {}
    with open(path, newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise EnvironmentDomainError(f'{path}:1: header must be {",".join(CSV_COLUMNS)}')
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise EnvironmentDomainError(f'{path}:{line_no}: expected 4 columns, got {len(row)}')
            try:
                theta, phi, lam, n_mean = float(row[0]), float(row[1]), int(row[2]), float(row[3])
            except ValueError:
                raise EnvironmentDomainError(f'{path}:{line_no}: unparseable row {row!r}')
            if not all(math.isfinite(v) for v in (theta, phi, n_mean)):
                raise EnvironmentDomainError(f'{path}:{line_no}: NaN or infinite value')
            if n_mean < 0:
                raise EnvironmentDomainError(f'{path}:{line_no}: negative n_mean {n_mean}')
            if lam not in (-1, 1):
                raise EnvironmentDomainError(f'{path}:{line_no}: lambda must be -1 or 1')
            key = (lam, theta, phi)
            if key in cells:
                raise EnvironmentDomainError(f'{path}:{line_no}: duplicate grid point {key}')
            cells[key] = n_mean
    thetas = sorted({t for _, t, _ in cells})
    phis = sorted({p for _, _, p in cells})
    table = {}
    for lam in (-1, 1):
        grid = np.empty((len(thetas), len(phis)))
        for i, t in enumerate(thetas):
            for k, p in enumerate(phis):
                if (lam, t, p) not in cells:
                    raise EnvironmentDomainError(
                        f'{path}: grid incomplete, missing theta={t}, phi={p}, lambda={lam}')
                grid[i, k] = cells[(lam, t, p)]
        table[lam] = grid
    logger.info('📄 Loaded tabulated field %s: %dx%d grid', path, len(thetas), len(phis))
    return AngularDistribution.tabulated(thetas, phis, table, scale=scale, description=str(path))


@dataclass
class SelfCheckReport:
    order: int
    deviations: dict = field(default_factory=dict)
    tolerance: float = 1e-12

    @property
    def max_deviation(self):
        return max(self.deviations.values()) if self.deviations else 0.0

    @property
    def passed(self):
        return self.max_deviation < self.tolerance


def quadrature_selfcheck(quad_order, phi_nodes=DEFAULT_PHI_NODES, tolerance=1e-12):
    """Compare quadrature against closed forms for the built-in distributions."""
    quad = get_quadrature(quad_order, phi_nodes)
    report = SelfCheckReport(quad_order, tolerance=tolerance)

    # orthogonality of the D^1 functions: int conj(D_{l s1}) D_{l s2} dOmega/4pi = delta/3
    theta_grid, phi_grid = np.meshgrid(quad.theta, quad.phi, indexing='ij')
    weights = np.outer(quad.theta_weights, np.full(len(quad.phi), quad.phi_weight))
    worst = 0.0
    for lam in SIGMAS:
        for s1 in SIGMAS:
            for s2 in SIGMAS:
                values = np.vectorize(
                    lambda t, p: np.conj(wigner_D1(lam, s1, p, t)) * wigner_D1(lam, s2, p, t),
                    otypes=[complex])(theta_grid, phi_grid)
                expected = 1.0 / 3.0 if s1 == s2 else 0.0
                worst = max(worst, abs(np.sum(weights * values) - expected))
    report.deviations['orthogonality'] = worst

    vacuum = ModeDensityModifier.vacuum()
    iso = k_stimulated(AngularDistribution.isotropic(1.0), vacuum, 1.0, quad_order, phi_nodes)
    report.deviations['isotropic'] = float(np.max(np.abs(iso.entries - np.eye(3) * VACUUM_K)))

    cos2 = k_stimulated(AngularDistribution.cos2(1.0), vacuum, 1.0, quad_order, phi_nodes)
    expected = np.diag([4.0 / 15.0, 2.0 / 15.0, 4.0 / 15.0])
    report.deviations['cos2'] = float(np.max(np.abs(cos2.entries - expected)))
    return report
