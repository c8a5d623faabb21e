"""
Density-matrix propagation under i drho/dt = [H, rho] + i sum L[rho].

States are plain n x n complex numpy arrays over an operators.Basis; the
Liouvillian acts on their row-major vectorization.
"""

import csv
import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, null_space

from .angular import half
from .errors import ConfigError, DegenerateSteadyState, NumericalAbort
from .operators import HyperfineScheme, get_memory_info

logger = logging.getLogger(__name__)

TRACE_ABORT = 1e-6
NEGATIVITY_ABORT = -1e-6
STEADY_TOL = 1e-12
NULL_RCOND = 1e-10
# dt * max rate above this triggers a warning
STEP_WARN = 0.1
MAX_DOUBLINGS = 40


@dataclass(frozen=True)
class AtomicHamiltonian:
    """Diagonal level energies (rad/s) over a basis."""

    energies: np.ndarray
    basis: object

    def __post_init__(self):
        energies = np.array(self.energies, dtype=float)
        if energies.shape != (self.basis.n,):
            raise ValueError(f'need {self.basis.n} energies, got shape {energies.shape}')
        energies.setflags(write=False)
        object.__setattr__(self, 'energies', energies)

    @classmethod
    def from_scheme(cls, scheme, basis, frame='rotating'):
        """
        omega_jd for fine sublevels, omega_j(F) for hyperfine ones; d sits at 0.

        frame='rotating' subtracts omega_bd from every excited energy. The relaxation
        and stimulated superoperators commute with that rotation, so only the
        excited-level splittings remain in H.
        """
        if frame not in ('rotating', 'lab'):
            raise ValueError(f'unknown frame {frame!r}')
        fine = scheme.fine if isinstance(scheme, HyperfineScheme) else scheme
        values = []
        for s in basis:
            if isinstance(scheme, HyperfineScheme) and s.F is not None:
                energy = scheme.energy(s.level, s.F)
            else:
                energy = fine.omega(s.level)
            if frame == 'rotating' and s.level != 'd':
                energy -= fine.omega_bd
            values.append(energy)
        return cls(np.array(values), basis)

    @classmethod
    def zero(cls, basis):
        return cls(np.zeros(basis.n), basis)

    @property
    def matrix(self):
        return np.diag(self.energies).astype(complex)


def check_density(rho, trace_tol=1e-9, herm_tol=1e-12, eig_tol=1e-9):
    """True when rho is Hermitian, trace one and tolerance-positive."""
    rho = np.asarray(rho)
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        return False
    if abs(np.trace(rho) - 1.0) > trace_tol:
        return False
    return bool(np.min(np.linalg.eigvalsh((rho + rho.conj().T) / 2)) >= -eig_tol)


def generator(H, L_list, basis=None):
    """Full Liouvillian on row-major vec(rho): -i(H x 1 - 1 x H^T) + sum L."""
    if H is None and not L_list:
        raise ValueError('generator needs a Hamiltonian or at least one superoperator')
    basis = basis or (H.basis if H is not None else L_list[0].basis)
    n = basis.n
    total = np.zeros((n * n, n * n), dtype=complex)
    if H is not None:
        ident = np.eye(n)
        h = H.matrix
        total += -1j * (np.kron(h, ident) - np.kron(ident, h.T))
    for superop in L_list:
        if superop.basis != basis:
            raise ValueError(f'superoperator {superop.label!r} is on a different basis')
        total += superop.matrix
    return total


def _max_rate(gen):
    return float(np.max(np.abs(np.diag(gen)))) if gen.size else 0.0


def _rk4_step(gen, y, h):
    k1 = gen @ y
    k2 = gen @ (y + 0.5 * h * k1)
    k3 = gen @ (y + 0.5 * h * k2)
    k4 = gen @ (y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _hermitize(rho):
    return 0.5 * (rho + rho.conj().T)


def propagate(rho0, H, L_list, t_final, dt, stride=1, monitor=True):
    """
    Fixed-step RK4 from t=0 to t_final; returns [(t, rho), ...] every ``stride`` steps.

    The step is t_final / ceil(t_final / dt) so the last sample lands on t_final.
    Each step re-Hermitizes rho as (rho + rho^dagger) / 2.
    """
    if not dt > 0:
        raise ValueError(f'dt must be positive, got {dt}')
    if t_final < 0:
        raise ValueError(f't_final must be nonnegative, got {t_final}')
    if stride < 1:
        raise ValueError(f'stride must be >= 1, got {stride}')
    rho = np.array(rho0, dtype=complex)
    n = rho.shape[0]
    gen = generator(H, L_list)
    if gen.shape[0] != n * n:
        raise ValueError(f'initial state is {n}x{n} but the generator acts on {gen.shape[0]} entries')

    steps = max(1, int(math.ceil(t_final / dt - 1e-9))) if t_final > 0 else 0
    h = t_final / steps if steps else dt
    max_rate = _max_rate(gen)
    if h * max_rate > STEP_WARN:
        logger.warning('⚠️ dt*max_rate = %.3g exceeds %.2g; RK4 accuracy may suffer', h * max_rate, STEP_WARN)
    logger.debug('Propagating n=%d for %d steps of %.3g', n, steps, h)

    trace0 = np.trace(rho)
    trajectory = [(0.0, rho.copy())]
    y = rho.reshape(-1)
    for step in range(1, steps + 1):
        y = _rk4_step(gen, y, h)
        rho = _hermitize(y.reshape(n, n))
        y = rho.reshape(-1)
        t = step * h
        if monitor:
            drift = abs(np.trace(rho) - trace0)
            if drift > TRACE_ABORT:
                raise NumericalAbort('trace drift during propagation', time=t, trace_drift=drift)
            min_eig = float(np.min(np.linalg.eigvalsh(rho)))
            if min_eig < NEGATIVITY_ABORT:
                raise NumericalAbort('density matrix lost positivity', time=t, trace_drift=drift,
                                     min_eigenvalue=min_eig)
        if step % stride == 0 or step == steps:
            trajectory.append((t, rho.copy()))
    return trajectory


def _relax_to_fixed_point(gen, n, degeneracy):
    """Long-time limit expm(gen T) applied to the mixed state, doubling T until ||d rho/dt|| < STEADY_TOL."""
    scale = float(np.max(np.abs(np.real(np.diag(gen))))) if gen.size else 0.0
    if scale == 0.0:
        raise DegenerateSteadyState(degeneracy)
    y0 = (np.eye(n, dtype=complex) / n).reshape(-1)
    horizon = 10.0 / scale
    for _ in range(MAX_DOUBLINGS):
        y = expm(gen * horizon) @ y0
        if np.max(np.abs(gen @ y)) < STEADY_TOL * max(1.0, scale):
            rho = _hermitize(y.reshape(n, n))
            return rho / np.trace(rho).real
        horizon *= 2.0
    raise DegenerateSteadyState(degeneracy)


def steady_state(H, L_list):
    """Trace-one null vector of the generator, or the long-time limit when degenerate."""
    gen = generator(H, L_list)
    n = int(round(math.sqrt(gen.shape[0])))
    before = get_memory_info()
    null = null_space(gen, rcond=NULL_RCOND)
    after = get_memory_info()
    logger.debug('Null space of %dx%d generator: dim %d (memory %.1fMB -> %.1fMB)',
                 gen.shape[0], gen.shape[1], null.shape[1], before['rss_mb'], after['rss_mb'])
    dim = null.shape[1]
    if dim == 1:
        rho = null[:, 0].reshape(n, n)
        trace = np.trace(rho)
        if abs(trace) < 1e-14:
            raise DegenerateSteadyState(dim)
        return _hermitize(rho / trace)
    logger.warning('⚠️ Generator null space has dimension %d; relaxing from the mixed state', dim)
    return _relax_to_fixed_point(gen, n, dim)


def residual(H, L_list, rho):
    """max |generator(rho)|, zero at a fixed point."""
    gen = generator(H, L_list)
    return float(np.max(np.abs(gen @ np.asarray(rho, dtype=complex).reshape(-1))))


@dataclass
class Populations:
    sublevels: dict
    levels: dict


def populations(rho, basis):
    diag = np.real(np.diag(rho))
    sublevels = {s.label(): float(diag[i]) for i, s in enumerate(basis)}
    levels = {}
    for i, s in enumerate(basis):
        levels[s.level] = levels.get(s.level, 0.0) + float(diag[i])
    return Populations(sublevels, levels)


def coherence(rho, basis, a, b):
    return complex(rho[basis.index(a), basis.index(b)])


def decay_curve(trajectory, basis, level):
    """(times, total population of ``level``) along a trajectory."""
    idx = basis.indices_of(level)
    times = np.array([t for t, _ in trajectory])
    values = np.array([float(np.real(np.trace(rho[np.ix_(idx, idx)]))) for _, rho in trajectory])
    return times, values


def fit_decay_rate(times, values, floor=1e-12):
    """Least-squares rate g of values ~ A exp(-g t) on points above ``floor``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = values > floor
    if np.count_nonzero(mask) < 2:
        raise ValueError('need at least two positive samples to fit a decay rate')
    slope, _ = np.polyfit(times[mask], np.log(values[mask]), 1)
    return -float(slope)


def initial_state(spec, basis):
    """
    Preset initial states:
      single:<level>:<M> or single:<level>:<F>:<M>   all population in one sublevel
      uniform:<level>                                 equal populations over a level
      thermal-ground                                  uniform over the d sublevels
    """
    parts = [p.strip() for p in str(spec).split(':')]
    n = basis.n
    rho = np.zeros((n, n), dtype=complex)
    try:
        if parts[0] == 'single' and len(parts) in (3, 4):
            if len(parts) == 3:
                target = basis.find(parts[1], half(parts[2]))
            else:
                target = basis.find(parts[1], half(parts[3]), half(parts[2]))
            i = basis.index(target)
            rho[i, i] = 1.0
            return rho
        if parts[0] == 'uniform' and len(parts) == 2:
            level = parts[1]
        elif parts[0] == 'thermal-ground' and len(parts) == 1:
            level = 'd'
        else:
            raise ConfigError(f'unknown initial state {spec!r}', section='run', key='initial')
    except (KeyError, ValueError) as e:
        raise ConfigError(f'bad initial state {spec!r}: {e}', section='run', key='initial')
    idx = basis.indices_of(level)
    if not idx:
        raise ConfigError(f'level {level!r} not in basis', section='run', key='initial')
    for i in idx:
        rho[i, i] = 1.0 / len(idx)
    return rho


def _num(x):
    return repr(float(x) + 0.0)


def write_trajectory_csv(trajectory, basis, handle, populations_only=False, header_lines=()):
    """t, trace, then either sublevel populations or re/im of every element in basis order."""
    for line in header_lines:
        handle.write(f'# {line}\n')
    n = basis.n
    writer = csv.writer(handle, lineterminator='\n')
    if populations_only:
        writer.writerow(['t', 'trace'] + [f'p[{label}]' for label in basis.labels()])
    else:
        columns = []
        for i in range(n):
            for j in range(n):
                columns += [f're_{i}_{j}', f'im_{i}_{j}']
        writer.writerow(['t', 'trace'] + columns)
    for t, rho in trajectory:
        row = [_num(t), _num(np.real(np.trace(rho)))]
        if populations_only:
            row += [_num(v) for v in np.real(np.diag(rho))]
        else:
            for value in rho.reshape(-1):
                row += [_num(value.real), _num(value.imag)]
        writer.writerow(row)
