"""Build physics objects from a ScenarioConfig; shared by the CLI and the HTTP service."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .environment import (
    AngularDistribution, ModeDensityModifier, inject_k, k_spontaneous, k_stimulated,
    load_tabulated_csv, scale_k,
)
from .errors import ConfigError, EnvironmentDomainError, SchemeError
from .operators import (
    HyperfineScheme, LevelScheme, assemble_rates, frequency_resolved, build_relaxation_superop,
    build_stimulated_superop, fine_basis, hyperfine_basis, interference_report,
)

logger = logging.getLogger(__name__)


def build_scheme(config):
    s = config.system
    try:
        fine = LevelScheme(
            j_b=s['j_b'], j_d=s['j_d'], omega_bd=s['omega_bd'],
            j_c=s['j_c'], omega_cd=s['omega_cd'] if s['j_c'] is not None else None,
            s_scale=s['s_scale'], dipole_mode=s['dipole_mode'],
            mu_bd=s['mu_bd'], mu_cd=s['mu_cd'], alkali=s['alkali'],
        )
        if s['scheme'] == 'fine':
            return fine
        energies = {}
        for level in ('b', 'c', 'd'):
            pairs = s[f'f_energies_{level}']
            if pairs:
                energies[level] = dict(pairs)
        return HyperfineScheme(fine, s['nuclear_spin'], energies)
    except SchemeError as e:
        raise ConfigError(str(e), path=config.path, section='system')


def build_basis(scheme):
    return hyperfine_basis(scheme) if isinstance(scheme, HyperfineScheme) else fine_basis(scheme)


def build_modifier(config):
    e = config.environment
    try:
        if e['mode_density'] == 'cavity':
            return ModeDensityModifier.planar_cavity(e['reflectivity'])
        if e['mode_density'] == 'crystal':
            return ModeDensityModifier.photonic_crystal(e['band_edge'], e['curvature'], e['gap_channels'])
        return ModeDensityModifier.vacuum()
    except EnvironmentDomainError as err:
        raise ConfigError(str(err), path=config.path, section='environment', key='mode_density')


def build_distribution(config):
    e = config.environment
    kind = e['field']
    n_mean = e['n_mean']
    if kind == 'isotropic':
        return AngularDistribution.isotropic(0.0 if n_mean is None else n_mean)
    if kind == 'cos2':
        return AngularDistribution.cos2(0.0 if n_mean is None else n_mean)
    if kind == 'tabulated':
        return load_tabulated_csv(e['field_table'], scale=1.0 if n_mean is None else n_mean)
    return None


def _literal_k(config, mod, omega):
    k = inject_k(config.environment['k_literal'])
    return k if mod.kind == 'vacuum' else scale_k(k, mod, omega)


def k_for(config, process, omega, mod=None, dist=None):
    """The K matrix the given process uses at ``omega``."""
    mod = mod or build_modifier(config)
    literal = bool(config.environment['k_literal'])
    if process == 'spontaneous':
        if literal and config.run['process'] == 'spontaneous':
            return _literal_k(config, mod, omega)
        return k_spontaneous(mod, omega)
    if literal:
        return _literal_k(config, mod, omega)
    dist = dist if dist is not None else build_distribution(config)
    if dist is None:
        dist = AngularDistribution.isotropic(0.0)
    return k_stimulated(dist, mod, omega, config.run['quad_order'], config.run['phi_nodes'])


def processes(config):
    process = config.run['process']
    if process == 'none':
        return ()
    return ('spontaneous', 'stimulated') if process == 'both' else (process,)


def build_rates(config, scheme=None, workers=None):
    """{'spontaneous': RateSet, 'stimulated': RateSet} for the configured processes."""
    scheme = scheme or build_scheme(config)
    basis = build_basis(scheme)
    workers = workers or config.run['workers']
    mod = build_modifier(config)
    dist = build_distribution(config)
    out = {}
    for process in processes(config):
        k_for_pair = frequency_resolved(scheme, lambda omega, p=process: k_for(config, p, omega, mod, dist))
        kind = 'relaxation' if process == 'spontaneous' else 'stimulated'
        out[process] = assemble_rates(scheme, basis, k_for_pair, kind, workers)
    return out


def build_superops(config, rates=None):
    rates = rates or build_rates(config)
    superops = []
    if 'spontaneous' in rates:
        superops.append(build_relaxation_superop(rates['spontaneous']))
    if 'stimulated' in rates:
        superops.append(build_stimulated_superop(rates['stimulated']))
    return superops


@dataclass
class SweepPoint:
    value: float
    report: object
    rates: object


def _sweep_one(config, parameter, value):
    point_config = config.with_values('environment', **{parameter: value})
    process = 'stimulated' if config.run['process'] == 'stimulated' else 'spontaneous'
    point_config = point_config.with_values('run', process=process, workers=1)
    rates = build_rates(point_config)[process]
    return SweepPoint(value, interference_report(rates), rates)


def sweep(config, parameter=None, values=None, workers=None):
    """Rates and interference report per parameter value, in input order."""
    parameter = parameter or config.run['sweep_parameter']
    values = tuple(values if values is not None else config.run['sweep_values'])
    if not values:
        raise ConfigError('sweep needs at least one value', path=config.path, section='run', key='sweep_values')
    expected = {'reflectivity': 'cavity', 'band_edge': 'crystal'}[parameter]
    if config.environment['mode_density'] != expected:
        raise ConfigError(f'sweeping {parameter} needs mode_density = {expected}',
                          path=config.path, section='environment', key='mode_density')
    workers = workers or config.run['workers']
    logger.info('🔁 Sweeping %s over %d values with %d workers', parameter, len(values), workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda v: _sweep_one(config, parameter, v), values))
    return [_sweep_one(config, parameter, v) for v in values]
