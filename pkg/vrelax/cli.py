#!/usr/bin/env python3
"""
vrelax command line.

    vrelax <kmatrix|rates|superop|evolve|steady|sweep|doctor|serve>
           [--config PATH] [--preset NAME] [--out PATH] [--r R]
           [--quad-order N] [--workers N] [--verbose | --quiet]

Exit codes: 0 success, 1 doctor check failure, 2 config error, 3 numerical abort.
"""

import argparse
import cmath
import io
import logging
import os
import sys
import traceback

import numpy as np

from . import __version__
from .angular import HalfInt, clebsch_gordan, half, racah_w, triangle
from .config import ScenarioConfig, get_preset, preset_names
from .dynamics import (
    AtomicHamiltonian, decay_curve, fit_decay_rate, initial_state, propagate, residual,
    steady_state, write_trajectory_csv,
)
from .environment import ModeDensityModifier, quadrature_selfcheck
from .errors import ConfigError, VRelaxError
from .operators import (
    LevelScheme, Superoperator, interference_report, rates_spontaneous, write_rates_csv,
    write_superop_csv,
)
from .scenario import build_basis, build_rates, build_scheme, build_superops, k_for, processes, sweep

logger = logging.getLogger(__name__)

COMMANDS = ('kmatrix', 'rates', 'superop', 'evolve', 'steady', 'sweep', 'doctor', 'serve')


def normalization_header(config, command):
    """Comment block naming the absorbed S/N conventions of every physical output."""
    s, e = config.system, config.environment
    lines = [
        f'vrelax {__version__} {command}',
        'K normalized with dOmega/4pi: vacuum K^R = (2/3) delta, isotropic K^S = (2N/3) delta',
        f"rates in units of S: s_scale = {s['s_scale']!r} 1/s, dipole_mode = {s['dipole_mode']}",
        f"N (mean photons per mode) = {e['n_mean']!r}, field = {e['field']}, "
        f"mode_density = {e['mode_density']}",
    ]
    if e['k_literal']:
        lines.append('K injected literally: ' + ', '.join(repr(v) for v in e['k_literal']))
    return lines


def _frequencies(config):
    scheme = build_scheme(config)
    fine = getattr(scheme, 'fine', scheme)
    omegas = [('bd', fine.omega_bd)]
    if fine.j_c is not None and fine.omega_cd != fine.omega_bd:
        omegas.append(('cd', fine.omega_cd))
    return omegas


def cmd_kmatrix(config):
    """K table for every configured process at each transition frequency."""
    out = io.StringIO()
    for line in normalization_header(config, 'kmatrix'):
        out.write(f'# {line}\n')
    out.write('process,transition,omega,provenance,sigma,sigma_p,re,im\n')
    summary = {}
    for process in processes(config):
        for name, omega in _frequencies(config):
            k = k_for(config, process, omega)
            summary[f'{process}_{name}'] = [[float(v.real) for v in row] for row in k.entries]
            for sig, sig_p, re_value, im_value in k.to_rows():
                out.write(f'{process},{name},{omega!r},{k.provenance},{sig},{sig_p},'
                          f'{re_value + 0.0!r},{im_value + 0.0!r}\n')
    return out.getvalue(), {'k': summary}


def _report_lines(report):
    lines = []
    for b_label, c_label, value in report.rows():
        shown = 'undefined' if value is None else f'{value:.4f}'
        lines.append(f'p[{b_label},{c_label}] = {shown}')
    for a, b, value in report.off_diagonal:
        lines.append(f'off-diagonal {a.label()} {b.label()} |Gamma| = {abs(value):.6g} '
                     f'arg = {cmath.phase(value):.6g}')
    return lines


def cmd_rates(config):
    """RateSet CSV; the interference report is carried in the header block."""
    rates = build_rates(config)
    out = io.StringIO()
    summary = {}
    for i, (process, rate_set) in enumerate(rates.items()):
        report = interference_report(rate_set)
        header = normalization_header(config, 'rates') + [f'rate set: {rate_set.kind}'] + _report_lines(report)
        if i:
            out.write('\n')
        write_rates_csv(rate_set, out, header)
        summary[process] = {
            'p': {f'{b},{c}': v for b, c, v in report.rows()},
            'nonzero_off_diagonal': len(report.off_diagonal),
        }
    return out.getvalue(), summary


def _total_superop(config):
    superops = build_superops(config)
    if not superops:
        # process = none: no relaxation at all
        basis = build_basis(build_scheme(config))
        return Superoperator(np.zeros((basis.n ** 2, basis.n ** 2), dtype=complex), basis, 'none')
    total = superops[0]
    for other in superops[1:]:
        total = total + other
    return total


def cmd_superop(config):
    total = _total_superop(config)
    out = io.StringIO()
    write_superop_csv(total, out, normalization_header(config, 'superop'))
    return out.getvalue(), {'dimension': total.matrix.shape[0], 'label': total.label}


def cmd_evolve(config):
    scheme = build_scheme(config)
    basis = build_basis(scheme)
    H = AtomicHamiltonian.from_scheme(scheme, basis, config.run['frame'])
    L_list = build_superops(config)
    run = config.run
    rho0 = initial_state(run['initial'], basis)
    trajectory = propagate(rho0, H, L_list, run['t_final'], run['dt'], run['stride'])
    summary = {'samples': len(trajectory), 'final_trace': float(np.real(np.trace(trajectory[-1][1])))}
    upper = [lvl for lvl in ('b', 'c') if basis.indices_of(lvl)]
    for level in upper:
        times, values = decay_curve(trajectory, basis, level)
        try:
            summary[f'decay_rate_{level}'] = fit_decay_rate(times, values)
        except ValueError:
            summary[f'decay_rate_{level}'] = None
    out = io.StringIO()
    write_trajectory_csv(trajectory, basis, out, run['populations_only'],
                         normalization_header(config, 'evolve'))
    return out.getvalue(), summary


def cmd_steady(config):
    scheme = build_scheme(config)
    basis = build_basis(scheme)
    H = AtomicHamiltonian.from_scheme(scheme, basis, config.run['frame'])
    L_list = build_superops(config)
    rho = steady_state(H, L_list)
    res = residual(H, L_list, rho)
    out = io.StringIO()
    for line in normalization_header(config, 'steady') + [f'residual max|L rho| = {res:.3e}']:
        out.write(f'# {line}\n')
    out.write('i,j,row,col,re,im\n')
    labels = basis.labels()
    n = basis.n
    for i in range(n):
        for j in range(i, n):
            value = rho[i, j]
            if i == j or abs(value) > 1e-14:
                out.write(f'{i},{j},{labels[i]},{labels[j]},{float(value.real) + 0.0!r},'
                          f'{float(value.imag) + 0.0!r}\n')
    levels = {}
    for i, s in enumerate(basis):
        levels[s.level] = levels.get(s.level, 0.0) + float(rho[i, i].real)
    return out.getvalue(), {'residual': res, 'level_populations': levels}


def cmd_sweep(config):
    points = sweep(config)
    parameter = config.run['sweep_parameter']
    out = io.StringIO()
    for line in normalization_header(config, 'sweep'):
        out.write(f'# {line}\n')
    out.write('parameter,value,b,c,gamma_bb,gamma_cc,gamma_bc_re,gamma_bc_im,p\n')
    table = []
    for point in points:
        for (b, c), p in point.report.p.items():
            gbb = point.rates.gamma(b, b)
            gcc = point.rates.gamma(c, c)
            gbc = point.rates.gamma(b, c)
            shown = '' if p is None else repr(p)
            out.write(f'{parameter},{point.value!r},{b.label()},{c.label()},{gbb.real + 0.0!r},'
                      f'{gcc.real + 0.0!r},{gbc.real + 0.0!r},{gbc.imag + 0.0!r},{shown}\n')
            table.append({'value': point.value, 'b': b.label(), 'c': c.label(), 'p': p})
    return out.getvalue(), {'points': table}


class DoctorCheck:
    def __init__(self, name, status, detail=''):
        self.name = name
        self.status = status
        self.detail = detail

    def line(self):
        icon = {'PASS': '✅', 'FAIL': '❌', 'SKIP': '⏭️'}[self.status]
        return f'{icon} {self.status} {self.name}' + (f': {self.detail}' if self.detail else '')


def _cg_orthogonality(cap):
    worst = 0.0
    one = HalfInt(2)
    for tj1 in range(0, cap.twice + 1):
        j1 = HalfInt(tj1)
        for tj in range(abs(tj1 - 2), tj1 + 3, 2):
            J = HalfInt(tj)
            for M in J.projections():
                total = sum(clebsch_gordan(j1, m1, one, M - m1, J, M) ** 2
                            for m1 in j1.projections() if abs((M - m1).twice) <= 2)
                worst = max(worst, abs(total - 1.0))
    return worst


def _racah_orthogonality(cap):
    """sum_e (2e+1)(2f+1) W(abcd;ef) W(abcd;eg) = delta_fg over admissible f, g."""
    worst = 0.0
    small = [HalfInt(t) for t in range(0, cap.twice + 1)]
    wide = [HalfInt(t) for t in range(0, 2 * cap.twice + 1)]
    for a in small:
        for b in small:
            for c in small:
                for d in small:
                    admissible = [f for f in wide if triangle(a, c, f) and triangle(b, d, f)]
                    for f in admissible:
                        for g in admissible:
                            total = sum((e.twice + 1) * (f.twice + 1)
                                        * racah_w(a, b, c, d, e, f) * racah_w(a, b, c, d, e, g)
                                        for e in wide)
                            worst = max(worst, abs(total - (1.0 if f == g else 0.0)))
    return worst


def _diagonality(cap):
    worst = 0.0
    vacuum = ModeDensityModifier.vacuum()
    for td in range(0, cap.twice + 1):
        allowed = [t for t in range(td - 2, td + 3, 2) if 0 <= t <= cap.twice and not (t == 0 and td == 0)]
        for tb in allowed:
            for tc in allowed:
                # equal J_b, J_c interfere even in free space
                if tb == tc:
                    continue
                scheme = LevelScheme(HalfInt(tb), HalfInt(td), 1.0, HalfInt(tc), 1.0)
                rates = rates_spontaneous(scheme, vacuum)
                for (a, b), value in rates.upper.items():
                    if a != b:
                        worst = max(worst, abs(value))
    return worst


def cmd_doctor(quad_order=16, grid_cap='3/2'):
    """Self-checks; SKIP marks checks the grid cap is too small to run."""
    cap = half(grid_cap)
    checks = []
    try:
        report = quadrature_selfcheck(quad_order)
        status = 'PASS' if report.passed else 'FAIL'
        detail = ', '.join(f'{k}={v:.2e}' for k, v in report.deviations.items())
        checks.append(DoctorCheck('quadrature', status, detail))
    except VRelaxError as e:
        checks.append(DoctorCheck('quadrature', 'FAIL', str(e)))

    battery = (
        ('angular-cg-orthogonality', HalfInt(1), _cg_orthogonality),
        ('angular-racah-orthogonality', HalfInt(1), _racah_orthogonality),
        ('free-space-diagonality', HalfInt(2), _diagonality),
    )
    for name, needs, check in battery:
        if cap < needs:
            checks.append(DoctorCheck(name, 'SKIP', f'grid cap {cap} below {needs}'))
            continue
        worst = check(cap)
        checks.append(DoctorCheck(name, 'PASS' if worst < 1e-12 else 'FAIL', f'max deviation {worst:.2e}'))
    return checks


def _load_config(args):
    base = get_preset(args.preset) if args.preset else None
    if args.config:
        config = ScenarioConfig.load(args.config, base=base)
    elif base is not None:
        config = base
    else:
        raise ConfigError('give --config PATH and/or --preset NAME')
    if args.r is not None:
        config = config.with_values('environment', reflectivity=args.r)
    if args.quad_order is not None:
        config = config.with_values('run', quad_order=args.quad_order)
    if args.workers is not None:
        config = config.with_values('run', workers=args.workers)
    if args.out is not None:
        config = config.with_values('run', output=args.out)
    return config


def _write_output(text, path):
    if not path:
        sys.stdout.write(text)
        return
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(text)
    logger.info('💾 Wrote %s (%d bytes)', path, len(text.encode('utf-8')))


HANDLERS = {
    'kmatrix': cmd_kmatrix,
    'rates': cmd_rates,
    'superop': cmd_superop,
    'evolve': cmd_evolve,
    'steady': cmd_steady,
    'sweep': cmd_sweep,
}


def cmd_serve(port=None):
    from .service import create_app
    app = create_app()
    port = port or int(os.environ.get('PORT', 5000))
    logger.info('🚀 Serving vrelax on port %d', port)
    app.run(host='0.0.0.0', port=port)


def build_parser():
    parser = argparse.ArgumentParser(prog='vrelax', description='Relaxation and stimulated operators for degenerate V-type atoms')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help='scenario INI file')
    parser.add_argument('--preset', choices=preset_names())
    parser.add_argument('--out', help='output CSV path (stdout when omitted)')
    parser.add_argument('--r', type=float, help='cavity reflectivity override')
    parser.add_argument('--quad-order', type=int, dest='quad_order')
    parser.add_argument('--workers', type=int)
    parser.add_argument('--port', type=int)
    parser.add_argument('--grid-cap', default='3/2', help=argparse.SUPPRESS)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true')
    verbosity.add_argument('--quiet', action='store_true')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    logging.getLogger().setLevel(level)

    try:
        if args.command == 'doctor':
            checks = cmd_doctor(16 if args.quad_order is None else args.quad_order, args.grid_cap)
            for check in checks:
                print(check.line())
            failed = [c for c in checks if c.status == 'FAIL']
            if failed:
                print(f'❌ doctor failed: {failed[0].name}')
                return 1
            print('✅ all checks passed')
            return 0
        if args.command == 'serve':
            cmd_serve(args.port)
            return 0
        config = _load_config(args)
        logger.info('▶️ %s (%s)', args.command, config.path or 'preset')
        text, summary = HANDLERS[args.command](config)
        _write_output(text, config.run['output'])
        logger.info('✅ %s done: %s', args.command, summary)
        return 0
    except ConfigError as e:
        logger.error('❌ Config error: %s', e)
        return e.exit_code
    except VRelaxError as e:
        logger.error('❌ %s: %s', type(e).__name__, e)
        return e.exit_code
    except Exception as e:
        logger.error('❌ Unexpected error: %s', e)
        logger.error(traceback.format_exc())
        return 3


if __name__ == '__main__':
    sys.exit(main())
