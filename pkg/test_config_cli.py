#!/usr/bin/env python3
"""
Scenario files, presets and the vrelax command line: INI round trips,
line-anchored config errors, exit codes, deterministic CSV output and the
doctor battery.
"""

from pathlib import Path

import pytest

from vrelax.cli import (
    cmd_doctor, cmd_evolve, cmd_kmatrix, cmd_rates, cmd_steady, cmd_superop, cmd_sweep, main,
)
from vrelax.config import ScenarioConfig, get_preset, preset_names
from vrelax.errors import ConfigError

SCENARIOS = Path(__file__).resolve().parent / 'scenarios'
INJECTED_K_P = 0.6446


def _sections(config):
    return config.system, config.environment, config.run


def test_every_preset_round_trips_through_ini():
    for name in preset_names():
        config = get_preset(name)
        again = ScenarioConfig.from_ini(config.to_ini())
        assert _sections(again) == _sections(config), name


def test_unknown_key_reports_its_line():
    text = '[system]\nj_b = 3/2\nj_bee = 1/2\n'
    with pytest.raises(ConfigError) as excinfo:
        ScenarioConfig.from_ini(text, path='broken.ini')
    assert excinfo.value.line == 3
    assert str(excinfo.value).startswith('broken.ini:3: [system] j_bee')


def test_unknown_section_and_bad_values_are_rejected():
    with pytest.raises(ConfigError) as excinfo:
        ScenarioConfig.from_ini('[system]\nj_b = 3/2\n[extras]\nx = 1\n')
    assert excinfo.value.line == 3
    for text in ('[system]\nj_b = three halves\n',
                 '[environment]\nmode_density = cavity\nreflectivity = 1.0\n',
                 '[run]\nprocess = sometimes\n',
                 '[run]\ndt = nan\n',
                 '[environment]\nk_literal = 1, 2\n'):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_ini(text)


def test_json_config_layers_over_preset():
    config = ScenarioConfig.from_dict({'preset': 'dline-cavity', 'environment': {'reflectivity': 0.5},
                                       'run': {'sweep_values': [0.1, 0.2]}})
    assert config.environment['reflectivity'] == 0.5
    assert config.run['sweep_values'] == (0.1, 0.2)
    assert config.system['j_b'] == get_preset('dline-cavity').system['j_b']
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({'preset': 'no-such-preset'})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({'system': 'fine'})


def test_scenario_files_load():
    for path in sorted(SCENARIOS.glob('*.ini')):
        config = ScenarioConfig.load(path)
        assert config.path == str(path)


def test_rates_command_reproduces_injected_k_values(tmp_path):
    out = tmp_path / 'rates.csv'
    assert main(['rates', '--preset', 'dline-paper-k', '--out', str(out), '--quiet']) == 0
    text = out.read_text(encoding='utf-8')
    assert text.startswith('# vrelax')
    assert 'K injected literally' in text
    _, summary = cmd_rates(get_preset('dline-paper-k'))
    values = [v for v in summary['stimulated']['p'].values()]
    assert len(values) == 2
    assert all(abs(abs(v) - INJECTED_K_P) < 1e-4 for v in values)


def test_rates_output_is_deterministic():
    for name in ('dline-paper-k', 'dline-cos2'):
        config = get_preset(name)
        first, _ = cmd_rates(config)
        second, _ = cmd_rates(config)
        parallel, _ = cmd_rates(config.with_values('run', workers=8))
        assert first == second == parallel, name


def test_doctor_passes_by_default():
    assert main(['doctor', '--quiet']) == 0
    checks = cmd_doctor()
    assert all(c.status == 'PASS' for c in checks)


def test_doctor_fails_on_coarse_quadrature():
    assert main(['doctor', '--quad-order', '2', '--quiet']) == 1
    checks = {c.name: c for c in cmd_doctor(quad_order=2)}
    assert checks['quadrature'].status == 'FAIL'
    assert checks['quadrature'].line().startswith('❌ FAIL quadrature')


def test_doctor_skips_checks_above_grid_cap():
    checks = {c.name: c.status for c in cmd_doctor(grid_cap='1/2')}
    assert checks['free-space-diagonality'] == 'SKIP'
    assert checks['angular-cg-orthogonality'] == 'SKIP'
    assert checks['quadrature'] == 'PASS'


def test_config_errors_exit_two(tmp_path):
    assert main(['rates', '--config', str(tmp_path / 'missing.ini'), '--quiet']) == 2
    bad = tmp_path / 'bad.ini'
    bad.write_text('[run]\nstride = 0\n', encoding='utf-8')
    assert main(['evolve', '--config', str(bad), '--quiet']) == 2
    assert main(['rates', '--quiet']) == 2


def test_two_level_evolve_recovers_decay_rate(tmp_path):
    _, summary = cmd_evolve(get_preset('two-level'))
    assert abs(summary['decay_rate_b'] - 2.0) < 1e-4
    assert abs(summary['final_trace'] - 1.0) < 1e-12
    out = tmp_path / 'decay.csv'
    assert main(['evolve', '--config', str(SCENARIOS / 'two_level_decay.ini'), '--out', str(out), '--quiet']) == 0
    rows = [line for line in out.read_text(encoding='utf-8').splitlines() if not line.startswith('#')]
    assert rows[0].startswith('t,trace,')
    # t_final 2.0, dt 0.005, stride 20 -> 21 samples
    assert len(rows) == 1 + 21


def test_steady_command_on_cos2_scenario():
    config = ScenarioConfig.load(SCENARIOS / 'dline_cos2.ini')
    text, summary = cmd_steady(config)
    assert summary['residual'] < 1e-10
    assert abs(sum(summary['level_populations'].values()) - 1.0) < 1e-12
    assert summary['level_populations']['b'] > 0
    assert '# residual max|L rho|' in text
    assert 'i,j,row,col,re,im' in text


def test_superop_command_writes_basis_legend():
    text, summary = cmd_superop(get_preset('two-level'))
    assert summary['dimension'] == 16
    assert '# 0: d(J=0,M=0)' in text
    rows = [line for line in text.splitlines() if not line.startswith('#')]
    assert len(rows) == 1 + 16


def test_superop_without_relaxation_is_the_zero_map():
    config = get_preset('two-level').with_values('run', process='none')
    text, summary = cmd_superop(config)
    assert summary == {'dimension': 16, 'label': 'none'}
    rows = [line for line in text.splitlines() if not line.startswith('#')]
    assert len(rows) == 1 + 16
    for row in rows[1:]:
        assert all(cell == '0.0+0.0j' for cell in row.split(',')[1:]), row


def test_doctor_quad_order_zero_is_not_replaced_by_default():
    assert main(['doctor', '--quad-order', '0', '--quiet']) == 1
    checks = {c.name: c for c in cmd_doctor(quad_order=0)}
    assert checks['quadrature'].status == 'FAIL'


def test_seed_key_is_rejected():
    with pytest.raises(ConfigError) as excinfo:
        ScenarioConfig.from_ini('[run]\nseed = 1\n')
    assert excinfo.value.line == 2


def _tabulated_scenario(**environment):
    config = ScenarioConfig.load(SCENARIOS / 'tabulated_field.ini')
    return config.with_values('environment', field_table=str(SCENARIOS / 'cos2_field.csv'), **environment)


def test_tabulated_scenario_matches_cos2_closed_form():
    text, summary = cmd_kmatrix(_tabulated_scenario())
    k = summary['k']['stimulated_bd']
    expected = (4 / 15, 2 / 15, 4 / 15)
    for i in range(3):
        for j in range(3):
            if i == j:
                assert abs(k[i][j] - expected[i]) < 2e-3, (i, k[i][i])
            else:
                assert abs(k[i][j]) < 1e-12
    assert abs(k[0][0] - k[2][2]) < 1e-12
    assert 'tabulated' in text


def test_tabulated_photon_number_scales_table():
    table_values = cmd_kmatrix(_tabulated_scenario(n_mean=None))[1]['k']['stimulated_bd']
    unit = cmd_kmatrix(_tabulated_scenario(n_mean=1.0))[1]['k']['stimulated_bd']
    doubled = cmd_kmatrix(_tabulated_scenario(n_mean=2.0))[1]['k']['stimulated_bd']
    empty = cmd_kmatrix(_tabulated_scenario(n_mean=0.0))[1]['k']['stimulated_bd']
    assert table_values == unit
    assert table_values[1][1] > 0
    assert all(value == 0.0 for row in empty for value in row)
    for i in range(3):
        assert abs(doubled[i][i] - 2 * unit[i][i]) < 1e-12


def test_n_mean_none_round_trips_through_ini():
    config = _tabulated_scenario(n_mean=None)
    text = config.to_ini()
    assert 'n_mean = none' in text
    assert ScenarioConfig.from_ini(text).environment['n_mean'] is None


def test_kmatrix_isotropic():
    text, summary = cmd_kmatrix(get_preset('dline-isotropic'))
    k = summary['k']['stimulated_bd']
    for i in range(3):
        for j in range(3):
            assert abs(k[i][j] - (2 / 3 if i == j else 0.0)) < 1e-12
    assert 'stimulated_cd' in summary['k']
    assert 'process,transition,omega,provenance,sigma,sigma_p,re,im' in text


def test_cavity_reflectivity_override(tmp_path):
    out = tmp_path / 'cavity.csv'
    assert main(['rates', '--preset', 'dline-cavity', '--r', '0.99', '--out', str(out), '--quiet']) == 0
    config = get_preset('dline-cavity').with_values('environment', reflectivity=0.99)
    _, summary = cmd_rates(config)
    assert all(abs(p) > 0.98 for p in summary['spontaneous']['p'].values())


def test_sweep_rows():
    text, summary = cmd_sweep(get_preset('dline-cavity'))
    assert len(summary['points']) == 12
    rows = [line for line in text.splitlines() if not line.startswith('#')]
    assert len(rows) == 1 + 12
    values = [point['value'] for point in summary['points']]
    assert values[::2] == [0.0, 0.25, 0.5, 0.75, 0.9, 0.99]
    assert abs(summary['points'][0]['p']) < 1e-12
    magnitudes = [abs(point['p']) for point in summary['points'][::2]]
    assert magnitudes == sorted(magnitudes)


def test_sweep_needs_matching_mode_density():
    with pytest.raises(ConfigError):
        cmd_sweep(get_preset('dline-cos2').with_values('run', sweep_values=(0.5,)))


if __name__ == '__main__':
    import inspect
    import sys
    import tempfile
    print('🔍 CONFIG AND CLI CHECKS')
    print('=' * 50)
    failures = 0
    for name, func in list(globals().items()):
        if name.startswith('test_') and callable(func):
            try:
                if 'tmp_path' in inspect.signature(func).parameters:
                    func(Path(tempfile.mkdtemp()))
                else:
                    func()
                print(f'✅ {name}')
            except Exception as e:
                failures += 1
                print(f'❌ {name}: {e}')
    sys.exit(1 if failures else 0)
