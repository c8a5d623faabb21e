#!/usr/bin/env python3
"""
Rate coefficients, interference parameter p and the relaxation/stimulated
superoperators of fine-structure V schemes.
"""

import io
import math

import numpy as np
import pytest

from vrelax.angular import HalfInt, clebsch_gordan, half
from vrelax.cli import _report_lines
from vrelax.config import OMEGA_D1, OMEGA_D2
from vrelax.environment import AngularDistribution, ModeDensityModifier, inject_k
from vrelax.errors import RateContractError, SchemeError
from vrelax.operators import (
    LevelScheme, RateSet, build_relaxation_superop, build_stimulated_superop, check_rates, fine_basis,
    interference_report, p_value, rates_fine, rates_spontaneous, rates_stimulated, rates_with_k,
    read_rates_csv, write_rates_csv,
)

VACUUM = ModeDensityModifier.vacuum()


def dline(**kwargs):
    params = dict(j_b='3/2', j_d='1/2', omega_bd=1000.0, j_c='1/2', omega_cd=998.0)
    params.update(kwargs)
    return LevelScheme(**params)


def _upper(rates, level, M):
    return rates.basis.find(level, M)


def _gamma(rates, l1, m1, l2, m2):
    return rates.gamma(_upper(rates, l1, m1), _upper(rates, l2, m2))


def _random_density(rng, n):
    x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


def test_injected_k_reproduces_closed_form_rates():
    rates = rates_with_k(dline(), inject_k([4 / 75, 4 / 15, 4 / 75]), kind='stimulated')
    assert abs(_gamma(rates, 'b', '3/2', 'b', '3/2') - 12 / 225) < 1e-15
    assert abs(_gamma(rates, 'b', '1/2', 'b', '1/2') - 44 / 225) < 1e-15
    assert abs(_gamma(rates, 'c', '1/2', 'c', '1/2') - 28 / 225) < 1e-15
    assert abs(abs(_gamma(rates, 'b', '1/2', 'c', '1/2')) - 16 * math.sqrt(2) / 225) < 1e-15
    report = interference_report(rates)
    for M in ('1/2', '-1/2'):
        assert abs(abs(p_value(report, M)) - 0.6446) < 1e-4


def test_diagonal_k_closed_forms():
    rng = np.random.default_rng(5)
    for _ in range(20):
        k_minus, k_zero, k_plus = rng.uniform(0, 2, 3)
        rates = rates_with_k(dline(), inject_k([k_minus, k_zero, k_plus]))
        assert abs(_gamma(rates, 'b', '3/2', 'b', '3/2') - k_plus) < 1e-12
        assert abs(_gamma(rates, 'b', '-3/2', 'b', '-3/2') - k_minus) < 1e-12
        assert abs(_gamma(rates, 'b', '1/2', 'b', '1/2') - (2 * k_zero + k_plus) / 3) < 1e-12
        assert abs(_gamma(rates, 'b', '-1/2', 'b', '-1/2') - (2 * k_zero + k_minus) / 3) < 1e-12
        assert abs(_gamma(rates, 'c', '1/2', 'c', '1/2') - (k_zero + 2 * k_plus) / 3) < 1e-12
        assert abs(_gamma(rates, 'c', '-1/2', 'c', '-1/2') - (k_zero + 2 * k_minus) / 3) < 1e-12
        expected_plus = math.sqrt(2) / 3 * abs(k_zero - k_plus)
        expected_minus = math.sqrt(2) / 3 * abs(k_zero - k_minus)
        assert abs(abs(_gamma(rates, 'b', '1/2', 'c', '1/2')) - expected_plus) < 1e-12
        assert abs(abs(_gamma(rates, 'b', '-1/2', 'c', '-1/2')) - expected_minus) < 1e-12


def test_vacuum_rates_are_diagonal():
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 50:
        td = int(rng.integers(0, 8))
        candidates = [t for t in range(td - 2, td + 3, 2) if t >= 0 and not (t == 0 and td == 0)]
        if len(candidates) < 2:
            continue
        tb, tc = rng.choice(candidates, 2, replace=False)
        scheme = LevelScheme(HalfInt(int(tb)), HalfInt(td), 1000.0, HalfInt(int(tc)), 990.0,
                             s_scale=float(rng.uniform(0.5, 2)))
        rates = rates_spontaneous(scheme, VACUUM)
        for (a, b), value in rates.upper.items():
            if a == b:
                assert abs(value - 2 / 3 * scheme.s_scale) < 1e-12
            else:
                assert abs(value) < 1e-12
        assert len(interference_report(rates).off_diagonal) == 0
        checked += 1


def test_isotropic_field_has_no_interference():
    rates = rates_stimulated(dline(), AngularDistribution.isotropic(3.0), VACUUM)
    report = interference_report(rates)
    assert all(abs(p) < 1e-12 for p in report.p.values())


def test_selection_rule_is_exact_for_diagonal_k():
    rates = rates_with_k(dline(), inject_k([0.3, 1.1, 0.7]), kind='stimulated')
    for (a, b) in rates.upper:
        assert a.M == b.M
    for (a, md1, b, md2) in rates.feeding:
        assert (a.M - b.M) == (md1.M - md2.M)
    check_rates(rates)


def test_check_rates_rejects_broken_feeding():
    rates = rates_spontaneous(dline(), ModeDensityModifier.planar_cavity(0.5))
    check_rates(rates)
    key = next(k for k in rates.feeding if k[1] == k[3])
    feeding = dict(rates.feeding)
    feeding[key] = feeding[key] * 1.5
    broken = RateSet(rates.kind, rates.basis, rates.upper, feeding, rates.ground)
    with pytest.raises(RateContractError):
        check_rates(broken)


def test_superoperators_preserve_trace_and_hermiticity():
    rng = np.random.default_rng(99)
    scheme = dline()
    relaxation = build_relaxation_superop(rates_spontaneous(scheme, ModeDensityModifier.planar_cavity(0.7)))
    stimulated = build_stimulated_superop(rates_stimulated(scheme, AngularDistribution.cos2(2.0), VACUUM))
    for superop in (relaxation, stimulated):
        for _ in range(100):
            rho = _random_density(rng, superop.n)
            out = superop.apply(rho)
            assert abs(np.trace(out)) < 1e-12
            assert np.max(np.abs(out - out.conj().T)) < 1e-12


def test_single_sublevel_depopulates_at_twice_gamma():
    rates = rates_spontaneous(dline(s_scale=1.5), VACUUM)
    superop = build_relaxation_superop(rates)
    basis = rates.basis
    top = basis.find('b', '3/2')
    i = basis.index(top)
    rho = np.zeros((basis.n, basis.n), dtype=complex)
    rho[i, i] = 1.0
    out = superop.apply(rho)
    assert abs(out[i, i] + 2 * rates.gamma(top, top)) < 1e-14
    assert abs(rates.gamma(top, top) - 1.0) < 1e-14


def test_vacuum_superop_matches_jump_operator_oracle():
    scheme = dline(s_scale=0.8)
    rates = rates_spontaneous(scheme, VACUUM)
    superop = build_relaxation_superop(rates)
    basis = fine_basis(scheme)
    n = basis.n
    jumps = {}
    for sig in (-1, 0, 1):
        A = np.zeros((n, n))
        for a in basis:
            if a.level == 'd':
                continue
            for md in basis.of_level('d'):
                if a.M.twice - md.M.twice == 2 * sig:
                    A[basis.index(md), basis.index(a)] = clebsch_gordan(
                        md.J, md.M, 1, HalfInt(2 * sig), a.J, a.M)
        jumps[sig] = A
    gamma = scheme.s_scale * 2 / 3
    rng = np.random.default_rng(8)
    for _ in range(10):
        rho = _random_density(rng, n)
        oracle = np.zeros((n, n), dtype=complex)
        for A in jumps.values():
            AdA = A.T @ A
            oracle += gamma * (2 * A @ rho @ A.T - AdA @ rho - rho @ AdA)
        assert np.max(np.abs(superop.apply(rho) - oracle)) < 1e-13


def test_photonic_crystal_breaks_pair_symmetry():
    scheme = dline(omega_bd=OMEGA_D2, omega_cd=OMEGA_D1)
    crystal = ModeDensityModifier.photonic_crystal(OMEGA_D1 - 1e12, 1.2, (-1, 1))
    rates = rates_spontaneous(scheme, crystal)
    gbc = _gamma(rates, 'b', '1/2', 'c', '1/2')
    gcb = _gamma(rates, 'c', '1/2', 'b', '1/2')
    assert abs(gbc) > 0 and abs(gcb) > 0
    assert abs(gbc - gcb.conjugate()) > 1e-3 * abs(gbc)
    check_rates(rates)


def test_band_edge_between_transitions_closes_circular_channels_of_c():
    omega_cd = OMEGA_D1
    omega_bd = 1.01 * OMEGA_D1
    crystal = ModeDensityModifier.photonic_crystal(1.005 * OMEGA_D1, 1.2, (-1, 1))
    rates = rates_spontaneous(dline(omega_bd=omega_bd, omega_cd=omega_cd), crystal)
    check_rates(rates)
    ground = rates.basis.of_level('d')
    uppers = [s for s in rates.basis if s.level != 'd']
    closed = 0
    for a in uppers:
        for md1 in ground:
            for b in rates.basis.of_level('c'):
                for md2 in ground:
                    sig_a = (a.M.twice - md1.M.twice) // 2
                    sig_b = (b.M.twice - md2.M.twice) // 2
                    if sig_a == 0 and sig_b == 0:
                        continue
                    closed += 1
                    assert rates.feed(a, md1, b, md2) == 0, (a.label(), b.label())
    assert closed > 0
    for M in ('1/2', '-1/2'):
        gbc = _gamma(rates, 'b', M, 'c', M)
        gcb = _gamma(rates, 'c', M, 'b', M)
        assert abs(gbc) > 0 and abs(gcb) > 0
        assert gbc != gcb.conjugate()
        assert abs(gcb - gbc.conjugate()) > 1e-3 * abs(gcb)


def test_axially_asymmetric_k_keeps_complex_coherences():
    k = inject_k([1, 0.5j, 0, -0.5j, 1, 0, 0, 0, 1])
    rates = rates_with_k(dline(), k)
    check_rates(rates)
    report = interference_report(rates)
    assert any(abs(value.imag) > 1e-3 for _, _, value in report.off_diagonal)
    for b in rates.basis.of_level('b'):
        for c in rates.basis.of_level('c'):
            if b.M == c.M:
                assert rates.gamma(b, c).imag == 0
    assert all(value is None or isinstance(value, float) for value in report.p.values())
    lines = [line for line in _report_lines(report) if line.startswith('off-diagonal')]
    assert lines and all(' arg = ' in line for line in lines)


def test_explicit_dipoles_give_cubic_frequency_ratio():
    scheme = dline(omega_bd=1000.0, omega_cd=900.0, dipole_mode='explicit', mu_bd=2.0, mu_cd=math.sqrt(2))
    rates = rates_spontaneous(scheme, ModeDensityModifier.planar_cavity(0.5))
    for M in ('1/2', '-1/2'):
        gbc = _gamma(rates, 'b', M, 'c', M)
        gcb = _gamma(rates, 'c', M, 'b', M)
        assert abs(gbc) > 1e-6
        assert abs(gbc / gcb - (900.0 / 1000.0) ** 3) < 1e-12


def test_alkali_dipole_constraint():
    with pytest.raises(SchemeError):
        dline(dipole_mode='explicit', mu_bd=2.0, mu_cd=2.0)
    dline(dipole_mode='explicit', mu_bd=2.0, mu_cd=2.0, alkali=False)


def test_dipole_forbidden_scheme_is_rejected():
    with pytest.raises(SchemeError):
        LevelScheme('5/2', '1/2', 1000.0)
    with pytest.raises(SchemeError):
        LevelScheme(0, 0, 1000.0)


def test_rate_scaling_is_exact():
    mod = ModeDensityModifier.planar_cavity(0.6)
    base = rates_spontaneous(dline(), mod)
    base_p = interference_report(base).p
    for factor in (2.0, 4.0):
        scaled = rates_spontaneous(dline().scaled(factor), mod)
        assert set(scaled.upper) == set(base.upper)
        for key, value in base.upper.items():
            assert scaled.upper[key] == factor * value
        assert interference_report(scaled).p == base_p


def test_cavity_interference_approaches_unity():
    previous = 0.0
    for r in (0.0, 0.25, 0.5, 0.75, 0.9, 0.99):
        rates = rates_spontaneous(dline(), ModeDensityModifier.planar_cavity(r))
        p = abs(p_value(interference_report(rates), '1/2'))
        assert p >= previous
        previous = p
    assert previous > 0.98


def test_empty_field_gives_zero_map():
    rates = rates_stimulated(dline(), AngularDistribution.isotropic(0.0), VACUUM)
    assert rates.max_rate() == 0.0
    superop = build_stimulated_superop(rates)
    assert not np.any(superop.matrix)
    report = interference_report(rates)
    assert all(value is None for value in report.p.values())


def test_relaxation_superop_needs_matching_basis():
    rates = rates_spontaneous(dline(), VACUUM)
    other = fine_basis(LevelScheme('3/2', '1/2', 1000.0))
    with pytest.raises(RateContractError):
        build_relaxation_superop(rates, other)
    with pytest.raises(RateContractError):
        build_stimulated_superop(rates)


def test_rate_csv_read_back():
    scheme = dline()
    rates = rates_stimulated(scheme, AngularDistribution.cos2(1.0), VACUUM)
    handle = io.StringIO()
    write_rates_csv(rates, handle, header_lines=['p(M=1/2) = test'])
    handle.seek(0)
    restored = read_rates_csv(handle, fine_basis(scheme), kind='stimulated')
    assert restored.upper == rates.upper
    assert restored.feeding == rates.feeding
    assert restored.ground == rates.ground
    check_rates(restored)


def test_fine_rates_with_separate_k_per_pair():
    k_b = inject_k([0.1, 0.2, 0.3])
    k_c = inject_k([0.4, 0.5, 0.6])
    rates = rates_fine(dline(), k_b, k_c, inject_k([0.0, 0.0, 0.0]))
    assert abs(_gamma(rates, 'b', '3/2', 'b', '3/2') - 0.3) < 1e-15
    assert abs(_gamma(rates, 'c', '-1/2', 'c', '-1/2') - (0.5 + 2 * 0.4) / 3) < 1e-15
    assert _gamma(rates, 'b', '1/2', 'c', '1/2') == 0
    assert half('1/2') in [s.M for s in rates.basis.of_level('c')]


if __name__ == '__main__':
    import sys
    print('🔍 RATE AND SUPEROPERATOR CHECKS')
    print('=' * 50)
    failures = 0
    for name, func in list(globals().items()):
        if name.startswith('test_') and callable(func):
            try:
                func()
                print(f'✅ {name}')
            except Exception as e:
                failures += 1
                print(f'❌ {name}: {e}')
    sys.exit(1 if failures else 0)
