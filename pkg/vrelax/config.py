"""
Scenario configuration: INI files with [system], [environment] and [run]
sections, named presets, and the equivalent JSON objects posted to the service.
"""

import math
import re
import logging
import configparser
from dataclasses import dataclass, field

from .angular import HalfInt, SIGMAS, half
from .errors import AngularDomainError, ConfigError

logger = logging.getLogger(__name__)

SECTIONS = ('system', 'environment', 'run')


def _parse_half_or_none(text):
    if text.strip().lower() == 'none':
        return None
    return half(text)


def _parse_bool(text):
    value = text.strip().lower()
    if value in ('true', 'yes', '1', 'on'):
        return True
    if value in ('false', 'no', '0', 'off'):
        return False
    raise ValueError(f'expected true or false, got {text!r}')


def _parse_float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f'expected a finite number, got {text!r}')
    return value


def _parse_float_or_none(text):
    if text.strip().lower() == 'none':
        return None
    return _parse_float(text)


def _parse_float_list(text):
    text = text.strip()
    if not text or text.lower() == 'none':
        return ()
    return tuple(_parse_float(part) for part in text.split(','))


def _parse_sigma_list(text):
    text = text.strip()
    if not text:
        return ()
    values = tuple(int(part) for part in text.split(','))
    for v in values:
        if v not in SIGMAS:
            raise ValueError(f'channel must be -1, 0 or 1, got {v}')
    return tuple(sorted(set(values)))


def _parse_f_energies(text):
    text = text.strip()
    if not text:
        return ()
    pairs = []
    for part in text.split(','):
        f_text, _, omega = part.partition(':')
        if not omega:
            raise ValueError(f'expected F:omega, got {part.strip()!r}')
        pairs.append((half(f_text), _parse_float(omega)))
    return tuple(sorted(pairs))


def _parse_str(text):
    return text.strip()


def _fmt_float(value):
    return repr(float(value))


def _fmt_half(value):
    return 'none' if value is None else str(value)


def _fmt_float_or_none(value):
    return 'none' if value is None else _fmt_float(value)


def _fmt_list(values):
    return ', '.join(_fmt_float(v) for v in values)


def _fmt_sigmas(values):
    return ', '.join(str(v) for v in values)


def _fmt_f_energies(pairs):
    return ', '.join(f'{f}:{_fmt_float(omega)}' for f, omega in pairs)


def _fmt_bool(value):
    return 'true' if value else 'false'


def _choice(*options):
    def parse(text):
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"must be one of {', '.join(options)}, got {text.strip()!r}")
        return value
    return parse


# key -> (parser, formatter, default)
SCHEMA = {
    'system': {
        'scheme': (_choice('fine', 'hyperfine'), str, 'fine'),
        'j_b': (half, _fmt_half, HalfInt(3)),
        'j_c': (_parse_half_or_none, _fmt_half, HalfInt(1)),
        'j_d': (half, _fmt_half, HalfInt(1)),
        'omega_bd': (_parse_float, _fmt_float, 1.0),
        'omega_cd': (_parse_float, _fmt_float, 1.0),
        'dipole_mode': (_choice('normalized', 'explicit'), str, 'normalized'),
        'mu_bd': (_parse_float, _fmt_float, 1.0),
        'mu_cd': (_parse_float, _fmt_float, 1.0),
        'alkali': (_parse_bool, _fmt_bool, True),
        's_scale': (_parse_float, _fmt_float, 1.0),
        'nuclear_spin': (half, _fmt_half, HalfInt(0)),
        'f_energies_b': (_parse_f_energies, _fmt_f_energies, ()),
        'f_energies_c': (_parse_f_energies, _fmt_f_energies, ()),
        'f_energies_d': (_parse_f_energies, _fmt_f_energies, ()),
    },
    'environment': {
        'mode_density': (_choice('vacuum', 'cavity', 'crystal'), str, 'vacuum'),
        'reflectivity': (_parse_float, _fmt_float, 0.0),
        'band_edge': (_parse_float, _fmt_float, 0.0),
        'curvature': (_parse_float, _fmt_float, 1.0),
        'gap_channels': (_parse_sigma_list, _fmt_sigmas, ()),
        'field': (_choice('none', 'isotropic', 'cos2', 'tabulated'), str, 'none'),
        # none: 0 for built-in fields, 1 (table values as given) for tabulated ones
        'n_mean': (_parse_float_or_none, _fmt_float_or_none, None),
        'field_table': (_parse_str, str, ''),
        'k_literal': (_parse_float_list, _fmt_list, ()),
    },
    'run': {
        'command': (_parse_str, str, ''),
        'process': (_choice('spontaneous', 'stimulated', 'both', 'none'), str, 'spontaneous'),
        'quad_order': (int, str, 16),
        'phi_nodes': (int, str, 64),
        'dt': (_parse_float, _fmt_float, 0.01),
        't_final': (_parse_float, _fmt_float, 1.0),
        'stride': (int, str, 1),
        'initial': (_parse_str, str, 'thermal-ground'),
        'frame': (_choice('rotating', 'lab'), str, 'rotating'),
        'output': (_parse_str, str, ''),
        'populations_only': (_parse_bool, _fmt_bool, False),
        'workers': (int, str, 1),
        'sweep_parameter': (_choice('reflectivity', 'band_edge'), str, 'reflectivity'),
        'sweep_values': (_parse_float_list, _fmt_list, ()),
    },
}


@dataclass
class ScenarioConfig:
    """Typed scenario; ``lines`` maps (section, key) to the source line for error anchoring."""

    system: dict
    environment: dict
    run: dict
    path: str = None
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def section(self, name):
        return getattr(self, name)

    def error(self, message, section=None, key=None):
        return ConfigError(message, path=self.path, line=self.lines.get((section, key)),
                           section=section, key=key)

    @classmethod
    def defaults(cls):
        return cls(*({key: spec[2] for key, spec in SCHEMA[s].items()} for s in SECTIONS))

    @classmethod
    def from_raw(cls, raw, path=None, lines=None, base=None):
        """Typed config from {section: {key: text}} layered over ``base`` (defaults when None)."""
        lines = dict(lines or {})
        config = base.copy() if base is not None else cls.defaults()
        config.path = path
        config.lines = lines
        for section, values in raw.items():
            if section not in SCHEMA:
                raise ConfigError(f'unknown section [{section}]', path=path,
                                  line=lines.get((section, None)), section=section)
            for key, text in values.items():
                if key not in SCHEMA[section]:
                    raise ConfigError('unknown key', path=path, line=lines.get((section, key)),
                                      section=section, key=key)
                parser = SCHEMA[section][key][0]
                try:
                    value = parser(str(text))
                except (ValueError, AngularDomainError) as e:
                    raise ConfigError(str(e), path=path, line=lines.get((section, key)),
                                      section=section, key=key)
                config.section(section)[key] = value
        config.validate()
        return config

    @classmethod
    def from_ini(cls, text, path=None, base=None):
        parser = configparser.ConfigParser(interpolation=None, strict=True,
                                           inline_comment_prefixes=('#', ';'))
        parser.optionxform = str
        try:
            parser.read_string(text, source=path or '<string>')
        except configparser.MissingSectionHeaderError as e:
            raise ConfigError('key outside any section', path=path, line=e.lineno)
        except configparser.DuplicateOptionError as e:
            raise ConfigError('duplicate key', path=path, line=e.lineno, section=e.section, key=e.option)
        except configparser.DuplicateSectionError as e:
            raise ConfigError('duplicate section', path=path, line=e.lineno, section=e.section)
        except configparser.ParsingError as e:
            line = e.errors[0][0] if e.errors else None
            raise ConfigError('unparseable line', path=path, line=line)
        raw = {s: dict(parser[s]) for s in parser.sections()}
        return cls.from_raw(raw, path=path, lines=_line_index(text), base=base)

    @classmethod
    def load(cls, path, base=None):
        try:
            with open(path, encoding='utf-8') as handle:
                text = handle.read()
        except OSError as e:
            raise ConfigError(f'cannot read config: {e.strerror}', path=str(path))
        return cls.from_ini(text, path=str(path), base=base)

    @classmethod
    def from_dict(cls, data, base=None):
        """JSON form: {"preset": name?, "system": {...}, "environment": {...}, "run": {...}}."""
        if not isinstance(data, dict):
            raise ConfigError('config must be a JSON object')
        data = dict(data)
        preset = data.pop('preset', None)
        if preset is not None:
            base = get_preset(preset)
        raw = {}
        for section, values in data.items():
            if not isinstance(values, dict):
                raise ConfigError('section must be an object', section=section)
            raw[section] = {k: _json_text(v) for k, v in values.items()}
        return cls.from_raw(raw, base=base)

    def copy(self):
        return ScenarioConfig(dict(self.system), dict(self.environment), dict(self.run),
                              self.path, dict(self.lines))

    def with_values(self, section, **values):
        """Copy with typed values replaced, revalidated."""
        config = self.copy()
        for key, value in values.items():
            if key not in SCHEMA[section]:
                raise ConfigError('unknown key', section=section, key=key)
            config.section(section)[key] = value
        config.validate()
        return config

    def to_ini(self):
        out = []
        for section in SECTIONS:
            out.append(f'[{section}]')
            values = self.section(section)
            for key, (_, fmt, _) in SCHEMA[section].items():
                out.append(f'{key} = {fmt(values[key])}')
            out.append('')
        return '\n'.join(out)

    def validate(self):
        s, e, r = self.system, self.environment, self.run
        for key in ('omega_bd', 's_scale'):
            if not s[key] > 0:
                raise self.error('must be positive', 'system', key)
        if s['j_c'] is not None and not s['omega_cd'] > 0:
            raise self.error('must be positive', 'system', 'omega_cd')
        for key in ('mu_bd', 'mu_cd'):
            if not s[key] > 0:
                raise self.error('must be positive', 'system', key)
        if s['nuclear_spin'].twice < 0:
            raise self.error('must be nonnegative', 'system', 'nuclear_spin')
        if s['j_c'] is None and s['f_energies_c']:
            raise self.error('level c is absent (j_c = none)', 'system', 'f_energies_c')
        if e['mode_density'] == 'cavity' and not 0.0 <= e['reflectivity'] < 1.0:
            raise self.error('cavity reflectivity must satisfy 0 <= r < 1', 'environment', 'reflectivity')
        if e['mode_density'] == 'crystal':
            if not e['band_edge'] > 0:
                raise self.error('band edge must be positive', 'environment', 'band_edge')
            if not e['curvature'] > 0:
                raise self.error('curvature must be positive', 'environment', 'curvature')
        if e['n_mean'] is not None and e['n_mean'] < 0:
            raise self.error('must be nonnegative', 'environment', 'n_mean')
        if e['field'] == 'tabulated' and not e['field_table']:
            raise self.error('tabulated field needs field_table', 'environment', 'field_table')
        if e['k_literal']:
            if len(e['k_literal']) not in (3, 9):
                raise self.error('needs 3 or 9 numbers', 'environment', 'k_literal')
            if e['field'] != 'none' and r['process'] != 'spontaneous':
                raise self.error('literal K excludes a field distribution for the stimulated process',
                                 'environment', 'k_literal')
        if r['quad_order'] < 4:
            raise self.error('must be >= 4', 'run', 'quad_order')
        if r['phi_nodes'] < 1:
            raise self.error('must be >= 1', 'run', 'phi_nodes')
        if not r['dt'] > 0:
            raise self.error('must be positive', 'run', 'dt')
        if r['t_final'] < 0:
            raise self.error('must be nonnegative', 'run', 't_final')
        if r['stride'] < 1:
            raise self.error('must be >= 1', 'run', 'stride')
        if r['workers'] < 1:
            raise self.error('must be >= 1', 'run', 'workers')


def _json_text(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ', '.join(_json_text(v) for v in value)
    if value is None:
        return 'none'
    return str(value)


_SECTION_RE = re.compile(r'^\s*\[([^\]]+)\]')
_KEY_RE = re.compile(r'^\s*([A-Za-z0-9_\-]+)\s*[=:]')


def _line_index(text):
    """(section, key) -> 1-based line number; (section, None) for headers."""
    index = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            index.setdefault((section, None), number)
            continue
        match = _KEY_RE.match(line)
        if match and section is not None:
            index.setdefault((section, match.group(1)), number)
    return index


# Sodium D lines: D2 (b, J=3/2) and D1 (c, J=1/2), rad/s
OMEGA_D2 = 2 * math.pi * 508.8487e12
OMEGA_D1 = 2 * math.pi * 508.3324e12

_DLINE_SYSTEM = f"""
[system]
scheme = fine
j_b = 3/2
j_c = 1/2
j_d = 1/2
omega_bd = {OMEGA_D2!r}
omega_cd = {OMEGA_D1!r}
s_scale = 1.0
"""

PRESETS = {
    'dline-paper-k': _DLINE_SYSTEM + f"""
[environment]
k_literal = {4 / 75!r}, {4 / 15!r}, {4 / 75!r}
n_mean = 1.0
[run]
command = rates
process = stimulated
""",
    'dline-isotropic': _DLINE_SYSTEM + """
[environment]
field = isotropic
n_mean = 1.0
[run]
command = rates
process = stimulated
""",
    'dline-cos2': _DLINE_SYSTEM + """
[environment]
field = cos2
n_mean = 1.0
[run]
command = rates
process = stimulated
""",
    'dline-cavity': _DLINE_SYSTEM + """
[environment]
mode_density = cavity
reflectivity = 0.9
[run]
command = rates
process = spontaneous
sweep_parameter = reflectivity
sweep_values = 0.0, 0.25, 0.5, 0.75, 0.9, 0.99
""",
    'dline-crystal': _DLINE_SYSTEM + f"""
[environment]
mode_density = crystal
band_edge = {OMEGA_D1 - 1e12!r}
curvature = 1.2
gap_channels = -1, 1
[run]
command = rates
process = spontaneous
sweep_parameter = band_edge
sweep_values = {OMEGA_D1 - 3e12!r}, {OMEGA_D1 - 1e12!r}, {OMEGA_D1 + 1e12!r}, {OMEGA_D2 + 1e12!r}
""",
    'dline-vacuum': _DLINE_SYSTEM.replace(f'omega_bd = {OMEGA_D2!r}', 'omega_bd = 1000.0').replace(
        f'omega_cd = {OMEGA_D1!r}', 'omega_cd = 998.0') + """
[environment]
mode_density = vacuum
[run]
command = evolve
process = spontaneous
initial = uniform:b
dt = 0.01
t_final = 10.0
stride = 10
""",
    'two-level': """
[system]
scheme = fine
j_b = 1
j_c = none
j_d = 0
omega_bd = 10.0
s_scale = 1.5
[environment]
mode_density = vacuum
[run]
command = evolve
process = spontaneous
initial = single:b:0
dt = 0.005
t_final = 1.0
stride = 10
populations_only = true
""",
    'sodium-hyperfine': _DLINE_SYSTEM.replace('scheme = fine', 'scheme = hyperfine') + """
nuclear_spin = 3/2
f_energies_d = 1:0.0, 2:11131000000.0
[environment]
mode_density = cavity
reflectivity = 0.9
[run]
command = rates
process = spontaneous
""",
}


def preset_names():
    return sorted(PRESETS)


def get_preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")
    return ScenarioConfig.from_ini(PRESETS[name], path=f'<preset {name}>')
