import json
import logging
import sys

from typing import Dict, Iterable, Optional

import jsonpath_ng.ext as jsonpath

from glyphline.errors import InvalidInput
from glyphline.neuralnet import SolverConfig
from glyphline.pipeline import StageConfig
from glyphline.utils import dict_merge

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)


def defaults() -> Dict:
    return {
        'stages': StageConfig().to_dict(),
        'solver': {
            'region3': SolverConfig.region().to_dict(),
            'glyph2': SolverConfig.symbolnet().to_dict(),
        },
    }


def read_config_file(path: str) -> Dict:
    """Parse a JSON or TOML (by .toml suffix) configuration file"""
    try:
        if path.endswith('.toml'):
            with open(path, 'rb') as f:
                return tomllib.load(f)
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise InvalidInput(f"config file not found: {path}")
    except (ValueError, tomllib.TOMLDecodeError) as err:
        raise InvalidInput(f"cannot parse config {path}: {err}")


def parse_override(override: str):
    """Split `EXPR=VALUE`; VALUE is JSON when it parses, a string otherwise"""
    if '=' not in override:
        raise InvalidInput(f"override '{override}' is not of the form EXPR=VALUE")
    expr, raw = override.split('=', 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return expr.strip(), value


def apply_overrides(cfg: Dict, overrides: Iterable[str]) -> Dict:
    for override in overrides:
        expr, value = parse_override(override)
        if not expr.startswith('$'):
            expr = f'$.{expr}'
        try:
            path = jsonpath.parse(expr)
        except Exception as err:
            raise InvalidInput(f"bad JSONPath '{expr}': {err}")
        logger.debug(f"config override {expr} = {value!r}")
        path.update_or_create(cfg, value)
    return cfg


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> Dict:
    """Defaults, deep-merged with a config file, then JSONPath overrides

    Returns:
        Dict: `{"stages": {...}, "solver": {"region3": {...}, "glyph2": {...}}}`,
            checked by building the typed configs from it
    """
    cfg = defaults()
    if path:
        cfg = dict_merge(cfg, read_config_file(path))
    cfg = apply_overrides(cfg, overrides)
    stage_config(cfg)
    for role in ('region3', 'glyph2'):
        solver_config(cfg, role)
    return cfg


def stage_config(cfg: Dict) -> StageConfig:
    return StageConfig.from_dict(cfg.get('stages', {}))


def solver_config(cfg: Dict, role: str) -> SolverConfig:
    base = SolverConfig.region() if role == 'region3' else SolverConfig.symbolnet()
    settings = dict_merge(base.to_dict(), cfg.get('solver', {}).get(role, {}))
    try:
        return SolverConfig.from_dict(settings)
    except (TypeError, ValueError) as err:
        raise InvalidInput(f"invalid {role} solver settings: {err}")
