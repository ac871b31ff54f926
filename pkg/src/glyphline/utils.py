import json
import logging
import os
import pkgutil
import tempfile

from collections.abc import Mapping
from functools import lru_cache
from string import Formatter, Template
from typing import Dict, List, Union

import jsonschema
import numpy as np

from glyphline.errors import InvalidInput

logger = logging.getLogger(__name__)


def get_path(record: Dict, template: str='${id}') -> str:
    """Get an output path name from a report-like record and a template string

    Args:
        record (Dict): A record with at least the keys used by the template
            (typically a PipelineReport: `id`, `stage`).
        template (str, optional): Path template using variables referencing
            record fields. Defaults to '${id}'.

    Returns:
        [str]: A path name
    """
    subs = {}
    for key in [i[1] for i in Formatter().parse(template.rstrip('/')) if i[1] is not None]:
        if key not in record:
            raise InvalidInput(f"Template key '{key}' not in record")
        subs[key] = record[key]
    return Template(template).substitute(**subs)


def atomic_write(path: str, data: Union[bytes, str]) -> str:
    """Write data to path so readers never observe a partial file

    The data goes to a temporary file in the destination directory which
    then replaces the target.

    Returns:
        str: The path written
    """
    if isinstance(data, str):
        data = data.encode('utf-8')
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, 'to_dict'):
        return obj.to_dict()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def canonical_json(obj) -> bytes:
    """Serialize with sorted keys and fixed layout, the one encoder used for
    everything glyphline writes so equal content gives equal bytes"""
    return (json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + '\n').encode('utf-8')


@lru_cache(maxsize=None)
def load_schema(name: str) -> Dict:
    try:
        data = pkgutil.get_data('glyphline', f'schemas/{name}.json')
    except OSError:
        data = None
    if data is None:
        raise InvalidInput(f"Unknown schema {name}")
    return json.loads(data)


def validate(doc: Dict, schema_name: str) -> List[str]:
    """Validate a document against a shipped JSON schema

    Returns:
        List[str]: Error messages, empty when the document is valid
    """
    validator = jsonschema.Draft7Validator(load_schema(schema_name))
    return [
        f"{'/'.join(str(p) for p in err.path) or '<root>'}: {err.message}"
        for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    ]


# from https://gist.github.com/angstwad/bf22d1822c38a92ec0a9#gistcomment-2622319
def dict_merge(dct, merge_dct, add_keys=True):
    """ Recursive dict merge. Inspired by :meth:``dict.update()``, instead of
    updating only top-level keys, dict_merge recurses down into dicts nested
    to an arbitrary depth, updating keys. The ``merge_dct`` is merged into
    ``dct``.
    This version will return a copy of the dictionary and leave the original
    arguments untouched.
    The optional argument ``add_keys``, determines whether keys which are
    present in ``merge_dict`` but not ``dct`` should be included in the
    new dict.
    Args:
        dct (dict) onto which the merge is executed
        merge_dct (dict): dct merged into dct
        add_keys (bool): whether to add new keys
    Returns:
        dict: updated dict
    """
    dct = dct.copy()
    if not add_keys:
        merge_dct = {
            k: merge_dct[k]
            for k in set(dct).intersection(set(merge_dct))
        }

    for k, v in merge_dct.items():
        if (k in dct and isinstance(dct[k], dict)
                and isinstance(merge_dct[k], Mapping)):
            dct[k] = dict_merge(dct[k], merge_dct[k], add_keys=add_keys)
        else:
            dct[k] = merge_dct[k]

    return dct


def recursive_compare(d1, d2, level='root', print=print):
    same = True
    if isinstance(d1, dict) and isinstance(d2, dict):
        if d1.keys() != d2.keys():
            same = False
            s1 = set(d1.keys())
            s2 = set(d2.keys())
            print(f'{level:<20} + {s1-s2} - {s2-s1}')
            common_keys = s1 & s2
        else:
            common_keys = set(d1.keys())

        for k in sorted(common_keys):
            same = recursive_compare(
                d1[k],
                d2[k],
                level=f'{level}.{k}',
                print=print,
            ) and same

    elif isinstance(d1, list) and isinstance(d2, list):
        if len(d1) != len(d2):
            same = False
            print(f'{level:<20} len1={len(d1)}; len2={len(d2)}')
        common_len = min(len(d1), len(d2))

        for i in range(common_len):
            same = recursive_compare(
                d1[i],
                d2[i],
                level=f'{level}[{i}]',
                print=print,
            ) and same

    elif d1 != d2:
        print(f'{level:<20} {d1} != {d2}')
        same = False

    return same
