import json

import pytest

from glyphline import config
from glyphline.errors import InvalidInput


def test_defaults():
    cfg = config.load_config()
    assert cfg['stages']['scale_mode'] == '512'
    assert len(cfg['stages']['grid']) == 9
    assert config.solver_config(cfg, 'region3').max_iter == 20000
    assert config.solver_config(cfg, 'glyph2').lr_policy == 'inv'


def test_toml_file(tmp_path):
    path = tmp_path / 'glyphline.toml'
    path.write_text(
        '[stages]\n'
        'scale_mode = "256"\n'
        'reading_order = "rl"\n'
        '\n'
        '[stages.grouping]\n'
        'concentric_frac = 0.2\n'
        '\n'
        '[solver.glyph2]\n'
        'max_iter = 50\n'
    )
    cfg = config.load_config(str(path))
    stages = config.stage_config(cfg)
    assert (stages.scale_mode, stages.reading_order) == ('256', 'rl')
    assert stages.grouping.concentric_frac == 0.2
    assert stages.grouping.superbox_overlap_frac == 0.40
    solver = config.solver_config(cfg, 'glyph2')
    assert (solver.max_iter, solver.train_batch) == (50, 100)


def test_json_file(tmp_path):
    path = tmp_path / 'glyphline.json'
    path.write_text(json.dumps({'stages': {'workers': 3}}))
    assert config.stage_config(config.load_config(str(path))).workers == 3


@pytest.mark.parametrize('overrides,check', [
    (['stages.scale_mode=256'], lambda c: c['stages']['scale_mode'] == 256),
    (['stages.reading_order=auto'], lambda c: c['stages']['reading_order'] == 'auto'),
    (['$.stages.textbox.trim_major_frac=0.5'], lambda c: c['stages']['textbox']['trim_major_frac'] == 0.5),
    (['solver.region3.base_lr=0.01', 'solver.region3.base_lr=0.02'],
     lambda c: c['solver']['region3']['base_lr'] == 0.02),
])
def test_overrides(overrides, check):
    assert check(config.load_config(overrides=overrides))


def test_override_after_file(tmp_path):
    path = tmp_path / 'glyphline.json'
    path.write_text(json.dumps({'stages': {'workers': 3}}))
    cfg = config.load_config(str(path), ['stages.workers=2'])
    assert cfg['stages']['workers'] == 2


def test_parse_override():
    assert config.parse_override('a.b=[1, 2]') == ('a.b', [1, 2])
    assert config.parse_override('a.b=lr') == ('a.b', 'lr')
    assert config.parse_override(' a = x=y') == ('a', ' x=y')


@pytest.mark.parametrize('overrides', [
    ['stages.scale_mode'],
    ['stages.(=1'],
    ['stages.colour=red'],
    ['stages.scale_mode=1024'],
    ['solver.glyph2.lr_policy=cosine'],
    ['solver.region3.learning_rate=0.1'],
])
def test_bad_overrides(overrides):
    with pytest.raises(InvalidInput):
        config.load_config(overrides=overrides)


def test_bad_files(tmp_path):
    with pytest.raises(InvalidInput):
        config.load_config(str(tmp_path / 'missing.toml'))
    broken = tmp_path / 'broken.toml'
    broken.write_text('[stages\n')
    with pytest.raises(InvalidInput):
        config.load_config(str(broken))
    broken = tmp_path / 'broken.json'
    broken.write_text('{')
    with pytest.raises(InvalidInput):
        config.load_config(str(broken))
