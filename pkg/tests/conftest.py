import json
import os

import moto
import boto3
import numpy as np
import pytest

from boto3utils import s3
from mock import Mock
from pathlib import Path

from glyphline.classifiers import ClassifierHandle, GlyphLabel, Preprocess
from glyphline.geometry import RegionLabel
from glyphline.imaging import RasterImage, to_grayscale
from glyphline.neuralnet import Network, symbolnet


if not 'AWS_DEFAULT_REGION' in os.environ:
    os.environ['AWS_DEFAULT_REGION'] = 'us-east-1'

fixtures = Path(__file__).parent.joinpath('fixtures')


def read_json_fixture(filename):
    with fixtures.joinpath(filename).open() as f:
        return json.load(f)


@pytest.fixture
def aws_credentials():
    """Mocked AWS Credentials for moto."""
    os.environ['AWS_ACCESS_KEY_ID'] = 'testing'
    os.environ['AWS_SECRET_ACCESS_KEY'] = 'testing'
    os.environ['AWS_SECURITY_TOKEN'] = 'testing'
    os.environ['AWS_SESSION_TOKEN'] = 'testing'
    os.environ['AWS_DEFAULT_REGION'] = 'us-east-1'
    os.environ['AWS_REGION'] = 'us-east-1'


@pytest.fixture
def boto3utils_s3(aws_credentials):
    with moto.mock_s3(), moto.mock_secretsmanager():
        yield s3(boto3.session.Session(region_name='us-east-1'))


@pytest.fixture
def report_fixture():
    return read_json_fixture('report.json')


@pytest.fixture
def truth_fixture():
    return read_json_fixture('groundtruth.json')


def _ink_fraction(crop: RasterImage) -> float:
    return float((to_grayscale(crop).data < 128).mean())


def stub_handle(role, decide):
    """A classifier handle whose predictions come from `decide(crop)`"""
    h = Mock(spec=ClassifierHandle)
    h.role = role
    h.predict.side_effect = lambda crops: [decide(c) for c in crops]
    return h


@pytest.fixture
def region_stub():
    """Text wherever there is ink"""
    return stub_handle(
        'region3',
        lambda c: (RegionLabel.TEXT, 0.9) if _ink_fraction(c) > 0.01 else (RegionLabel.NO_TEXT, 0.8),
    )


@pytest.fixture
def glyph_stub():
    """Jar for ink-heavy crops"""
    return stub_handle(
        'glyph2',
        lambda c: (GlyphLabel.JAR, 0.7) if _ink_fraction(c) > 0.3 else (GlyphLabel.NO_JAR, 0.6),
    )


@pytest.fixture
def glyph_handle():
    """Untrained but deterministic glyph2 network handle"""
    pre = Preprocess.for_role('glyph2')
    net = Network(symbolnet(pre.input_shape, 2), pre.input_shape, seed=7)
    return ClassifierHandle('glyph2', pre, net=net, source='test')


@pytest.fixture
def region_handle():
    pre = Preprocess(size=16)
    net = Network(symbolnet(pre.input_shape, 3), pre.input_shape, seed=3)
    return ClassifierHandle('region3', pre, net=net, source='test')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='Run the full-count property tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-count property tests, skipped without --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)
