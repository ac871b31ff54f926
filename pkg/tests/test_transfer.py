# import moto before any boto3 module
from moto import mock_s3, mock_secretsmanager
import boto3
import json
import os
import unittest

from boto3utils import s3
from glyphline import transfer
from mock import patch
from shutil import rmtree

testpath = f"{os.path.dirname(__file__)}/test_transfer"
testbucket = 'testbucket'


@mock_s3
@mock_secretsmanager
class Test(unittest.TestCase):

    def setUp(self):
        transfer.s3_sessions.clear()
        session = boto3.session.Session(region_name='us-east-1')
        client = s3(session)
        client.s3.create_bucket(Bucket=testbucket)
        client.s3.put_object(Body='test', Bucket=testbucket, Key='seals/seal_0000.png')
        os.makedirs(testpath, exist_ok=True)

    def tearDown(self):
        transfer.s3_sessions.clear()

    @classmethod
    def tearDownClass(cls):
        rmtree(testpath, ignore_errors=True)

    def test_get_s3_session(self):
        session = transfer.get_s3_session(region_name='us-west-2')
        buckets = session.s3.list_buckets()
        assert(buckets['Buckets'][0]['Name'] == testbucket)

    def test_get_s3_session_is_cached_per_bucket(self):
        first = transfer.get_s3_session(testbucket)
        assert(transfer.get_s3_session(s3url=f"s3://{testbucket}/a/b.json") is first)

    def test_get_s3_session_from_secret(self):
        client = boto3.client('secretsmanager', region_name='us-east-1')
        client.create_secret(
            Name=f"glyphline-creds-{testbucket}",
            SecretString=json.dumps({'region_name': 'eu-west-1', 'requester_pays': True}),
        )
        session = transfer.get_s3_session(testbucket)
        assert(session.s3.meta.region_name == 'eu-west-1')

    def test_is_remote(self):
        assert(transfer.is_remote('s3://bucket/key'))
        assert(transfer.is_remote('https://example.com/seal.png'))
        assert(not transfer.is_remote('/data/seal.png'))

    def test_fetch_local_unchanged(self):
        assert(transfer.fetch(__file__, path=testpath) == __file__)

    def test_fetch_s3(self):
        fname = transfer.fetch(f"s3://{testbucket}/seals/seal_0000.png", path=testpath)
        assert(fname == os.path.join(testpath, 'seal_0000.png'))
        with open(fname) as f:
            assert(f.read() == 'test')

    def test_fetch_http(self):
        with patch('glyphline.transfer.download_from_http', return_value='x.png') as download:
            assert(transfer.fetch('https://example.com/x.png?sig=1', path=testpath) == 'x.png')
        download.assert_called_once_with('https://example.com/x.png?sig=1', path=testpath)

    def test_publish(self):
        local = os.path.join(testpath, 'report.json')
        with open(local, 'w') as f:
            f.write('{"id": "seal_0000"}')
        url = f"s3://{testbucket}/reports/seal_0000.json"
        assert(transfer.publish(local, url, content_type='application/json') == url)
        assert(s3().exists(url))
        assert(s3().read_json(url) == {'id': 'seal_0000'})
