import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from xml.sax.saxutils import escape

import pytest

from shotit.objectstore import (
    HttpObjectStore,
    LocalObjectStore,
    ObjectNotFound,
    StoreError,
    open_store,
)


class FakeS3(BaseHTTPRequestHandler):
    """Minimal bucket: PUT/GET/DELETE objects, paged ListObjectsV2."""

    objects: dict = {}
    page = 2

    def log_message(self, *a):
        pass

    def _key(self):
        return urllib.parse.unquote(urllib.parse.urlsplit(self.path).path.split("/", 2)[2])

    def _reply(self, code, body=b""):
        self.send_response(code)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_PUT(self):
        n = int(self.headers["Content-Length"])
        self.objects[self._key()] = self.rfile.read(n)
        self._reply(200)

    def do_DELETE(self):
        if self.objects.pop(self._key(), None) is None:
            return self._reply(404)
        self._reply(204)

    def do_GET(self):
        parts = urllib.parse.urlsplit(self.path)
        if parts.path.rstrip("/").count("/") == 1:
            q = urllib.parse.parse_qs(parts.query)
            prefix = q.get("prefix", [""])[0]
            start = int(q.get("continuation-token", ["0"])[0])
            keys = sorted(k for k in self.objects if k.startswith(prefix))
            chunk = keys[start : start + self.page]
            more = start + self.page < len(keys)
            xml = '<ListBucketResult xmlns="http://s3.amazonaws.com/doc/2006-03-01/">'
            xml += "".join(f"<Contents><Key>{escape(k)}</Key></Contents>" for k in chunk)
            xml += f"<IsTruncated>{'true' if more else 'false'}</IsTruncated>"
            if more:
                xml += f"<NextContinuationToken>{start + self.page}</NextContinuationToken>"
            xml += "</ListBucketResult>"
            return self._reply(200, xml.encode())
        if parts.path.endswith("/boom"):
            return self._reply(500)
        data = self.objects.get(self._key())
        if data is None:
            return self._reply(404)
        self._reply(200, data)


@pytest.fixture
def fake_s3():
    FakeS3.objects = {}
    srv = ThreadingHTTPServer(("127.0.0.1", 0), FakeS3)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}/bucket"
    srv.shutdown()
    srv.server_close()


@pytest.fixture(params=["local", "http"])
def store(request, tmp_path, fake_s3):
    if request.param == "local":
        return open_store("local", str(tmp_path / "store"))
    return open_store("s3", fake_s3)


def test_put_get_list_delete(store):
    store.put("media/a b.bin", b"one")
    store.put("media/sub/c.bin", b"two")
    store.put("hash/1.xml.gz", b"three")
    assert store.get("media/a b.bin") == b"one"
    assert store.exists("media/sub/c.bin")
    assert store.list("media/") == ["media/a b.bin", "media/sub/c.bin"]
    assert store.list() == ["hash/1.xml.gz", "media/a b.bin", "media/sub/c.bin"]
    store.put("media/a b.bin", b"replaced")
    assert store.get("media/a b.bin") == b"replaced"
    store.delete("media/a b.bin")
    store.delete("media/a b.bin")
    assert not store.exists("media/a b.bin")
    with pytest.raises(ObjectNotFound):
        store.get("media/a b.bin")


@pytest.mark.parametrize("key", ["", "/abs", "a/../b", "a//b", "../x"])
def test_bad_keys(store, key):
    with pytest.raises((ValueError, StoreError)):
        store.put(key, b"x")


def test_local_path_and_no_temp_leftovers(tmp_path):
    s = LocalObjectStore(tmp_path)
    s.put("a/b.txt", b"hi")
    assert s.local_path("a/b.txt").read_bytes() == b"hi"
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["b.txt"]


def test_http_errors(fake_s3):
    s = HttpObjectStore(fake_s3)
    assert s.local_path("x") is None
    with pytest.raises(StoreError):
        s.get("boom")
    with pytest.raises(StoreError):
        HttpObjectStore("http://127.0.0.1:9/none", timeout=2).get("x")


def test_open_store_unknown():
    with pytest.raises(ValueError):
        open_store("ftp", "x")
