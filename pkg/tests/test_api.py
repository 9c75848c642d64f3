import http.client
import io
import json
import uuid
import zipfile

import pytest

from conftest import build_corpus
from shotit.api import extract_image, serve_in_thread
from shotit.imageio import decode_image, encode_png
from shotit.service import BadRequest


@pytest.fixture(scope="module")
def server(tmp_path_factory):
    svc, frames = build_corpus(tmp_path_factory.mktemp("api"), seconds=3.0)
    srv, thread = serve_in_thread(svc)
    yield srv.server_address[1], frames
    srv.shutdown()
    srv.server_close()
    svc.catalog.close()


def request(port, method, path, body=None, headers=None):
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=10)
    conn.request(method, path, body=body, headers=headers or {})
    resp = conn.getresponse()
    data = resp.read()
    conn.close()
    return resp, data


def multipart(field, payload, filename="q.png"):
    boundary = uuid.uuid4().hex
    body = (
        f"--{boundary}\r\nContent-Disposition: form-data; name=\"note\"\r\n\r\nhello\r\n"
        f"--{boundary}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"{filename}\"\r\n"
        "Content-Type: image/png\r\n\r\n"
    ).encode() + payload + f"\r\n--{boundary}--\r\n".encode()
    return body, f"multipart/form-data; boundary={boundary}"


def test_search_multipart(server):
    port, frames = server
    body, ctype = multipart("image", encode_png(frames[1][20]))
    resp, data = request(port, "POST", "/search?topK=3&cutBorders=0", body, {"Content-Type": ctype})
    assert resp.status == 200
    out = json.loads(data)
    assert len(out["results"]) == 3 and out["frame_count"] > 0
    top = out["results"][0]
    assert top["media_id"] == 2 and abs(top["at"] - 20 / 24) <= 0.5
    assert top["video_url"].startswith("http://127.0.0.1:8080/video/2?from=")


def test_search_raw_body(server):
    port, frames = server
    resp, data = request(port, "POST", "/search", encode_png(frames[0][5]), {"Content-Type": "image/png"})
    assert resp.status == 200 and json.loads(data)["results"][0]["media_id"] == 1


@pytest.mark.parametrize(
    "path,body,status",
    [
        ("/search?topK=0", b"x", 400),
        ("/search?topK=abc", b"x", 400),
        ("/search?cutBorders=maybe", b"x", 400),
        ("/search", b"not an image", 400),
        ("/nope", b"x", 404),
    ],
)
def test_search_errors(server, path, body, status):
    port, _ = server
    resp, data = request(port, "POST", path, body)
    assert resp.status == status
    assert "error" in json.loads(data)


def test_image_and_video_routes(server):
    port, frames = server
    resp, data = request(port, "GET", "/image/1?t=0.5")
    assert resp.status == 200 and resp.getheader("Content-Type") == "image/png"
    assert decode_image(data) == frames[0][12]
    resp, data = request(port, "GET", "/video/1?from=0&to=0.5")
    assert resp.status == 200 and resp.getheader("Transfer-Encoding") == "chunked"
    assert len(zipfile.ZipFile(io.BytesIO(data)).namelist()) == 14
    for path, status in [("/image/99?t=0", 404), ("/image/1", 400), ("/video/1?from=2&to=1", 400),
                         ("/video/1?from=x&to=1", 400), ("/elsewhere", 404)]:
        assert request(port, "GET", path)[0].status == status


def test_status_route(server):
    port, _ = server
    resp, data = request(port, "GET", "/status")
    assert resp.status == 200 and json.loads(data)["media"]["LOADED"] == 2


def test_extract_image_variants():
    assert extract_image("image/png", b"abc") == b"abc"
    body, ctype = multipart("upload", b"PAYLOAD", filename="a.png")
    assert extract_image(ctype, body) == b"PAYLOAD"
    boundary = "xyz"
    no_file = f"--{boundary}\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\n1\r\n--{boundary}--\r\n"
    with pytest.raises(BadRequest):
        extract_image(f"multipart/form-data; boundary={boundary}", no_file.encode())
