"""Object storage behind one small contract: put / get / list / delete."""

from __future__ import annotations

import os
import tempfile
import urllib.error
import urllib.parse
import urllib.request
import xml.etree.ElementTree as ET
from abc import ABC, abstractmethod
from pathlib import Path


class StoreError(IOError):
    pass


class ObjectNotFound(StoreError, KeyError):
    pass


def _check_key(key: str) -> str:
    if not key or key.startswith("/") or "\\" in key:
        raise ValueError(f"invalid object key {key!r}")
    if any(part in ("", ".", "..") for part in key.split("/")):
        raise ValueError(f"invalid object key {key!r}")
    return key


class ObjectStore(ABC):
    @abstractmethod
    def put(self, key: str, data: bytes) -> None: ...

    @abstractmethod
    def get(self, key: str) -> bytes: ...

    @abstractmethod
    def list(self, prefix: str = "") -> list[str]: ...

    @abstractmethod
    def delete(self, key: str) -> None: ...

    def exists(self, key: str) -> bool:
        try:
            self.get(key)
        except ObjectNotFound:
            return False
        return True

    def local_path(self, key: str) -> Path | None:
        """Filesystem path of the object when the backend has one, else None."""
        return None


class LocalObjectStore(ObjectStore):
    """Keys map to paths under ``root``; writes go through a temp file + rename."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root.joinpath(*_check_key(key).split("/"))

    def put(self, key: str, data: bytes) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".put-", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def get(self, key: str) -> bytes:
        try:
            return self._path(key).read_bytes()
        except FileNotFoundError:
            raise ObjectNotFound(key) from None

    def list(self, prefix: str = "") -> list[str]:
        keys = []
        for dirpath, _, files in os.walk(self.root):
            for name in files:
                if name.startswith((".put-",)):
                    continue
                rel = Path(dirpath, name).relative_to(self.root).as_posix()
                if rel.startswith(prefix):
                    keys.append(rel)
        return sorted(keys)

    def delete(self, key: str) -> None:
        try:
            self._path(key).unlink()
        except FileNotFoundError:
            pass

    def exists(self, key: str) -> bool:
        return self._path(key).is_file()

    def local_path(self, key: str) -> Path | None:
        return self._path(key)


class HttpObjectStore(ObjectStore):
    """S3-style HTTP backend: ``PUT/GET/DELETE {endpoint}/{key}`` and
    ``GET {endpoint}?list-type=2&prefix=...`` returning a ListBucketResult.

    ``endpoint`` is the bucket URL, e.g. ``http://minio:9000/media``. Requests
    are unsigned; put an authenticating proxy in front for real S3.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def _url(self, key: str) -> str:
        return f"{self.endpoint}/{urllib.parse.quote(_check_key(key))}"

    def _request(self, method: str, url: str, data: bytes | None = None) -> bytes:
        req = urllib.request.Request(url, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", "application/octet-stream")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 404:
                raise ObjectNotFound(url) from None
            raise StoreError(f"{method} {url} -> HTTP {exc.code}") from exc
        except urllib.error.URLError as exc:
            raise StoreError(f"{method} {url} failed: {exc.reason}") from exc

    def put(self, key: str, data: bytes) -> None:
        self._request("PUT", self._url(key), data)

    def get(self, key: str) -> bytes:
        return self._request("GET", self._url(key))

    def delete(self, key: str) -> None:
        try:
            self._request("DELETE", self._url(key))
        except ObjectNotFound:
            pass

    def list(self, prefix: str = "") -> list[str]:
        keys: list[str] = []
        token = None
        while True:
            params = {"list-type": "2", "prefix": prefix}
            if token:
                params["continuation-token"] = token
            body = self._request("GET", f"{self.endpoint}?{urllib.parse.urlencode(params)}")
            root = ET.fromstring(body)
            ns = root.tag[: root.tag.index("}") + 1] if root.tag.startswith("{") else ""
            keys.extend(el.text or "" for el in root.iter(f"{ns}Key"))
            truncated = (root.findtext(f"{ns}IsTruncated") or "false").lower() == "true"
            token = root.findtext(f"{ns}NextContinuationToken")
            if not truncated or not token:
                break
        return sorted(keys)


def open_store(backend: str, location: str) -> ObjectStore:
    if backend == "local":
        return LocalObjectStore(location)
    if backend in ("http", "s3"):
        return HttpObjectStore(location)
    raise ValueError(f"unknown store backend {backend!r}")
