"""Dataset manifest and a caching, integrity-checked download client."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable
from urllib.parse import urlparse

from filelock import FileLock

from .errors import DigestMismatch, NotInManifest, ParseError, TransportError

log = logging.getLogger(__name__)

Transport = Callable[[str], bytes]

_HEX64 = re.compile(r"[0-9a-f]{64}")
PHYSIONET_BASE = "https://physionet.org/files/eegmmidb/1.0.0/"


@dataclass(frozen=True)
class ManifestEntry:
    subject: str
    run: str
    url: str
    digest: str           # sha256, lowercase hex
    n_bytes: int | None   # None when the archive does not publish sizes

    def to_line(self) -> str:
        size = "-" if self.n_bytes is None else str(self.n_bytes)
        return f"{self.subject} {self.run} {self.url} {self.digest} {size}"


class DatasetManifest:
    """Mapping ``(subject, run) -> ManifestEntry``.

    Text form: one entry per line, ``subject run url sha256 bytes``, whitespace
    separated; ``#`` starts a comment and ``-`` for bytes means unknown.
    """

    def __init__(self, entries: Iterable[ManifestEntry] = ()):
        self.entries: dict[tuple[str, str], ManifestEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: ManifestEntry):
        key = (entry.subject, entry.run)
        if key in self.entries:
            raise ValueError(f"duplicate manifest entry for subject={key[0]} run={key[1]}")
        if not _HEX64.fullmatch(entry.digest):
            raise ValueError(f"digest for {key} is not 64 lowercase hex digits")
        self.entries[key] = entry

    def __getitem__(self, key) -> ManifestEntry:
        subject, run = (str(k) for k in key)
        try:
            return self.entries[(subject, run)]
        except KeyError:
            raise NotInManifest(f"subject={subject} run={run} not in manifest") from None

    def __contains__(self, key) -> bool:
        return tuple(str(k) for k in key) in self.entries

    def __iter__(self):
        return iter(self.entries.values())

    def __len__(self):
        return len(self.entries)

    def runs_for(self, subject) -> list[str]:
        return [run for (s, run) in self.entries if s == str(subject)]

    @classmethod
    def parse(cls, text: str) -> "DatasetManifest":
        manifest = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ParseError(f"expected 5 fields, got {len(parts)}", line=lineno)
            subject, run, url, digest, size = parts
            try:
                n_bytes = None if size == "-" else int(size)
                manifest.add(ManifestEntry(subject, run, url, digest.lower(), n_bytes))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
        return manifest

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.entries.values())


def eligible_runs() -> list[tuple[str, str, str]]:
    """Shipped run selection: ``(subject, run, relative path)`` triples."""
    text = resources.files("mibci").joinpath("data/eegmmidb_runs.txt").read_text()
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            subject, run, rel = line.split()
            out.append((subject, run, rel))
    return out


def manifest_from_sha256sums(sums_text: str, selection=None,
                             base_url: str = PHYSIONET_BASE) -> DatasetManifest:
    """Build a manifest from an archive's ``SHA256SUMS.txt`` listing
    (``<digest>  <relative path>`` per line) restricted to ``selection``."""
    digests = {}
    for line in sums_text.splitlines():
        parts = line.split()
        if len(parts) == 2:
            digests[parts[1].lstrip("*")] = parts[0].lower()
    manifest = DatasetManifest()
    for subject, run, rel in selection if selection is not None else eligible_runs():
        if rel not in digests:
            raise NotInManifest(f"{rel} not listed in checksum file")
        manifest.add(ManifestEntry(subject, run, base_url + rel, digests[rel], None))
    return manifest


# ---------------------------------------------------------------------------

def url_transport(url: str, timeout: float = 60.0) -> bytes:
    """Default transport; handles http(s):// and file:// URLs."""
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise TransportError(f"{url}: {exc}") from exc


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def cache_path(entry: ManifestEntry, cache_dir) -> Path:
    name = Path(urlparse(entry.url).path).name or "data.edf"
    return Path(cache_dir) / entry.subject / entry.run / name


def _valid(entry: ManifestEntry, data: bytes) -> bool:
    if entry.n_bytes is not None and len(data) != entry.n_bytes:
        return False
    return _sha256(data) == entry.digest


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def fetch_run(manifest: DatasetManifest, subject, run, cache_dir,
              transport: Transport = url_transport) -> bytes:
    """Return the verified bytes for one run, downloading at most once.

    A cached file is trusted only if it still matches the manifest digest;
    a corrupt cache entry is deleted and re-downloaded. A download whose
    digest does not match raises :class:`DigestMismatch` and leaves nothing
    in the cache.
    """
    entry = manifest[(subject, run)]
    path = cache_path(entry, cache_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + ".lock"):
        if path.exists():
            data = path.read_bytes()
            if _valid(entry, data):
                return data
            log.warning("cache entry %s is corrupt; re-fetching", path)
            path.unlink()
        data = transport(entry.url)
        if not _valid(entry, data):
            raise DigestMismatch(
                f"{entry.url}: got sha256 {_sha256(data)} ({len(data)} bytes), "
                f"expected {entry.digest}")
        atomic_write(path, data)
        return data
