import hashlib
import threading

import pytest

from mibci.errors import DigestMismatch, NotInManifest, ParseError, TransportError
from mibci.fetch import (
    DatasetManifest,
    ManifestEntry,
    cache_path,
    eligible_runs,
    fetch_run,
    manifest_from_sha256sums,
    url_transport,
)


class StubTransport:
    def __init__(self, payloads):
        self.payloads = payloads
        self.calls = []
        self._lock = threading.Lock()

    def __call__(self, url):
        with self._lock:
            self.calls.append(url)
        return self.payloads[url]


def entry(subject, run, payload, n_bytes=True):
    return ManifestEntry(subject, run, f"https://example.org/{subject}/{subject}{run}.edf",
                         hashlib.sha256(payload).hexdigest(), len(payload) if n_bytes else None)


@pytest.fixture
def manifest():
    return DatasetManifest([entry("S001", "R06", b"alpha" * 100),
                            entry("S001", "R10", b"beta" * 100, n_bytes=False)])


@pytest.fixture
def stub(manifest):
    return StubTransport({e.url: (b"alpha" * 100 if e.run == "R06" else b"beta" * 100)
                          for e in manifest})


def test_cold_then_warm(manifest, stub, tmp_path):
    first = fetch_run(manifest, "S001", "R06", tmp_path, transport=stub)
    assert first == b"alpha" * 100 and len(stub.calls) == 1
    second = fetch_run(manifest, "S001", "R06", tmp_path, transport=stub)
    assert second == first
    assert len(stub.calls) == 1


def test_idempotent_many_calls(manifest, stub, tmp_path):
    outs = {fetch_run(manifest, "S001", "R10", tmp_path, transport=stub) for _ in range(5)}
    assert len(outs) == 1
    assert len(stub.calls) <= 1


def test_digest_mismatch_leaves_no_cache(manifest, tmp_path):
    e = manifest[("S001", "R06")]
    bad = StubTransport({e.url: b"corrupted"})
    with pytest.raises(DigestMismatch):
        fetch_run(manifest, "S001", "R06", tmp_path, transport=bad)
    assert not cache_path(e, tmp_path).exists()
    leftovers = [p for p in cache_path(e, tmp_path).parent.iterdir() if not p.name.endswith(".lock")]
    assert leftovers == []


def test_corrupt_cache_entry_refetched(manifest, stub, tmp_path):
    fetch_run(manifest, "S001", "R06", tmp_path, transport=stub)
    cache_path(manifest[("S001", "R06")], tmp_path).write_bytes(b"rot")
    assert fetch_run(manifest, "S001", "R06", tmp_path, transport=stub) == b"alpha" * 100
    assert len(stub.calls) == 2


def test_not_in_manifest(manifest, stub, tmp_path):
    with pytest.raises(NotInManifest):
        fetch_run(manifest, "S999", "R06", tmp_path, transport=stub)
    assert stub.calls == []


def test_concurrent_same_and_distinct_keys(manifest, stub, tmp_path):
    results = []

    def worker(run):
        results.append(fetch_run(manifest, "S001", run, tmp_path, transport=stub))

    threads = [threading.Thread(target=worker, args=(r,)) for r in ["R06", "R10"] * 4]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(results) == 8
    assert sorted(stub.calls) == sorted({e.url for e in manifest})


def test_file_transport_and_error(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"xyz")
    assert url_transport(p.as_uri()) == b"xyz"
    with pytest.raises(TransportError):
        url_transport((tmp_path / "missing.bin").as_uri())


def test_manifest_text_round_trip(manifest):
    again = DatasetManifest.parse(manifest.dumps())
    assert list(again) == list(manifest)


@pytest.mark.parametrize("text", [
    "S001 R06 http://x/a.edf abc 10\n",
    "S001 R06 http://x/a.edf " + "0" * 64 + "\n",
    ("S001 R06 http://x/a.edf " + "0" * 64 + " 10\n") * 2,
])
def test_manifest_rejects_bad_lines(text):
    with pytest.raises(ParseError):
        DatasetManifest.parse(text)


def test_manifest_from_sums():
    sums = "\n".join(f"{i:064x}  {rel}" for i, (_, _, rel) in enumerate(eligible_runs()))
    m = manifest_from_sha256sums(sums)
    assert len(m) == 30
    assert m[("S001", "R06")].url.endswith("S001/S001R06.edf")
    assert m[("S010", "R14")].n_bytes is None
