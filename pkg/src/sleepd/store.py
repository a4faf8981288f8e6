"""Content-addressed, append-only persistence for contexts and derived versions.

Layout under the store root::

    <context_id>/raw.txt
    <context_id>/tags.json
    <context_id>/derived/<i>.txt     # c' text; its presence commits version i
    <context_id>/derived/<i>.meta    # provenance JSON
    <context_id>/audit/<i>.jsonl     # rethink trail of the run
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

from filelock import FileLock

from .errors import IndexOutOfRange, MismatchedId, NoDerived, StorageFailure, UnknownContext
from .memory import read_audit, write_audit
from .sleep import DerivedContext, concat_derived, context_hash

_ID = re.compile(r"^[0-9a-f]{64}$")

Selector = Union[str, tuple[str, int]]


@dataclass
class ContextRecord:
    context_id: str
    raw: str
    derived: list[DerivedContext] = field(default_factory=list)
    tags: set[str] = field(default_factory=set)


def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
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


def parse_selector(selector: Selector) -> tuple[str, int | None]:
    """Accepts ``raw``, ``latest_derived``, ``concat_all``, ``derived:<i>`` or ``("derived", i)``."""
    if isinstance(selector, tuple):
        kind, index = selector
        if kind != "derived":
            raise ValueError(f"bad selector {selector!r}")
        return kind, int(index)
    if selector in ("raw", "latest_derived", "concat_all"):
        return selector, None
    if selector.startswith("derived:"):
        return "derived", int(selector.split(":", 1)[1])
    raise ValueError(f"unknown selector {selector!r}")


class ContextStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def _dir(self, context_id: str) -> Path:
        if not _ID.match(context_id):
            raise UnknownContext(context_id)
        return self.root / context_id

    def _require(self, context_id: str) -> Path:
        d = self._dir(context_id)
        if not (d / "raw.txt").is_file():
            raise UnknownContext(context_id)
        return d

    def _writer(self, context_id: str):
        with self._guard:
            lock = self._locks.setdefault(context_id, threading.Lock())
        return _WriterLock(lock, FileLock(str(self.root / f".{context_id}.lock")))

    def put_context(self, raw: str, tags: set[str] | None = None) -> str:
        if not raw:
            raise ValueError("raw context must be nonempty")
        cid = context_hash(raw)
        d = self._dir(cid)
        try:
            with self._writer(cid):
                if not (d / "raw.txt").is_file():
                    _atomic_write(d / "raw.txt", raw)
                if tags:
                    self._write_tags(cid, self._read_tags(cid) | set(tags))
        except OSError as exc:
            raise StorageFailure(f"cannot write context {cid}: {exc}") from exc
        return cid

    def _read_tags(self, context_id: str) -> set[str]:
        p = self._dir(context_id) / "tags.json"
        return set(json.loads(p.read_bytes().decode("utf-8"))) if p.is_file() else set()

    def _write_tags(self, context_id: str, tags: set[str]) -> None:
        _atomic_write(self._dir(context_id) / "tags.json", json.dumps(sorted(tags)))

    def add_tags(self, context_id: str, *tags: str) -> None:
        self._require(context_id)
        with self._writer(context_id):
            self._write_tags(context_id, self._read_tags(context_id) | set(tags))

    def __contains__(self, context_id: str) -> bool:
        try:
            self._require(context_id)
        except UnknownContext:
            return False
        return True

    def derived_count(self, context_id: str) -> int:
        d = self._require(context_id) / "derived"
        n = 0
        while (d / f"{n}.txt").is_file():
            n += 1
        return n

    def attach_derived(self, context_id: str, derived: DerivedContext) -> int:
        """Append ``derived`` as the next version; returns its 0-based index."""
        d = self._require(context_id)
        if derived.context_id != context_id:
            raise MismatchedId(f"derived context is for {derived.context_id}, not {context_id}")
        try:
            with self._writer(context_id):
                index = self.derived_count(context_id)
                write_audit(d / "audit" / f"{index}.jsonl", derived.audit)
                _atomic_write(d / "derived" / f"{index}.meta", json.dumps(derived.provenance(), sort_keys=True))
                # the .txt rename is the commit point
                _atomic_write(d / "derived" / f"{index}.txt", derived.value)
        except OSError as exc:
            raise StorageFailure(f"cannot attach derived version to {context_id}: {exc}") from exc
        return index

    def load_derived(self, context_id: str, index: int) -> DerivedContext:
        d = self._require(context_id)
        n = self.derived_count(context_id)
        if not 0 <= index < n:
            raise IndexOutOfRange(f"derived index {index} not in [0, {n})")
        value = (d / "derived" / f"{index}.txt").read_bytes().decode("utf-8")
        meta = json.loads((d / "derived" / f"{index}.meta").read_bytes().decode("utf-8"))
        audit_path = d / "audit" / f"{index}.jsonl"
        audit = read_audit(audit_path) if audit_path.is_file() else []
        return DerivedContext.from_provenance(value, meta, audit)

    def get(self, context_id: str) -> ContextRecord:
        d = self._require(context_id)
        raw = (d / "raw.txt").read_bytes().decode("utf-8")
        derived = [self.load_derived(context_id, i) for i in range(self.derived_count(context_id))]
        return ContextRecord(context_id, raw, derived, self._read_tags(context_id))

    def resolve(self, context_id: str, selector: Selector = "raw") -> str:
        kind, index = parse_selector(selector)
        d = self._require(context_id)
        if kind == "raw":
            return (d / "raw.txt").read_bytes().decode("utf-8")
        n = self.derived_count(context_id)
        if kind == "derived":
            return self.load_derived(context_id, index).value
        if n == 0:
            raise NoDerived(f"context {context_id} has no derived versions")
        if kind == "latest_derived":
            return (d / "derived" / f"{n - 1}.txt").read_bytes().decode("utf-8")
        return concat_derived([self.load_derived(context_id, i) for i in range(n)])

    def context_ids(self) -> Iterator[str]:
        for p in sorted(self.root.iterdir()):
            if p.is_dir() and _ID.match(p.name) and (p / "raw.txt").is_file():
                yield p.name

    def export_manifest(self, path: str | Path) -> int:
        """Write a line-delimited index of every record; returns the record count."""
        lines = []
        for cid in self.context_ids():
            rec = self.get(cid)
            lines.append(
                json.dumps(
                    {
                        "context_id": cid,
                        "raw_path": f"{cid}/raw.txt",
                        "raw_chars": len(rec.raw),
                        "tags": sorted(rec.tags),
                        "derived": [
                            {
                                "index": i,
                                "path": f"{cid}/derived/{i}.txt",
                                "termination": dc.termination,
                                "rethink_count": dc.rethink_count,
                                "usage": dc.usage.to_json(),
                            }
                            for i, dc in enumerate(rec.derived)
                        ],
                    },
                    sort_keys=True,
                )
            )
        _atomic_write(Path(path), "".join(line + "\n" for line in lines))
        return len(lines)


class _WriterLock:
    def __init__(self, thread_lock: threading.Lock, file_lock: FileLock):
        self._thread_lock = thread_lock
        self._file_lock = file_lock

    def __enter__(self) -> "_WriterLock":
        self._thread_lock.acquire()
        try:
            self._file_lock.acquire()
        except BaseException:
            self._thread_lock.release()
            raise
        return self

    def __exit__(self, *exc) -> None:
        self._file_lock.release()
        self._thread_lock.release()
