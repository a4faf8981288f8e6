import json
import threading

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sleepd.backend import Usage
from sleepd.errors import IndexOutOfRange, MismatchedId, NoDerived, UnknownContext
from sleepd.sleep import FINISHED, DerivedContext, SleepConfig, concat_derived, context_hash
from sleepd.store import ContextStore, parse_selector


def derived(raw, value, idx=0):
    return DerivedContext(context_hash(raw), value, SleepConfig(), idx, Usage(1, 2, 3), (Usage(1, 2, 3),),
                          FINISHED, 0, (), 1.0)


def test_put_idempotent_and_ids(store):
    a = store.put_context("hello")
    assert store.put_context("hello") == a
    assert list(store.context_ids()) == [a]
    assert len(a) == 64 and a == a.lower()
    assert store.put_context("hello!") != a
    with pytest.raises(ValueError):
        store.put_context("")


def test_id_stable_across_restart(tmp_path):
    a = ContextStore(tmp_path).put_context("ctx")
    s2 = ContextStore(tmp_path)
    assert a in s2 and s2.resolve(a, "raw") == "ctx"


def test_attach_indices(store):
    cid = store.put_context("ctx")
    assert store.attach_derived(cid, derived("ctx", "A")) == 0
    assert store.attach_derived(cid, derived("ctx", "B")) == 1
    with pytest.raises(MismatchedId):
        store.attach_derived(cid, derived("other", "C"))
    with pytest.raises(UnknownContext):
        store.attach_derived(context_hash("nope"), derived("nope", "C"))


def test_resolve(store):
    raw = "line1\r\nline2\n ünï "
    cid = store.put_context(raw)
    assert store.resolve(cid, "raw") == raw
    with pytest.raises(NoDerived):
        store.resolve(cid, "latest_derived")
    a, b = derived(raw, "A"), derived(raw, "B", 1)
    store.attach_derived(cid, a)
    store.attach_derived(cid, b)
    assert store.resolve(cid, "latest_derived") == "B"
    assert store.resolve(cid, "derived:0") == "A"
    assert store.resolve(cid, ("derived", 1)) == "B"
    assert store.resolve(cid, "concat_all") == concat_derived([a, b])
    with pytest.raises(IndexOutOfRange):
        store.resolve(cid, "derived:2")
    with pytest.raises(UnknownContext):
        store.resolve(context_hash("zzz"), "raw")


def test_selector_parsing():
    assert parse_selector("derived:3") == ("derived", 3)
    with pytest.raises(ValueError):
        parse_selector("newest")


def test_get_and_load_provenance(store):
    cid = store.put_context("ctx", {"t1"})
    store.add_tags(cid, "t2")
    d = derived("ctx", "A")
    store.attach_derived(cid, d)
    rec = store.get(cid)
    assert rec.tags == {"t1", "t2"}
    assert rec.derived == [d]
    assert store.load_derived(cid, 0) == d


def test_layout_and_manifest(store, tmp_path):
    cid = store.put_context("ctx")
    store.attach_derived(cid, derived("ctx", "A"))
    d = store.root / cid
    assert (d / "raw.txt").is_file()
    assert (d / "derived" / "0.txt").read_text() == "A"
    assert json.loads((d / "derived" / "0.meta").read_text())
    assert store.export_manifest(tmp_path / "m.jsonl") == 1
    line = json.loads((tmp_path / "m.jsonl").read_text())
    assert line["context_id"] == cid


def test_torn_derived_write_invisible(store):
    cid = store.put_context("ctx")
    store.attach_derived(cid, derived("ctx", "A"))
    # a crash after the meta landed but before the text commit
    (store.root / cid / "derived" / "1.meta").write_text("{}")
    (store.root / cid / "derived" / ".1.txt.abc.tmp").write_text("partial")
    assert store.derived_count(cid) == 1
    assert store.resolve(cid, "latest_derived") == "A"
    assert store.attach_derived(cid, derived("ctx", "B")) == 1
    assert store.resolve(cid, "latest_derived") == "B"


def test_concurrent_attach_append_only(store):
    cid = store.put_context("ctx")
    threads = [threading.Thread(target=store.attach_derived, args=(cid, derived("ctx", f"v{i}")))
               for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    values = {store.resolve(cid, f"derived:{i}") for i in range(store.derived_count(cid))}
    assert values == {f"v{i}" for i in range(16)}


@settings(max_examples=100, suppress_health_check=[HealthCheck.function_scoped_fixture], deadline=None)
@given(st.text(min_size=1))
def test_raw_roundtrip_unicode(store, raw):
    cid = store.put_context(raw)
    assert store.resolve(cid, "raw") == raw
    assert cid == context_hash(raw)
