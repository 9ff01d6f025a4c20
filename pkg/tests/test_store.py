import threading
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmon.store import (HybridStore, JsonPathError, KeyFields, QueryFilter, StoreError,
                          extract_keys, parse_json_path, parse_path_predicate)
from fedmon.xform import sources as src
from corpora import random_query, random_records
from oracles import scan_query


def kf(kind, resource="r", site="s", source="src", service=None, t=None):
    return KeyFields(source, site, resource, service, kind, t)


class TestJsonPath:
    def test_steps(self):
        assert parse_json_path('$.a[2]["b.c"].@name') == ("a", 2, "b.c", "@name")
        assert parse_json_path("$") == ()

    @pytest.mark.parametrize("bad", ["a.b", "$..a", "$.[x]", "$[", '$["a'])
    def test_malformed(self, bad):
        with pytest.raises(JsonPathError):
            parse_json_path(bad)

    def test_predicates(self):
        doc = {"host": {"@name": "n1", "load": 0.5, "up": True, "m": [{"v": 1}]}}
        assert parse_path_predicate("$.host.@name=n1").test(doc)
        assert parse_path_predicate("$.host.load=0.5").test(doc)
        assert parse_path_predicate("$.host.up=true").test(doc)
        assert not parse_path_predicate("$.host.up=1").test(doc)
        assert parse_path_predicate("$.host.m[0].v=1").test(doc)
        assert parse_path_predicate("$.host.m").test(doc)
        assert not parse_path_predicate("$.host.zz").test(doc)
        assert not parse_path_predicate("$.host.m[5]").test(doc)

    def test_scalar_only(self):
        with pytest.raises(JsonPathError):
            parse_path_predicate('$.a=[1]')


class TestSemantics:
    def test_upsert_replaces(self):
        s = HybridStore()
        a = s.upsert_latest({"v": 1}, kf("partition"))
        b = s.upsert_latest({"v": 2}, kf("partition"))
        assert b > a and len(s) == 1 and s.get(a) is None
        assert s.get(b).document == {"v": 2}
        assert s.update_count == 2

    def test_series_append(self):
        s = HybridStore()
        for i in range(3):
            s.append_series({"i": i}, kf("metrics"))
        hits = s.query(QueryFilter(kind="metrics"))
        assert [h.document["i"] for h in hits] == [2, 1, 0]
        assert [h.document["i"] for h in s.query(QueryFilter(kind="metrics", latest_only=True))] == [2]

    def test_kind_mismatch(self):
        s = HybridStore()
        with pytest.raises(StoreError):
            s.upsert_latest({}, kf("metrics"))
        with pytest.raises(StoreError):
            s.append_series({}, kf("queue"))

    def test_filter_needs_predicate(self):
        with pytest.raises(StoreError):
            QueryFilter()
        with pytest.raises(StoreError):
            QueryFilter(limit=-1)

    def test_rejects_non_json(self):
        with pytest.raises(ValueError):
            HybridStore().append_series({"x": float("nan")}, kf("metrics"))

    def test_time_window(self):
        s = HybridStore()
        for t in (10.0, 20.0, 30.0):
            s.append_series({"t": t}, kf("metrics", t=t))
        s.append_series({"t": None}, kf("metrics"))
        got = s.query(QueryFilter(since=15, until=30))
        assert [r.document["t"] for r in got] == [20.0]

    def test_prune_series_only(self):
        s = HybridStore()
        s.append_series({}, kf("metrics"), now=100)
        s.append_series({}, kf("metrics"), now=200)
        s.upsert_latest({}, kf("queue"), now=100)
        assert s.prune(50, now=200) == 1
        assert Counter(r.keys.kind for r in s.records.values()) == {"metrics": 1, "queue": 1}

    def test_persistence_round_trip(self, tmp_path):
        s = HybridStore()
        s.upsert_latest({"a": "é"}, kf("queue"))
        s.append_series({"b": [1, 2]}, kf("metrics", t=5.0))
        p = tmp_path / "store.jsonl"
        assert s.save(p) == 2
        t = HybridStore.load(p)
        assert t == s
        rid = t.upsert_latest({"a": 2}, kf("queue"))
        assert rid > max(s.records) and len(t) == 2

    def test_load_rejects_corruption(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text("{not json}\n")
        with pytest.raises(StoreError):
            HybridStore.load(p)


class TestKeyExtraction:
    def test_every_source(self):
        rng = src.seeded_rng(0)
        t = src.EPOCH_BASE
        cases = {
            "ganglia": (src.transform("ganglia", src.ganglia_record("sierra", "n1", t, rng)),
                        ("sierra", "n1", None, "metrics")),
            "inca": (src.transform("inca", src.inca_record("sierra", "svc1", "t1", t, rng)),
                     ("sierra", "svc1", "t1", "test")),
            "perfsonar": (src.transform("perfsonar", src.perfsonar_record("a", "b", t, rng)),
                          ("a", "b", None, "bandwidth")),
            "snapp": (src.snapp_record("link1", "a", "b", t, rng),
                      ("a", "link1", None, "traffic")),
            "netlogger": (src.transform("netlogger",
                                        src.netlogger_record("e", "c", "vm.start", t, rng)),
                          (None, "c", "e", "event")),
        }
        for source, (doc, (site, resource, service, kind)) in cases.items():
            k = extract_keys(doc, source)
            assert (k.resource, k.service, k.kind) == (resource, service, kind), source
            if site is not None:
                assert k.site == site
            assert k.event_time == pytest.approx(t), source

    def test_glue2_kinds(self):
        rng = src.seeded_rng(0)
        t = src.EPOCH_BASE
        p = extract_keys(src.glue2_partition_record("alamo", "p0", t, 5, 2, rng), "glue2")
        q = extract_keys(src.glue2_queue_record("alamo", "p0", t, ["1", "2"], 1), "glue2")
        j = extract_keys(src.glue2_job_record("alamo", "p0", "77", "start", t, rng), "glue2")
        assert (p.kind, p.site, p.resource) == ("partition", "alamo", "p0")
        assert (q.kind, q.resource) == ("queue", "p0")
        assert (j.kind, j.service) == ("job.start", "77")

    def test_garbage_never_fails(self):
        for source in ("ganglia", "inca", "perfsonar", "snapp", "netlogger", "glue2", "other"):
            for doc in (None, [], {}, {"host": 3}, "x"):
                extract_keys(doc, source)


ops = st.lists(st.tuples(st.sampled_from(["partition", "queue", "metrics", "job.end"]),
                         st.sampled_from(["r0", "r1", "r2"]),
                         st.sampled_from(["s0", "s1"])), max_size=60)


@settings(max_examples=150)
@given(ops)
def test_latest_only_law(seq):
    s = HybridStore()
    last = {}
    appended = Counter()
    for i, (kind, res, site) in enumerate(seq):
        k = kf(kind, resource=res, site=site)
        if kind in ("partition", "queue"):
            last[k.snapshot_key] = s.upsert_latest({"i": i}, k)
        else:
            s.append_series({"i": i}, k)
            appended[(site, res, kind)] += 1
    per_key = Counter(r.keys.snapshot_key for r in s.records.values()
                      if r.keys.kind in ("partition", "queue"))
    assert all(n == 1 for n in per_key.values())
    assert {key: s.query(QueryFilter(source="src", site=key[1], resource=key[2],
                                     kind=key[3]))[0].record_id for key in last} == last
    for (site, res, kind), n in appended.items():
        assert len(s.query(QueryFilter(site=site, resource=res, kind=kind))) == n


def test_query_equals_full_scan_on_10k_records():
    store, plain, rng = random_records(10_000, seed=2024)
    assert len(store) == len(plain)
    for _ in range(300):
        kw, texts, preds = random_query(rng)
        got = [r.record_id for r in store.query(QueryFilter(paths=texts, **kw))]
        assert got == scan_query(plain, predicates=preds, **kw), (kw, texts)


def test_concurrent_writers_and_readers():
    s = HybridStore()
    errors = []

    def writer(w):
        try:
            for i in range(500):
                s.append_series({"w": w, "i": i}, kf("metrics", resource=f"w{w}"))
                s.upsert_latest({"w": w, "i": i}, kf("queue", resource=f"w{w}"))
        except Exception as exc:
            errors.append(exc)

    def reader():
        try:
            for _ in range(200):
                for r in s.query(QueryFilter(kind="queue")):
                    assert r.keys.kind == "queue"
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=writer, args=(w,)) for w in range(8)]
    threads += [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(s.query(QueryFilter(kind="metrics"))) == 4000
    latest = s.query(QueryFilter(kind="queue"))
    assert sorted(r.document["w"] for r in latest) == list(range(8))
    assert all(r.document["i"] == 499 for r in latest)
    assert s.update_count == 8000
