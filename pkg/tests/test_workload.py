import dataclasses
import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmon.core import RoutingKey, canonical_json
from fedmon.workload import (BUNDLED, DocumentFactory, InfrastructureProfile, ProfileError,
                             build_subscription_matrix, capacity_headroom, expected_fanout,
                             expected_publish_rate, fanout, load_profile, pad_document,
                             payload_plan, run_emulation, schedule, stream_rates)
from fedmon.workload.generators import _jobs, build_topology
from fedmon.workload.matrix import SAMPLE_KEYS
from fedmon.workload.profiles import profile_from_dict
from fedmon.workload.rates import queue_document_bytes
from fedmon.xform.sources import seeded_rng
from oracles import fanout_oracle, headroom_oracle, rate_oracle

# profile inputs: partitions, simultaneous jobs, jobs/hour, services, nodes, links, then subscribers
TABLE_I = {
    "futuregrid": (14, 477, 78, 77, 608, 6, (1, 1, 1, 1, 2, 0)),
    "futuregridx2": (28, 954, 154, 144, 1216, 12, (1, 1, 1, 2, 4, 0)),
    "xsede": (13, 6600, 1090, 260, None, None, (1, 1, 1, 2, 1, 10)),
    "xsedex2": (26, 13200, 2169, 520, None, None, (1, 1, 1, 4, 1, 20)),
    "osg": (200, 42300, 21254, 4000, None, None, (1, 1, 1, 2, 1, 20)),
    "osgx2": (400, 84600, 42455, 8000, None, None, (1, 1, 1, 4, 1, 40)),
}
ROLE_ORDER = ("info_databases", "web_portals", "accounting_systems", "metaschedulers",
              "monitoring_systems", "science_gateways")


def oracle_rate(p):
    lo, hi = p.inca_period_range
    return sum(rate_oracle(p.node_count, p.link_count, p.partitions, p.jobs_per_hour,
                           p.services, p.tests_per_service, lo, hi).values())


class TestProfiles:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_match_table(self, name):
        p = load_profile(name)
        parts, sim, jph, svc, nodes, links, subs = TABLE_I[name]
        assert (p.partitions, p.simultaneous_jobs, p.jobs_per_hour, p.services) == \
            (parts, sim, jph, svc)
        assert p.nodes == nodes and p.network_links == links
        assert tuple(p.subscribers.get(r, 0) for r in ROLE_ORDER) == subs
        assert p.inca_period_range == (900.0, 7200.0)

    def test_futuregrid_inca_inventory(self):
        p = load_profile("futuregrid")
        assert p.services * p.tests_per_service == pytest.approx(264)

    def test_load_from_file_and_stream(self, tmp_path):
        d = load_profile("futuregrid").to_dict()
        f = tmp_path / "p.json"
        f.write_text(json.dumps(d))
        assert load_profile(f) == load_profile("futuregrid")
        with open(f) as fh:
            assert load_profile(fh) == load_profile("futuregrid")

    @pytest.mark.parametrize("patch,msg", [
        ({"nodes": -1}, "nodes"),
        ({"partitions": -3}, "partitions"),
        ({"inca_period_range": [10, 5]}, "inca_period_range"),
        ({"inca_period_range": [0, 5]}, "inca_period_range"),
        ({"subscribers": {"web_portals": -1}}, "subscriber"),
        ({"subscribers": {"wizards": 1}}, "unknown subscriber"),
        ({"bogus": 1}, "unknown profile fields"),
    ])
    def test_validation(self, patch, msg):
        d = load_profile("futuregrid").to_dict()
        d.update(patch)
        with pytest.raises(ProfileError, match=msg):
            profile_from_dict(d)

    def test_missing_fields(self):
        with pytest.raises(ProfileError, match="missing"):
            profile_from_dict({"name": "x"})

    def test_unknown_and_malformed(self, tmp_path):
        with pytest.raises(ProfileError):
            load_profile("no-such-profile")
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        with pytest.raises(ProfileError):
            load_profile(bad)
        bad.write_text("{nope")
        with pytest.raises(ProfileError):
            load_profile(bad)


class TestRates:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_closed_form_matches_oracle(self, name):
        p = load_profile(name)
        assert expected_publish_rate(p) == pytest.approx(oracle_rate(p), rel=1e-12)

    def test_futuregrid_near_table_ii(self):
        rate = expected_publish_rate(load_profile("futuregrid"))
        assert rate == pytest.approx(41.46, rel=0.01)

    def test_zero_profile(self):
        z = InfrastructureProfile("zero", 0, 0, 0, 0, 0, 0, tests_per_service=0)
        assert expected_publish_rate(z) == 0

    @settings(max_examples=50)
    @given(st.integers(0, 500), st.integers(0, 5000), st.floats(0, 1e4), st.integers(0, 500),
           st.integers(0, 2000), st.integers(0, 50), st.floats(0, 10))
    def test_doubling_is_exactly_linear(self, parts, sim, jph, svc, nodes, links, tps):
        p = InfrastructureProfile("p", parts, sim, jph, svc, nodes, links, tests_per_service=tps)
        assert expected_publish_rate(p.scaled(2)) == pytest.approx(2 * expected_publish_rate(p),
                                                                   rel=1e-12, abs=1e-12)

    def test_stream_breakdown(self):
        r = stream_rates(load_profile("futuregrid"))
        assert r["ganglia"] == pytest.approx(608 / 15)
        assert r["glue2.job"] == pytest.approx(3 * 78 / 3600)

    @pytest.mark.parametrize("name", BUNDLED)
    def test_payload_plan_hits_mean(self, name):
        p = load_profile(name)
        plan = payload_plan(p)
        lo, hi = p.inca_period_range
        rates = rate_oracle(p.node_count, p.link_count, p.partitions, p.jobs_per_hour,
                            p.services, p.tests_per_service, lo, hi)
        mean = sum(rates[c] * plan[c] for c in rates) / sum(rates.values())
        assert mean == pytest.approx(p.mean_message_bytes, abs=1.0)
        assert plan["glue2.queue"] == round(1024 + 120 * p.simultaneous_jobs / p.partitions)
        assert plan["glue2.queue"] == queue_document_bytes(p)

    @pytest.mark.parametrize("delivered,capacity,expected", [
        (1101, 28300, 0.961), (3254, 28300, 0.885), (0, 5, 1.0), (10, 5, 0.0)])
    def test_headroom(self, delivered, capacity, expected):
        assert capacity_headroom(delivered, capacity) == pytest.approx(expected, abs=1e-3)
        assert capacity_headroom(delivered, capacity) == headroom_oracle(delivered, capacity)

    def test_headroom_needs_capacity(self):
        with pytest.raises(ValueError):
            capacity_headroom(1, 0)


class TestMatrix:
    def test_futuregrid_instances(self):
        m = build_subscription_matrix(load_profile("futuregrid"))
        assert len(m) == 6
        assert Counter(s.role.name for s in m) == {
            "info_database": 1, "web_portal": 1, "accounting": 1, "metascheduler": 1,
            "monitoring": 2}
        assert len({s.queue for s in m}) == 6

    @pytest.mark.parametrize("name", BUNDLED)
    def test_fanout_matches_role_oracle(self, name):
        p = load_profile(name)
        m = build_subscription_matrix(p)
        for cls, key in SAMPLE_KEYS.items():
            assert fanout(key, m) == fanout_oracle(p.subscribers, cls), (name, cls)

    def test_futuregrid_examples(self):
        m = build_subscription_matrix(load_profile("futuregrid"))
        assert fanout(RoutingKey(("ganglia", "s", "n", "metrics")), m) == 4
        # info DB, portal, accounting, one metascheduler; no gateways
        assert fanout(RoutingKey(("glue2", "s", "p", "job", "start")), m) == 4

    def test_expected_fanout_weighting(self):
        p = load_profile("futuregrid")
        lo, hi = p.inca_period_range
        rates = rate_oracle(p.node_count, p.link_count, p.partitions, p.jobs_per_hour,
                            p.services, p.tests_per_service, lo, hi)
        want = sum(r * fanout_oracle(p.subscribers, c) for c, r in rates.items()) / \
            sum(rates.values())
        assert expected_fanout(p, build_subscription_matrix(p)) == pytest.approx(want)


class TestSchedule:
    def test_deterministic_and_ordered(self):
        p = load_profile("futuregrid")
        a = list(schedule(p, 120, seed=3))
        b = list(schedule(p, 120, seed=3))
        assert a == b
        assert all(x.t <= y.t for x, y in zip(a, a[1:]))
        assert all(0 <= e.t < 120 for e in a)
        assert a != list(schedule(p, 120, seed=4))

    def test_zero_duration(self):
        assert list(schedule(load_profile("futuregrid"), 0)) == []

    def test_periodic_sources_fire_once_per_period(self):
        p = load_profile("futuregrid")
        counts = Counter(e.entity for e in schedule(p, 150) if e.stream == "ganglia")
        assert len(counts) == 608
        assert set(counts.values()) == {10}

    def test_job_rates_stationary(self):
        p = load_profile("xsede")
        lam = p.jobs_per_hour / 3600
        dur = 4 * 3600
        states = Counter(ent[3] for _, _, ent in _jobs(seeded_rng(1, "j"), p,
                                                       build_topology(p).partitions, dur))
        for s in ("submit", "start", "end"):
            assert states[s] == pytest.approx(lam * dur, rel=0.1), s

    def test_topology_sizes(self):
        p = load_profile("futuregrid")
        t = build_topology(p)
        assert (len(t.nodes), len(t.links), len(t.partitions), len(t.tests)) == (608, 6, 14, 264)


class TestDocuments:
    @given(st.dictionaries(st.text(max_size=5), st.integers(), max_size=5), st.integers(0, 3000))
    def test_pad(self, doc, target):
        out = pad_document(doc, target)
        natural = len(canonical_json(doc))
        size = len(canonical_json(out))
        if target > natural + len(',"_pad":""'):
            assert size == target
        else:
            assert size >= natural
        stripped = {k: v for k, v in out.items() if k != "_pad"}
        assert stripped == {k: v for k, v in doc.items() if k != "_pad"} or "_pad" in doc

    def test_factory_sizes(self):
        p = load_profile("futuregrid")
        f = DocumentFactory(p, seed=1)
        plan = payload_plan(p)
        seen = set()
        for ev in schedule(p, 300, seed=1):
            cls, key, doc = f.build(ev)
            size = len(canonical_json(doc))
            assert size >= plan[cls] or cls == "glue2.queue"
            assert key.words[0] == cls.split(".")[0]
            seen.add(cls)
        assert {"ganglia", "snapp", "glue2.partition", "glue2.queue"} <= seen

    def test_factory_deterministic(self):
        p = load_profile("futuregrid")
        evs = list(schedule(p, 30, seed=5))
        a = [DocumentFactory(p, 5).build(e) for e in evs]
        b = [DocumentFactory(p, 5).build(e) for e in evs]
        assert a == b


class TestEmulation:
    def test_zero_duration_report(self):
        r = run_emulation(load_profile("futuregrid"), 0, clock="virtual")
        assert r.total.published == 0 and r.published_rate == 0
        assert r.rows()[-1]["Published Throughput (msg/sec)"] == 0

    def test_totals_are_sums(self):
        r = run_emulation(load_profile("futuregrid"), 60, seed=2, clock="virtual")
        for field in ("published", "published_bytes", "consumed", "consumed_bytes"):
            assert getattr(r.total, field) == sum(getattr(v, field) for v in r.sources.values())
        assert r.total.consumed == r.delivered_count
        assert r.drop_count == 0
        assert r.fanout_measured == pytest.approx(r.fanout_oracle, rel=0.01)

    def test_same_seed_same_sequence(self):
        p = load_profile("futuregrid")
        a = run_emulation(p, 60, seed=7, clock="virtual")
        b = run_emulation(p, 60, seed=7, clock="virtual")
        assert a.sequence_digest == b.sequence_digest
        assert {k: v.published for k, v in a.sources.items()} == \
            {k: v.published for k, v in b.sources.items()}

    def test_no_subscribers_no_deliveries(self):
        p = dataclasses.replace(load_profile("futuregrid"), subscribers={})
        r = run_emulation(p, 30, clock="virtual")
        assert r.total.published > 0
        assert r.delivered_count == 0 and r.total.consumed == 0

    def test_store_backend_updates_track_publishes(self):
        r = run_emulation(load_profile("futuregrid"), 120, "store", seed=1, clock="virtual")
        assert r.store.updates == r.total.published
        # one select per subscriber instance per minute
        assert r.store.selects == 6 * 2
        assert r.store_handle is not None and len(r.store_handle) > 0

    def test_both_backend(self):
        r = run_emulation(load_profile("futuregrid"), 30, "both", seed=1, clock="virtual")
        assert r.store.updates == r.total.published
        assert r.fanout_measured == pytest.approx(r.fanout_oracle, rel=1e-9)

    def test_remote_broker(self, server):
        _, ep = server
        r = run_emulation(load_profile("futuregrid"), 30, seed=1, clock="virtual", connect=ep)
        assert r.total.consumed == r.delivered_count > 0
        assert r.fanout_measured == pytest.approx(r.fanout_oracle, rel=1e-9)

    def test_unreachable_broker(self):
        from fedmon.workload import EmulationError
        with pytest.raises(EmulationError, match="unreachable"):
            run_emulation(load_profile("futuregrid"), 5, clock="virtual", connect="127.0.0.1:1")

    def test_bad_arguments(self):
        p = load_profile("futuregrid")
        with pytest.raises(ValueError):
            run_emulation(p, 5, "disk")
        with pytest.raises(ValueError):
            run_emulation(p, -1)

    def test_wall_clock_paces(self):
        r = run_emulation(load_profile("futuregrid"), 4, seed=1, clock="wall", speed=2.0)
        assert 1.9 <= r.wall_seconds < 6
        assert r.published_rate == pytest.approx(41.5, rel=0.15)


class TestClocks:
    def test_virtual_refuses_backwards(self):
        from fedmon.workload.emulate import EmulationError, VirtualClock
        c = VirtualClock()
        c.wait_until(5)
        with pytest.raises(EmulationError):
            c.wait_until(4)

    def test_wall_detects_backwards_source(self):
        from fedmon.workload.emulate import EmulationError, WallClock
        ticks = iter([100.0, 105.0, 103.0])
        c = WallClock(source=lambda: next(ticks))
        assert c.now() == 5.0
        with pytest.raises(EmulationError):
            c.now()
