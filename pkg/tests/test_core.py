import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedmon.core import (MAX_KEY_WORDS, Message, RoutingError, RoutingKey, RoutingPattern,
                         canonical_json, matches_text, parse_document, parse_pattern,
                         parse_routing_key, pattern_matches)
from oracles import match_backtrack

words = st.sampled_from(["a", "b", "ganglia", "sierra", "n1"])
keys = st.lists(words, min_size=1, max_size=8)
elements = st.lists(st.one_of(words, st.sampled_from(["*", "#"])), min_size=1, max_size=8)


class TestCanonicalJson:
    def test_sorted_compact_utf8(self):
        assert canonical_json({"b": 1, "a": [1, "é"]}) == '{"a":[1,"é"],"b":1}'.encode()

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(ValueError):
            canonical_json({"x": bad})

    def test_parse_rejects_nan_literal(self):
        with pytest.raises(ValueError):
            parse_document(b'{"x": NaN}')

    @given(st.recursive(
        st.none() | st.booleans() | st.integers() | st.text(max_size=8)
        | st.floats(allow_nan=False, allow_infinity=False),
        lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=4), inner,
                                                                     max_size=4),
        max_leaves=20))
    def test_round_trip(self, doc):
        assert parse_document(canonical_json(doc)) == doc
        assert canonical_json(parse_document(canonical_json(doc))) == canonical_json(doc)


class TestRoutingKeys:
    def test_parse(self):
        k = parse_routing_key("ganglia.sierra.n042.metrics")
        assert k.words == ("ganglia", "sierra", "n042", "metrics")
        assert str(k) == "ganglia.sierra.n042.metrics"

    @pytest.mark.parametrize("text", ["", "a..b", ".a", "a.", "a.*", "a.#", "a b"])
    def test_malformed_keys(self, text):
        with pytest.raises(RoutingError):
            parse_routing_key(text)

    def test_too_many_words_names_first_excess(self):
        text = ".".join(f"w{i}" for i in range(MAX_KEY_WORDS + 1))
        with pytest.raises(RoutingError, match=f"w{MAX_KEY_WORDS}"):
            parse_routing_key(text)

    def test_max_words_ok(self):
        assert len(parse_routing_key(".".join("x" * MAX_KEY_WORDS)).words) == MAX_KEY_WORDS

    @pytest.mark.parametrize("text", ["", "a..#", "a.*x", "#b"])
    def test_malformed_patterns(self, text):
        with pytest.raises(RoutingError):
            parse_pattern(text)

    def test_dataclass_validation(self):
        with pytest.raises(RoutingError):
            RoutingKey(())
        with pytest.raises(RoutingError):
            RoutingPattern(())


class TestMatching:
    @pytest.mark.parametrize("pattern,key,expected", [
        ("ganglia.*.*.metrics", "ganglia.sierra.n1.metrics", True),
        ("ganglia.*.*.metrics", "ganglia.sierra.metrics", False),
        ("ganglia.#", "ganglia", True),
        ("ganglia.#", "gangliax.a", False),
        ("#", "anything.at.all", True),
        ("#.metrics", "metrics", True),
        ("*", "a.b", False),
        ("glue2.*.*.job.*", "glue2.alamo.p0.job.start", True),
        ("glue2.*.*.job.*", "glue2.alamo.p0.queue", False),
        ("a.#.b.#.c", "a.b.c", True),
        ("a.#.b.#.c", "a.x.c", False),
    ])
    def test_examples(self, pattern, key, expected):
        assert pattern_matches(pattern, key) is expected

    @given(elements, keys)
    def test_agrees_with_backtracking(self, pat, key):
        expected = match_backtrack(pat, key)
        assert pattern_matches(RoutingPattern(tuple(pat)), RoutingKey(tuple(key))) is expected
        assert matches_text(RoutingPattern(tuple(pat)), ".".join(key)) is expected

    @given(keys)
    def test_literal_pattern_matches_only_itself(self, key):
        assert pattern_matches(".".join(key), ".".join(key))

    @given(keys)
    def test_hash_matches_everything(self, key):
        assert pattern_matches("#", RoutingKey(tuple(key)))

    def test_exhaustive_small(self):
        alphabet = ["a", "b"]
        toks = alphabet + ["*", "#"]
        pats = [p for n in range(1, 4) for p in itertools.product(toks, repeat=n)]
        ks = [k for n in range(1, 4) for k in itertools.product(alphabet, repeat=n)]
        for p in pats:
            for k in ks:
                assert pattern_matches(RoutingPattern(p), RoutingKey(k)) == \
                    match_backtrack(list(p), list(k)), (p, k)


class TestMessage:
    def test_create(self):
        m = Message.create("ganglia.s.n.metrics", {"b": 2, "a": 1}, published_at=1.23456789)
        assert m.body == b'{"a":1,"b":2}'
        assert m.payload == {"a": 1, "b": 2}
        assert m.payload_size == 13
        assert m.published_at == 1.234568
        assert m.key_text == "ganglia.s.n.metrics"

    def test_bad_key(self):
        with pytest.raises(RoutingError):
            Message.create("bad..key", {})
