"""Synthetic log generator: reproducibility, universe shape, ordering, and
the TSV round trip."""

from __future__ import annotations

import pytest

from prefx.corpus import normalize_query, read_log_tsv
from prefx.synth import (
    SynthConfig,
    build_universe,
    generate_logs,
    write_logs_tsv,
)


def small_cfg(**kw) -> SynthConfig:
    base = dict(n_sessions=80, n_users=15, n_brands=6, seed=3)
    base.update(kw)
    return SynthConfig(**base)


class TestDeterminism:
    def test_same_config_same_records(self):
        a, meta_a = generate_logs(small_cfg())
        b, meta_b = generate_logs(small_cfg())
        assert a == b
        assert meta_a == meta_b

    def test_different_seed_differs(self):
        a, _ = generate_logs(small_cfg())
        b, _ = generate_logs(small_cfg(seed=4))
        assert a != b


class TestUniverse:
    def test_size_matches_meta(self):
        cfg = small_cfg(n_brands=5)
        universe = build_universe(cfg)
        # per brand: 16 bare-category queries + 16 * 12 modifier queries
        assert len(universe.queries) == 5 * (16 + 16 * 12)
        _, meta = generate_logs(cfg)
        assert meta["universe_size"] == len(universe.queries)

    def test_brand_leads_every_query(self):
        universe = build_universe(small_cfg())
        brands = {t["brand"] for t in universe.topics}
        for q in universe.queries:
            assert q.split()[0] in brands

    def test_validation(self):
        with pytest.raises(ValueError, match="n_brands"):
            build_universe(small_cfg(n_brands=0))
        with pytest.raises(ValueError, match=">= 2"):
            build_universe(small_cfg(cats_per_brand=1))
        with pytest.raises(ValueError, match=">= 2"):
            build_universe(small_cfg(mods_per_pair=1))


class TestGeneratedLogs:
    def test_sorted_by_user_then_time(self):
        records, _ = generate_logs(small_cfg())
        keys = [(r.user_id, r.timestamp) for r in records]
        assert keys == sorted(keys)

    def test_queries_normalize_into_the_universe(self):
        # Stylized records (casing, trailing period) must still normalize
        # back to a canonical universe query.
        cfg = small_cfg(n_sessions=300, stylize_prob=0.5)
        universe = build_universe(cfg)
        records, _ = generate_logs(cfg)
        stylized = 0
        for rec in records:
            assert normalize_query(rec.query) in universe.queries, rec.query
            stylized += rec.query != normalize_query(rec.query)
        assert stylized > 0

    def test_meta_boundaries(self):
        cfg = small_cfg()
        _, meta = generate_logs(cfg)
        span = cfg.span_days * 86400
        assert meta["n_sessions"] == cfg.n_sessions
        assert meta["suggested_dev_boundary"] == cfg.start_ts + int(span * 0.8)
        assert meta["suggested_test_boundary"] == cfg.start_ts + int(span * 0.9)

    def test_timestamps_inside_span(self):
        cfg = small_cfg()
        records, _ = generate_logs(cfg)
        for r in records:
            assert r.timestamp >= cfg.start_ts
        # Session starts are drawn inside the span; short walks keep the
        # overhang negligible relative to a day.
        assert max(r.timestamp for r in records) < cfg.start_ts + (cfg.span_days + 1) * 86400


class TestTsvRoundTrip:
    def test_write_and_read_back(self, tmp_path):
        records, _ = generate_logs(small_cfg())
        path = tmp_path / "logs.tsv"
        write_logs_tsv(path, records)
        first = path.read_text().splitlines()[0].split("\t")
        assert len(first) == 3
        back = read_log_tsv(path)
        assert len(back) == len(records)
        assert back[0].user_id == records[0].user_id
        assert back[0].query == records[0].query
        assert back[0].timestamp == records[0].timestamp
