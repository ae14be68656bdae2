"""
Unit tests for memo tables.

Tests hits and misses, LRU eviction, and single computation under
concurrent access.
"""

import threading
import time

import pytest

from core.cache_manager import MemoTable


class TestMemoTable:
    """Test suite for MemoTable class"""

    def test_basic_set_and_get(self):
        """Test basic set and get operations"""
        table = MemoTable('test', max_size=10)

        table.set('key1', 'value1')
        assert table.get('key1') == 'value1'

        table.set(('tuple', 2), {'nested': 'dict'})
        assert table.get(('tuple', 2)) == {'nested': 'dict'}

    def test_miss(self):
        """A missing key returns None and counts as a miss"""
        table = MemoTable('test')
        assert table.get('absent') is None
        assert table.stats()['misses'] == 1

    def test_get_or_compute_runs_once(self):
        """The second lookup is served from the table"""
        table = MemoTable('test')
        calls = []

        def compute():
            calls.append(1)
            return 42

        assert table.get_or_compute('k', compute) == 42
        assert table.get_or_compute('k', compute) == 42
        assert len(calls) == 1
        stats = table.stats()
        assert stats['hits'] == 1
        assert stats['misses'] == 1
        assert stats['hit_rate'] == 50.0

    def test_lru_eviction(self):
        """The least recently used entry is evicted first"""
        table = MemoTable('test', max_size=2)
        table.set('a', 1)
        table.set('b', 2)
        table.get('a')
        table.set('c', 3)

        assert 'a' in table
        assert 'b' not in table
        assert 'c' in table
        assert len(table) == 2
        assert table.stats()['evictions'] == 1

    def test_clear_and_reset_stats(self):
        table = MemoTable('test')
        table.get_or_compute('k', lambda: 1)
        table.clear()
        assert len(table) == 0

        table.reset_stats()
        assert table.stats()['misses'] == 0

    def test_concurrent_get_or_compute(self):
        """Concurrent readers of one key compute it exactly once"""
        table = MemoTable('test')
        calls = []

        def compute():
            calls.append(1)
            time.sleep(0.01)
            return 'value'

        results = []

        def worker():
            results.append(table.get_or_compute('shared', compute))

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        assert results == ['value'] * 8
        assert len(calls) == 1

    def test_distinct_keys_compute_in_parallel(self):
        """Builds for different keys do not wait on each other"""
        table = MemoTable('test')
        barrier = threading.Barrier(2, timeout=5)

        def compute(tag):
            def run():
                barrier.wait()
                return tag
            return run

        results = {}

        def worker(tag):
            results[tag] = table.get_or_compute(tag, compute(tag))

        threads = [threading.Thread(target=worker, args=(tag,)) for tag in ('a', 'b')]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        assert results == {'a': 'a', 'b': 'b'}
        assert not barrier.broken
        assert table.stats()['misses'] == 2

    def test_failed_compute_is_not_stored(self):
        """An exception leaves the key absent and a later call retries"""
        table = MemoTable('test')

        def boom():
            raise RuntimeError('solve failed')

        with pytest.raises(RuntimeError):
            table.get_or_compute('k', boom)
        assert 'k' not in table
        assert table.get_or_compute('k', lambda: 7) == 7


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
