"""
Thread-safe memo tables.

Networks memoize neighbor lists and phi values; the Green module memoizes
stabilized tables. Entries are pure functions of their key, so eviction only
costs recomputation. Backed by ``cachetools.LRUCache``.
"""

import logging
import threading
from typing import Any, Callable, Dict, Hashable, Optional

from cachetools import LRUCache

logger = logging.getLogger(__name__)


class MemoTable:
    """Thread-safe LRU memo table with hit/miss statistics"""

    def __init__(self, name: str, max_size: int = 100_000):
        """
        Initialize memo table.

        Args:
            name: Table name used in log lines
            max_size: Maximum number of memoized entries
        """
        self.name = name
        self.max_size = max_size
        self._cache: LRUCache = LRUCache(maxsize=max_size)
        self._lock = threading.RLock()
        self._pending: Dict[Hashable, threading.Lock] = {}
        self._stats = {'hits': 0, 'misses': 0, 'evictions': 0}

    def get(self, key: Hashable) -> Optional[Any]:
        """Return the memoized value or None"""
        with self._lock:
            if key in self._cache:
                self._stats['hits'] += 1
                return self._cache[key]
            self._stats['misses'] += 1
            return None

    def set(self, key: Hashable, value: Any) -> None:
        with self._lock:
            if key not in self._cache and len(self._cache) >= self.max_size:
                self._stats['evictions'] += 1
            self._cache[key] = value

    def get_or_compute(self, key: Hashable, compute: Callable[[], Any]) -> Any:
        """
        Return the memoized value for ``key``, computing and storing it on a miss.

        ``compute`` runs outside the table lock, so builds for different keys
        proceed in parallel. Callers racing on the same key wait on a per-key
        lock and the value is computed once.
        """
        with self._lock:
            if key in self._cache:
                self._stats['hits'] += 1
                return self._cache[key]
            key_lock = self._pending.setdefault(key, threading.Lock())

        with key_lock:
            with self._lock:
                if key in self._cache:
                    self._stats['hits'] += 1
                    return self._cache[key]
                self._stats['misses'] += 1
            try:
                value = compute()
            except BaseException:
                with self._lock:
                    self._pending.pop(key, None)
                raise
            with self._lock:
                if key not in self._cache and len(self._cache) >= self.max_size:
                    self._stats['evictions'] += 1
                self._cache[key] = value
                self._pending.pop(key, None)
            return value

    def __contains__(self, key: Hashable) -> bool:
        with self._lock:
            return key in self._cache

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)

    def clear(self) -> None:
        """Clear all entries"""
        with self._lock:
            count = len(self._cache)
            self._cache.clear()
            logger.debug(f"Memo table '{self.name}' cleared: {count} entries removed")

    def stats(self) -> Dict[str, Any]:
        """
        Get table statistics.

        Returns:
            Dictionary with hits, misses, evictions, hit rate and size
        """
        with self._lock:
            total = self._stats['hits'] + self._stats['misses']
            hit_rate = (self._stats['hits'] / total * 100) if total > 0 else 0
            return {
                'name': self.name,
                'hits': self._stats['hits'],
                'misses': self._stats['misses'],
                'evictions': self._stats['evictions'],
                'hit_rate': round(hit_rate, 2),
                'size': len(self._cache),
                'max_size': self.max_size,
            }

    def reset_stats(self) -> None:
        with self._lock:
            self._stats = {'hits': 0, 'misses': 0, 'evictions': 0}
