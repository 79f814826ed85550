"""
**Module:** `stoch_rnn.cache`

This module implements write-once caches for per-path features (basis means, partial signatures).
Features only depend on the path, the reservoir and the integration method, so they are computed once and reused by
every restart, grid point and trial of an experiment.

`MemoryFeatureCache` keeps arrays in the current process. `DiskFeatureCache` stores them as `.npy` files and can be
shared between processes: every entry is written under a file lock, and the first writer wins.
Both caches are thread-safe.

Examples:
    ```python
    from stoch_rnn.cache import DiskFeatureCache, MemoryFeatureCache
    from stoch_rnn.features import dataset_basis_means

    cache = DiskFeatureCache(working_dir="./cache")
    means = dataset_basis_means(dataset, system, cache=cache)
    ```
"""

import os
from abc import ABC, abstractmethod
from os import PathLike
from pathlib import Path
from threading import RLock
from typing import Callable, Iterator

import numpy as np
from filelock import FileLock

from stoch_rnn.utils import DEFAULT_CACHE_DIR, logger


def feature_key(*parts: str | int | None) -> str:
    """Join key parts (fingerprints, method names, orders) into a cache key."""
    return "-".join(str(part) for part in parts)


class BaseFeatureCache(ABC):
    def __init__(self):
        self._lock = RLock()

    @abstractmethod
    def get(self, key: str) -> np.ndarray | None:
        """Return the cached array for `key`, or `None` when absent."""

    @abstractmethod
    def add(self, key: str, value: np.ndarray, verbose: bool = False) -> np.ndarray:
        """Store `value` under `key` unless an entry already exists.

        Args:
            key: The cache key.
            value: The array to store.
            verbose: Whether to log the write at INFO level.

        Returns:
            The cached array: `value` for the first writer, the existing entry otherwise.
        """

    @abstractmethod
    def remove(self, key: str) -> None: ...

    @abstractmethod
    def keys(self) -> list[str]: ...

    def get_or_compute(self, key: str, compute: Callable[[], np.ndarray], verbose: bool = False) -> np.ndarray:
        cached = self.get(key)
        if cached is not None:
            return cached
        return self.add(key, compute(), verbose=verbose)

    def is_empty(self) -> bool:
        return len(self.keys()) == 0

    def clear(self) -> None:
        for key in self.keys():
            self.remove(key)

    def __contains__(self, key: str) -> bool:
        return self.get(key) is not None

    def __len__(self) -> int:
        return len(self.keys())

    def __iter__(self) -> Iterator[str]:
        return iter(self.keys())


class MemoryFeatureCache(BaseFeatureCache):
    """In-process cache backed by a dictionary."""

    def __init__(self):
        super().__init__()
        self._cache: dict[str, np.ndarray] = {}

    def get(self, key: str) -> np.ndarray | None:
        with self._lock:
            return self._cache.get(key)

    def add(self, key: str, value: np.ndarray, verbose: bool = False) -> np.ndarray:
        value = np.array(value, dtype=np.float64)
        value.setflags(write=False)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
            self._cache[key] = value
        if verbose:
            logger.info("Cached features %s", key)
        return value

    def remove(self, key: str) -> None:
        with self._lock:
            self._cache.pop(key, None)

    def keys(self) -> list[str]:
        with self._lock:
            return list(self._cache.keys())


class DiskFeatureCache(BaseFeatureCache):
    """Cache storing each entry as `<working_dir>/features/<key>.npy`."""

    def __init__(self, working_dir: str | PathLike = DEFAULT_CACHE_DIR):
        super().__init__()
        self._dir = Path(working_dir) / "features"
        self._dir.mkdir(parents=True, exist_ok=True)

    def _file(self, key: str) -> Path:
        return self._dir / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        file = self._file(key)
        if not file.is_file():
            return None
        with FileLock(f"{file}.lock", timeout=60):
            if not file.is_file():
                return None
            value = np.load(file)
        value.setflags(write=False)
        return value

    def add(self, key: str, value: np.ndarray, verbose: bool = False) -> np.ndarray:
        file = self._file(key)
        # The first writer wins, also across processes sharing the directory
        with self._lock, FileLock(f"{file}.lock", timeout=60):
            if file.is_file():
                existing = np.load(file)
                existing.setflags(write=False)
                return existing
            tmp_file = file.with_name(f"{file.stem}.{os.getpid()}.tmp.npy")
            np.save(tmp_file, np.asarray(value, dtype=np.float64))
            tmp_file.replace(file)
        if verbose:
            logger.info("Cached features %s in %s", key, file)
        value = np.array(value, dtype=np.float64)
        value.setflags(write=False)
        return value

    def remove(self, key: str) -> None:
        file = self._file(key)
        with FileLock(f"{file}.lock", timeout=60):
            if file.exists():
                file.unlink()

    def keys(self) -> list[str]:
        return sorted(file.stem for file in self._dir.glob("*.npy") if not file.stem.endswith(".tmp"))
