import multiprocessing as mp
import os
import shutil
import tempfile
import threading
import time
import unittest
from os import PathLike

import numpy as np
from filelock import FileLock

from stoch_rnn.cache import DiskFeatureCache, MemoryFeatureCache, feature_key
from stoch_rnn.pool import TaskPool, pool_map


# Helper run in a separate process: every process tries to write its own value under the same key
def write_feature_process(cache_dir: str | PathLike, value: float, result_queue) -> None:
    cache = DiskFeatureCache(working_dir=cache_dir)
    stored = cache.add("shared", np.full(3, value))
    result_queue.put(float(stored[0]))


class TestMemoryFeatureCache(unittest.TestCase):
    def test_add_and_get(self):
        cache = MemoryFeatureCache()
        self.assertTrue(cache.is_empty())
        stored = cache.add("a", [1.0, 2.0])
        np.testing.assert_array_equal(cache.get("a"), [1.0, 2.0])
        self.assertIn("a", cache)
        self.assertIsNone(cache.get("b"))
        with self.assertRaises(ValueError):
            stored[0] = 5.0

    def test_first_writer_wins(self):
        cache = MemoryFeatureCache()
        cache.add("a", np.zeros(2))
        returned = cache.add("a", np.ones(2))
        np.testing.assert_array_equal(returned, np.zeros(2))
        self.assertEqual(len(cache), 1)

    def test_get_or_compute(self):
        cache = MemoryFeatureCache()
        calls = []

        def compute():
            calls.append(1)
            return np.arange(3.0)

        cache.get_or_compute("k", compute)
        cache.get_or_compute("k", compute)
        self.assertEqual(len(calls), 1)

    def test_remove_and_clear(self):
        cache = MemoryFeatureCache()
        for key in ("a", "b", "c"):
            cache.add(key, np.zeros(1))
        cache.remove("a")
        self.assertEqual(sorted(cache), ["b", "c"])
        cache.clear()
        self.assertTrue(cache.is_empty())

    def test_concurrent_writers(self):
        cache = MemoryFeatureCache()
        results = pool_map(lambda i: float(cache.add("shared", np.full(2, float(i)))[0]), range(16), num_workers=8)
        self.assertEqual(len(set(results)), 1)
        self.assertEqual(len(cache), 1)


class TestDiskFeatureCache(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        if os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_persists_between_instances(self):
        key = feature_key("abc123", "hold", None)
        DiskFeatureCache(self.temp_dir).add(key, np.eye(2))
        other = DiskFeatureCache(self.temp_dir)
        np.testing.assert_array_equal(other.get(key), np.eye(2))
        self.assertEqual(other.keys(), [key])

    def test_first_writer_wins(self):
        cache = DiskFeatureCache(self.temp_dir)
        cache.add("k", np.zeros(2))
        np.testing.assert_array_equal(cache.add("k", np.ones(2)), np.zeros(2))
        np.testing.assert_array_equal(DiskFeatureCache(self.temp_dir).get("k"), np.zeros(2))

    def test_remove(self):
        cache = DiskFeatureCache(self.temp_dir)
        cache.add("k", np.zeros(2))
        cache.remove("k")
        self.assertIsNone(cache.get("k"))
        self.assertTrue(cache.is_empty())

    def test_writer_waits_for_lock(self):
        cache = DiskFeatureCache(self.temp_dir)
        lock_file = os.path.join(self.temp_dir, "features", "k.npy.lock")
        with FileLock(lock_file, timeout=0.1):
            t = threading.Thread(target=cache.add, args=("k", np.zeros(2)))
            t.start()
            t.join(timeout=0.5)
            self.assertTrue(t.is_alive(), "The write should wait for the lock")
            self.assertIsNone(cache.get("k"))
        t.join(timeout=30)
        self.assertFalse(t.is_alive())
        np.testing.assert_array_equal(cache.get("k"), np.zeros(2))

    def test_concurrent_processes(self):
        ctx = mp.get_context("spawn")
        queue = ctx.Queue()
        processes = [ctx.Process(target=write_feature_process, args=(self.temp_dir, float(i), queue)) for i in range(4)]
        for p in processes:
            p.start()
        for p in processes:
            p.join(timeout=60)
            self.assertEqual(p.exitcode, 0)
        values = {queue.get(timeout=5) for _ in processes}
        self.assertEqual(len(values), 1)
        self.assertEqual(DiskFeatureCache(self.temp_dir).keys(), ["shared"])


class TestTaskPool(unittest.TestCase):
    def test_results_in_task_order(self):
        def slow_square(x):
            time.sleep(0.01 * (5 - x % 5))
            return x * x

        with TaskPool(num_workers=4) as pool:
            self.assertEqual(pool.map(slow_square, range(20)), [x * x for x in range(20)])

    def test_sequential_pool(self):
        self.assertEqual(pool_map(lambda x: x + 1, [1, 2, 3], num_workers=1), [2, 3, 4])

    def test_exception_is_raised(self):
        def fail_on_three(x):
            if x == 3:
                raise ValueError("three")
            return x

        for workers in (1, 4):
            with self.subTest(workers=workers), self.assertRaises(ValueError):
                pool_map(fail_on_three, range(6), num_workers=workers)

    def test_return_exceptions(self):
        def fail_on_odd(x):
            if x % 2:
                raise ValueError(str(x))
            return x

        with TaskPool(num_workers=3) as pool:
            results = pool.map(fail_on_odd, range(5), return_exceptions=True)
        self.assertEqual([r for r in results if not isinstance(r, Exception)], [0, 2, 4])
        self.assertIsInstance(results[1], ValueError)

    def test_empty_tasks(self):
        self.assertEqual(pool_map(lambda x: x, []), [])


if __name__ == "__main__":
    unittest.main()
