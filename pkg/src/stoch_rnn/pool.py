"""
**Module:** `stoch_rnn.pool`

This module provides the `TaskPool` class, which maps a function over independent tasks (per-path features,
training restarts, Monte-Carlo trials, experiment grid points) on a pool of worker threads.
Results always come back in task order, so seeded computations do not depend on scheduling.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


class TaskPool:
    """
    A pool of worker threads running independent tasks.
    """

    def __init__(self, num_workers: int | None = None):
        """
        Initialize the task pool.

        Args:
            num_workers: The number of worker threads. Defaults to `cpu_count() - 1`. With one worker, tasks run
                sequentially in the calling thread.
        """
        self.num_workers = num_workers or max(1, mp.cpu_count() - 1)
        self._executor: ThreadPoolExecutor | None = None

    def __enter__(self) -> TaskPool:
        return self

    def __exit__(self, exc_type: Any, exc_value: Any, traceback: Any) -> None:
        self.close()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def _get_executor(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.num_workers)
        return self._executor

    def map(
        self,
        fn: Callable[[T], R],
        tasks: Iterable[T],
        *,
        show_progress: bool = False,
        desc: str = "Running tasks",
        return_exceptions: bool = False,
    ) -> list[R]:
        """
        Apply `fn` to every task and return the results in task order.

        Args:
            fn: The function to apply.
            tasks: The task arguments.
            show_progress: Display a tqdm progress bar.
            desc: Progress bar description.
            return_exceptions: Return raised exceptions in place of results instead of re-raising the first one.
        """
        tasks = list(tasks)
        if self.num_workers == 1 or len(tasks) <= 1:
            return self._map_sequential(fn, tasks, show_progress, desc, return_exceptions)

        executor = self._get_executor()
        futures = [executor.submit(fn, task) for task in tasks]
        index_of = {future: index for index, future in enumerate(futures)}
        results: list[Any] = [None] * len(futures)
        completed = as_completed(futures)
        if show_progress:
            from tqdm import tqdm  # type: ignore

            completed = tqdm(completed, total=len(futures), desc=desc)
        for future in completed:
            index = index_of[future]
            try:
                results[index] = future.result()
            except Exception as e:
                if not return_exceptions:
                    for pending in futures:
                        pending.cancel()
                    raise
                results[index] = e
        return results

    @staticmethod
    def _map_sequential(
        fn: Callable[[T], R], tasks: Sequence[T], show_progress: bool, desc: str, return_exceptions: bool
    ) -> list[R]:
        iterator: Iterable[T] = tasks
        if show_progress:
            from tqdm import tqdm  # type: ignore

            iterator = tqdm(tasks, desc=desc)
        results: list[Any] = []
        for task in iterator:
            try:
                results.append(fn(task))
            except Exception as e:
                if not return_exceptions:
                    raise
                results.append(e)
        return results


def pool_map(
    fn: Callable[[T], R],
    tasks: Iterable[T],
    num_workers: int | None = None,
    show_progress: bool = False,
    desc: str = "Running tasks",
) -> list[R]:
    """Map `fn` over `tasks` with a temporary `TaskPool`."""
    with TaskPool(num_workers) as pool:
        return pool.map(fn, tasks, show_progress=show_progress, desc=desc)
