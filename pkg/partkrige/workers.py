"""Process-pool fan-out for independent units of work."""

from __future__ import annotations

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Callable, Generic, Iterable, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class TaskOutcome(Generic[T]):
    """Either a result or the formatted traceback of the failure."""

    index: int
    result: T | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _run_one(fn: Callable[[Any], T], index: int, task: Any) -> TaskOutcome[T]:
    try:
        return TaskOutcome(index=index, result=fn(task))
    except Exception:
        return TaskOutcome(index=index, error=traceback.format_exc())


def map_tasks(
    fn: Callable[[Any], T],
    tasks: Iterable[Any],
    jobs: int = 1,
    progress_cb: Callable[[int, int], None] | None = None,
) -> list[TaskOutcome[T]]:
    """Run ``fn`` over ``tasks``; outcomes come back in task order.

    ``fn`` and every task must be picklable when ``jobs > 1``. Failures never
    raise here, callers inspect ``TaskOutcome.error``.
    """
    tasks = list(tasks)
    total = len(tasks)
    outcomes: list[TaskOutcome[T] | None] = [None] * total

    if jobs <= 1 or total <= 1:
        for i, task in enumerate(tasks):
            outcomes[i] = _run_one(fn, i, task)
            if progress_cb:
                progress_cb(i + 1, total)
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, total)) as pool:
            futures = {pool.submit(_run_one, fn, i, task): i for i, task in enumerate(tasks)}
            done = 0
            for future in as_completed(futures):
                i = futures[future]
                try:
                    outcomes[i] = future.result()
                except Exception:
                    # worker process died or the result did not unpickle
                    outcomes[i] = TaskOutcome(index=i, error=traceback.format_exc())
                done += 1
                if progress_cb:
                    progress_cb(done, total)

    failed = sum(1 for o in outcomes if o is not None and not o.ok)
    if failed:
        logger.debug("%d of %d tasks failed", failed, total)
    return [o for o in outcomes if o is not None]
