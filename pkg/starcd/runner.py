import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

logger = logging.getLogger("starcd")


class ParallelRunner:
    """
    Runs a function over a list of argument tuples and returns the results in
    argument order. With one worker everything runs inline; otherwise the jobs
    are handed to a process pool from an asyncio event loop.
    """

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))

    def map(self, func: Callable, jobs: Iterable[Sequence]) -> list:
        jobs = [tuple(job) for job in jobs]
        if self.workers == 1 or len(jobs) <= 1:
            return [func(*job) for job in jobs]
        return asyncio.run(self._amain(func, jobs))

    async def _amain(self, func: Callable, jobs: list[tuple]) -> list:
        loop = asyncio.get_running_loop()
        workers = min(self.workers, len(jobs))
        logger.debug("Dispatching %d jobs to %d worker processes", len(jobs), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [loop.run_in_executor(pool, func, *job) for job in jobs]
            return await asyncio.gather(*futures)
