"""
Thread pools for the toolkit.

Every helper returns results in submission order, so aggregates never depend
on which worker finished first.
"""

import contextvars
import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

logger = logging.getLogger(__name__)

_threads = contextvars.ContextVar("deface_threads", default=1)
_executors = {}
_executors_lock = threading.Lock()


def current_threads() -> int:
    return _threads.get()


@contextmanager
def use_threads(threads):
    """Set the worker count for ops called from this context.

    Worker threads start with a fresh context, so nested calls made from
    inside a pool always run single-threaded.
    """
    token = _threads.set(max(1, int(threads or 1)))
    try:
        yield
    finally:
        _threads.reset(token)


def _executor(threads: int) -> ThreadPoolExecutor:
    with _executors_lock:
        executor = _executors.get(threads)
        if executor is None:
            executor = ThreadPoolExecutor(max_workers=threads, thread_name_prefix=f"deface-{threads}")
            _executors[threads] = executor
        return executor


def ordered_map(fn, items, *, threads=None) -> list:
    items = list(items)
    threads = current_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return list(_executor(threads).map(fn, items))


class PrefetchingLoader:
    """Deliver ``load(index)`` for each index, in order, through a bounded queue.

    Loading runs on a dedicated pool; at most ``prefetch`` results wait in the
    queue. Order is the order of ``indices`` regardless of ``workers``.
    """

    _DONE = object()

    def __init__(self, load, indices, *, workers=1, prefetch=4):
        self.load = load
        self.indices = list(indices)
        self.workers = max(1, int(workers))
        self.prefetch = max(1, int(prefetch))

    def __iter__(self):
        if not self.indices:
            return
        if self.workers == 1:
            for index in self.indices:
                yield self.load(index)
            return

        slots = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()

        def produce():
            with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="deface-loader") as pool:
                pending = []
                cursor = 0
                try:
                    while (cursor < len(self.indices) or pending) and not stop.is_set():
                        while cursor < len(self.indices) and len(pending) < self.workers:
                            pending.append(pool.submit(self.load, self.indices[cursor]))
                            cursor += 1
                        future = pending.pop(0)
                        slots.put(("ok", future.result()))
                except Exception as exc:  # handed to the consumer thread
                    slots.put(("error", exc))
                finally:
                    for future in pending:
                        future.cancel()
                    slots.put(("done", self._DONE))

        producer = threading.Thread(target=produce, name="deface-prefetch", daemon=True)
        producer.start()
        try:
            while True:
                kind, payload = slots.get()
                if kind == "done":
                    break
                if kind == "error":
                    raise payload
                yield payload
        finally:
            stop.set()
            # Unblock a producer waiting on a full queue.
            while producer.is_alive():
                try:
                    slots.get_nowait()
                except queue.Empty:
                    producer.join(timeout=0.05)
