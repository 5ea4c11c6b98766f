from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, workers=1):
    """``list(map(fn, items))`` on a thread pool; result order is input order.

    Hot loops are numba kernels compiled with ``nogil=True``, so threads run
    them concurrently. Outputs never depend on ``workers``.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(fn, items))


def chunks(n, size):
    return [(i, min(i + size, n)) for i in range(0, n, size)]
