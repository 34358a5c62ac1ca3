import os
from concurrent.futures import ThreadPoolExecutor


def resolve_workers(workers=None):
    if workers is None:
        workers = int(os.environ.get("LDNI_THREADS", "1") or 1)
    return max(1, int(workers))


def pmap(fn, items, workers=None):
    """Ordered map; numba kernels release the GIL so threads overlap."""
    items = list(items)
    workers = resolve_workers(workers)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def chunks(n, parts):
    """Split range(n) into at most ``parts`` contiguous (lo, hi) slices."""
    parts = max(1, min(parts, n)) if n else 1
    step = -(-n // parts) if n else 0
    return [(lo, min(n, lo + step)) for lo in range(0, n, step)] if n else [(0, 0)]
