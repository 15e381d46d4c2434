"""Sequential execution for bitwise-reproducible runs."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

from threadpoolctl import threadpool_limits


@contextmanager
def sequential() -> Iterator[None]:
    """Pin BLAS and OpenMP pools to one thread so reductions have a fixed order."""
    with threadpool_limits(limits=1):
        yield
