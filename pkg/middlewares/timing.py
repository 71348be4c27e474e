import logging
import time
from contextlib import contextmanager
from typing import Iterator

logger = logging.getLogger(__name__)


class PhaseTimer:
    """Замеряет время выполнения фаз оценивания и пишет его в лог."""

    def __init__(self, enabled: bool = True) -> None:
        self.enabled = enabled
        self.timings: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start_time = time.perf_counter()
        try:
            yield
        finally:
            process_time = time.perf_counter() - start_time
            logger.info(f"Phase:\n  Name: {name}\n  Time: {process_time:.3f}s")
            if self.enabled:
                self.timings[name] = self.timings.get(name, 0.0) + process_time
