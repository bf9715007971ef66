__all__ = ['Stats', 'Timer']

import time

NS_IN_S = 1e9

STATS_TEMPLATE = '''Duration: {duration_s:.3f}s
{unit_title}: {count}
{unit_title}/s: {throughput:.1f}'''


class Stats:
    def __init__(self, duration_ns: int, count: int, unit: str = 'records'):
        self.duration_ns = duration_ns
        self.count = count
        self.unit = unit

    @property
    def duration_s(self) -> float:
        """
        How long the work took in seconds.
        """
        return self.duration_ns / NS_IN_S

    @property
    def throughput(self) -> float:
        """
        How many units were processed per second.
        """
        if self.duration_ns <= 0:
            return 0.0
        return self.count / self.duration_ns * NS_IN_S

    def __repr__(self) -> str:
        return (f'Stats(duration_s={self.duration_s}, '
                f'count={self.count}, '
                f'unit={self.unit!r}, '
                f'throughput={self.throughput})')

    def __str__(self):
        return STATS_TEMPLATE.format(
            duration_s=self.duration_s,
            unit_title=self.unit.capitalize(),
            count=self.count,
            throughput=self.throughput)


class Timer:
    """Context manager yielding a `Stats` once the block exits."""

    def __init__(self, unit: str = 'records'):
        self.unit = unit
        self.count = 0
        self.stats = None

    def __enter__(self) -> 'Timer':
        self._start = time.perf_counter_ns()
        return self

    def __exit__(self, *exc):
        self.stats = Stats(time.perf_counter_ns() - self._start, self.count, self.unit)
        return False
