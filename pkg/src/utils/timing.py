import statistics
import time
from dataclasses import dataclass
from typing import Callable, List


@dataclass(frozen=True)
class Timing:
    label: str
    bytes_scanned: int
    samples: List[float]

    @property
    def median_seconds(self) -> float:
        return statistics.median(self.samples)

    @property
    def gbits_per_second(self) -> float:
        return throughput_bps(self.bytes_scanned, self.median_seconds) / 1e9


def throughput_bps(byte_count: int, seconds: float) -> float:
    """Bits per second; zero when nothing was timed."""
    if seconds <= 0:
        return 0.0
    return 8 * byte_count / seconds


def time_repeated(label: str, run: Callable[[], object], byte_count: int, repeat: int) -> Timing:
    """One untimed warm-up pass, then ``repeat`` timed passes."""
    run()
    samples = []
    for _ in range(repeat):
        started = time.perf_counter()
        run()
        samples.append(time.perf_counter() - started)
    return Timing(label=label, bytes_scanned=byte_count, samples=samples)
