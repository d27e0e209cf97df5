"""Sample sources for the streaming algorithms, plus memory accounting.

A source hands out samples exactly once, in order, to a single consumer.
Batched draws (``draw(k)``) exist purely for vectorization; the contract is
still one pass. Labels ride along for ground-truth metrics and are invisible
to the recovery algorithms, which only ever call ``draw``.
"""

from __future__ import annotations

import enum
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .core import load_dataset
from .errors import StreamExhaustedError

__all__ = [
    "SourceOrigin",
    "SampleSource",
    "SyntheticSource",
    "ReplaySource",
    "FileReplaySource",
    "BudgetedSource",
    "ScalarLedger",
]


class SourceOrigin(enum.Enum):
    SYNTHETIC = "synthetic"
    FILE_REPLAY = "file_replay"
    EXTERNAL = "external"


class SampleSource:
    """Base class. Subclasses implement ``_produce(k) -> (points, labels)``."""

    origin = SourceOrigin.EXTERNAL

    def __init__(self, dim: int):
        self.dim = dim
        self.delivered = 0

    def _produce(self, k: int) -> tuple[np.ndarray, np.ndarray | None]:
        raise NotImplementedError

    def draw_labeled(self, k: int) -> tuple[np.ndarray, np.ndarray | None]:
        if k <= 0:
            raise ValueError("draw size must be positive")
        pts, labels = self._produce(k)
        self.delivered += k
        return pts, labels

    def draw(self, k: int) -> np.ndarray:
        return self.draw_labeled(k)[0]

    def next(self) -> np.ndarray:
        return self.draw(1)[0]


class SyntheticSource(SampleSource):
    """Unbounded i.i.d. source backed by a seeded draw function.

    ``draw_fn(rng, k)`` must return ``(points, labels_or_None)`` with points
    of shape (k, dim).
    """

    origin = SourceOrigin.SYNTHETIC

    def __init__(self, dim: int, draw_fn, rng: np.random.Generator):
        super().__init__(dim)
        self._draw_fn = draw_fn
        self._rng = rng

    def _produce(self, k: int):
        pts, labels = self._draw_fn(self._rng, k)
        return np.asarray(pts, dtype=np.float64), labels


class ReplaySource(SampleSource):
    """Replays a finite population.

    ``mode='once'`` delivers each point a single time then exhausts;
    ``mode='cycle'`` loops over the population in order (deterministic);
    ``mode='resample'`` draws with replacement using ``rng``.
    """

    def __init__(self, points: np.ndarray, labels=None, mode: str = "once",
                 rng: np.random.Generator | None = None):
        points = np.asarray(points, dtype=np.float64)
        super().__init__(points.shape[1])
        if mode not in ("once", "cycle", "resample"):
            raise ValueError(f"unknown replay mode {mode!r}")
        if mode == "resample" and rng is None:
            raise ValueError("resample mode needs an rng")
        self._points = points
        self._labels = None if labels is None else np.asarray(labels, dtype=bool)
        self._mode = mode
        self._rng = rng
        self._pos = 0

    def _produce(self, k: int):
        n = self._points.shape[0]
        if self._mode == "resample":
            idx = self._rng.integers(0, n, size=k)
        elif self._mode == "cycle":
            idx = (self._pos + np.arange(k)) % n
            self._pos = (self._pos + k) % n
        else:
            if self._pos + k > n:
                raise StreamExhaustedError(
                    f"replay exhausted after {self.delivered} samples",
                    samples_consumed=self.delivered,
                )
            idx = np.arange(self._pos, self._pos + k)
            self._pos += k
        labels = None if self._labels is None else self._labels[idx]
        return self._points[idx], labels


class FileReplaySource(ReplaySource):
    origin = SourceOrigin.FILE_REPLAY

    def __init__(self, path: str | Path, mode: str = "once",
                 rng: np.random.Generator | None = None):
        pts, labels = load_dataset(path)
        super().__init__(pts, labels, mode=mode, rng=rng)


class BudgetedSource(SampleSource):
    """Caps total samples drawn from an inner source."""

    def __init__(self, inner: SampleSource, max_samples: int):
        super().__init__(inner.dim)
        self.origin = inner.origin
        self.inner = inner
        self.max_samples = int(max_samples)

    def _produce(self, k: int):
        if self.delivered + k > self.max_samples:
            raise StreamExhaustedError(
                f"stream budget of {self.max_samples} exhausted "
                f"after {self.delivered} samples",
                samples_consumed=self.delivered,
            )
        return self.inner.draw_labeled(k)


class ScalarLedger:
    """Counts simultaneously live real numbers attributable to algorithm state.

    Consumers bracket allocations with ``reserve``; ``peak`` is the high-water
    mark. Purely an accounting device, it allocates nothing itself.
    """

    def __init__(self):
        self.current = 0
        self.peak = 0

    def alloc(self, count: int) -> None:
        self.current += int(count)
        if self.current > self.peak:
            self.peak = self.current

    def free(self, count: int) -> None:
        self.current -= int(count)

    @contextmanager
    def reserve(self, count: int):
        self.alloc(count)
        try:
            yield
        finally:
            self.free(count)
