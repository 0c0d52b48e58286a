"""Discrete-event virtual clock. Wall-clock time is never consulted."""

from __future__ import annotations

import heapq
import itertools
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any


@dataclass(order=True)
class Timer:
    at: float
    seq: int
    callback: Callable[..., Any] = field(compare=False)
    args: tuple = field(default=(), compare=False)
    label: str = field(default="", compare=False)
    cancelled: bool = field(default=False, compare=False)


class VirtualClock:
    """Monotone virtual time with timers fired in (deadline, insertion) order."""

    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._heap: list[Timer] = []
        self._seq = itertools.count()
        self.fired = 0

    def schedule(self, at: float, callback: Callable[..., Any], *args, label: str = "") -> Timer:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past: {at} < {self.now}")
        t = Timer(float(at), next(self._seq), callback, args, label)
        heapq.heappush(self._heap, t)
        return t

    def call_later(self, delay: float, callback: Callable[..., Any], *args, label: str = "") -> Timer:
        if delay < 0:
            raise ValueError("negative delay")
        return self.schedule(self.now + delay, callback, *args, label=label)

    @staticmethod
    def cancel(timer: Timer | None) -> None:
        if timer is not None:
            timer.cancelled = True

    def _prune(self) -> None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)

    def pending(self) -> int:
        return sum(not t.cancelled for t in self._heap)

    def next_at(self) -> float | None:
        self._prune()
        return self._heap[0].at if self._heap else None

    def step(self) -> bool:
        """Fire the earliest live timer; False when none is left."""
        self._prune()
        if not self._heap:
            return False
        t = heapq.heappop(self._heap)
        self.now = t.at
        self.fired += 1
        t.callback(*t.args)
        return True

    def advance(self, to: float) -> None:
        """Fire every timer due at or before ``to``, then move time to ``to``."""
        if to < self.now:
            raise ValueError(f"time is monotone: {to} < {self.now}")
        while True:
            nxt = self.next_at()
            if nxt is None or nxt > to:
                break
            self.step()
        self.now = float(to)

    def run(self, until: float | None = None, max_steps: int | None = None) -> bool:
        """Run to quiescence or ``until``; True if the queue drained."""
        steps = 0
        while True:
            nxt = self.next_at()
            if nxt is None:
                return True
            if until is not None and nxt > until:
                self.now = max(self.now, until)
                return False
            if max_steps is not None and steps >= max_steps:
                return False
            self.step()
            steps += 1
