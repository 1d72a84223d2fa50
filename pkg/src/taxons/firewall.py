"""Instrumented access to ground-truth positions.

Search and selection must never consult the ground-truth (x, y) space; only
the privileged NS observer may. Every read through the monitored accessor is
counted here so runs can assert the count stayed at zero. Evaluation-side
consumers (coverage logging, archival storage) use the unmonitored fields.
"""

from __future__ import annotations

import threading


class GroundTruthCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def increment(self):
        with self._lock:
            self._count += 1

    @property
    def count(self) -> int:
        with self._lock:
            return self._count

    def reset(self):
        with self._lock:
            self._count = 0


# Process-wide counter; runs snapshot it at start and report the delta.
ground_truth_reads = GroundTruthCounter()
