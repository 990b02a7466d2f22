"""Append-only, sequence-numbered job logs.

Single writer (the job), many readers (live streams). Lines persist to a
plain text file so finished jobs replay identically after a restart; the
in-memory copy plus a condition variable gives streams gap-free, ordered
follow semantics.
"""

from __future__ import annotations

import threading
from pathlib import Path


class LogStore:
    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Condition()
        if self.path.exists():
            text = self.path.read_text(encoding="utf-8")
            self._lines = text.split("\n")[:-1] if text else []
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            self._lines = []
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, line):
        line = line.rstrip("\n")
        with self._lock:
            self._lines.append(line)
            self._fh.write(line + "\n")
            self._fh.flush()
            self._lock.notify_all()

    def close(self):
        with self._lock:
            self._fh.close()

    def __len__(self):
        with self._lock:
            return len(self._lines)

    def read_from(self, start):
        """Snapshot of lines with sequence numbers >= start."""
        start = max(0, start)
        with self._lock:
            return list(enumerate(self._lines[start:], start=start))

    def wait_beyond(self, seq, timeout=0.5):
        """Block until a line with number >= seq exists (or timeout)."""
        with self._lock:
            if len(self._lines) > seq:
                return True
            return self._lock.wait(timeout)
