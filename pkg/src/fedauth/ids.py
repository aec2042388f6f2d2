"""Identifier and secret generation.

Production paths draw from :mod:`secrets`. Passing a seed switches to a
private :class:`random.Random`, which is what the scenario harness does so
that reports are reproducible.
"""

from __future__ import annotations

import random
import secrets
import threading
import uuid


class IdSource:
    def __init__(self, seed: int | str | None = None):
        self._rng = None if seed is None else random.Random(seed)
        self._lock = threading.Lock()

    @property
    def seeded(self) -> bool:
        return self._rng is not None

    def token_bytes(self, n: int) -> bytes:
        if self._rng is None:
            return secrets.token_bytes(n)
        with self._lock:
            return self._rng.getrandbits(8 * n).to_bytes(n, "big")

    def token_hex(self, n: int = 16) -> str:
        return self.token_bytes(n).hex()

    def uuid4(self) -> str:
        return str(uuid.UUID(bytes=self.token_bytes(16), version=4))

    def spawn(self, label: str) -> "IdSource":
        """Independent child stream; stable for a given parent seed and label."""
        if self._rng is None:
            return IdSource()
        return IdSource(f"{self.token_hex(8)}:{label}")
