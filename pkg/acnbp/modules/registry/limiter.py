# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from typing import Callable, Dict, Hashable, Optional

import math
import threading

from acnbp import logger, settings

__all__ = (
  "TokenBucket",
  "BucketPool",
)


class TokenBucket:
  """Token bucket on the virtual clock."""

  def __init__(self, capacity: int, refill_per_s: float, now_ms: int = 0):
    self.capacity     = capacity
    self.refill_per_s = refill_per_s
    self.tokens       = float(capacity)
    self.last_refill  = now_ms
    self._lock        = threading.Lock()


  def _refill(self, now_ms: int):
    elapsed = max(0, now_ms - self.last_refill)
    self.tokens = min(float(self.capacity), self.tokens + elapsed * self.refill_per_s / 1000.0)
    self.last_refill = max(self.last_refill, now_ms)


  def allow(self, now_ms: int):
    with self._lock:
      self._refill(now_ms)
      if self.tokens >= 1.0:
        self.tokens -= 1.0
        return True
      return False


  def is_full(self, now_ms: int):
    with self._lock:
      self._refill(now_ms)
      return self.tokens >= self.capacity


class BucketPool:
  """
  One bucket per key, created full on first use.

  Buckets that have refilled completely are indistinguishable from new ones
  and are dropped by a sweep at most once per full refill period.
  """

  def __init__(
    self,
    clock: Callable[[], int],
    capacity: Optional[int] = None,
    refill_per_s: Optional[float] = None,
  ):
    self.clock        = clock
    self.capacity     = capacity if capacity is not None else settings.registry.bucket_capacity
    self.refill_per_s = refill_per_s if refill_per_s is not None else settings.registry.refill_per_s
    self._buckets: Dict[Hashable, TokenBucket] = {}
    self._swept_at    = clock()


  @property
  def refill_period_ms(self):
    if self.refill_per_s <= 0:
      return math.inf
    return self.capacity * 1000.0 / self.refill_per_s


  def allow(self, key: Hashable):
    now = self.clock()
    if now - self._swept_at >= self.refill_period_ms:
      self.prune(now)
    bucket = self._buckets.get(key)
    if bucket is None:
      bucket = self._buckets[key] = TokenBucket(self.capacity, self.refill_per_s, now)
    return bucket.allow(now)


  def prune(self, now_ms: Optional[int] = None):
    """Drop buckets that are full again. Returns the number dropped."""
    now = self.clock() if now_ms is None else now_ms
    full = [key for key, bucket in self._buckets.items() if bucket.is_full(now)]
    for key in full:
      del self._buckets[key]
    self._swept_at = now
    if full:
      logger.debug(f"Limiter | Dropped {len(full)} idle buckets")
    return len(full)


  def __contains__(self, key: Hashable):
    return key in self._buckets


  def __len__(self):
    return len(self._buckets)
