# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import frozen, field, fields
from typing import Any, Mapping, Optional, Sequence, Union

import math

from acnbp import settings
from acnbp.modules.core.schema import AgentId, CapabilitySpec

__all__ = (
  "ScoringWeights",
  "CandidateScore",
)

WEIGHT_TOLERANCE = 1e-9


def _nonnegative(instance, attribute, value):
  if not math.isfinite(value) or value < 0:
    raise ValueError(f"Weight {attribute.name} must be nonnegative")


@frozen
class ScoringWeights:
  w_compat: float = field(converter=float, validator=_nonnegative)
  w_security: float = field(converter=float, validator=_nonnegative)
  w_reputation: float = field(converter=float, validator=_nonnegative)
  w_cost: float = field(converter=float, validator=_nonnegative)
  w_risk: float = field(converter=float, validator=_nonnegative)

  def __attrs_post_init__(self):
    if abs(sum(self.as_tuple()) - 1.0) > WEIGHT_TOLERANCE:
      raise ValueError(f"Weights must sum to 1, got {sum(self.as_tuple())}")

  def as_tuple(self):
    return (self.w_compat, self.w_security, self.w_reputation, self.w_cost, self.w_risk)

  @classmethod
  def normalized(cls, *values: float):
    """Weights proportional to `values`."""
    if len(values) != 5:
      raise ValueError(f"Expected 5 weights, got {len(values)}")
    total = sum(values)
    if total <= 0:
      raise ValueError("Weights must not all be zero")
    return cls(*(v / total for v in values))

  @classmethod
  def parse(cls, text: str):
    """Parse a comma-separated list `compat,security,reputation,cost,risk`."""
    try:
      values = [float(v) for v in text.split(",")]
    except ValueError:
      raise ValueError(f"Invalid weights '{text}'") from None
    return cls.normalized(*values)

  @classmethod
  def from_plain(cls, d: Union[Mapping[str, Any], Sequence[float]]):
    if isinstance(d, Mapping):
      return cls.normalized(*(d[f.name] for f in fields(cls)))
    return cls.normalized(*d)

  @classmethod
  def default(cls):
    s = settings.scoring
    return cls(s.w_compat, s.w_security, s.w_reputation, s.w_cost, s.w_risk)


@frozen
class CandidateScore:
  agent: AgentId
  compatibility: float
  security_ok: bool
  reputation: float
  cost_utility: float
  risk: float
  total: float
  eliminated: bool
  elimination_reason: Optional[str] = None
  capability: Optional[CapabilitySpec] = field(default=None, eq=False, repr=False, metadata={"canonical": False})

  def to_plain(self):
    return {
      "agent": self.agent.name,
      "compatibility": self.compatibility,
      "security_ok": self.security_ok,
      "reputation": self.reputation,
      "cost_utility": self.cost_utility,
      "risk": self.risk,
      "total": self.total,
      "eliminated": self.eliminated,
      "elimination_reason": self.elimination_reason,
    }
