# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import define, frozen, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

from acnbp import settings

__all__ = (
  "AdversaryKind",
  "AdversarySpec",
  "SimConfig",
  "SimEvent",
  "SimReport",
  "DEFAULT_TTL_MS",
)

DEFAULT_TTL_MS = 7 * 24 * 3_600_000


class AdversaryKind(str, Enum):
  REPLAYER = "REPLAYER"
  DOWNGRADER = "DOWNGRADER"
  IMPOSTOR = "IMPOSTOR"
  FLOODER = "FLOODER"

  @property
  def targets_link(self):
    return self in (AdversaryKind.REPLAYER, AdversaryKind.DOWNGRADER)


def _check_target(instance, attribute, value):
  expected = 2 if instance.kind.targets_link else 1
  if len(value) != expected:
    what = "a link [sender, recipient]" if expected == 2 else "one agent"
    raise ValueError(f"{instance.kind.value} targets {what}, got {list(value)}")


@frozen
class AdversarySpec:
  kind: AdversaryKind = field(converter=AdversaryKind)
  target: Tuple[str, ...] = field(converter=tuple, validator=_check_target)
  params: Dict[str, Any] = field(factory=dict, converter=dict)

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    target = d["target"]
    return cls(
      kind=d["kind"],
      target=[target] if isinstance(target, str) else target,
      params=d.get("params") or {},
    )


def _probability(instance, attribute, value):
  if not 0.0 <= value <= 1.0:
    raise ValueError(f"{attribute.name} must be within [0, 1]")


def _to_latency(value: Any):
  low, high = value
  return (int(low), int(high))


@frozen
class SimConfig:
  seed: int = field(default=0, converter=int)
  latency_ms: Tuple[int, int] = field(factory=lambda: tuple(settings.sim.latency_ms), converter=_to_latency)
  drop_prob: float = field(factory=lambda: settings.sim.drop_prob, converter=float, validator=_probability)
  duplicate_prob: float = field(factory=lambda: settings.sim.duplicate_prob, converter=float, validator=_probability)
  adversaries: Tuple[AdversarySpec, ...] = field(factory=tuple, converter=tuple)
  max_time_ms: int = field(factory=lambda: settings.sim.max_time_ms, converter=int)

  @latency_ms.validator
  def _check_latency(self, attribute, value):
    low, high = value
    if low < 0 or low > high:
      raise ValueError(f"latency_ms must satisfy 0 <= min <= max, got {list(value)}")

  @classmethod
  def from_plain(cls, d: Mapping[str, Any], seed: int = 0):
    defaults = settings.sim
    return cls(
      seed=d.get("seed", seed),
      latency_ms=d.get("latency_ms", defaults.latency_ms),
      drop_prob=d.get("drop_prob", defaults.drop_prob),
      duplicate_prob=d.get("duplicate_prob", defaults.duplicate_prob),
      adversaries=[AdversarySpec.from_plain(a) for a in d.get("adversaries") or ()],
      max_time_ms=d.get("max_time_ms", defaults.max_time_ms),
    )


@frozen
class SimEvent:
  """One line of a simulation trace. Events are numbered in processing order."""
  time_ms: int
  index: int
  kind: str
  detail: Dict[str, Any] = field(factory=dict)


@define
class SimReport:
  scenario: str
  seed: int
  outcome: Optional[str] = None
  reason: Optional[str] = None
  final_phase: Optional[str] = None
  selected: Optional[str] = None
  ranking: List[str] = field(factory=list)
  eliminated: Dict[str, str] = field(factory=dict)
  totals: Dict[str, float] = field(factory=dict)
  sessions: List[str] = field(factory=list)
  established: List[str] = field(factory=list)
  session_failures: Dict[str, str] = field(factory=dict)
  commitment: Optional[bytes] = None
  quality: Optional[float] = None
  reputation_before: Dict[str, float] = field(factory=dict)
  reputation_after: Dict[str, float] = field(factory=dict)
  phases: Dict[str, List[str]] = field(factory=dict)
  registrations: Dict[str, str] = field(factory=dict)
  registry_unchanged: bool = True
  counts: Dict[str, int] = field(factory=dict)
  rejections: Dict[str, int] = field(factory=dict)
  adversaries: List[Dict[str, Any]] = field(factory=list)
  audit_head: bytes = b""
  audit_length: int = 0
  transcript_head: bytes = b""
  end_time_ms: int = 0
  trace: List[SimEvent] = field(factory=list, repr=False, eq=False, metadata={"canonical": False})

  def adversary_total(self, key: str, kind: Optional[str] = None):
    """Sum of one statistic over the adversaries, optionally of one kind."""
    return sum(int(a.get(key) or 0) for a in self.adversaries if kind is None or a.get("kind") == kind)
