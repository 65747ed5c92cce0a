# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import frozen, field
from typing import Any, Dict, FrozenSet, Mapping, Optional, Tuple

from acnbp import settings
from acnbp.modules.core.schema import AgentId, CapabilityQuery, CapabilitySpec, ProtocolExtension
from acnbp.modules.cps.schema import ScoringWeights
from acnbp.modules.negotiation.schema import TaskSpec
from acnbp.modules.negotiation.skills import Skill
from acnbp.modules.sim.schema import DEFAULT_TTL_MS, SimConfig

__all__ = (
  "ROLES",
  "DEFECTS",
  "EXPECTATION_KEYS",
  "AgentFixture",
  "RequesterFixture",
  "RegistryParams",
  "Scenario",
)

ROLES = ("provider", "requester", "adversary")

# Registration defects, each provoking one registry refusal
DEFECTS = (
  "bad_certificate",
  "invalid_capability",
  "bad_signature",
  "bad_pow",
  "rate_limited",
  "duplicate",
)

EXPECTATION_KEYS = (
  "outcome",
  "final_phase",
  "reason",
  "selected",
  "ranking",
  "eliminated",
  "reputation_after",
  "registrations",
  "registry_unchanged",
  "replays_accepted",
  "downgrades_detected",
  "bindings_over_downgrade",
  "rate_limited_min",
)


def _one_of(choices: Tuple[str, ...]):
  def check(instance, attribute, value):
    if value is not None and value not in choices:
      raise ValueError(f"{attribute.name} must be one of {', '.join(choices)}, got '{value}'")
  return check


@frozen
class AgentFixture:
  """An agent registered before the simulation starts."""
  name: str
  namespace: str = "agents"
  role: str = field(default="provider", validator=_one_of(ROLES))
  seed: Optional[str] = None
  capabilities: Tuple[CapabilitySpec, ...] = field(factory=tuple, converter=tuple)
  metadata: Dict[str, Any] = field(factory=dict, converter=dict)
  certifications: FrozenSet[str] = field(factory=frozenset, converter=frozenset)
  location: Optional[str] = None
  skill: Skill = field(factory=Skill)
  extension: Optional[ProtocolExtension] = None
  defect: Optional[str] = field(default=None, validator=_one_of(DEFECTS))

  @property
  def agent_id(self):
    return AgentId(self.name, self.namespace)

  @property
  def key_seed(self):
    return self.seed or f"agent/{self.name}"

  @property
  def uri(self):
    return self.location or f"sim://{self.namespace}/{self.name}"

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      name=d["name"],
      namespace=d.get("namespace", "agents"),
      role=d.get("role", "provider"),
      seed=d.get("seed"),
      capabilities=[CapabilitySpec.from_plain(c) for c in d.get("capabilities") or ()],
      metadata=d.get("metadata") or {},
      certifications=d.get("certifications") or (),
      location=d.get("location"),
      skill=Skill.from_plain(d.get("skill") or {}),
      extension=ProtocolExtension.from_plain(d["extension"]) if d.get("extension") else None,
      defect=d.get("defect"),
    )


@frozen
class RequesterFixture:
  agent: str
  query: CapabilityQuery
  task: TaskSpec = field(factory=TaskSpec)
  weights: ScoringWeights = field(factory=ScoringWeights.default)
  parallel_sessions: int = field(factory=lambda: settings.negotiation.parallel_sessions, converter=int)
  start_ms: int = field(default=0, converter=int)
  response_timeout_ms: Optional[int] = None

  @parallel_sessions.validator
  def _check_sessions(self, attribute, value):
    if value < 1:
      raise ValueError("parallel_sessions must be at least 1")

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      agent=d["agent"],
      query=CapabilityQuery.from_plain(d["query"]),
      task=TaskSpec.from_plain(d.get("task") or {}),
      weights=ScoringWeights.from_plain(d["weights"]) if d.get("weights") is not None else ScoringWeights.default(),
      parallel_sessions=d.get("parallel_sessions", settings.negotiation.parallel_sessions),
      start_ms=d.get("start_ms", 0),
      response_timeout_ms=d.get("response_timeout_ms"),
    )


@frozen
class RegistryParams:
  pow_difficulty: int = field(factory=lambda: settings.registry.pow_difficulty, converter=int)
  bucket_capacity: int = field(factory=lambda: settings.registry.bucket_capacity, converter=int)
  refill_per_s: float = field(factory=lambda: settings.registry.refill_per_s, converter=float)
  registration_skew_ms: int = field(factory=lambda: settings.registry.registration_skew_ms, converter=int)

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    defaults = settings.registry
    return cls(
      pow_difficulty=d.get("pow_difficulty", defaults.pow_difficulty),
      bucket_capacity=d.get("bucket_capacity", defaults.bucket_capacity),
      refill_per_s=d.get("refill_per_s", defaults.refill_per_s),
      registration_skew_ms=d.get("registration_skew_ms", defaults.registration_skew_ms),
    )


@frozen
class Scenario:
  name: str
  seed: int
  agents: Tuple[AgentFixture, ...] = field(converter=tuple)
  requester: RequesterFixture
  sim: SimConfig = field(factory=SimConfig)
  registry: RegistryParams = field(factory=RegistryParams)
  expect: Dict[str, Any] = field(factory=dict, converter=dict)

  def fixture(self, name: str):
    return next((a for a in self.agents if a.name == name), None)
