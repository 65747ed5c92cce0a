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
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from acnbp.lib.canonical import canonical_encode
from acnbp.lib.crypto import EphemeralKey, ZERO_HASH, sha3, hash_chain_step
from acnbp.lib.errors import InvariantBreach
from acnbp.modules.core.schema import (
  AgentId,
  BindingCommitment,
  CapabilityQuery,
  CapabilitySpec,
  NegotiatedExtension,
  Version,
)
from acnbp.modules.cps.schema import CandidateScore, ScoringWeights
from acnbp.utils import short_hex

__all__ = (
  "RequesterPhase",
  "ProviderPhase",
  "SessionStatus",
  "Reason",
  "ATTRIBUTABLE_REASONS",
  "version_list_hash",
  "SessionRecord",
  "Handshake",
  "TaskSpec",
  "RequesterState",
  "ProviderState",
)


class RequesterPhase(str, Enum):
  INIT = "INIT"
  DISCOVERED = "DISCOVERED"
  SCREENED = "SCREENED"
  SESSIONS_REQUESTED = "SESSIONS_REQUESTED"
  SESSIONS_ESTABLISHED = "SESSIONS_ESTABLISHED"
  AGREED = "AGREED"
  BOUND = "BOUND"
  EXECUTING = "EXECUTING"
  COMMITTED = "COMMITTED"
  ABORTED = "ABORTED"
  FINALIZED = "FINALIZED"

  @property
  def rank(self):
    return _REQUESTER_RANK[self]


_REQUESTER_RANK = {p: i for i, p in enumerate(RequesterPhase)}
_REQUESTER_RANK[RequesterPhase.ABORTED] = _REQUESTER_RANK[RequesterPhase.COMMITTED]
_REQUESTER_RANK[RequesterPhase.FINALIZED] = _REQUESTER_RANK[RequesterPhase.COMMITTED] + 1


class ProviderPhase(str, Enum):
  REGISTERED = "REGISTERED"
  OFFER_SENT = "OFFER_SENT"
  SESSION_ESTABLISHED = "SESSION_ESTABLISHED"
  ACCEPTED = "ACCEPTED"
  REJECTED = "REJECTED"
  COMMITTED = "COMMITTED"
  EXECUTING = "EXECUTING"
  DONE = "DONE"
  ABORTED = "ABORTED"


class SessionStatus(str, Enum):
  PENDING = "pending"
  ESTABLISHED = "established"
  FAILED = "failed"


class Reason(str, Enum):
  QUALITY = "quality"
  DEADLINE = "deadline"
  SLOTS = "slots"
  EXECUTION = "execution"
  INPUT_SLOTS = "input_slots"
  NO_CANDIDATES = "no_candidates"
  NO_SESSIONS = "no_sessions"
  CONSISTENCY = "consistency"
  TERMS = "terms"
  TIMEOUT = "timeout"
  DISCOVERY = "discovery"


# Abort reasons that lower the provider's reputation
ATTRIBUTABLE_REASONS = frozenset({Reason.QUALITY, Reason.DEADLINE, Reason.SLOTS, Reason.EXECUTION})


def version_list_hash(versions: List[Any]):
  """Hash of a supported-version list, independent of order and duplicates."""
  return sha3(canonical_encode(sorted({str(Version.parse(str(v))) for v in versions}, key=Version.parse)))


@frozen
class SessionRecord:
  session_id: bytes = field(repr=short_hex)
  negotiated: NegotiatedExtension
  session_key: bytes = field(repr=False, metadata={"canonical": False})
  peer_extension_list_hash: bytes = field(repr=short_hex)
  established_at: int


@define
class Handshake:
  """In-progress state of one secure session, at either end."""
  session_id: bytes = field(repr=short_hex)
  peer: AgentId
  ephemeral: EphemeralKey = field(repr=False, metadata={"canonical": False})
  own_nonce: bytes = field(repr=False)
  own_versions: List[str]
  peer_nonce: Optional[bytes] = field(default=None, repr=False)
  peer_versions: List[str] = field(factory=list)
  peer_extensions: List[str] = field(factory=list)
  negotiated: Optional[NegotiatedExtension] = None
  session_key: Optional[bytes] = field(default=None, repr=False, metadata={"canonical": False})
  record: Optional[SessionRecord] = None
  status: SessionStatus = SessionStatus.PENDING
  failure: Optional[str] = None
  offer: Tuple[CapabilitySpec, ...] = field(factory=tuple, repr=False)

  @property
  def established(self):
    return self.status == SessionStatus.ESTABLISHED

  def fail(self, code: str):
    self.status = SessionStatus.FAILED
    self.failure = code
    self.session_key = None


@frozen
class TaskSpec:
  units: int = field(default=1, converter=int)
  quality_min: float = field(default=0.0, converter=float)
  payload: Dict[str, Any] = field(factory=dict, converter=dict)

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      units=d.get("units", 1),
      quality_min=d.get("quality_min", 0.0),
      payload=d.get("payload") or {},
    )


@define
class RequesterState:
  instance_id: str
  query: CapabilityQuery
  task: TaskSpec
  weights: ScoringWeights
  phase: RequesterPhase = RequesterPhase.INIT
  shortlist: List[AgentId] = field(factory=list)
  scores: List[CandidateScore] = field(factory=list)
  sessions: Dict[AgentId, Handshake] = field(factory=dict)
  selected: Optional[AgentId] = None
  draft: Optional[BindingCommitment] = None
  binding: Optional[BindingCommitment] = None
  transcript: List[bytes] = field(factory=list)
  transcript_head: bytes = ZERO_HASH
  outcome: Optional[RequesterPhase] = None
  reason: Optional[str] = None
  quality: Optional[float] = None
  ssa_accepts: int = 0
  bindings_formed: int = 0

  def record(self, env_hash: bytes):
    self.transcript.append(env_hash)
    self.transcript_head = hash_chain_step(self.transcript_head, env_hash)

  def unrecord(self, index: int, head: bytes):
    """
    Remove the entry at `index` and rechain the ones after it from `head`,
    the transcript head before that entry was recorded.
    """
    later = self.transcript[index + 1:]
    del self.transcript[index:]
    self.transcript_head = head
    for env_hash in later:
      self.record(env_hash)

  def check_invariants(self):
    if self.selected is not None and self.phase.rank < RequesterPhase.AGREED.rank:
      raise InvariantBreach(f"{self.instance_id}: selected before AGREED")
    if self.binding is not None and self.phase.rank < RequesterPhase.BOUND.rank:
      raise InvariantBreach(f"{self.instance_id}: binding before BOUND")
    if self.ssa_accepts > 1 or self.bindings_formed > 1:
      raise InvariantBreach(f"{self.instance_id}: more than one acceptance or binding")


@define
class ProviderState:
  instance_id: str
  requester: AgentId
  phase: ProviderPhase = ProviderPhase.REGISTERED
  session: Optional[Handshake] = None
  draft: Optional[BindingCommitment] = None
  commitment: Optional[BindingCommitment] = None
  skill_handler: Optional[Callable] = field(default=None, repr=False, eq=False, metadata={"canonical": False})
  outcome: Optional[str] = None
  reason: Optional[str] = None
  quality: Optional[float] = None
  ack: Optional[Dict[str, Any]] = field(default=None, repr=False)

  def check_invariants(self):
    if self.phase in (ProviderPhase.COMMITTED, ProviderPhase.EXECUTING) and (
      self.commitment is None or not self.commitment.fully_signed
    ):
      raise InvariantBreach(f"{self.instance_id}: {self.phase.value} without a dual-signed commitment")
