# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import frozen, field, evolve
from os import PathLike
from pathlib import Path
from typing import AbstractSet, Callable, Dict, List, Optional, Set, Tuple, Union

import math
import threading

from acnbp import logger, settings
from acnbp.lib.canonical import canonical_encode, canonical_decode
from acnbp.lib.crypto import sha3, verify, verify_pow
from acnbp.lib.envelope import MsgType, SignedEnvelope
from acnbp.lib.errors import (
  MalformedKey,
  ParseError,
  RegistrationError,
  CredentialFailure,
  CapabilityValidationError,
  SignatureInvalid,
  PowRejected,
  RateLimited,
  DuplicateRegistration,
  UnknownAgent,
)
from acnbp.modules.core.schema import AgentId, ANRI, BindingCommitment, CapabilityQuery, Certificate
from acnbp.modules.core.matching import match_capability, ewma_reputation
from acnbp.modules.registry.authority import verify_certificate, verify_anri
from acnbp.modules.registry.limiter import BucketPool
from acnbp.utils import from_hex, short_hex

__all__ = (
  "Receipt",
  "Registry",
  "read_snapshot",
)

FileName = Union[str, PathLike]
REPUTATION_TOLERANCE = 1e-9


@frozen
class Receipt:
  agent_id: AgentId
  record_hash: bytes = field(repr=short_hex)
  registered_at: int

  def to_plain(self):
    return {
      "agent_id": {"name": self.agent_id.name, "namespace": self.agent_id.namespace},
      "record_hash": self.record_hash.hex(),
      "registered_at": self.registered_at,
    }


class Registry:
  """
  Agent Name Service: stores signed agent records and answers capability
  queries.

  Mutations are serialized under one lock. Failed registrations leave the
  stored records untouched.
  """

  def __init__(
    self,
    ca_root: bytes,
    clock: Callable[[], int],
    revoked: Optional[AbstractSet[int]] = None,
    pow_difficulty: Optional[int] = None,
    bucket_capacity: Optional[int] = None,
    refill_per_s: Optional[float] = None,
    registration_skew_ms: Optional[int] = None,
    name: str = "ans",
  ):
    self.ca_root    = ca_root
    self.clock      = clock
    self.revoked    = revoked if revoked is not None else set()
    self.name       = name
    self.records: Dict[AgentId, ANRI] = {}

    self.pow_difficulty = pow_difficulty if pow_difficulty is not None else settings.registry.pow_difficulty
    self.registration_skew_ms = (
      registration_skew_ms if registration_skew_ms is not None else settings.registry.registration_skew_ms
    )
    self.rate_limits = BucketPool(clock, capacity=bucket_capacity, refill_per_s=refill_per_s)

    self._challenges: Dict[AgentId, bytes] = {}
    self._epochs: Dict[AgentId, int] = {}
    self._applied_outcomes: Set[bytes] = set()
    self._lock = threading.RLock()


  # ===============================================================================================
  # Registration


  def challenge(self, agent_id: AgentId):
    """Current proof-of-work challenge for an agent id. Rotated on each successful registration."""
    with self._lock:
      if agent_id not in self._challenges:
        epoch = self._epochs.get(agent_id, 0)
        self._challenges[agent_id] = sha3(canonical_encode({
          "registry": self.name,
          "agent": agent_id,
          "epoch": epoch,
        }))
      return self._challenges[agent_id]


  def register(self, anri: ANRI, cert: Optional[Certificate], pow_nonce: bytes):
    """
    Register an agent record.

    Args:
        anri: Signed record; its metadata carries registered_at and ttl_ms
        cert: Certificate presented with the record
        pow_nonce: Solution to `challenge(anri.id)` at the registry difficulty

    Returns:
        Receipt

    Raises:
        RateLimited: The agent's token bucket is empty
        PowRejected: The nonce does not solve the current challenge
        SignatureInvalid: The record's self-signature does not verify
        CredentialFailure: The certificate does not chain to the root, is
          revoked, names another agent or key, or fails to attest claimed
          certifications
        CapabilityValidationError: A capability or metadata value is invalid
        DuplicateRegistration: The id already has a live record
    """
    agent_id = anri.id
    with self._lock:
      now = self.clock()
      if not self.rate_limits.allow(agent_id):
        raise self._reject(RateLimited(agent_id, "registration token bucket empty"))

      if not verify_pow(self.challenge(agent_id), pow_nonce, self.pow_difficulty):
        raise self._reject(PowRejected(agent_id, f"nonce does not meet {self.pow_difficulty} bits"))

      if not anri.verify_signature():
        raise self._reject(SignatureInvalid(agent_id, "record self-signature does not verify"))

      if reason := self._credential_problem(anri, cert):
        raise self._reject(CredentialFailure(agent_id, reason))

      violations = anri.validate()
      if anri.registered_at > now:
        violations.append(f"{agent_id}: registered_at {anri.registered_at} is in the future at {now}")
      elif now - anri.registered_at > self.registration_skew_ms:
        violations.append(f"{agent_id}: registered_at {anri.registered_at} is older than {now} by more than the allowed skew")
      if violations:
        raise self._reject(CapabilityValidationError(agent_id, "; ".join(violations)))

      existing = self.records.get(agent_id)
      if existing is not None and existing.is_live(now):
        raise self._reject(DuplicateRegistration(agent_id, "id already registered"))

      self.records[agent_id] = anri
      self._rotate_challenge(agent_id)

    receipt = Receipt(agent_id=agent_id, record_hash=anri.record_hash(), registered_at=anri.registered_at)
    logger.info(f"Registry | Registered {agent_id} ({short_hex(receipt.record_hash)})")
    return receipt


  def renew(self, agent_id: AgentId, new_signature: bytes, new_ttl_ms: int, registered_at: Optional[int] = None):
    """
    Extend a record's lifetime. The signature must cover the record with
    `registered_at` and `ttl_ms` replaced, under the record's key.

    Raises:
        UnknownAgent: No record for the id
        SignatureInvalid: The signature is not by the record's key
        CapabilityValidationError: ttl_ms is not positive or registered_at lies in the future
    """
    with self._lock:
      old = self.records.get(agent_id)
      if old is None:
        raise self._reject(UnknownAgent(agent_id, "not registered"))
      renewed = old.renewed(self.clock() if registered_at is None else registered_at, new_ttl_ms)
      if not _verify_quiet(old.security.public_key, renewed.preimage(), new_signature):
        raise self._reject(SignatureInvalid(agent_id, "renewal not signed by the record key"))
      if new_ttl_ms <= 0:
        raise self._reject(CapabilityValidationError(agent_id, "ttl_ms must be positive"))
      if renewed.registered_at > self.clock():
        raise self._reject(CapabilityValidationError(agent_id, f"registered_at {renewed.registered_at} is in the future"))
      self.records[agent_id] = _with_signature(renewed, new_signature)

    logger.info(f"Registry | Renewed {agent_id} until {renewed.expires_at}")
    return Receipt(agent_id=agent_id, record_hash=self.records[agent_id].record_hash(), registered_at=renewed.registered_at)


  def revoke(self, agent_id: AgentId, signed_revocation: bytes):
    with self._lock:
      old = self.records.get(agent_id)
      if old is None:
        raise self._reject(UnknownAgent(agent_id, "not registered"))
      if not _verify_quiet(old.security.public_key, old.revocation_preimage(), signed_revocation):
        raise self._reject(SignatureInvalid(agent_id, "revocation not signed by the record key"))
      del self.records[agent_id]

    logger.info(f"Registry | Revoked {agent_id}")
    return True


  def record_outcome(self, anri: ANRI, decision: SignedEnvelope, commitment: BindingCommitment):
    """
    Accept a provider's re-signed record carrying the reputation implied by a
    requester's signed decision over their commitment.

    The new record may differ from the stored one only in its reputation,
    and each commitment updates reputation at most once.

    Raises:
        UnknownAgent: Provider or requester is not registered
        SignatureInvalid: Record, decision or commitment signatures fail
        RegistrationError: The update does not follow from the decision
    """
    agent_id = anri.id
    with self._lock:
      old = self.records.get(agent_id)
      if old is None:
        raise self._reject(UnknownAgent(agent_id, "provider not registered"))
      requester_record = self.records.get(commitment.requester)
      if requester_record is None:
        raise self._reject(UnknownAgent(commitment.requester, "requester not registered"))

      if not _verify_quiet(old.security.public_key, anri.preimage(), anri.signature):
        raise self._reject(SignatureInvalid(agent_id, "updated record not signed by the record key"))
      if commitment.provider != agent_id or decision.sender != commitment.requester:
        raise self._reject(RegistrationError(agent_id, "decision does not concern this provider"))
      if not commitment.verify(requester_record.security.public_key, old.security.public_key):
        raise self._reject(SignatureInvalid(agent_id, "commitment signatures do not verify"))
      if not _verify_envelope(decision, requester_record.security.public_key):
        raise self._reject(SignatureInvalid(commitment.requester, "decision signature does not verify"))

      commitment_id = commitment.commitment_id()
      try:
        body = decision.payload()
      except ParseError:
        raise self._reject(RegistrationError(agent_id, "decision body is malformed")) from None
      if body.get("commitment") != commitment_id.hex():
        raise self._reject(RegistrationError(agent_id, "decision names another commitment"))
      if commitment_id in self._applied_outcomes:
        raise self._reject(RegistrationError(agent_id, "outcome already applied"))

      outcome = 1.0 if decision.msg_type == MsgType.COMMIT else 0.0
      expected = ewma_reputation(old.reputation, outcome)
      if not math.isclose(anri.reputation, expected, abs_tol=REPUTATION_TOLERANCE):
        raise self._reject(RegistrationError(agent_id, f"reputation {anri.reputation} != {expected}"))
      if old.with_metadata(reputation=anri.reputation).preimage() != anri.preimage():
        raise self._reject(RegistrationError(agent_id, "update changes more than reputation"))

      self.records[agent_id] = anri
      self._applied_outcomes.add(commitment_id)

    logger.info(f"Registry | Reputation of {agent_id}: {old.reputation:.4f} -> {anri.reputation:.4f}")
    return anri


  # ===============================================================================================
  # Lookup


  def get(self, agent_id: AgentId):
    return self.records.get(agent_id)


  def public_key(self, agent_id: AgentId):
    record = self.records.get(agent_id)
    return record.security.public_key if record else None


  def is_valid(self, anri: ANRI):
    return anri.is_live(self.clock()) and verify_anri(anri, self.ca_root, self.revoked)


  def _prune_expired(self):
    now = self.clock()
    expired = [agent_id for agent_id, anri in self.records.items() if not anri.is_live(now)]
    for agent_id in expired:
      del self.records[agent_id]
    if expired:
      logger.info(f"Registry | Dropped {len(expired)} expired records")
    return len(expired)


  def query(self, q: CapabilityQuery, limit: Optional[int] = None):
    """
    Live, verified records with at least one capability matching the query,
    ordered by best similarity (descending) and then by agent id.
    """
    limit = limit if limit is not None else settings.registry.query_limit
    if limit < 1:
      raise ValueError("Query limit must be at least 1")

    with self._lock:
      self._prune_expired()
      records = list(self.records.values())

    found: List[Tuple[float, AgentId, ANRI]] = []
    for anri in records:
      if not self.is_valid(anri):
        continue
      results = [match_capability(q, cap) for cap in anri.capabilities]
      matched = [r.similarity for r in results if r.matched]
      if matched:
        found.append((max(matched), anri.id, anri))

    found.sort(key=lambda t: (-t[0], t[1]))
    return [anri for _, _, anri in found[:limit]]


  def discover(self, requester: AgentId, q: CapabilityQuery, limit: Optional[int] = None):
    """
    Rate-limited query on behalf of a requester.

    Raises:
        RateLimited: The requester's token bucket is empty
    """
    if not self.rate_limits.allow(requester):
      raise self._reject(RateLimited(requester, "discovery token bucket empty"))
    results = self.query(q, limit)
    logger.info(f"Registry | Discovery by {requester} for '{q.required}': {len(results)} records")
    return results


  # ===============================================================================================
  # Snapshots


  def export_snapshot(self, path: FileName):
    with self._lock:
      snapshot = {
        "registry": self.name,
        "ca_root": self.ca_root,
        "time_ms": self.clock(),
        "records": [self.records[k] for k in sorted(self.records)],
      }
    Path(path).write_bytes(canonical_encode(snapshot) + b"\n")


  def import_snapshot(self, path: FileName):
    """
    Load records from a snapshot file. Records failing verification against
    this registry's root are skipped.

    Returns:
        Number of records loaded

    Raises:
        ParseError: The file or one of its records is malformed; nothing is loaded
    """
    tree = canonical_decode(Path(path).read_bytes())
    try:
      records = [ANRI.from_plain(plain) for plain in tree.get("records") or []]
    except (AttributeError, KeyError, TypeError, ValueError) as e:
      raise ParseError(f"Malformed snapshot: {e}") from None

    loaded = 0
    with self._lock:
      for anri in records:
        if not verify_anri(anri, self.ca_root, self.revoked):
          logger.warning(f"Registry | Snapshot record {anri.id} failed verification, skipped")
          continue
        self.records[anri.id] = anri
        loaded += 1
    return loaded


  # ===============================================================================================


  def _credential_problem(self, anri: ANRI, cert: Optional[Certificate]):
    embedded = anri.security.certificate
    if cert is None:
      return "no certificate presented"
    if cert != embedded:
      return "presented certificate differs from the record's"
    if not verify_certificate(cert, self.ca_root):
      return f"certificate from '{cert.issuer}' does not chain to the root"
    if cert.serial in self.revoked:
      return f"certificate #{cert.serial} is revoked"
    if cert.subject != anri.id:
      return f"certificate names {cert.subject}"
    if cert.subject_key != anri.security.public_key:
      return "certificate key differs from the record key"
    unattested = set()
    for cap in anri.capabilities:
      unattested |= cap.security.certifications - cert.certifications
    if unattested:
      return "unattested certifications: " + ", ".join(sorted(unattested))
    return None


  def _rotate_challenge(self, agent_id: AgentId):
    self._epochs[agent_id] = self._epochs.get(agent_id, 0) + 1
    self._challenges.pop(agent_id, None)


  def _reject(self, e: RegistrationError):
    logger.warning(f"Registry | {e.code}: {e.message}")
    return e


def read_snapshot(path: FileName):
  """Snapshot file contents as (ca_root, time_ms, records)."""
  tree = canonical_decode(Path(path).read_bytes())
  try:
    ca_root = from_hex(tree["ca_root"], "ca_root")
    records = [ANRI.from_plain(r) for r in tree["records"]]
  except (KeyError, TypeError, ValueError) as e:
    raise ParseError(f"Malformed snapshot: {e}") from None
  return ca_root, tree.get("time_ms", 0), records


def _with_signature(anri: ANRI, signature: bytes):
  return evolve(anri, signature=signature)


def _verify_quiet(public_key: bytes, payload: bytes, signature: bytes):
  try:
    return verify(public_key, payload, signature)
  except MalformedKey:
    return False


def _verify_envelope(env: SignedEnvelope, public_key: bytes):
  try:
    return env.verify(public_key)
  except MalformedKey:
    return False
