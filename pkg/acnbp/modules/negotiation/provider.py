# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

"""
Provider side of a negotiation.

One ProviderState runs per session, keyed by session id. Once a session
closes its state moves to a bounded history of finished sessions. A provider
answers session requests, establishes the secure channel, signs the commitment for
an accepted agreement, runs its skill and records the outcome.
"""

from attrs import evolve
from collections import deque
from typing import Any, Deque, Dict, List, Optional

from acnbp import logger, settings
from acnbp.lib.audit import AuditLog
from acnbp.lib.crypto import EphemeralKey, KeyPair, derive_session_key, key_proof
from acnbp.lib.envelope import MsgType, SignedEnvelope
from acnbp.lib.errors import (
  DeadlineExceeded,
  DowngradeDetected,
  ExecutionFailure,
  IllegalPhase,
  IncompatibleVersions,
  KeyConfirmationFailed,
  NegotiationError,
  ParseError,
  RateLimited,
  RegistrationError,
  SignatureInvalid,
  SlotMismatch,
  TermsMismatch,
)
from acnbp.lib.node import KeyLookup, Tracer, Transport
from acnbp.modules.core.schema import (
  AgentId,
  ANRI,
  BindingCommitment,
  CapabilitySpec,
  NegotiatedExtension,
  ProtocolExtension,
  Terms,
)
from acnbp.modules.core.matching import ewma_reputation, negotiate_extension
from acnbp.modules.negotiation.agent import NegotiationAgent
from acnbp.modules.negotiation.schema import (
  Handshake,
  ProviderPhase,
  ProviderState,
  SessionRecord,
  SessionStatus,
  version_list_hash,
)
from acnbp.modules.negotiation.skills import Skill
from acnbp.modules.negotiation.transitions import provider_table
from acnbp.modules.registry.limiter import BucketPool
from acnbp.modules.registry.registry import Registry
from acnbp.utils import from_hex, short_hex

__all__ = (
  "ProviderAgent",
)

EPHEMERAL_SECRET_BYTES = 32

# Phases in which a requester may still call the negotiation off
ABORTABLE = (
  ProviderPhase.OFFER_SENT,
  ProviderPhase.SESSION_ESTABLISHED,
  ProviderPhase.ACCEPTED,
  ProviderPhase.COMMITTED,
  ProviderPhase.EXECUTING,
)


class ProviderAgent(NegotiationAgent):
  table = provider_table


  def __init__(
    self,
    agent_id: AgentId,
    keypair: KeyPair,
    key_lookup: KeyLookup,
    anri: ANRI,
    skill: Optional[Skill] = None,
    registry: Optional[Registry] = None,
    audit: Optional[AuditLog] = None,
    extension: Optional[ProtocolExtension] = None,
    transport: Optional[Transport] = None,
    rng_seed: Any = 0,
    tracer: Optional[Tracer] = None,
    response_timeout_ms: Optional[int] = None,
    decision_retries: Optional[int] = None,
    ssr_capacity: Optional[int] = None,
    ssr_refill_per_s: Optional[float] = None,
  ):
    super().__init__(agent_id, keypair, key_lookup, transport, rng_seed, tracer)
    self.anri      = anri
    self.skill     = skill or Skill()
    self.registry  = registry
    self.audit     = audit
    self.extension = extension or ProtocolExtension.default()
    self.states: Dict[bytes, ProviderState] = {}
    self.finished: Deque[ProviderState] = deque(maxlen=settings.negotiation.finished_sessions)

    self.response_timeout_ms = (
      response_timeout_ms if response_timeout_ms is not None else settings.negotiation.response_timeout_ms
    )
    self.decision_retries = decision_retries if decision_retries is not None else settings.negotiation.decision_retries
    self.ssr_limits = BucketPool(self.now, capacity=ssr_capacity, refill_per_s=ssr_refill_per_s)

    self._inputs: Dict[bytes, Optional[Dict[str, Any]]] = {}
    self._idle: Dict[bytes, int] = {}
    self._handlers = {
      MsgType.SSR: self.handle_ssr,
      MsgType.SSE_INIT: self.handle_sse_init,
      MsgType.SSA_ACCEPT: self.bind,
      MsgType.SSA_REJECT: self.handle_rejection,
      MsgType.EXEC_REQUEST: self.handle_exec_request,
      MsgType.COMMIT: self.handle_decision,
      MsgType.ABORT: self.handle_decision,
    }


  @property
  def role(self):
    return "Provider"


  @property
  def idle_timeout_ms(self):
    return self.response_timeout_ms * (self.decision_retries + 2)


  def dispatch(self, env: SignedEnvelope):
    handler = self._handlers.get(env.msg_type)
    if handler is None:
      raise IllegalPhase(self.id, "SERVING", env.msg_type.value, "not a provider message")
    handler(env)


  # ===============================================================================================
  # Session establishment


  def handle_ssr(self, env: SignedEnvelope):
    """
    Answer a session request with an offer, or with a signed rejection when
    the version ranges do not overlap.

    Raises:
        IllegalPhase: The session id is already in use
        RateLimited: The sender's session-request bucket is empty
    """
    if env.session_id in self.states:
      raise IllegalPhase(self.id, self.states[env.session_id].phase, ProviderPhase.OFFER_SENT, "session id in use")
    if not self.ssr_limits.allow(env.sender):
      raise RateLimited(env.sender, "session request bucket empty")

    body = env.payload()
    if AgentId.from_plain(body["requester"]) != env.sender:
      raise ParseError("SSR names another requester")
    peer_versions = [str(v) for v in body["supported"]]
    peer_extensions = list((body.get("extension") or {}).get("extensions") or [])
    theirs = ProtocolExtension.from_supported(peer_versions, peer_extensions)
    peer_nonce = from_hex(body["nonce"], "nonce")
    peer_public = from_hex(body["ephemeral"], "ephemeral")

    state = ProviderState(instance_id=env.session_id.hex(), requester=env.sender, skill_handler=self.skill)
    try:
      negotiated = negotiate_extension(self.extension, theirs)
    except IncompatibleVersions as e:
      self.states[env.session_id] = state
      state.reason = e.code
      logger.warning(f"Provider | {self.id} refused {env.sender}: {e.message}")
      self._arm_close(state)
      return self.send(env.sender, env.session_id, MsgType.ABORT, {
        "reason": e.code,
        "detail": e.message,
        "commitment": None,
        "attributable": False,
      })

    ephemeral = EphemeralKey(self.random_bytes(EPHEMERAL_SECRET_BYTES))
    own_nonce = self.random_bytes()
    session_key = derive_session_key(ephemeral.exchange(peer_public), peer_nonce, own_nonce)

    state.session = Handshake(
      session_id=env.session_id,
      peer=env.sender,
      ephemeral=ephemeral,
      own_nonce=own_nonce,
      own_versions=[str(v) for v in self.extension.supported_versions()],
      peer_nonce=peer_nonce,
      peer_versions=peer_versions,
      peer_extensions=peer_extensions,
      negotiated=negotiated,
      session_key=session_key,
    )
    self.states[env.session_id] = state
    self.transition(state, ProviderPhase.OFFER_SENT, env)

    sso = self.send(env.sender, env.session_id, MsgType.SSO, {
      "provider": self.id,
      "capabilities": list(self.anri.capabilities),
      "certificate": self.anri.security.certificate,
      "supported": state.session.own_versions,
      "extensions": self.extension.extensions,
      "ephemeral": ephemeral.public,
      "nonce": own_nonce,
    })
    self._arm_idle(state)
    return sso


  def handle_sse_init(self, env: SignedEnvelope):
    """
    Check the requester's key confirmation and its echo of our version list,
    then confirm the session.
    """
    state = self._state(env)
    self.require(state, [ProviderPhase.OFFER_SENT], env)
    hs = state.session

    payload = self.open_body(hs.session_key, env)
    problem: Optional[NegotiationError] = None
    if payload is None or payload.get("proof") != key_proof(hs.session_key, b"requester", hs.session_id).hex():
      problem = KeyConfirmationFailed(f"{env.sender}: session key confirmation failed")
    elif payload.get("peer_list_hash") != version_list_hash(hs.own_versions).hex():
      problem = DowngradeDetected(f"{env.sender} received a different version list")
    elif NegotiatedExtension.from_plain(payload.get("negotiated") or {}) != hs.negotiated:
      problem = DowngradeDetected(f"{env.sender} negotiated {payload['negotiated'].get('version')}")

    if problem is not None:
      self._fail_session(state, problem, env)
      return

    hs.record = SessionRecord(
      session_id=hs.session_id,
      negotiated=hs.negotiated,
      session_key=hs.session_key,
      peer_extension_list_hash=version_list_hash(hs.peer_versions),
      established_at=self.now(),
    )
    hs.status = SessionStatus.ESTABLISHED
    self.transition(state, ProviderPhase.SESSION_ESTABLISHED, env)

    self.send(env.sender, hs.session_id, MsgType.SSE_CONFIRM, self.seal_body(
      hs.session_key, hs.session_id, MsgType.SSE_CONFIRM, {
        "proof": key_proof(hs.session_key, b"provider", hs.session_id),
        "peer_list_hash": version_list_hash(hs.peer_versions),
        "own_list_hash": version_list_hash(hs.own_versions),
      }
    ))
    self._arm_idle(state)


  def _fail_session(self, state: ProviderState, problem: NegotiationError, env: SignedEnvelope):
    logger.warning(f"Provider | {self.id} session {state.instance_id[:8]}: {problem.code} {problem.message}")
    state.session.fail(problem.code)
    state.reason = problem.code
    self.transition(state, ProviderPhase.ABORTED, env)
    self.send(env.sender, env.session_id, MsgType.ABORT, {
      "reason": problem.code,
      "detail": problem.message,
      "commitment": None,
      "attributable": False,
    })
    self._finish(state, "ABORTED", env)


  # ===============================================================================================
  # Agreement and binding


  def bind(self, env: SignedEnvelope):
    """
    Sign the draft commitment of an accepted agreement and return it in a BC
    envelope.

    Raises:
        TermsMismatch: The draft does not match the accepted capability and terms
        DeadlineExceeded: The draft deadline has already passed
    """
    state = self._state(env)
    self.require(state, [ProviderPhase.SESSION_ESTABLISHED], env)

    body = env.payload()
    draft = BindingCommitment.from_plain(body["draft"])
    if draft.requester != env.sender or draft.provider != self.id:
      raise TermsMismatch(f"draft names {draft.requester} and {draft.provider}")
    if draft.capability != CapabilitySpec.from_plain(body["capability"]) or draft.terms != Terms.from_plain(body["terms"]):
      raise TermsMismatch("draft differs from the accepted capability and terms")
    if draft.capability not in self.anri.capabilities:
      raise TermsMismatch(f"{draft.capability.desc} is not offered by {self.id}")
    if draft.terms.deadline_ms <= self.now():
      raise DeadlineExceeded(f"deadline {draft.terms.deadline_ms} already passed")

    state.draft = draft.sign_as_provider(self.keypair)
    self.transition(state, ProviderPhase.ACCEPTED, env)
    bc = self.send(env.sender, env.session_id, MsgType.BC, {"commitment": state.draft})
    self._arm_idle(state)
    return bc


  def handle_rejection(self, env: SignedEnvelope):
    state = self._state(env)
    self.require(state, [ProviderPhase.SESSION_ESTABLISHED], env)
    state.reason = "rejected"
    self.transition(state, ProviderPhase.REJECTED, env)
    self._discard(state)
    self.transition(state, ProviderPhase.REGISTERED, env)
    self._arm_close(state)


  # ===============================================================================================
  # Execution


  def handle_exec_request(self, env: SignedEnvelope):
    """
    Verify the dual-signed commitment and start the skill.

    Raises:
        TermsMismatch: The commitment differs from the one we signed
        SignatureInvalid: Either signature fails to verify
    """
    state = self._state(env)
    self.require(state, [ProviderPhase.ACCEPTED], env)

    commitment = BindingCommitment.from_plain(env.payload()["commitment"])
    if commitment.preimage() != state.draft.preimage():
      raise TermsMismatch("commitment differs from the signed draft")
    requester_key = self.key_lookup(env.sender)
    if requester_key is None or not commitment.verify(requester_key, self.keypair.public):
      raise SignatureInvalid(env.sender, "commitment is not dual-signed")

    state.commitment = commitment
    self.transition(state, ProviderPhase.COMMITTED, env)

    opened = self.open_body(state.session.session_key, env)
    self._inputs[env.session_id] = opened.get("input") if opened else None
    self.transition(state, ProviderPhase.EXECUTING, env)
    self.set_timer(self.skill.latency_ms, f"result:{state.instance_id}")


  def deliver_result(self, session_id: bytes):
    """Run the skill and send its sealed result to the requester."""
    state = self.states.get(session_id)
    if state is None or state.phase != ProviderPhase.EXECUTING or session_id not in self._inputs:
      return None

    payload = self._inputs.pop(session_id)
    try:
      if payload is None:
        raise ExecutionFailure("execution input did not open")
      output, quality = state.skill_handler(state.commitment.capability, payload)
      result = {"output": output, "quality": quality, "error": None}
      state.quality = quality
    except (ExecutionFailure, SlotMismatch) as e:
      logger.warning(f"Provider | {self.id} execution failed: {e.code} {e.message}")
      result = {"output": None, "quality": None, "error": e.code}

    hs = state.session
    env = self.send(state.requester, session_id, MsgType.EXEC_RESULT, self.seal_body(
      hs.session_key, session_id, MsgType.EXEC_RESULT, result
    ))
    self._arm_idle(state)
    return env


  # ===============================================================================================
  # Decision and commitment update


  def handle_decision(self, env: SignedEnvelope):
    """
    Apply a requester's COMMIT or ABORT, update reputation in the registry
    when the outcome counts against or for us, and acknowledge with DCU.
    """
    state = self._state(env)
    if state.phase == ProviderPhase.DONE and state.ack is not None:
      return self.send(env.sender, env.session_id, MsgType.DCU, state.ack)

    committed = env.msg_type == MsgType.COMMIT
    self.require(state, [ProviderPhase.EXECUTING] if committed else ABORTABLE, env)

    body = env.payload()
    bound = state.commitment or state.draft
    if bound is not None and body.get("commitment") != bound.commitment_id().hex():
      raise TermsMismatch("decision names another commitment")

    state.reason = body.get("reason")
    outcome = "COMMITTED" if committed else "ABORTED"
    if not committed:
      self.transition(state, ProviderPhase.ABORTED, env)

    reputation, applied = self._record_outcome(state, env, committed, bool(body.get("attributable")))
    state.ack = {
      "commitment": bound.commitment_id() if bound else None,
      "outcome": outcome,
      "reputation": reputation,
      "applied": applied,
    }
    ack = self.send(env.sender, env.session_id, MsgType.DCU, state.ack)
    self._finish(state, outcome, env)
    return ack


  def _record_outcome(self, state: ProviderState, decision: SignedEnvelope, committed: bool, attributable: bool):
    current = (self.registry.get(self.id) if self.registry else None) or self.anri
    if self.registry is None or state.commitment is None or not (committed or attributable):
      return current.reputation, False

    updated = current.with_metadata(
      reputation=ewma_reputation(current.reputation, 1.0 if committed else 0.0)
    ).signed(self.keypair)
    try:
      self.registry.record_outcome(updated, decision, state.commitment)
    except RegistrationError as e:
      logger.warning(f"Provider | {self.id} reputation update refused: {e.code} {e.message}")
      return current.reputation, False

    self.anri = updated
    return updated.reputation, True


  def _finish(self, state: ProviderState, outcome: str, env: Optional[SignedEnvelope] = None):
    state.outcome = outcome
    if self.audit is not None:
      self.audit.append(self.now(), self.id, "provider_dcu", {
        "session": state.instance_id,
        "requester": state.requester.name,
        "outcome": outcome,
        "reason": state.reason,
        "commitment": state.commitment.commitment_id() if state.commitment else None,
        "reputation": self.anri.reputation,
      })
    self._discard(state)
    self.transition(state, ProviderPhase.DONE, env)
    self._arm_close(state)


  # ===============================================================================================
  # Timers


  def on_timer(self, key: str):
    kind, _, rest = key.partition(":")
    if kind == "result":
      self.deliver_result(bytes.fromhex(rest))
    elif kind == "close":
      self._close(bytes.fromhex(rest))
    elif kind == "idle":
      session_hex, _, token = rest.partition(":")
      self._idle_timeout(bytes.fromhex(session_hex), int(token))


  def _arm_close(self, state: ProviderState):
    self.set_timer(self.response_timeout_ms * (self.decision_retries + 1), f"close:{state.instance_id}")


  def _close(self, session_id: bytes):
    state = self.states.pop(session_id, None)
    if state is None:
      return
    self.replay.close_session(session_id, state.requester, self.now())
    self._idle.pop(session_id, None)
    self._inputs.pop(session_id, None)
    state.session = None
    state.skill_handler = None
    self.finished.append(state)


  def _arm_idle(self, state: ProviderState):
    session_id = bytes.fromhex(state.instance_id)
    token = self._idle[session_id] = self._idle.get(session_id, 0) + 1
    self.set_timer(self.idle_timeout_ms, f"idle:{state.instance_id}:{token}")


  def _idle_timeout(self, session_id: bytes, token: int):
    state = self.states.get(session_id)
    if state is None or self._idle.get(session_id) != token or self.table.is_terminal(state.phase):
      return
    if state.phase == ProviderPhase.EXECUTING and session_id in self._inputs:
      return

    logger.warning(f"Provider | {self.id} session {short_hex(session_id)} timed out in {state.phase.value}")
    state.reason = "timeout"
    self.transition(state, ProviderPhase.ABORTED)
    self._finish(state, "ABORTED")


  # ===============================================================================================


  def sessions(self) -> List[ProviderState]:
    """Finished sessions, oldest first, followed by the open ones."""
    return [*self.finished, *self.states.values()]


  def _state(self, env: SignedEnvelope):
    state = self.states.get(env.session_id)
    if state is None:
      raise IllegalPhase(self.id, ProviderPhase.REGISTERED, env.msg_type.value, "no such session")
    if state.requester != env.sender:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, "session belongs to another requester")
    return state


  def _discard(self, state: ProviderState):
    if state.session is not None:
      state.session.session_key = None
      state.session.ephemeral = None
      if state.session.record is not None:
        state.session.record = evolve(state.session.record, session_key=b"")
    self._inputs.pop(bytes.fromhex(state.instance_id), None)
