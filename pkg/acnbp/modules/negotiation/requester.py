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
Requester side of a negotiation.

A requester runs one negotiation instance: it discovers candidates through
the registry, screens and ranks them, opens secure sessions with the best
few, agrees with one, binds, executes, decides and finally writes the
distributed commitment update to the audit log.
"""

from attrs import evolve
from typing import Any, AbstractSet, Dict, List, Optional, Tuple, Union

from acnbp import logger, settings
from acnbp.lib.audit import AuditLog
from acnbp.lib.crypto import EphemeralKey, KeyPair, derive_session_key, key_proof
from acnbp.lib.envelope import SESSION_ID_BYTES, MsgType, SignedEnvelope
from acnbp.lib.errors import (
  ConsistencyNotVerified,
  CredentialFailure,
  DeadlineExceeded,
  DowngradeDetected,
  IllegalPhase,
  IncompatibleVersions,
  KeyConfirmationFailed,
  SignatureInvalid,
  SlotMismatch,
  TermsMismatch,
)
from acnbp.lib.node import KeyLookup, Tracer, Transport
from acnbp.modules.core.schema import (
  AgentId,
  ANRI,
  BindingCommitment,
  CapabilityQuery,
  CapabilitySpec,
  Certificate,
  ProtocolExtension,
  Terms,
)
from acnbp.modules.core.matching import match_capability, negotiate_extension
from acnbp.modules.cps.engine import evaluate_cohort, rank_candidates
from acnbp.modules.cps.schema import ScoringWeights
from acnbp.modules.negotiation.agent import NegotiationAgent
from acnbp.modules.negotiation.consistency import MS_PER_HOUR, consistency_check, query_deadline_ms
from acnbp.modules.negotiation.schema import (
  ATTRIBUTABLE_REASONS,
  Handshake,
  Reason,
  RequesterPhase,
  RequesterState,
  SessionRecord,
  SessionStatus,
  TaskSpec,
  version_list_hash,
)
from acnbp.modules.negotiation.skills import missing_slots
from acnbp.modules.negotiation.transitions import requester_table
from acnbp.modules.registry.authority import verify_certificate
from acnbp.utils import from_hex

__all__ = (
  "RequesterAgent",
)

EPHEMERAL_SECRET_BYTES = 32
DEFAULT_TERM_MS = 24 * MS_PER_HOUR
INSTANCE_ID_BYTES = 8


class RequesterAgent(NegotiationAgent):
  table = requester_table


  def __init__(
    self,
    agent_id: AgentId,
    keypair: KeyPair,
    key_lookup: KeyLookup,
    registry_id: AgentId,
    query: CapabilityQuery,
    ca_root: bytes,
    task: Optional[TaskSpec] = None,
    weights: Optional[ScoringWeights] = None,
    audit: Optional[AuditLog] = None,
    extension: Optional[ProtocolExtension] = None,
    revoked: Optional[AbstractSet[int]] = None,
    transport: Optional[Transport] = None,
    rng_seed: Any = 0,
    tracer: Optional[Tracer] = None,
    parallel_sessions: Optional[int] = None,
    response_timeout_ms: Optional[int] = None,
    decision_retries: Optional[int] = None,
    discovery_limit: Optional[int] = None,
  ):
    super().__init__(agent_id, keypair, key_lookup, transport, rng_seed, tracer)
    self.registry_id = registry_id
    self.ca_root     = ca_root
    self.revoked     = revoked
    self.audit       = audit
    self.extension   = extension or ProtocolExtension.default()

    s = settings.negotiation
    self.parallel_sessions   = parallel_sessions if parallel_sessions is not None else s.parallel_sessions
    self.response_timeout_ms = response_timeout_ms if response_timeout_ms is not None else s.response_timeout_ms
    self.decision_retries    = decision_retries if decision_retries is not None else s.decision_retries
    self.discovery_limit     = discovery_limit if discovery_limit is not None else settings.registry.query_limit

    self.state = RequesterState(
      instance_id=self.random_bytes(INSTANCE_ID_BYTES).hex(),
      query=query,
      task=task or TaskSpec(),
      weights=weights or ScoringWeights.default(),
    )
    self.candidates: Dict[AgentId, ANRI] = {}
    self.discovery_session = self.random_bytes(SESSION_ID_BYTES)
    self.ack: Optional[Dict[str, Any]] = None

    self._peers: Dict[bytes, AgentId] = {}
    self._discovery_sent = False
    self._decision: Optional[Tuple[MsgType, Dict[str, Any]]] = None
    self._decisions_sent = 0
    self._handlers = {
      MsgType.CD_RESPONSE: self.handle_discovery,
      MsgType.SSO: self.handle_sso,
      MsgType.SSE_CONFIRM: self.handle_sse_confirm,
      MsgType.BC: self.handle_bc,
      MsgType.EXEC_RESULT: self.handle_result,
      MsgType.ABORT: self.handle_abort,
      MsgType.DCU: self.handle_ack,
    }


  @property
  def role(self):
    return "Requester"


  @property
  def phase(self):
    return self.state.phase


  def on_sent(self, env: SignedEnvelope):
    self.state.record(env.hash())


  def dispatch(self, env: SignedEnvelope):
    handler = self._handlers.get(env.msg_type)
    if handler is None:
      raise IllegalPhase(self.id, self.state.phase, env.msg_type.value, "not a requester message")
    # Handlers see their own envelope in the transcript; a rejected one is taken back out
    index, head = len(self.state.transcript), self.state.transcript_head
    self.state.record(env.hash())
    try:
      handler(env)
    except Exception:
      self.state.unrecord(index, head)
      raise


  # ===============================================================================================
  # Discovery and screening


  def start(self):
    """Send the discovery query to the registry."""
    if self.state.phase != RequesterPhase.INIT or self._discovery_sent:
      raise IllegalPhase(self.id, self.state.phase, RequesterPhase.DISCOVERED, "discovery already started")
    self._discovery_sent = True
    env = self.send(self.registry_id, self.discovery_session, MsgType.CD_QUERY, {
      "query": self.state.query.relaxed(),
      "limit": self.discovery_limit,
    })
    self.set_timer(self.response_timeout_ms, "discovery")
    return env


  def handle_discovery(self, env: SignedEnvelope):
    state = self.state
    self.require(state, [RequesterPhase.INIT], env)
    if env.sender != self.registry_id or env.session_id != self.discovery_session:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, "response to an unknown query")

    body = env.payload()
    if body.get("error"):
      logger.warning(f"Requester | {self.id} discovery refused: {body['error']}")
      self.abort(Reason.DISCOVERY, env)
      return

    anris = [ANRI.from_plain(r) for r in body["records"]]
    self.candidates = {a.id: a for a in anris if a.id != self.id}
    self.transition(state, RequesterPhase.DISCOVERED, env)
    self.screen(env)


  def screen(self, env: Optional[SignedEnvelope] = None):
    """Score the discovered cohort and open sessions with the top candidates."""
    state = self.state
    scores = evaluate_cohort(state.query, self.candidates.values(), state.weights, self.ca_root, self.revoked)
    state.scores = sorted(scores, key=lambda s: (s.eliminated, -s.total, s.agent))
    state.shortlist = rank_candidates(scores)
    self.trace({
      "kind": "ranking",
      "instance_id": state.instance_id,
      "actor": self.id.name,
      "scores": state.scores,
    })

    if not state.shortlist:
      self.abort(Reason.NO_CANDIDATES, env)
      return

    self.transition(state, RequesterPhase.SCREENED, env)
    for target in state.shortlist[:self.parallel_sessions]:
      self.send_ssr(target)
    self.set_timer(self.response_timeout_ms, "sessions")


  # ===============================================================================================
  # Secure sessions


  def send_ssr(self, target: AgentId):
    """
    Open a secure session with a shortlisted candidate.

    Raises:
        IllegalPhase: Not screening, target not shortlisted, or session already requested
    """
    state = self.state
    if state.phase not in (RequesterPhase.SCREENED, RequesterPhase.SESSIONS_REQUESTED):
      raise IllegalPhase(self.id, state.phase, RequesterPhase.SESSIONS_REQUESTED)
    if target not in state.shortlist:
      raise IllegalPhase(self.id, state.phase, RequesterPhase.SESSIONS_REQUESTED, f"{target} is not shortlisted")
    if target in state.sessions:
      raise IllegalPhase(self.id, state.phase, RequesterPhase.SESSIONS_REQUESTED, f"session with {target} exists")

    hs = Handshake(
      session_id=self.random_bytes(SESSION_ID_BYTES),
      peer=target,
      ephemeral=EphemeralKey(self.random_bytes(EPHEMERAL_SECRET_BYTES)),
      own_nonce=self.random_bytes(),
      own_versions=[str(v) for v in self.extension.supported_versions()],
    )
    state.sessions[target] = hs
    self._peers[hs.session_id] = target

    ssr = self.send(target, hs.session_id, MsgType.SSR, {
      "requester": self.id,
      "version": self.extension.version,
      "security": {
        "key_exchange": "x25519",
        "cipher": "chacha20-poly1305",
        "signature": self.keypair.scheme_id,
        "encryption_level": state.query.security_reqs.encryption_level,
      },
      "extension": self.extension,
      "supported": hs.own_versions,
      "ephemeral": hs.ephemeral.public,
      "nonce": hs.own_nonce,
    })
    if state.phase == RequesterPhase.SCREENED:
      self.transition(state, RequesterPhase.SESSIONS_REQUESTED, ssr)
    return ssr


  def handle_sso(self, env: SignedEnvelope):
    """Check the offer's credentials, negotiate the version and send key confirmation."""
    state = self.state
    target, hs = self._peer(env)
    self.require(state, [RequesterPhase.SESSIONS_REQUESTED], env)
    if hs.status != SessionStatus.PENDING or hs.peer_nonce is not None:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, "offer already received")

    body = env.payload()
    cert = Certificate.from_plain(body["certificate"])
    offer = tuple(CapabilitySpec.from_plain(c) for c in body["capabilities"])
    peer_versions = [str(v) for v in body["supported"]]
    peer_extensions = list(body.get("extensions") or [])
    peer_nonce = from_hex(body["nonce"], "nonce")
    peer_public = from_hex(body["ephemeral"], "ephemeral")

    if (
      not verify_certificate(cert, self.ca_root, self.revoked)
      or cert.subject != target
      or cert.subject_key != self.key_lookup(target)
    ):
      self._session_failed(hs, CredentialFailure(target, "offer credentials do not verify").code, notify=True)
      return
    try:
      negotiated = negotiate_extension(self.extension, ProtocolExtension.from_supported(peer_versions, peer_extensions))
    except IncompatibleVersions as e:
      self._session_failed(hs, e.code, notify=True)
      return

    session_key = derive_session_key(hs.ephemeral.exchange(peer_public), hs.own_nonce, peer_nonce)
    hs.peer_nonce = peer_nonce
    hs.peer_versions = peer_versions
    hs.peer_extensions = peer_extensions
    hs.negotiated = negotiated
    hs.session_key = session_key
    hs.offer = offer

    self.send(target, hs.session_id, MsgType.SSE_INIT, self.seal_body(
      session_key, hs.session_id, MsgType.SSE_INIT, {
        "proof": key_proof(session_key, b"requester", hs.session_id),
        "peer_list_hash": version_list_hash(peer_versions),
        "negotiated": negotiated,
      }
    ))


  def handle_sse_confirm(self, env: SignedEnvelope):
    """
    Check the provider's key confirmation and the version-list hashes echoed
    inside the channel.
    """
    state = self.state
    target, hs = self._peer(env)
    self.require(state, [RequesterPhase.SESSIONS_REQUESTED], env)
    if hs.status != SessionStatus.PENDING or hs.session_key is None:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, "no key exchange in progress")

    payload = self.open_body(hs.session_key, env)
    if payload is None or payload.get("proof") != key_proof(hs.session_key, b"provider", hs.session_id).hex():
      self._session_failed(hs, KeyConfirmationFailed().code, notify=True)
    elif (
      payload.get("own_list_hash") != version_list_hash(hs.peer_versions).hex()
      or payload.get("peer_list_hash") != version_list_hash(hs.own_versions).hex()
    ):
      self._session_failed(hs, DowngradeDetected().code, notify=True)
    else:
      hs.record = SessionRecord(
        session_id=hs.session_id,
        negotiated=hs.negotiated,
        session_key=hs.session_key,
        peer_extension_list_hash=version_list_hash(hs.peer_versions),
        established_at=self.now(),
      )
      hs.status = SessionStatus.ESTABLISHED
      logger.info(f"Requester | {self.id} session with {target} established on {hs.negotiated.version}")
    self._maybe_select(env)


  def _session_failed(self, hs: Handshake, code: str, notify: bool = False):
    logger.warning(f"Requester | {self.id} session with {hs.peer} failed: {code}")
    hs.fail(code)
    self.trace({
      "kind": "session_failed",
      "instance_id": self.state.instance_id,
      "actor": self.id.name,
      "peer": hs.peer.name,
      "code": code,
    })
    if notify:
      self.send(hs.peer, hs.session_id, MsgType.ABORT, {
        "reason": code,
        "commitment": None,
        "attributable": False,
      })


  def _maybe_select(self, env: Optional[SignedEnvelope] = None):
    state = self.state
    if state.phase != RequesterPhase.SESSIONS_REQUESTED:
      return
    if any(hs.status == SessionStatus.PENDING for hs in state.sessions.values()):
      return

    established = [t for t in state.shortlist if t in state.sessions and state.sessions[t].established]
    if not established:
      self.abort(Reason.NO_SESSIONS, env)
      return
    self.transition(state, RequesterPhase.SESSIONS_ESTABLISHED, env)
    self.select(established)


  # ===============================================================================================
  # Agreement


  def offer_for(self, target: AgentId) -> Tuple[Optional[CapabilitySpec], Optional[Terms]]:
    """The capability instance and draft terms to propose to an established peer."""
    state = self.state
    hs = state.sessions[target]
    relaxed = state.query.relaxed()
    screened = next((s.capability for s in state.scores if s.agent == target), None)

    matching = [c for c in hs.offer if match_capability(relaxed, c).matched]
    if screened in matching:
      offered = screened
    elif matching:
      offered = max(matching, key=lambda c: match_capability(relaxed, c).similarity)
    else:
      return None, None

    start = hs.record.established_at
    hours = offered.constraints.get("deadline_hours")
    if hours is not None:
      deadline = start + int(hours * MS_PER_HOUR)
    else:
      deadline = query_deadline_ms(state.query, start) or start + DEFAULT_TERM_MS

    anri = self.candidates.get(target)
    price = (anri.cost_per_unit if anri else 0.0) * state.task.units
    terms = Terms(
      price=price,
      deadline_ms=deadline,
      quality_min=state.task.quality_min,
      penalty=price * settings.negotiation.penalty_ratio,
    )
    return offered, terms


  def select(self, established: List[AgentId]):
    """Accept the best-ranked established peer whose offer passes the consistency check."""
    for target in established:
      try:
        return self.send_ssa(target)
      except ConsistencyNotVerified as e:
        logger.info(f"Requester | {self.id} skipped {target}: {e.message}")
        self.trace({
          "kind": "consistency",
          "instance_id": self.state.instance_id,
          "actor": self.id.name,
          "peer": target.name,
          "failures": [str(f) for f in e.failures],
        })

    for target in established:
      hs = self.state.sessions[target]
      self.send(target, hs.session_id, MsgType.SSA_REJECT, {"reason": Reason.CONSISTENCY})
    self.abort(Reason.CONSISTENCY)
    return None


  def send_ssa(self, target: AgentId, capability: Optional[CapabilitySpec] = None, terms: Optional[Terms] = None):
    """
    Accept one established peer and reject every other established peer.

    Returns:
        The SSA_ACCEPT envelope and the list of SSA_REJECT envelopes

    Raises:
        IllegalPhase: Sessions are not established, or no session with target
        ConsistencyNotVerified: The offer fails the consistency check
    """
    state = self.state
    if state.phase != RequesterPhase.SESSIONS_ESTABLISHED:
      raise IllegalPhase(self.id, state.phase, RequesterPhase.AGREED, "sessions not established")
    hs = state.sessions.get(target)
    if hs is None or not hs.established:
      raise IllegalPhase(self.id, state.phase, RequesterPhase.AGREED, f"no established session with {target}")

    if capability is None or terms is None:
      capability, terms = self.offer_for(target)
    if capability is None:
      raise ConsistencyNotVerified(target, ["semantic: no offered capability matches the query"])
    failures = consistency_check(state.query, capability, hs.record, terms)
    if failures:
      raise ConsistencyNotVerified(target, failures)

    draft = BindingCommitment(requester=self.id, provider=target, capability=capability, terms=terms)
    accept = self.send(target, hs.session_id, MsgType.SSA_ACCEPT, {
      "capability": capability,
      "terms": terms,
      "draft": draft,
    })
    state.ssa_accepts += 1
    rejects = [
      self.send(peer, other.session_id, MsgType.SSA_REJECT, {"reason": "not selected"})
      for peer, other in state.sessions.items()
      if peer != target and other.established
    ]

    self.transition(state, RequesterPhase.AGREED, accept)
    state.selected = target
    state.draft = draft
    self.set_timer(self.response_timeout_ms, "binding")
    logger.info(f"Requester | {self.id} selected {target} ({len(rejects)} rejected)")
    return accept, rejects


  # ===============================================================================================
  # Binding and execution


  def handle_bc(self, env: SignedEnvelope):
    state = self.state
    target, _ = self._peer(env)
    self.require(state, [RequesterPhase.AGREED], env)
    if target != state.selected:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, f"{target} was not selected")

    commitment = BindingCommitment.from_plain(env.payload()["commitment"])
    try:
      self.confirm_bind(commitment, env)
    except (TermsMismatch, SignatureInvalid) as e:
      logger.warning(f"Requester | {self.id} refused binding: {e.code} {e.message}")
      self.abort(Reason.TERMS, env, notify=True)
      return
    except DeadlineExceeded as e:
      logger.warning(f"Requester | {self.id} refused binding: {e.message}")
      self.abort(Reason.DEADLINE, env, notify=True)
      return

    try:
      self.execute(env=env)
    except SlotMismatch as e:
      logger.warning(f"Requester | {self.id} cannot execute: {e.message}")
      self.abort(Reason.INPUT_SLOTS, env, notify=True)


  def confirm_bind(self, commitment: BindingCommitment, env: Optional[SignedEnvelope] = None):
    """
    Countersign the provider-signed commitment.

    Raises:
        IllegalPhase: No agreement is pending
        TermsMismatch: The commitment differs from the draft
        SignatureInvalid: The provider signature does not verify
        DeadlineExceeded: The deadline has passed
    """
    state = self.state
    if state.phase != RequesterPhase.AGREED or state.draft is None:
      raise IllegalPhase(self.id, state.phase, RequesterPhase.BOUND, "no agreement pending")
    if commitment.preimage() != state.draft.preimage():
      raise TermsMismatch(f"{commitment.provider} altered the draft commitment")
    provider_key = self.key_lookup(state.selected)
    if provider_key is None or not commitment.verify_provider(provider_key):
      raise SignatureInvalid(state.selected, "commitment is not signed by the provider")
    if commitment.terms.deadline_ms <= self.now():
      raise DeadlineExceeded(f"deadline {commitment.terms.deadline_ms} already passed")

    binding = commitment.sign_as_requester(self.keypair)
    state.bindings_formed += 1
    self.transition(state, RequesterPhase.BOUND, env)
    state.binding = binding
    if self.audit is not None:
      self.audit.append(self.now(), self.id, "binding", {
        "instance": state.instance_id,
        "provider": state.selected.name,
        "commitment": binding.commitment_id(),
        "terms": binding.terms,
      })
    return binding


  def execute(self, payload: Optional[Dict[str, Any]] = None, env: Optional[SignedEnvelope] = None):
    """
    Invoke the bound capability.

    Raises:
        IllegalPhase: Not bound
        SlotMismatch: The payload lacks an input slot of the capability
    """
    state = self.state
    if state.phase != RequesterPhase.BOUND:
      raise IllegalPhase(self.id, state.phase, RequesterPhase.EXECUTING, "not bound")
    payload = state.task.payload if payload is None else payload
    missing = missing_slots(state.binding.capability.input_names, payload)
    if missing:
      raise SlotMismatch(f"missing input slots: {', '.join(missing)}")

    hs = state.sessions[state.selected]
    body = {"commitment": state.binding} | self.seal_body(
      hs.session_key, hs.session_id, MsgType.EXEC_REQUEST, {"input": payload}
    )
    request = self.send(state.selected, hs.session_id, MsgType.EXEC_REQUEST, body)
    self.transition(state, RequesterPhase.EXECUTING, env or request)
    self.set_timer(max(0, state.binding.terms.deadline_ms - self.now()) + 1, "deadline")
    return request


  def handle_result(self, env: SignedEnvelope):
    state = self.state
    target, hs = self._peer(env)
    self.require(state, [RequesterPhase.EXECUTING], env)
    if target != state.selected:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, f"{target} was not selected")

    result = self.open_body(hs.session_key, env)
    if result is None:
      raise KeyConfirmationFailed(f"result from {target} does not open under the session key")
    self.decide(result, env)


  # ===============================================================================================
  # Decision and commitment update


  def decide(self, result: Optional[Dict[str, Any]], env: Optional[SignedEnvelope] = None):
    """
    Commit or abort the execution.

    Commits iff the result arrived by the deadline, reports no error, fills
    every output slot and meets the minimum quality (inclusive). A missing
    result means the deadline passed.

    Returns:
        The COMMIT or ABORT envelope
    """
    state = self.state
    if state.phase != RequesterPhase.EXECUTING:
      raise IllegalPhase(self.id, state.phase, "decision", "not executing")

    terms = state.binding.terms
    quality = None if result is None else result.get("quality")
    if result is None or self.now() > terms.deadline_ms:
      reason = Reason.DEADLINE
    elif result.get("error"):
      reason = Reason.EXECUTION
    elif missing_slots(state.binding.capability.output_names, result.get("output") or {}):
      reason = Reason.SLOTS
    elif quality is None or float(quality) < terms.quality_min:
      reason = Reason.QUALITY
    else:
      reason = None

    state.quality = None if quality is None else float(quality)
    if reason is None:
      self.transition(state, RequesterPhase.COMMITTED, env)
      state.outcome = RequesterPhase.COMMITTED
    else:
      self.transition(state, RequesterPhase.ABORTED, env)
      state.outcome = RequesterPhase.ABORTED
      state.reason = reason.value
    logger.info(f"Requester | {self.id} decided {state.outcome.value} ({state.reason or 'ok'})")
    return self._decide_remote(reason)


  def abort(self, reason: Union[Reason, str], env: Optional[SignedEnvelope] = None, notify: bool = False):
    """Abort the instance, telling the selected provider when `notify` is set."""
    state = self.state
    state.reason = getattr(reason, "value", reason)
    self.transition(state, RequesterPhase.ABORTED, env)
    state.outcome = RequesterPhase.ABORTED
    if notify and state.selected is not None:
      return self._decide_remote(reason)
    self.finalize()
    return None


  def _decide_remote(self, reason: Optional[Union[Reason, str]]):
    state = self.state
    bound = state.binding or state.draft
    msg_type = MsgType.COMMIT if reason is None else MsgType.ABORT
    self._decision = (msg_type, {
      "decision": msg_type.value,
      "reason": getattr(reason, "value", reason),
      "commitment": bound.commitment_id() if bound else None,
      "quality": state.quality,
      "attributable": state.binding is not None and reason in ATTRIBUTABLE_REASONS,
    })
    if self.audit is not None:
      self.audit.append(self.now(), self.id, "decision", {"instance": state.instance_id} | self._decision[1])
    return self._send_decision()


  def _send_decision(self):
    msg_type, body = self._decision
    hs = self.state.sessions[self.state.selected]
    self._decisions_sent += 1
    env = self.send(self.state.selected, hs.session_id, msg_type, body)
    self.set_timer(self.response_timeout_ms, f"decision:{self._decisions_sent}")
    return env


  def handle_ack(self, env: SignedEnvelope):
    state = self.state
    target, hs = self._peer(env)
    if hs.status == SessionStatus.FAILED and target != state.selected:
      return
    self.require(state, [RequesterPhase.COMMITTED, RequesterPhase.ABORTED], env)
    if target != state.selected:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, f"{target} was not selected")

    body = env.payload()
    bound = state.binding or state.draft
    if bound is not None and body.get("commitment") != bound.commitment_id().hex():
      raise TermsMismatch("acknowledgement names another commitment")
    self.ack = body
    self.finalize(env)


  def handle_abort(self, env: SignedEnvelope):
    state = self.state
    target, hs = self._peer(env)
    reason = str(env.payload().get("reason") or MsgType.ABORT.value)

    if state.phase == RequesterPhase.SESSIONS_REQUESTED and hs.status == SessionStatus.PENDING:
      self._session_failed(hs, reason)
      self._maybe_select(env)
    elif state.phase in (RequesterPhase.AGREED, RequesterPhase.BOUND, RequesterPhase.EXECUTING) and target == state.selected:
      self.abort(reason, env)
    else:
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, f"unexpected abort from {target}")


  def finalize(self, env: Optional[SignedEnvelope] = None):
    """
    Distributed commitment update: write the audit entry, discard session
    keys, close replay state for every session and finish the instance.
    """
    state = self.state
    if state.phase not in (RequesterPhase.COMMITTED, RequesterPhase.ABORTED):
      raise IllegalPhase(self.id, state.phase, RequesterPhase.FINALIZED, "no decision yet")

    provider = state.selected
    bound = state.binding or state.draft
    aborted = state.phase == RequesterPhase.ABORTED
    attributable = aborted and state.binding is not None and state.reason in ATTRIBUTABLE_REASONS
    before = self.candidates[provider].reputation if provider in self.candidates else None

    if self.audit is not None:
      self.audit.append(self.now(), self.id, "dcu", {
        "instance": state.instance_id,
        "outcome": state.phase.value,
        "reason": state.reason,
        "provider": provider.name if provider else None,
        "commitment": bound.commitment_id() if bound else None,
        "penalty": bound.terms.penalty if attributable else 0.0,
        "quality": state.quality,
        "transcript_head": state.transcript_head,
        "reputation_before": before,
        "reputation_after": self.ack.get("reputation") if self.ack else None,
        "acknowledged": self.ack is not None,
      })

    for hs in state.sessions.values():
      self.replay.close_session(hs.session_id, hs.peer, self.now())
      hs.session_key = None
      hs.ephemeral = None
      if hs.record is not None:
        hs.record = evolve(hs.record, session_key=b"")
    self.replay.close_session(self.discovery_session, self.registry_id, self.now())
    self.transition(state, RequesterPhase.FINALIZED, env)


  # ===============================================================================================
  # Timers


  def on_timer(self, key: str):
    state = self.state
    if key == "discovery" and state.phase == RequesterPhase.INIT:
      logger.warning(f"Requester | {self.id} discovery timed out")
      self.abort(Reason.DISCOVERY)

    elif key == "sessions" and state.phase == RequesterPhase.SESSIONS_REQUESTED:
      for hs in state.sessions.values():
        if hs.status == SessionStatus.PENDING:
          self._session_failed(hs, Reason.TIMEOUT.value, notify=hs.peer_nonce is not None)
      self._maybe_select()

    elif key == "binding" and state.phase == RequesterPhase.AGREED:
      logger.warning(f"Requester | {self.id} binding with {state.selected} timed out")
      self.abort(Reason.TIMEOUT, notify=True)

    elif key == "deadline" and state.phase == RequesterPhase.EXECUTING:
      logger.warning(f"Requester | {self.id} deadline passed without a result")
      self.decide(None)

    elif key.startswith("decision:") and state.phase in (RequesterPhase.COMMITTED, RequesterPhase.ABORTED):
      if int(key.partition(":")[2]) != self._decisions_sent or self.ack is not None:
        return
      if self._decisions_sent <= self.decision_retries:
        logger.info(f"Requester | {self.id} retransmitting {self._decision[0].value} ({self._decisions_sent})")
        self._send_decision()
      else:
        logger.warning(f"Requester | {self.id} decision unacknowledged by {state.selected}")
        self.finalize()


  # ===============================================================================================


  def _peer(self, env: SignedEnvelope):
    target = self._peers.get(env.session_id)
    if target is None or target != env.sender:
      raise IllegalPhase(self.id, self.state.phase, env.msg_type.value, f"no session with {env.sender}")
    return target, self.state.sessions[target]
