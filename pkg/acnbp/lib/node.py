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
Bus endpoints.

A node owns a signing key, a replay window and per-session sequence
counters. It talks to the world through a transport (the simulated network,
or a test double) and reports what it does through a tracer callback.
"""

from collections import Counter
from typing import Any, Callable, Dict, List, Optional, Protocol

import random

from acnbp import logger, settings
from acnbp.lib.crypto import KeyPair
from acnbp.lib.envelope import MsgType, SignedEnvelope, ReplayWindow, check_replay
from acnbp.lib.errors import (
  InvariantBreach,
  MalformedKey,
  ParseError,
  ProtocolError,
  ReplayRejected,
  SignatureInvalid,
  UnknownAgent,
)
from acnbp.modules.core.schema import AgentId
from acnbp.utils import short_hex

__all__ = (
  "Transport",
  "KeyLookup",
  "Tracer",
  "Node",
  "LoopbackTransport",
)

KeyLookup = Callable[[AgentId], Optional[bytes]]
Tracer = Callable[[Dict[str, Any]], None]


class Transport(Protocol):
  def send(self, env: SignedEnvelope) -> None: ...

  def set_timer(self, owner: AgentId, delay_ms: int, key: str) -> None: ...

  def now(self) -> int: ...


class Node:
  """
  Base class for everything that sends and receives envelopes.

  Subclasses implement `dispatch(env)` for envelopes that passed signature
  and replay checks, and `on_timer(key)`.
  """

  def __init__(
    self,
    agent_id: AgentId,
    keypair: KeyPair,
    key_lookup: KeyLookup,
    transport: Optional[Transport] = None,
    rng_seed: Any = 0,
    tracer: Optional[Tracer] = None,
    replay_window_ms: Optional[int] = None,
  ):
    self.id         = agent_id
    self.keypair    = keypair
    self.key_lookup = key_lookup
    self.transport  = transport
    self.rng        = random.Random(f"{rng_seed}/{agent_id.qualified}")
    self.tracer     = tracer
    self.replay     = ReplayWindow(
      window_ms=replay_window_ms if replay_window_ms is not None else settings.protocol.replay_window_ms
    )
    self.rejections: Counter = Counter()
    self.accepted   = 0
    self._seq: Dict[bytes, int] = {}


  # ===============================================================================================
  # Clock, randomness, sending


  def now(self):
    return self.transport.now() if self.transport else 0


  def random_bytes(self, n: Optional[int] = None):
    return self.rng.randbytes(n if n is not None else settings.protocol.nonce_bytes)


  def next_seq(self, session_id: bytes):
    self._seq[session_id] = self._seq.get(session_id, 0) + 1
    return self._seq[session_id]


  def envelope(self, recipient: AgentId, session_id: bytes, msg_type: MsgType, body: Any):
    return SignedEnvelope.create(
      keypair=self.keypair,
      sender=self.id,
      recipient=recipient,
      session_id=session_id,
      msg_type=msg_type,
      body=body,
      nonce=self.random_bytes(),
      timestamp_ms=self.now(),
      seq=self.next_seq(session_id),
    )


  def send(self, recipient: AgentId, session_id: bytes, msg_type: MsgType, body: Any):
    env = self.envelope(recipient, session_id, msg_type, body)
    self.on_sent(env)
    if self.transport:
      self.transport.send(env)
    return env


  def set_timer(self, delay_ms: int, key: str):
    if self.transport:
      self.transport.set_timer(self.id, delay_ms, key)


  def on_sent(self, env: SignedEnvelope):
    """Hook called for every envelope this node sends."""


  # ===============================================================================================
  # Receiving


  def on_envelope(self, env: SignedEnvelope):
    """
    Verify and dispatch an inbound envelope.

    Protocol errors never escape: a rejected envelope is counted, logged and
    leaves the node's state unchanged.

    Returns:
        Whether the envelope was accepted
    """
    try:
      self.verify_inbound(env)
    except ProtocolError as e:
      self.reject(env, e)
      return False

    self.accepted += 1
    try:
      self.dispatch(env)
    except InvariantBreach:
      raise
    except ProtocolError as e:
      self.reject(env, e)
    except (KeyError, TypeError, ValueError) as e:
      self.reject(env, ParseError(f"{type(e).__name__}: {e}"))
    return True


  def verify_inbound(self, env: SignedEnvelope):
    """
    Raises:
        UnknownAgent: Envelope addressed elsewhere or sender key unknown
        SignatureInvalid: Signature does not verify under the sender's key
        ReplayRejected: Replay window rejects the envelope
    """
    if env.recipient != self.id:
      raise UnknownAgent(env.recipient, f"envelope not addressed to {self.id}")
    key = self.key_lookup(env.sender)
    if key is None:
      raise UnknownAgent(env.sender, "sender key unknown")
    try:
      ok = env.verify(key)
    except MalformedKey:
      ok = False
    if not ok:
      raise SignatureInvalid(env.sender, f"{env.msg_type.value} signature does not verify")
    self.replay.evict(self.now())
    check_replay(self.replay, env, self.now())


  def reject(self, env: SignedEnvelope, e: ProtocolError):
    self.rejections[e.code] += 1
    logger.warning(f"{self.role} | {self.id} rejected {env.msg_type.value} from {env.sender}: {e.code} {e.message}")
    self.trace({
      "kind": "reject",
      "actor": self.id.name,
      "msg_type": env.msg_type.value,
      "envelope_hash": env.hash(),
      "code": e.code,
    })


  def dispatch(self, env: SignedEnvelope):
    raise NotImplementedError


  def on_timer(self, key: str):
    pass


  # ===============================================================================================


  @property
  def role(self):
    return type(self).__name__


  def trace(self, event: Dict[str, Any]):
    if self.tracer:
      self.tracer({"time_ms": self.now()} | event)


class LoopbackTransport:
  """
  In-process transport for driving nodes by hand.

  Sent envelopes and timers are queued; `deliver_all()` hands queued
  envelopes to their recipients in order.
  """

  def __init__(self, clock: Optional[Callable[[], int]] = None):
    self.clock  = clock or (lambda: 0)
    self.nodes: Dict[AgentId, Node] = {}
    self.outbox: List[SignedEnvelope] = []
    self.timers: List[tuple] = []
    self.sent: List[SignedEnvelope] = []


  def attach(self, node: Node):
    self.nodes[node.id] = node
    node.transport = self
    return node


  def now(self):
    return self.clock()


  def send(self, env: SignedEnvelope):
    self.outbox.append(env)
    self.sent.append(env)


  def set_timer(self, owner: AgentId, delay_ms: int, key: str):
    self.timers.append((self.clock() + delay_ms, owner, key))


  def deliver_all(self, limit: int = 1000):
    delivered = 0
    while self.outbox and delivered < limit:
      env = self.outbox.pop(0)
      node = self.nodes.get(env.recipient)
      if node is not None:
        node.on_envelope(env)
      delivered += 1
    return delivered


  def fire_timers(self, key_prefix: str = ""):
    due, self.timers = (
      [t for t in self.timers if t[2].startswith(key_prefix)],
      [t for t in self.timers if not t[2].startswith(key_prefix)],
    )
    for _, owner, key in sorted(due, key=lambda t: t[0]):
      node = self.nodes.get(owner)
      if node is not None:
        node.on_timer(key)
    return len(due)
