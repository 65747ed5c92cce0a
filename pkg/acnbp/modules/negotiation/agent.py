# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from typing import Any, Dict, Iterable, Optional, Union

from acnbp import logger
from acnbp.lib.canonical import canonical_encode, canonical_decode
from acnbp.lib.crypto import seal, open_sealed
from acnbp.lib.envelope import MsgType, SignedEnvelope
from acnbp.lib.errors import IllegalPhase, ParseError
from acnbp.lib.node import Node
from acnbp.modules.negotiation.schema import ProviderState, RequesterState
from acnbp.modules.negotiation.transitions import TransitionTable
from acnbp.utils import from_hex

__all__ = (
  "AEAD_NONCE_BYTES",
  "NegotiationAgent",
)

AEAD_NONCE_BYTES = 12
AgentState = Union[RequesterState, ProviderState]


class NegotiationAgent(Node):
  """Node running negotiation state machines checked against a transition table."""

  table: TransitionTable


  def transition(self, state: AgentState, phase_to: Any, env: Optional[SignedEnvelope] = None):
    """
    Move an instance to another phase and trace it.

    Raises:
        IllegalPhase: The transition is absent from the table
    """
    phase_from = state.phase
    if not self.table.allows(phase_from, phase_to):
      raise IllegalPhase(self.id, phase_from, phase_to)

    state.phase = phase_to
    logger.info(f"{self.role} | {self.id} [{state.instance_id[:8]}] {phase_from.value} -> {phase_to.value}")
    self.trace({
      "kind": "transition",
      "instance_id": state.instance_id,
      "actor": self.id.name,
      "phase_from": phase_from.value,
      "phase_to": phase_to.value,
      "msg_type": env.msg_type.value if env else None,
      "envelope_hash": env.hash() if env else None,
    })
    state.check_invariants()


  def require(self, state: AgentState, phases: Iterable[Any], env: SignedEnvelope):
    """
    Raises:
        IllegalPhase: The instance is not in one of `phases`
    """
    if state.phase not in tuple(phases):
      raise IllegalPhase(self.id, state.phase, env.msg_type.value, "unexpected message")


  # ===============================================================================================
  # Sealed payloads


  def seal_body(self, session_key: bytes, session_id: bytes, msg_type: MsgType, payload: Any):
    iv = self.random_bytes(AEAD_NONCE_BYTES)
    sealed = seal(session_key, iv, canonical_encode(payload), _aad(session_id, msg_type))
    return {"iv": iv, "sealed": sealed}


  def open_body(self, session_key: Optional[bytes], env: SignedEnvelope) -> Optional[Dict[str, Any]]:
    """
    Open the sealed payload of an envelope.

    Returns:
        Decoded payload, or None if it fails to authenticate or decode
    """
    if session_key is None:
      return None
    body = env.payload()
    try:
      iv = from_hex(body["iv"], "iv")
      sealed = from_hex(body["sealed"], "sealed")
    except (KeyError, TypeError, ValueError):
      return None
    plaintext = open_sealed(session_key, iv, sealed, _aad(env.session_id, env.msg_type))
    if plaintext is None:
      return None
    try:
      return canonical_decode(plaintext)
    except ParseError:
      return None


def _aad(session_id: bytes, msg_type: MsgType):
  return session_id + msg_type.value.encode("utf-8")
