# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import define, frozen, field, evolve
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

import threading

from acnbp import logger, settings
from acnbp.lib.canonical import canonical_encode, canonical_decode
from acnbp.lib.crypto import KeyPair, sign, verify, sha3
from acnbp.lib.errors import (
  ParseError,
  StaleTimestamp,
  DuplicateNonce,
  NonMonotoneSequence,
)
from acnbp.modules.core.schema import AgentId
from acnbp.utils import from_hex, short_hex

__all__ = (
  "SESSION_ID_BYTES",
  "MsgType",
  "SignedEnvelope",
  "ReplayWindow",
  "check_replay",
)

SESSION_ID_BYTES = 16


class MsgType(str, Enum):
  CD_QUERY = "CD_QUERY"
  CD_RESPONSE = "CD_RESPONSE"
  SSR = "SSR"
  SSO = "SSO"
  SSE_INIT = "SSE_INIT"
  SSE_CONFIRM = "SSE_CONFIRM"
  SSA_ACCEPT = "SSA_ACCEPT"
  SSA_REJECT = "SSA_REJECT"
  BC = "BC"
  EXEC_REQUEST = "EXEC_REQUEST"
  EXEC_RESULT = "EXEC_RESULT"
  COMMIT = "COMMIT"
  ABORT = "ABORT"
  DCU = "DCU"


@frozen
class SignedEnvelope:
  """
  A protocol message on the bus.

  The body is the canonical encoding of the message payload. The signature
  covers the canonical encoding of every other field.
  """
  sender: AgentId
  recipient: AgentId
  session_id: bytes = field(repr=short_hex)
  msg_type: MsgType = field(converter=MsgType)
  body: bytes = field(repr=False)
  nonce: bytes = field(repr=short_hex)
  timestamp_ms: int
  seq: int
  signature: bytes = field(default=b"", repr=False)

  @classmethod
  def create(
    cls,
    keypair: KeyPair,
    sender: AgentId,
    recipient: AgentId,
    session_id: bytes,
    msg_type: MsgType,
    body: Any,
    nonce: bytes,
    timestamp_ms: int,
    seq: int,
  ):
    """
    Build and sign an envelope.

    Args:
        keypair: Sender's signing key pair
        body: Payload; anything other than bytes is canonical-encoded first

    Returns:
        Signed envelope
    """
    if len(session_id) != SESSION_ID_BYTES:
      raise ValueError(f"session_id must be {SESSION_ID_BYTES} bytes")
    if not isinstance(body, (bytes, bytearray)):
      body = canonical_encode(body)
    env = cls(
      sender=sender,
      recipient=recipient,
      session_id=bytes(session_id),
      msg_type=msg_type,
      body=bytes(body),
      nonce=nonce,
      timestamp_ms=timestamp_ms,
      seq=seq,
    )
    return env.signed(keypair)

  def preimage(self):
    return canonical_encode(self, omit=("signature",))

  def signed(self, keypair: KeyPair):
    return evolve(self, signature=sign(keypair.secret, self.preimage(), keypair.scheme_id))

  def verify(self, public_key: bytes):
    return verify(public_key, self.preimage(), self.signature)

  def payload(self) -> Dict[str, Any]:
    return canonical_decode(self.body)

  def encode(self):
    return canonical_encode(self)

  def hash(self):
    return sha3(self.encode())

  @classmethod
  def decode(cls, data: bytes):
    return cls.from_plain(canonical_decode(data))

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    try:
      return cls(
        sender=AgentId.from_plain(d["sender"]),
        recipient=AgentId.from_plain(d["recipient"]),
        session_id=from_hex(d["session_id"], "session_id"),
        msg_type=d["msg_type"],
        body=from_hex(d["body"], "body"),
        nonce=from_hex(d["nonce"], "nonce"),
        timestamp_ms=d["timestamp_ms"],
        seq=d["seq"],
        signature=from_hex(d["signature"], "signature"),
      )
    except (KeyError, TypeError, ValueError) as e:
      raise ParseError(f"Malformed envelope: {e}") from None


# =================================================================================================
# Replay window


SeqKey = Tuple[AgentId, bytes]
NonceKey = Tuple[AgentId, bytes]


@define
class ReplayWindow:
  """
  Per-receiver duplicate detection over timestamps, nonces and per-session
  sequence numbers.

  Seen nonces are kept until their envelope's timestamp leaves the window, at
  which point the timestamp check alone rejects them. Closed sessions keep a
  tombstone in place of their last sequence number. `evict()` drops nonces,
  sequence numbers and tombstones once nothing they guard can pass the
  timestamp check.
  """
  window_ms: int = field(factory=lambda: settings.protocol.replay_window_ms)
  seen: Dict[NonceKey, int] = field(factory=dict)
  last_seq: Dict[SeqKey, int] = field(factory=dict)
  closed: Dict[SeqKey, int] = field(factory=dict)
  _seq_expiry: Dict[SeqKey, int] = field(factory=dict, repr=False, eq=False)
  _lock: threading.Lock = field(factory=threading.Lock, repr=False, eq=False)

  def check(self, env: SignedEnvelope, now_ms: int):
    """
    Accept an envelope or raise the first violated check.

    Raises:
        StaleTimestamp: Timestamp further than window_ms from now
        DuplicateNonce: (sender, nonce) already seen
        NonMonotoneSequence: seq not above the last accepted one, or session closed
    """
    seq_key = (env.sender, env.session_id)
    nonce_key = (env.sender, env.nonce)

    with self._lock:
      if abs(now_ms - env.timestamp_ms) > self.window_ms:
        raise StaleTimestamp(env.sender, f"timestamp {env.timestamp_ms} outside window at {now_ms}")
      if nonce_key in self.seen:
        raise DuplicateNonce(env.sender, f"nonce {short_hex(env.nonce)} already seen")
      if seq_key in self.closed:
        raise NonMonotoneSequence(env.sender, f"session {short_hex(env.session_id)} is closed")
      last = self.last_seq.get(seq_key)
      if last is not None and env.seq <= last:
        raise NonMonotoneSequence(env.sender, f"seq {env.seq} not above {last}")

      expiry = env.timestamp_ms + self.window_ms
      self.seen[nonce_key] = expiry
      self.last_seq[seq_key] = env.seq
      self._seq_expiry[seq_key] = max(expiry, self._seq_expiry.get(seq_key, expiry))

  def evict(self, now_ms: int):
    """
    Drop state whose envelopes can no longer pass the timestamp check.

    Returns:
        Number of nonces dropped
    """
    with self._lock:
      expired = [k for k, expiry in self.seen.items() if expiry < now_ms]
      for k in expired:
        del self.seen[k]
      for k in [k for k, expiry in self._seq_expiry.items() if expiry < now_ms]:
        del self._seq_expiry[k]
        self.last_seq.pop(k, None)
      for k in [k for k, expiry in self.closed.items() if expiry < now_ms]:
        del self.closed[k]
    if expired:
      logger.debug(f"Replay | Evicted {len(expired)} nonces")
    return len(expired)

  def close_session(self, session_id: bytes, sender: Optional[AgentId] = None, now_ms: int = 0):
    """Tombstone the sequence state of a finished session."""
    with self._lock:
      keys = [k for k in self.last_seq if k[1] == session_id and (sender is None or k[0] == sender)]
      if sender is not None:
        keys.append((sender, session_id))
      for k in keys:
        self.last_seq.pop(k, None)
        expiry = max(now_ms + self.window_ms, self._seq_expiry.pop(k, 0))
        self.closed[k] = max(expiry, self.closed.get(k, 0))

  def last(self, sender: AgentId, session_id: bytes):
    return self.last_seq.get((sender, session_id))


def check_replay(win: ReplayWindow, env: SignedEnvelope, now_ms: int):
  win.check(env, now_ms)
  return True
