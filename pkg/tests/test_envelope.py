# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import evolve

import random

import pytest

from acnbp.lib.crypto import generate_keypair
from acnbp.lib.envelope import MsgType, ReplayWindow, SignedEnvelope, check_replay
from acnbp.lib.errors import DuplicateNonce, NonMonotoneSequence, ParseError, StaleTimestamp
from acnbp.lib.node import LoopbackTransport, Node
from acnbp.modules.core.schema import AgentId, BindingCommitment, Terms
from acnbp.utils import ManualClock

TAMPER_ROUNDS = 1000

ALICE = AgentId("Alice")
BOB = AgentId("Bob")
SESSION = bytes(range(16))


def _flip(data: bytes, rng: random.Random):
  if len(data) == 0:
    return b"\x00"
  out = bytearray(data)
  out[rng.randrange(len(out))] ^= rng.randrange(1, 256)
  return bytes(out)


def _envelope(keypair, seq=1, nonce=b"n" * 16, timestamp_ms=1000, session_id=SESSION, body=None):
  return SignedEnvelope.create(
    keypair=keypair,
    sender=ALICE,
    recipient=BOB,
    session_id=session_id,
    msg_type=MsgType.SSR,
    body=body if body is not None else {"query": "translation/en-fr/legal", "n": seq},
    nonce=nonce,
    timestamp_ms=timestamp_ms,
    seq=seq,
  )


@pytest.fixture
def alice_kp():
  return generate_keypair("agent/Alice")


class TestSignedEnvelope:
  def test_create_and_verify(self, alice_kp):
    env = _envelope(alice_kp)
    assert env.verify(alice_kp.public)
    assert not env.verify(generate_keypair("agent/Bob").public)
    assert env.payload() == {"query": "translation/en-fr/legal", "n": 1}

  def test_wire_form(self, alice_kp):
    env = _envelope(alice_kp)
    data = env.encode()
    decoded = SignedEnvelope.decode(data)
    assert decoded == env
    assert decoded.verify(alice_kp.public)
    assert decoded.hash() == env.hash()

  def test_session_id_length(self, alice_kp):
    with pytest.raises(ValueError):
      _envelope(alice_kp, session_id=b"short")

  def test_bytes_body_kept_verbatim(self, alice_kp):
    env = _envelope(alice_kp, body=b'{"raw":1}')
    assert env.body == b'{"raw":1}'
    assert env.payload() == {"raw": 1}

  @pytest.mark.parametrize("data", [b'{"sender":{}}', b'{"sender":{"name":"a","namespace":"agents"}}'])
  def test_malformed_wire_form(self, data):
    with pytest.raises(ParseError):
      SignedEnvelope.decode(data)


class TestTampering:
  """Any single-field change to a signed object invalidates its signature."""

  def test_envelope_mutations(self, alice_kp):
    rng = random.Random(2024)
    fields = ("sender", "recipient", "session_id", "msg_type", "body", "nonce", "timestamp_ms", "seq", "signature")

    for i in range(TAMPER_ROUNDS):
      env = _envelope(alice_kp, seq=1 + i % 7, nonce=rng.randbytes(16), timestamp_ms=rng.randrange(10**6))
      name = rng.choice(fields)
      if name == "sender":
        tampered = evolve(env, sender=AgentId(f"Mallory{i}"))
      elif name == "recipient":
        tampered = evolve(env, recipient=AgentId("Bob", "rogue"))
      elif name == "msg_type":
        tampered = evolve(env, msg_type=rng.choice([t for t in MsgType if t != env.msg_type]))
      elif name in ("timestamp_ms", "seq"):
        tampered = evolve(env, **{name: getattr(env, name) + rng.randrange(1, 1000)})
      else:
        tampered = evolve(env, **{name: _flip(getattr(env, name), rng)})

      assert tampered != env
      assert not tampered.verify(alice_kp.public), f"round {i}: {name}"

  def test_anri_mutations(self, make_anri, make_capability):
    rng = random.Random(7)
    anri, _, keypair = make_anri("TranslatorC_Gov", metadata={"reputation": 0.9, "cost_per_unit": 0.15})
    assert anri.verify_signature()

    for i in range(TAMPER_ROUNDS):
      choice = rng.randrange(6)
      if choice == 0:
        tampered = evolve(anri, metadata=anri.metadata | {"reputation": round(rng.random(), 6) + 1e-7})
      elif choice == 1:
        tampered = evolve(anri, metadata=anri.metadata | {"cost_per_unit": rng.randrange(1, 10**6) / 1000 + 1})
      elif choice == 2:
        tampered = evolve(anri, location=f"sim://rogue/{i}")
      elif choice == 3:
        tampered = evolve(anri, capabilities=[make_capability(deadline_hours=rng.randrange(25, 1000))])
      elif choice == 4:
        tampered = evolve(anri, signature=_flip(anri.signature, rng))
      else:
        tampered = evolve(anri, metadata=anri.metadata | {"ttl_ms": anri.ttl_ms + rng.randrange(1, 10**6)})

      assert not tampered.verify_signature(), f"round {i}: choice {choice}"
    assert anri.signed(keypair).verify_signature()

  def test_commitment_mutations(self, make_capability):
    rng = random.Random(11)
    req_kp, prov_kp = generate_keypair("agent/Alice"), generate_keypair("agent/Bob")
    commitment = BindingCommitment(
      requester=ALICE,
      provider=BOB,
      capability=make_capability(),
      terms=Terms(price=0.15, deadline_ms=3_600_000, quality_min=0.95),
    ).sign_as_provider(prov_kp).sign_as_requester(req_kp)
    assert commitment.fully_signed
    assert commitment.verify(req_kp.public, prov_kp.public)

    for i in range(TAMPER_ROUNDS):
      choice = rng.randrange(6)
      terms = commitment.terms
      if choice == 0:
        tampered = evolve(commitment, terms=evolve(terms, price=terms.price + rng.randrange(1, 1000) / 100))
      elif choice == 1:
        tampered = evolve(commitment, terms=evolve(terms, deadline_ms=terms.deadline_ms - rng.randrange(1, 10**6)))
      elif choice == 2:
        tampered = evolve(commitment, terms=evolve(terms, quality_min=rng.randrange(0, 95) / 100))
      elif choice == 3:
        tampered = evolve(commitment, provider=AgentId(f"Mallory{i}"))
      elif choice == 4:
        tampered = evolve(commitment, requester_signature=_flip(commitment.requester_signature, rng))
      else:
        tampered = evolve(commitment, provider_signature=_flip(commitment.provider_signature, rng))

      assert not tampered.verify(req_kp.public, prov_kp.public), f"round {i}: choice {choice}"

  def test_commitment_roles_not_interchangeable(self, make_capability):
    req_kp, prov_kp = generate_keypair("agent/Alice"), generate_keypair("agent/Bob")
    commitment = BindingCommitment(
      requester=ALICE,
      provider=BOB,
      capability=make_capability(),
      terms=Terms(price=1, deadline_ms=10, quality_min=0.5),
    ).sign_as_provider(prov_kp)
    assert not commitment.fully_signed
    assert commitment.verify_provider(prov_kp.public)
    assert not commitment.verify_requester(prov_kp.public)
    assert not commitment.verify(req_kp.public, prov_kp.public)


class TestReplayWindow:
  def test_accepts_fresh_envelopes(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, seq=1, nonce=b"a" * 16), 1000)
    win.check(_envelope(alice_kp, seq=2, nonce=b"b" * 16), 1500)
    assert win.last(ALICE, SESSION) == 2

  def test_check_replay(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    env = _envelope(alice_kp)
    assert check_replay(win, env, 1000)
    with pytest.raises(DuplicateNonce):
      check_replay(win, env, 1000)

  def test_exact_replay(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    env = _envelope(alice_kp)
    win.check(env, 1000)
    with pytest.raises(DuplicateNonce):
      win.check(env, 1001)

  @pytest.mark.parametrize("now_ms", [-1, 2001])
  def test_stale_timestamp(self, alice_kp, now_ms):
    win = ReplayWindow(window_ms=1000)
    with pytest.raises(StaleTimestamp):
      win.check(_envelope(alice_kp, timestamp_ms=1000), now_ms)

  def test_window_boundary_inclusive(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, timestamp_ms=1000), 2000)

  def test_sequence_must_increase(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, seq=5, nonce=b"a" * 16), 1000)
    with pytest.raises(NonMonotoneSequence):
      win.check(_envelope(alice_kp, seq=5, nonce=b"b" * 16), 1000)
    with pytest.raises(NonMonotoneSequence):
      win.check(_envelope(alice_kp, seq=4, nonce=b"c" * 16), 1000)
    win.check(_envelope(alice_kp, seq=9, nonce=b"d" * 16), 1000)

  def test_sequences_are_per_session(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, seq=3, nonce=b"a" * 16), 1000)
    win.check(_envelope(alice_kp, seq=1, nonce=b"b" * 16, session_id=b"\xff" * 16), 1000)

  def test_rejected_envelope_leaves_state(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, seq=2, nonce=b"a" * 16), 1000)
    with pytest.raises(StaleTimestamp):
      win.check(_envelope(alice_kp, seq=3, nonce=b"b" * 16, timestamp_ms=5000), 1000)
    win.check(_envelope(alice_kp, seq=3, nonce=b"b" * 16), 1000)

  def test_closed_session(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, seq=1, nonce=b"a" * 16), 1000)
    win.close_session(SESSION, ALICE)
    with pytest.raises(NonMonotoneSequence):
      win.check(_envelope(alice_kp, seq=2, nonce=b"b" * 16), 1000)

  def test_evict(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, seq=1, nonce=b"a" * 16, timestamp_ms=1000), 1000)
    assert win.evict(1500) == 0
    assert win.evict(2001) == 1
    # Past the window the timestamp check rejects the old envelope instead
    with pytest.raises(StaleTimestamp):
      win.check(_envelope(alice_kp, seq=2, nonce=b"a" * 16, timestamp_ms=1000), 2001)

  def test_evict_drops_sequences_and_tombstones(self, alice_kp):
    win = ReplayWindow(window_ms=1000)
    win.check(_envelope(alice_kp, seq=1, nonce=b"a" * 16), 1000)
    win.check(_envelope(alice_kp, seq=1, nonce=b"b" * 16, session_id=b"\xff" * 16), 1000)
    win.close_session(b"\xff" * 16, ALICE, now_ms=1000)
    assert win.last(ALICE, SESSION) == 1 and (ALICE, b"\xff" * 16) in win.closed

    win.evict(2001)
    assert win.seen == {} and win.last_seq == {} and win.closed == {}


class _Sink(Node):
  def dispatch(self, env):
    pass


class TestNodeReplayState:
  def test_state_bounded_across_windows(self, alice_kp):
    clock = ManualClock()
    transport = LoopbackTransport(clock)
    bob_kp = generate_keypair("agent/Bob")
    keys = {ALICE: alice_kp.public, BOB: bob_kp.public}
    alice = transport.attach(_Sink(ALICE, alice_kp, keys.get))
    bob = transport.attach(_Sink(BOB, bob_kp, keys.get, replay_window_ms=1000))

    for i in range(500):
      alice.send(BOB, i.to_bytes(16, "big"), MsgType.SSR, {"n": i})
      transport.deliver_all()
      clock.advance(10_000)
      assert len(bob.replay.seen) <= 1
      assert len(bob.replay.last_seq) <= 1

    assert bob.accepted == 500
    assert sum(bob.rejections.values()) == 0

  def test_replay_still_rejected_after_eviction(self, alice_kp):
    clock = ManualClock()
    transport = LoopbackTransport(clock)
    bob_kp = generate_keypair("agent/Bob")
    keys = {ALICE: alice_kp.public, BOB: bob_kp.public}
    alice = transport.attach(_Sink(ALICE, alice_kp, keys.get))
    bob = transport.attach(_Sink(BOB, bob_kp, keys.get, replay_window_ms=1000))

    env = alice.send(BOB, SESSION, MsgType.SSR, {})
    transport.deliver_all()
    clock.advance(5000)
    bob.on_envelope(env)

    assert bob.accepted == 1
    assert bob.rejections["StaleTimestamp"] == 1
