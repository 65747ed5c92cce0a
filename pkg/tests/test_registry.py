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

import pytest

from acnbp.lib.crypto import generate_keypair, sign, verify_pow
from acnbp.lib.envelope import MsgType, SignedEnvelope
from acnbp.lib.errors import (
  CapabilityValidationError,
  CredentialFailure,
  DuplicateRegistration,
  ParseError,
  PowRejected,
  RateLimited,
  RegistrationError,
  SignatureInvalid,
  UnknownAgent,
)
from acnbp.lib.node import LoopbackTransport, Node
from acnbp.modules.core.matching import ewma_reputation
from acnbp.modules.core.schema import AgentId, BindingCommitment, Terms
from acnbp.modules.registry.authority import CertificateAuthority, verify_anri, verify_certificate
from acnbp.modules.registry.limiter import BucketPool, TokenBucket
from acnbp.modules.registry.node import RegistryNode
from acnbp.modules.registry.registry import Registry, read_snapshot
from acnbp.modules.sim.schema import DEFAULT_TTL_MS


def _failing_nonce(challenge: bytes, difficulty: int):
  n = 0
  while verify_pow(challenge, n.to_bytes(8, "big"), difficulty):
    n += 1
  return n.to_bytes(8, "big")


class TestRegistration:
  def test_register(self, registry, make_anri, register):
    anri, cert, _ = make_anri("TranslatorC_Gov")
    receipt = register(registry, anri, cert)
    assert receipt.agent_id == anri.id
    assert receipt.record_hash == anri.record_hash()
    assert registry.get(anri.id) == anri
    assert registry.public_key(anri.id) == anri.security.public_key

  def test_challenge_rotates(self, registry, make_anri, register):
    anri, cert, _ = make_anri("TranslatorC_Gov")
    before = registry.challenge(anri.id)
    assert registry.challenge(anri.id) == before
    register(registry, anri, cert)
    assert registry.challenge(anri.id) != before

  def test_rate_limited(self, registry, make_anri, register):
    anri, cert, _ = make_anri("Eager_Retry")
    for _ in range(registry.rate_limits.capacity):
      assert registry.rate_limits.allow(anri.id)
    with pytest.raises(RateLimited):
      register(registry, anri, cert)

  def test_pow_rejected(self, registry, make_anri):
    anri, cert, _ = make_anri("Lazy_Worker")
    with pytest.raises(PowRejected):
      registry.register(anri, cert, _failing_nonce(registry.challenge(anri.id), registry.pow_difficulty))

  def test_stale_challenge_rejected(self, registry, make_anri, register, clock):
    anri, cert, _ = make_anri("TranslatorC_Gov", metadata={"ttl_ms": 1000})
    old_challenge = registry.challenge(anri.id)
    register(registry, anri, cert)
    clock.advance(2000)

    renewed, cert2, _ = make_anri("TranslatorC_Gov", metadata={"registered_at": 2000})
    # A nonce solving the old challenge only must not be accepted
    bits = registry.pow_difficulty
    n = 0
    while True:
      candidate = n.to_bytes(8, "big")
      if verify_pow(old_challenge, candidate, bits) and not verify_pow(registry.challenge(anri.id), candidate, bits):
        nonce = candidate
        break
      n += 1
    with pytest.raises(PowRejected):
      registry.register(renewed, cert2, nonce)

  def test_bad_signature(self, registry, make_anri, register):
    anri, cert, _ = make_anri("Wrong_Signer")
    forged = anri.signed(generate_keypair("someone-else"))
    with pytest.raises(SignatureInvalid):
      register(registry, forged, cert)

  def test_no_certificate(self, registry, make_anri, register):
    anri, _, _ = make_anri("Forged_Cert")
    with pytest.raises(CredentialFailure):
      register(registry, anri, None)

  def test_certificate_from_other_authority(self, registry, make_anri, register):
    rogue = CertificateAuthority(name="rogue-ca", seed="ca/rogue")
    anri, _, keypair = make_anri("Forged_Cert")
    cert = rogue.issue(anri.id, keypair.public)
    anri = evolve(anri, security=evolve(anri.security, certificate=cert)).signed(keypair)
    with pytest.raises(CredentialFailure):
      register(registry, anri, cert)

  def test_revoked_certificate(self, registry, ca, make_anri, register):
    anri, cert, _ = make_anri("TranslatorC_Gov")
    ca.revoke_certificate(cert)
    with pytest.raises(CredentialFailure):
      register(registry, anri, cert)

  def test_certificate_for_other_subject(self, registry, ca, make_anri, register):
    anri, _, keypair = make_anri("Mallory")
    cert = ca.issue(AgentId("LegalBot_Prime"), keypair.public)
    anri = evolve(anri, security=evolve(anri.security, certificate=cert)).signed(keypair)
    with pytest.raises(CredentialFailure):
      register(registry, anri, cert)

  def test_unattested_certification(self, registry, make_anri, make_capability, register):
    anri, cert, _ = make_anri(
      "TranslatorC_Gov",
      capabilities=[make_capability(certifications=["gov-clearance"])],
      certifications=["legal-certified"],
    )
    with pytest.raises(CredentialFailure):
      register(registry, anri, cert)

  @pytest.mark.parametrize(
    "metadata",
    [{"ttl_ms": 0}, {"ttl_ms": -5}, {"registered_at": 10**9}, {"cost_per_unit": -1}, {"reputation": 1.5}],
  )
  def test_invalid_capability(self, registry, make_anri, register, metadata):
    anri, cert, _ = make_anri("Expired_Ttl", metadata=metadata)
    with pytest.raises(CapabilityValidationError):
      register(registry, anri, cert)

  def test_empty_capabilities(self, registry, make_anri, register):
    anri, cert, _ = make_anri("Empty", capabilities=[])
    with pytest.raises(CapabilityValidationError):
      register(registry, anri, cert)

  def test_duplicate(self, registry, make_anri, register):
    anri, cert, _ = make_anri("Twice_Listed")
    register(registry, anri, cert)
    with pytest.raises(DuplicateRegistration):
      register(registry, anri, cert)

  def test_expired_record_replaced(self, registry, make_anri, register, clock):
    anri, cert, _ = make_anri("TranslatorC_Gov", metadata={"ttl_ms": 1000})
    register(registry, anri, cert)
    clock.advance(1001)
    again, cert2, _ = make_anri("TranslatorC_Gov", metadata={"registered_at": 1001})
    register(registry, again, cert2)
    assert registry.get(anri.id) == again

  def test_future_dated_rejected(self, registry, make_anri, register, clock):
    clock.advance(1000)
    anri, cert, _ = make_anri("TranslatorC_Gov", metadata={"registered_at": 201_000})
    with pytest.raises(CapabilityValidationError):
      register(registry, anri, cert)
    assert registry.records == {}

  def test_past_dated_expires_from_its_date(self, registry, make_anri, register, clock):
    clock.advance(200_000)
    anri, cert, _ = make_anri("TranslatorC_Gov", metadata={"registered_at": 0, "ttl_ms": 250_000})
    receipt = register(registry, anri, cert)
    assert receipt.registered_at == 0 and registry.is_valid(anri)

    clock.advance(50_001)
    assert not registry.is_valid(anri)
    again, cert2, _ = make_anri("TranslatorC_Gov", metadata={"registered_at": clock()})
    register(registry, again, cert2)
    assert registry.get(anri.id) == again

  def test_failures_leave_registry_unchanged(self, registry, ca, make_anri, register):
    anri, cert, _ = make_anri("TranslatorC_Gov")
    register(registry, anri, cert)
    before = dict(registry.records)
    wrong, wrong_cert, _ = make_anri("Wrong_Signer")

    attempts = [
      make_anri("Expired_Ttl", metadata={"ttl_ms": 0})[:2],
      (wrong.signed(generate_keypair("x")), wrong_cert),
      (make_anri("Forged_Cert")[0], None),
      (anri, cert),
    ]
    for record, presented in attempts:
      with pytest.raises(RegistrationError):
        register(registry, record, presented)
    assert registry.records == before


class TestQuery:
  @pytest.fixture
  def populated(self, registry, translators, register):
    for anri, cert, _ in translators.values():
      register(registry, anri, cert)
    return registry

  def test_ranked_by_similarity_then_id(self, populated, legal_query):
    names = [a.id.name for a in populated.query(legal_query)]
    assert names == ["TranslatorA_Corp", "TranslatorC_Gov", "TranslatorB_Fast"]

  def test_relaxed(self, populated, legal_query):
    names = [a.id.name for a in populated.query(legal_query.relaxed())]
    assert names == ["TranslatorA_Corp", "TranslatorC_Gov", "TranslatorD_Basic", "TranslatorB_Fast"]

  def test_limit(self, populated, legal_query):
    assert [a.id.name for a in populated.query(legal_query, limit=1)] == ["TranslatorA_Corp"]
    with pytest.raises(ValueError):
      populated.query(legal_query, limit=0)

  def test_expired_records_hidden(self, populated, legal_query, clock):
    clock.advance(DEFAULT_TTL_MS + 1)
    assert populated.query(legal_query) == []

  def test_expired_records_dropped(self, populated, make_anri, register, legal_query, clock):
    clock.advance(DEFAULT_TTL_MS)
    fresh, cert, _ = make_anri("Late_Joiner", metadata={"registered_at": DEFAULT_TTL_MS})
    register(populated, fresh, cert)
    assert len(populated.records) == 5

    clock.advance(1)
    assert [a.id.name for a in populated.query(legal_query)] == ["Late_Joiner"]
    assert list(populated.records) == [fresh.id]

  def test_revoked_certificates_hidden(self, populated, ca, legal_query, translators):
    ca.revoke_certificate(translators["TranslatorA_Corp"][1])
    names = [a.id.name for a in populated.query(legal_query)]
    assert "TranslatorA_Corp" not in names

  def test_results_verify_independently(self, populated, ca, legal_query):
    for anri in populated.query(legal_query):
      assert verify_anri(anri, ca.root)
      assert not verify_anri(anri, generate_keypair("other-root").public)

  def test_discover_rate_limited(self, populated, legal_query):
    seeker = AgentId("Seeker")
    for _ in range(5):
      populated.discover(seeker, legal_query)
    with pytest.raises(RateLimited):
      populated.discover(seeker, legal_query)


class TestLifecycle:
  """Renewal, revocation and reputation updates of stored records."""

  def test_renew(self, registry, make_anri, register, clock):
    anri, cert, keypair = make_anri("TranslatorC_Gov")
    register(registry, anri, cert)
    clock.advance(5000)

    renewed = anri.renewed(5000, 60_000)
    receipt = registry.renew(anri.id, sign(keypair.secret, renewed.preimage()), 60_000, registered_at=5000)
    stored = registry.get(anri.id)
    assert stored.ttl_ms == 60_000 and stored.registered_at == 5000
    assert stored.verify_signature()
    assert receipt.record_hash == stored.record_hash()

  def test_renew_wrong_key(self, registry, make_anri, register):
    anri, cert, _ = make_anri("TranslatorC_Gov")
    register(registry, anri, cert)
    bogus = sign(generate_keypair("x").secret, anri.renewed(0, 60_000).preimage())
    with pytest.raises(SignatureInvalid):
      registry.renew(anri.id, bogus, 60_000, registered_at=0)
    assert registry.get(anri.id) == anri

  def test_renew_future_dated(self, registry, make_anri, register, clock):
    anri, cert, keypair = make_anri("TranslatorC_Gov")
    register(registry, anri, cert)
    renewed = anri.renewed(100_000, 60_000)
    with pytest.raises(CapabilityValidationError):
      registry.renew(anri.id, sign(keypair.secret, renewed.preimage()), 60_000, registered_at=100_000)
    assert registry.get(anri.id) == anri

  def test_renew_unknown(self, registry):
    with pytest.raises(UnknownAgent):
      registry.renew(AgentId("Nobody"), b"\x00" * 64, 1000)

  def test_revoke(self, registry, make_anri, register, legal_query):
    anri, cert, keypair = make_anri("TranslatorC_Gov")
    register(registry, anri, cert)
    with pytest.raises(SignatureInvalid):
      registry.revoke(anri.id, sign(generate_keypair("x").secret, anri.revocation_preimage()))
    assert registry.revoke(anri.id, sign(keypair.secret, anri.revocation_preimage()))
    assert registry.get(anri.id) is None
    assert registry.query(legal_query) == []

  def _decision(self, registry, make_anri, register, make_capability, msg_type=MsgType.COMMIT):
    req_anri, req_cert, req_kp = make_anri("LegalBot_Prime")
    prov_anri, prov_cert, prov_kp = make_anri("TranslatorC_Gov", metadata={"reputation": 0.9})
    register(registry, req_anri, req_cert)
    register(registry, prov_anri, prov_cert)

    commitment = BindingCommitment(
      requester=req_anri.id,
      provider=prov_anri.id,
      capability=make_capability(),
      terms=Terms(price=0.15, deadline_ms=3_600_000, quality_min=0.95),
    ).sign_as_provider(prov_kp).sign_as_requester(req_kp)
    decision = SignedEnvelope.create(
      keypair=req_kp,
      sender=req_anri.id,
      recipient=prov_anri.id,
      session_id=b"\x01" * 16,
      msg_type=msg_type,
      body={"commitment": commitment.commitment_id().hex()},
      nonce=b"\x02" * 16,
      timestamp_ms=0,
      seq=9,
    )
    return prov_anri, prov_kp, commitment, decision

  @pytest.mark.parametrize("msg_type, expected", [(MsgType.COMMIT, 0.92), (MsgType.ABORT, 0.72)])
  def test_record_outcome(self, registry, make_anri, register, make_capability, msg_type, expected):
    prov, prov_kp, commitment, decision = self._decision(registry, make_anri, register, make_capability, msg_type)
    updated = prov.with_metadata(reputation=ewma_reputation(0.9, 1.0 if msg_type == MsgType.COMMIT else 0.0))
    updated = updated.signed(prov_kp)

    registry.record_outcome(updated, decision, commitment)
    assert abs(registry.get(prov.id).reputation - expected) < 1e-12
    with pytest.raises(RegistrationError):
      registry.record_outcome(updated, decision, commitment)

  def test_record_outcome_wrong_reputation(self, registry, make_anri, register, make_capability):
    prov, prov_kp, commitment, decision = self._decision(registry, make_anri, register, make_capability)
    inflated = prov.with_metadata(reputation=1.0).signed(prov_kp)
    with pytest.raises(RegistrationError):
      registry.record_outcome(inflated, decision, commitment)
    assert registry.get(prov.id) == prov

  def test_record_outcome_changes_only_reputation(self, registry, make_anri, register, make_capability):
    prov, prov_kp, commitment, decision = self._decision(registry, make_anri, register, make_capability)
    sneaky = evolve(prov.with_metadata(reputation=ewma_reputation(0.9, 1.0)), location="sim://rogue/x")
    with pytest.raises(RegistrationError):
      registry.record_outcome(sneaky.signed(prov_kp), decision, commitment)

  def test_record_outcome_forged_decision(self, registry, make_anri, register, make_capability):
    prov, prov_kp, commitment, decision = self._decision(registry, make_anri, register, make_capability)
    forged = decision.signed(prov_kp)
    updated = prov.with_metadata(reputation=ewma_reputation(0.9, 1.0)).signed(prov_kp)
    with pytest.raises(SignatureInvalid):
      registry.record_outcome(updated, forged, commitment)


class TestSnapshot:
  def test_export_and_read(self, registry, translators, register, tmp_path, ca):
    for anri, cert, _ in translators.values():
      register(registry, anri, cert)
    path = tmp_path / "registry.snapshot"
    registry.export_snapshot(path)

    ca_root, time_ms, records = read_snapshot(path)
    assert ca_root == ca.root
    assert time_ms == 0
    assert sorted(r.id.name for r in records) == sorted(translators)
    assert all(verify_anri(r, ca_root) for r in records)

  def test_import(self, registry, translators, register, tmp_path, ca, clock):
    for anri, cert, _ in translators.values():
      register(registry, anri, cert)
    path = tmp_path / "registry.snapshot"
    registry.export_snapshot(path)

    fresh = Registry(ca.root, clock, pow_difficulty=registry.pow_difficulty)
    assert fresh.import_snapshot(path) == len(translators)
    assert fresh.records == registry.records

    stranger = Registry(generate_keypair("other-root").public, clock, pow_difficulty=registry.pow_difficulty)
    assert stranger.import_snapshot(path) == 0

  @pytest.mark.parametrize(
    "snapshot",
    ['{"records": [{"id": {"name": "x", "namespace": "agents"}}]}', '{"records": [{"signature": "zz"}]}', "[1, 2]"],
  )
  def test_import_malformed(self, registry, translators, register, tmp_path, snapshot):
    anri, cert, _ = translators["TranslatorC_Gov"]
    register(registry, anri, cert)
    path = tmp_path / "registry.snapshot"
    path.write_text(snapshot, encoding="utf-8")

    with pytest.raises(ParseError):
      registry.import_snapshot(path)
    assert list(registry.records) == [anri.id]


class TestAuthority:
  def test_issue(self, ca):
    kp = generate_keypair("agent/x")
    first = ca.issue(AgentId("x"), kp.public, ["legal-certified"])
    second = ca.issue(AgentId("x"), kp.public)
    assert second.serial == first.serial + 1
    assert verify_certificate(first, ca.root)
    assert not verify_certificate(evolve(first, certifications={"gov-clearance"}), ca.root)

  def test_revocation(self, ca):
    cert = ca.issue(AgentId("x"), generate_keypair("agent/x").public)
    ca.revoke_certificate(cert.serial)
    assert ca.is_revoked(cert)
    assert not verify_certificate(cert, ca.root, ca.revoked)
    assert verify_certificate(cert, ca.root)


class TestTokenBucket:
  def test_refill(self):
    bucket = TokenBucket(capacity=2, refill_per_s=1.0, now_ms=0)
    assert bucket.allow(0) and bucket.allow(0)
    assert not bucket.allow(500)
    assert bucket.allow(1500)
    assert not bucket.allow(1500)
    assert bucket.allow(10_000) and bucket.allow(10_000)
    assert not bucket.allow(10_000)

  def test_is_full(self):
    bucket = TokenBucket(capacity=2, refill_per_s=1.0, now_ms=0)
    assert bucket.is_full(0)
    assert bucket.allow(0)
    assert not bucket.is_full(999)
    assert bucket.is_full(1000)

  def test_pool_drops_refilled_buckets(self, clock):
    pool = BucketPool(clock, capacity=2, refill_per_s=1.0)
    for i in range(100):
      assert pool.allow(f"agent{i}")
    assert len(pool) == 100

    clock.advance(2000)
    assert pool.allow("late")
    assert len(pool) == 1 and "late" in pool and "agent0" not in pool

  def test_pool_keeps_draining_buckets(self, clock):
    pool = BucketPool(clock, capacity=2, refill_per_s=1.0)
    assert pool.allow("busy") and pool.allow("busy")
    clock.advance(1500)
    assert pool.prune() == 0
    assert pool.allow("busy")
    assert not pool.allow("busy")


class _Seeker(Node):
  def __init__(self, *args, **kwargs):
    super().__init__(*args, **kwargs)
    self.responses = []

  def dispatch(self, env):
    self.responses.append(env.payload())


class TestRegistryNode:
  """Discovery over the bus."""

  def test_answers_and_rate_limits(self, registry, translators, register, legal_query, clock):
    for anri, cert, _ in translators.values():
      register(registry, anri, cert)
    keys = {}
    transport = LoopbackTransport(clock)
    node_kp, seeker_kp = generate_keypair("ans"), generate_keypair("agent/Seeker")
    keys[AgentId("ans", "registry")] = node_kp.public
    keys[AgentId("Seeker")] = seeker_kp.public
    node = transport.attach(RegistryNode(AgentId("ans", "registry"), node_kp, registry, keys.get))
    seeker = transport.attach(_Seeker(AgentId("Seeker"), seeker_kp, keys.get))

    for i in range(6):
      seeker.send(node.id, bytes([i]) * 16, MsgType.CD_QUERY, {"query": legal_query, "limit": 2})
    transport.deliver_all()

    assert node.answered == 5 and node.rate_limited == 1
    assert [len(r["records"]) for r in seeker.responses] == [2, 2, 2, 2, 2, 0]
    assert seeker.responses[-1]["error"] == "RateLimited"
    assert seeker.responses[0]["records"][0]["id"]["name"] == "TranslatorA_Corp"

  def test_rejects_other_message_types(self, registry, clock):
    keys = {}
    transport = LoopbackTransport(clock)
    node_kp, seeker_kp = generate_keypair("ans"), generate_keypair("agent/Seeker")
    keys[AgentId("ans", "registry")] = node_kp.public
    keys[AgentId("Seeker")] = seeker_kp.public
    node = transport.attach(RegistryNode(AgentId("ans", "registry"), node_kp, registry, keys.get))
    seeker = transport.attach(_Seeker(AgentId("Seeker"), seeker_kp, keys.get))

    seeker.send(node.id, b"\x00" * 16, MsgType.SSR, {})
    transport.deliver_all()
    assert node.rejections["IllegalPhase"] == 1
    assert seeker.responses == []
