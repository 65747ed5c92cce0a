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
Simulation worlds.

A world is one scenario wired onto one simulated network: the test CA, the
registry and its bus node, every fixture registered at time zero, the
provider and requester agents, and the adversaries. Running the world
yields a SimReport.
"""

from collections import Counter
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

from acnbp import logger
from acnbp.lib.audit import AuditLog
from acnbp.lib.canonical import digest
from acnbp.lib.crypto import generate_keypair, proof_of_work, verify_pow
from acnbp.lib.errors import InvariantBreach, RegistrationError, ScenarioInvalid
from acnbp.modules.core.schema import AgentId, ANRI, AnriSecurity, Certificate, ProtocolExtension
from acnbp.modules.negotiation.provider import ProviderAgent
from acnbp.modules.negotiation.requester import RequesterAgent
from acnbp.modules.negotiation.transitions import provider_table, requester_table
from acnbp.modules.registry.authority import CertificateAuthority
from acnbp.modules.registry.node import RegistryNode
from acnbp.modules.registry.registry import Registry
from acnbp.modules.sim.adversaries import Adversary, create_adversary
from acnbp.modules.sim.network import SimNetwork
from acnbp.modules.sim.schema import DEFAULT_TTL_MS, SimConfig, SimReport

if TYPE_CHECKING:
  from acnbp.modules.scenario.schema import AgentFixture, Scenario

__all__ = (
  "REGISTRY_ID",
  "World",
  "build_world",
  "run",
)

REGISTRY_ID = AgentId("registry", "ans")


class World:
  def __init__(self, config: SimConfig, scenario: "Scenario"):
    self.config   = config
    self.scenario = scenario
    self.network  = SimNetwork(config)
    self.audit    = AuditLog()
    self.ca       = CertificateAuthority(seed=f"ca/{scenario.name}")

    params = scenario.registry
    self.registry = Registry(
      self.ca.root,
      self.network.now,
      revoked=self.ca.revoked,
      pow_difficulty=params.pow_difficulty,
      bucket_capacity=params.bucket_capacity,
      refill_per_s=params.refill_per_s,
      registration_skew_ms=params.registration_skew_ms,
    )
    self.registry_id = REGISTRY_ID
    self.registry_keypair = generate_keypair(f"registry/{scenario.name}")

    self.fixtures: Dict[AgentId, "AgentFixture"] = {f.agent_id: f for f in scenario.agents}
    self.ids: Dict[str, AgentId] = {f.name: f.agent_id for f in scenario.agents}
    self.keypairs = {f.agent_id: generate_keypair(f.key_seed) for f in scenario.agents}
    self.material: Dict[AgentId, Tuple[ANRI, Certificate]] = {}

    self.registrations: Dict[str, str] = {}
    self.registry_unchanged = True
    self.reputation_before: Dict[str, float] = {}
    self.requester: Optional[RequesterAgent] = None
    self.providers: Dict[AgentId, ProviderAgent] = {}
    self.adversaries: List[Adversary] = []


  # ===============================================================================================
  # Lookups used by agents and adversaries


  def agent_id(self, name: str):
    try:
      return self.ids[name]
    except KeyError:
      raise ScenarioInvalid(f"Unknown agent '{name}'") from None


  def key_lookup(self, agent_id: AgentId):
    if agent_id == self.registry_id:
      return self.registry_keypair.public
    return self.registry.public_key(agent_id)


  def registration_material(self, agent_id: AgentId):
    return self.material[agent_id]


  def fixture_capabilities(self, agent_id: AgentId):
    fixture = self.fixtures.get(agent_id)
    return fixture.capabilities if fixture else ()


  def provider_ids(self):
    return sorted(self.providers)


  def highest_version(self):
    fixture = self.scenario.fixture(self.scenario.requester.agent)
    extension = (fixture.extension if fixture else None) or ProtocolExtension.default()
    return str(extension.version)


  @property
  def start_ms(self):
    return self.scenario.requester.start_ms


  @property
  def default_ttl_ms(self):
    return DEFAULT_TTL_MS


  # ===============================================================================================
  # Setup


  def setup(self):
    self.network.attach(RegistryNode(
      self.registry_id,
      self.registry_keypair,
      self.registry,
      self.key_lookup,
      rng_seed=self.config.seed,
    ))

    for fixture in self.scenario.agents:
      self.material[fixture.agent_id] = self._material(fixture)
    for fixture in self.scenario.agents:
      self.registrations[fixture.name] = self._register(fixture)

    for fixture in self.scenario.agents:
      record = self.registry.get(fixture.agent_id)
      if record is None:
        continue
      self.reputation_before[fixture.name] = record.reputation
      if fixture.role == "provider":
        self.providers[fixture.agent_id] = self.network.attach(ProviderAgent(
          fixture.agent_id,
          self.keypairs[fixture.agent_id],
          self.key_lookup,
          record,
          skill=fixture.skill,
          registry=self.registry,
          audit=self.audit,
          extension=fixture.extension,
          rng_seed=self.config.seed,
        ))

    self.requester = self._build_requester()
    for spec in self.config.adversaries:
      self.adversaries.append(create_adversary(spec, self))
    self.network.call_at(self.start_ms, self.requester.start, "start")
    return self


  def _material(self, fixture: "AgentFixture"):
    agent_id = fixture.agent_id
    keypair = self.keypairs[agent_id]

    ca = self.ca
    if fixture.defect == "bad_certificate":
      ca = CertificateAuthority(name="rogue-ca", seed=f"rogue/{fixture.name}")
    cert = ca.issue(agent_id, keypair.public, fixture.certifications)

    metadata = {"registered_at": 0, "ttl_ms": DEFAULT_TTL_MS} | fixture.metadata
    if fixture.defect == "invalid_capability":
      metadata["ttl_ms"] = 0

    anri = ANRI(
      id=agent_id,
      capabilities=fixture.capabilities,
      location=fixture.uri,
      security=AnriSecurity(public_key=keypair.public, certificate=cert),
      metadata=metadata,
    )
    signer = generate_keypair(f"forger/{fixture.name}") if fixture.defect == "bad_signature" else keypair
    return anri.signed(signer), cert


  def _register(self, fixture: "AgentFixture"):
    agent_id = fixture.agent_id
    anri, cert = self.material[agent_id]
    registry = self.registry

    if fixture.defect == "rate_limited":
      for _ in range(registry.rate_limits.capacity):
        registry.rate_limits.allow(agent_id)

    result = "ok"
    for _ in range(2 if fixture.defect == "duplicate" else 1):
      challenge = registry.challenge(agent_id)
      if fixture.defect == "bad_pow":
        nonce = _failing_nonce(challenge, registry.pow_difficulty)
      else:
        nonce = proof_of_work(challenge, registry.pow_difficulty)

      before = _records_digest(registry)
      try:
        registry.register(anri, cert, nonce)
        result = "ok"
      except RegistrationError as e:
        result = e.code
        if _records_digest(registry) != before:
          self.registry_unchanged = False

    self.network.record("register", agent=fixture.name, result=result)
    return result


  def _build_requester(self):
    spec = self.scenario.requester
    agent_id = self.agent_id(spec.agent)
    fixture = self.fixtures[agent_id]
    return self.network.attach(RequesterAgent(
      agent_id,
      self.keypairs[agent_id],
      self.key_lookup,
      self.registry_id,
      spec.query,
      self.ca.root,
      task=spec.task,
      weights=spec.weights,
      audit=self.audit,
      extension=fixture.extension,
      revoked=self.ca.revoked,
      rng_seed=self.config.seed,
      parallel_sessions=spec.parallel_sessions,
      response_timeout_ms=spec.response_timeout_ms,
    ))


  # ===============================================================================================
  # Running


  def run(self):
    if self.requester is None:
      self.setup()
    logger.info(f"Sim | Running '{self.scenario.name}' with seed {self.config.seed}")
    self.network.run()
    self.check_terminal()
    return self.report()


  def check_terminal(self):
    """
    Raises:
        InvariantBreach: An agent stopped outside a terminal phase, or a
          terminal commitment fails signature re-verification
    """
    state = self.requester.state
    state.check_invariants()
    if not requester_table.is_terminal(state.phase):
      raise InvariantBreach(f"{self.requester.id} stopped in {state.phase.value}")
    if state.binding is not None:
      self._verify_commitment(state.binding)

    for provider in self.providers.values():
      for session in provider.sessions():
        session.check_invariants()
        if not provider_table.is_terminal(session.phase):
          raise InvariantBreach(f"{provider.id} session {session.instance_id[:8]} stopped in {session.phase.value}")
        if session.commitment is not None:
          self._verify_commitment(session.commitment)


  def _verify_commitment(self, commitment):
    requester_key = self.keypairs[commitment.requester].public
    provider_key = self.keypairs[commitment.provider].public
    if not commitment.verify(requester_key, provider_key):
      raise InvariantBreach(f"Commitment {commitment.commitment_id().hex()[:12]} fails re-verification")


  def report(self):
    state = self.requester.state
    rejections = Counter()
    for node in self.network.nodes.values():
      rejections.update(node.rejections)

    phases = {self.requester.id.name: [state.phase.value]}
    for agent_id, provider in sorted(self.providers.items()):
      phases[agent_id.name] = [s.phase.value for s in provider.sessions()] or ["REGISTERED"]

    reputation_after = {}
    for name in self.reputation_before:
      record = self.registry.get(self.ids[name])
      if record is not None:
        reputation_after[name] = record.reputation

    events = self.network.events
    return SimReport(
      scenario=self.scenario.name,
      seed=self.config.seed,
      outcome=state.outcome.value if state.outcome else None,
      reason=state.reason,
      final_phase=state.phase.value,
      selected=state.selected.name if state.selected else None,
      ranking=[a.name for a in state.shortlist],
      eliminated={s.agent.name: s.elimination_reason for s in state.scores if s.eliminated},
      totals={s.agent.name: s.total for s in state.scores if not s.eliminated},
      sessions=[peer.name for peer in state.sessions],
      established=[peer.name for peer, hs in state.sessions.items() if hs.record is not None and hs.failure is None],
      session_failures={peer.name: hs.failure for peer, hs in state.sessions.items() if hs.failure},
      commitment=state.binding.commitment_id() if state.binding else None,
      quality=state.quality,
      reputation_before=dict(self.reputation_before),
      reputation_after=reputation_after,
      phases=phases,
      registrations=dict(self.registrations),
      registry_unchanged=self.registry_unchanged,
      counts=dict(sorted(self.network.counts.items())),
      rejections=dict(sorted(rejections.items())),
      adversaries=[a.stats() for a in self.adversaries],
      audit_head=self.audit.head,
      audit_length=len(self.audit),
      transcript_head=state.transcript_head,
      end_time_ms=events[-1].time_ms if events else 0,
      trace=list(events),
    )


def build_world(config: SimConfig, scenario: "Scenario"):
  return World(config, scenario).setup()


def run(config: SimConfig, scenario: "Scenario"):
  """
  Run one scenario under one simulation configuration.

  Raises:
      ScenarioInvalid: The scenario cannot be wired, e.g. an adversary
        names an unknown agent
      InvariantBreach: An agent ended outside a terminal phase
  """
  return build_world(config, scenario).run()


def _records_digest(registry: Registry):
  return digest([registry.records[k] for k in sorted(registry.records)])


def _failing_nonce(challenge: bytes, difficulty: int):
  if difficulty == 0:
    raise ScenarioInvalid("bad_pow needs a nonzero proof-of-work difficulty")
  counter = 0
  while verify_pow(challenge, counter.to_bytes(8, "big"), difficulty):
    counter += 1
  return counter.to_bytes(8, "big")
