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
Adversarial agents.

Each adversary is installed into a built world before the run starts. Link
adversaries sit on the bus as interceptors; agent adversaries act through
scheduled actions. Every adversary keeps counters that end up in the report.
"""

from attrs import evolve
from collections import Counter
from typing import TYPE_CHECKING, Any, Dict, Optional

import random

from acnbp import logger
from acnbp.lib.canonical import canonical_encode, digest
from acnbp.lib.crypto import generate_keypair, proof_of_work
from acnbp.lib.envelope import SESSION_ID_BYTES, MsgType, SignedEnvelope
from acnbp.lib.errors import RegistrationError, ScenarioInvalid
from acnbp.lib.node import Node
from acnbp.modules.core.schema import AgentId, ANRI, AnriSecurity, ProtocolExtension
from acnbp.modules.negotiation.provider import ProviderAgent
from acnbp.modules.negotiation.requester import RequesterAgent
from acnbp.modules.sim.network import envelope_detail
from acnbp.modules.sim.schema import AdversaryKind, AdversarySpec

if TYPE_CHECKING:
  from acnbp.modules.sim.runner import World

__all__ = (
  "DOWNGRADE_MODES",
  "state_digest",
  "Adversary",
  "Replayer",
  "Downgrader",
  "Impostor",
  "Flooder",
  "FlooderNode",
  "create_adversary",
)

DOWNGRADE_MODES = ("strip", "inject_extension", "noop")


def state_digest(node: Node):
  """Digest of the negotiation state a node would change on accepting an envelope."""
  if isinstance(node, RequesterAgent):
    s = node.state
    return digest({
      "phase": s.phase,
      "selected": s.selected,
      "draft": s.draft,
      "binding": s.binding,
      "transcript_head": s.transcript_head,
      "outcome": s.outcome,
      "reason": s.reason,
      "quality": s.quality,
      "sessions": {peer.qualified: hs for peer, hs in s.sessions.items()},
    })
  if isinstance(node, ProviderAgent):
    return digest({
      "open": {session_id.hex(): state for session_id, state in node.states.items()},
      "finished": list(node.finished),
    })
  return digest({"accepted": node.accepted})


class Adversary:
  kind: AdversaryKind

  def __init__(self, spec: AdversarySpec, world: "World"):
    self.spec     = spec
    self.world    = world
    self.network  = world.network
    self.params   = spec.params
    self.rng      = random.Random(f"{world.config.seed}/{spec.kind.value}/{'/'.join(spec.target)}")
    self.accepted = 0
    self.rejected = 0
    self.state_changes = 0
    self.codes: Counter = Counter()


  def install(self):
    raise NotImplementedError


  def stats(self) -> Dict[str, Any]:
    return {
      "kind": self.spec.kind.value,
      "target": list(self.spec.target),
      "accepted": self.accepted,
      "rejected": self.rejected,
      "state_changes": self.state_changes,
      "codes": dict(sorted(self.codes.items())),
    }


  def inject(self, env: SignedEnvelope):
    """Deliver an envelope to its recipient and count how the recipient took it."""
    victim = self.network.nodes.get(env.recipient)
    if victim is None:
      return None

    state_before = state_digest(victim)
    rejections_before = Counter(victim.rejections)
    accepted = self.network.deliver_now(env, self.spec.kind.value)
    if accepted:
      self.accepted += 1
      logger.warning(f"Adversary | {self.spec.kind.value} {env.msg_type.value} accepted by {victim.id}")
    else:
      self.rejected += 1
      self.codes.update(Counter(victim.rejections) - rejections_before)
    if state_digest(victim) != state_before:
      self.state_changes += 1
    return accepted


# =================================================================================================
# Link adversaries


class Replayer(Adversary):
  """Captures envelopes on a link and re-injects them verbatim later."""

  kind = AdversaryKind.REPLAYER

  def install(self):
    self.link      = tuple(self.world.agent_id(name) for name in self.spec.target)
    self.delay_ms  = int(self.params.get("delay_ms", 1000))
    self.msg_types = set(self.params.get("msg_types") or ())
    self.limit     = self.params.get("limit")
    self.captured  = 0
    self.network.intercept(self.link, self)


  def intercept(self, env: SignedEnvelope):
    if self.msg_types and env.msg_type.value not in self.msg_types:
      return env
    if self.limit is not None and self.captured >= int(self.limit):
      return env

    self.captured += 1
    self.network.call_at(self.delay_ms, lambda: self.inject(env), f"replay {env.msg_type.value}")
    return env


  def stats(self):
    return super().stats() | {"captured": self.captured, "replays_accepted": self.accepted}


class Downgrader(Adversary):
  """
  Rewrites the supported-version list (or extension list) of offers on a
  link. With `resign` it holds the sender's signing key, as a compromised
  hop would; without it the rewrite breaks the envelope signature.
  """

  kind = AdversaryKind.DOWNGRADER

  def install(self):
    self.link      = tuple(self.world.agent_id(name) for name in self.spec.target)
    self.mode      = self.params.get("mode", "strip")
    self.version   = str(self.params.get("version", self.world.highest_version()))
    self.extension = str(self.params.get("extension", "x-evil"))
    self.resign    = bool(self.params.get("resign", True))
    self.rewritten = 0
    if self.mode not in DOWNGRADE_MODES:
      raise ScenarioInvalid(f"Unknown downgrade mode '{self.mode}', expected one of {', '.join(DOWNGRADE_MODES)}")
    self.network.intercept(self.link, self)


  def intercept(self, env: SignedEnvelope):
    if env.msg_type != MsgType.SSO or self.mode == "noop":
      return env

    body = env.payload()
    if self.mode == "strip":
      body["supported"] = [v for v in body["supported"] if v != self.version]
    else:
      body["extensions"] = sorted(set(body.get("extensions") or ()) | {self.extension})

    forged = evolve(env, body=canonical_encode(body))
    if self.resign:
      forged = forged.signed(self.world.keypairs[env.sender])
    self.rewritten += 1
    self.network.record("tamper", mode=self.mode, resigned=self.resign, **envelope_detail(forged))
    return forged


  def stats(self):
    provider, requester = self.link
    requester_node = self.network.nodes.get(requester)
    provider_node = self.network.nodes.get(provider)

    failure = None
    bound = False
    if isinstance(requester_node, RequesterAgent):
      hs = requester_node.state.sessions.get(provider)
      failure = hs.failure if hs else None
      bound = requester_node.state.selected == provider and requester_node.state.binding is not None
    detected_by_provider = 0
    if isinstance(provider_node, ProviderAgent):
      detected_by_provider = sum(
        1 for s in provider_node.sessions() if s.requester == requester and s.reason == "DowngradeDetected"
      )

    return super().stats() | {
      "mode": self.mode,
      "rewritten": self.rewritten,
      "session_failure": failure,
      "downgrades_detected": int(failure == "DowngradeDetected"),
      "detected_by_provider": detected_by_provider,
      "bound": bound,
    }


# =================================================================================================
# Agent adversaries


class Impostor(Adversary):
  """
  Claims another agent's identity: registers a record for the victim's id
  under its own key, then sends session requests signed with that key.
  """

  kind = AdversaryKind.IMPOSTOR

  def install(self):
    self.victim   = self.world.agent_id(self.spec.target[0])
    self.identity = AgentId(str(self.params.get("name", "Impostor")), "rogue")
    self.keypair  = generate_keypair(f"impostor/{self.world.config.seed}/{self.victim.qualified}")
    self.registration: Optional[str] = None
    self.forged_sent = 0

    self.network.call_at(int(self.params.get("register_ms", 0)), self.register, "impostor register")
    at = int(self.params.get("forge_ms", self.world.start_ms + 1))
    self.network.call_at(at, self.forge, "impostor forge")


  def register(self):
    registry = self.world.registry
    genuine = registry.get(self.victim)
    capabilities = genuine.capabilities if genuine else self.world.fixture_capabilities(self.victim)
    cert = self.world.ca.issue(self.identity, self.keypair.public)
    anri = ANRI(
      id=self.victim,
      capabilities=capabilities,
      location=f"sim://rogue/{self.victim.name}",
      security=AnriSecurity(public_key=self.keypair.public, certificate=cert),
      metadata={"registered_at": self.network.now(), "ttl_ms": self.world.default_ttl_ms, "reputation": 1.0},
    ).signed(self.keypair)

    before = registry.get(self.victim)
    try:
      registry.register(anri, cert, proof_of_work(registry.challenge(self.victim), registry.pow_difficulty))
      self.registration = "ok"
      self.accepted += 1
    except RegistrationError as e:
      self.registration = e.code
      self.rejected += 1
      self.codes[e.code] += 1
    if registry.get(self.victim) != before:
      self.state_changes += 1
    self.network.record("impostor_register", victim=self.victim.name, result=self.registration)


  def forge(self):
    victims = self.params.get("victims")
    targets = [self.world.agent_id(n) for n in victims] if victims else self.world.provider_ids()
    for target in targets:
      if target == self.victim:
        continue
      env = SignedEnvelope.create(
        keypair=self.keypair,
        sender=self.victim,
        recipient=target,
        session_id=self.rng.randbytes(SESSION_ID_BYTES),
        msg_type=MsgType.SSR,
        body={
          "requester": self.victim,
          "version": ProtocolExtension.default().version,
          "supported": [str(v) for v in ProtocolExtension.default().supported_versions()],
          "extension": ProtocolExtension.default(),
          "ephemeral": self.rng.randbytes(32),
          "nonce": self.rng.randbytes(16),
        },
        nonce=self.rng.randbytes(16),
        timestamp_ms=self.network.now(),
        seq=1,
      )
      self.forged_sent += 1
      self.inject(env)


  def stats(self):
    return super().stats() | {"registration": self.registration, "forged_sent": self.forged_sent}


class FlooderNode(Node):
  """Bus presence of a flooding agent. Only counts discovery responses."""

  def __init__(self, *args, **kwargs):
    super().__init__(*args, **kwargs)
    self.answered = 0
    self.refused  = 0


  @property
  def role(self):
    return "Flooder"


  def dispatch(self, env: SignedEnvelope):
    if env.msg_type != MsgType.CD_RESPONSE:
      return
    if env.payload().get("error"):
      self.refused += 1
    else:
      self.answered += 1


class Flooder(Adversary):
  """
  A registered agent bursting registrations and discovery queries at the
  registry, paced `spacing_ms` apart from `start_ms`.
  """

  kind = AdversaryKind.FLOODER

  def install(self):
    self.identity      = self.world.agent_id(self.spec.target[0])
    self.registrations = int(self.params.get("registrations", 100))
    self.queries       = int(self.params.get("queries", 20))
    self.spacing_ms    = int(self.params.get("spacing_ms", 10))
    self.start_ms      = int(self.params.get("start_ms", 1000))
    self.query         = self.params.get("query") or {"required": ["translation"]}
    self.results: Counter = Counter()
    self.queries_sent  = 0
    self._pow: Dict[bytes, bytes] = {}

    self.node = self.network.attach(FlooderNode(
      self.identity,
      self.world.keypairs[self.identity],
      self.world.key_lookup,
      rng_seed=self.world.config.seed,
    ))
    for i in range(self.registrations):
      self.network.call_at(self.start_ms + i * self.spacing_ms, self.register_once, "flood register")
    for i in range(self.queries):
      self.network.call_at(self.start_ms + i * self.spacing_ms, self.query_once, "flood query")


  def register_once(self):
    registry = self.world.registry
    anri, cert = self.world.registration_material(self.identity)
    challenge = registry.challenge(self.identity)
    if challenge not in self._pow:
      self._pow[challenge] = proof_of_work(challenge, registry.pow_difficulty)

    try:
      registry.register(anri, cert, self._pow[challenge])
      self.results["ok"] += 1
    except RegistrationError as e:
      self.results[e.code] += 1
      self.codes[e.code] += 1


  def query_once(self):
    self.queries_sent += 1
    self.node.send(self.world.registry_id, self.node.random_bytes(SESSION_ID_BYTES), MsgType.CD_QUERY, {
      "query": self.query,
      "limit": 10,
    })


  def stats(self):
    rate_limited = self.results["RateLimited"] + self.node.refused
    if rate_limited:
      logger.info(f"Adversary | FLOODER {self.identity} was rate limited {rate_limited} times")
    return super().stats() | {
      "registrations": dict(sorted(self.results.items())),
      "queries_sent": self.queries_sent,
      "queries_answered": self.node.answered,
      "queries_refused": self.node.refused,
      "rate_limited": rate_limited,
    }


_ADVERSARIES = {
  AdversaryKind.REPLAYER: Replayer,
  AdversaryKind.DOWNGRADER: Downgrader,
  AdversaryKind.IMPOSTOR: Impostor,
  AdversaryKind.FLOODER: Flooder,
}


def create_adversary(spec: AdversarySpec, world: "World") -> Adversary:
  adversary = _ADVERSARIES[spec.kind](spec, world)
  adversary.install()
  logger.info(f"Adversary | Installed {spec.kind.value} on {' -> '.join(spec.target)}")
  return adversary
