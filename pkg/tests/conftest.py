# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import pytest

from acnbp.lib.crypto import generate_keypair, proof_of_work
from acnbp.modules.core.schema import (
  AgentId,
  ANRI,
  AnriSecurity,
  CapabilityQuery,
  CapabilitySpec,
)
from acnbp.modules.registry.authority import CertificateAuthority
from acnbp.modules.registry.registry import Registry
from acnbp.modules.scenario.loader import load_scenario
from acnbp.modules.sim.runner import build_world
from acnbp.modules.sim.schema import DEFAULT_TTL_MS
from acnbp.utils import ManualClock

SCENARIOS_DIR = Path(__file__).resolve().parent.parent / "scenarios"
TEST_POW_BITS = 4

DOCUMENT_IN = [{"name": "document", "type": "text/en"}]
DOCUMENT_OUT = [{"name": "document", "type": "text/fr"}]

# name: (desc, deadline_hours, encryption, certifications, reputation, cost)
TRANSLATORS = {
  "TranslatorA_Corp": ("translation/en-fr/legal", 12, "advanced", ["legal-certified"], 0.85, 0.30),
  "TranslatorB_Fast": ("translation/en-fr/legal/express", 2, "basic", [], 0.6, 0.08),
  "TranslatorC_Gov": ("translation/en-fr/legal", 24, "advanced", ["gov-clearance", "legal-certified"], 0.9, 0.15),
  "TranslatorD_Basic": ("translation/en-fr/legal", 6, "none", [], 0.5, 0.02),
}
SIGNING_TRANSLATORS = ("TranslatorA_Corp", "TranslatorC_Gov")


def capability(
  desc: str = "translation/en-fr/legal",
  deadline_hours: Optional[float] = 24,
  encryption_level: str = "basic",
  certifications: Iterable[str] = (),
  signing_required: bool = False,
):
  return CapabilitySpec.from_plain({
    "desc": desc,
    "input": DOCUMENT_IN,
    "output": DOCUMENT_OUT,
    "constraints": {} if deadline_hours is None else {"deadline_hours": deadline_hours},
    "security": {
      "encryption_level": encryption_level,
      "certifications": list(certifications),
      "signing_required": signing_required,
    },
  })


@pytest.fixture
def make_capability():
  return capability


@pytest.fixture
def clock():
  return ManualClock()


@pytest.fixture
def ca():
  return CertificateAuthority(seed="ca/tests")


@pytest.fixture
def registry(ca, clock):
  return Registry(
    ca.root,
    clock,
    revoked=ca.revoked,
    pow_difficulty=TEST_POW_BITS,
    bucket_capacity=5,
    refill_per_s=1.0,
  )


@pytest.fixture
def make_anri(ca):
  """Factory for signed records: (anri, cert, keypair)."""

  def factory(
    name: str,
    capabilities: Optional[Iterable[CapabilitySpec]] = None,
    metadata: Optional[Dict[str, Any]] = None,
    certifications: Iterable[str] = (),
    namespace: str = "agents",
  ):
    agent_id = AgentId(name, namespace)
    keypair = generate_keypair(f"agent/{name}")
    cert = ca.issue(agent_id, keypair.public, certifications)
    anri = ANRI(
      id=agent_id,
      capabilities=capabilities if capabilities is not None else [capability()],
      location=f"sim://{namespace}/{name}",
      security=AnriSecurity(public_key=keypair.public, certificate=cert),
      metadata={"registered_at": 0, "ttl_ms": DEFAULT_TTL_MS} | (metadata or {}),
    ).signed(keypair)
    return anri, cert, keypair

  return factory


@pytest.fixture
def register():
  """Register a record, solving the registry's current challenge."""

  def solve_and_register(registry: Registry, anri: ANRI, cert):
    nonce = proof_of_work(registry.challenge(anri.id), registry.pow_difficulty)
    return registry.register(anri, cert, nonce)

  return solve_and_register


@pytest.fixture
def translators(make_anri):
  """The four candidate translators, keyed by name."""
  found = {}
  for name, (desc, hours, level, certs, reputation, cost) in TRANSLATORS.items():
    found[name] = make_anri(
      name,
      capabilities=[capability(desc, hours, level, certs, signing_required=name in SIGNING_TRANSLATORS)],
      metadata={"reputation": reputation, "cost_per_unit": cost},
      certifications=certs,
    )
  return found


@pytest.fixture
def legal_query():
  return CapabilityQuery.from_plain({
    "required": "translation/en-fr/legal",
    "constraints": {"deadline_hours": 24},
    "security_reqs": {"encryption_level": "basic"},
    "input": DOCUMENT_IN,
    "output": DOCUMENT_OUT,
  })


@pytest.fixture
def translation_scenario():
  return load_scenario(SCENARIOS_DIR / "translation.scenario")


@pytest.fixture
def translation_world(translation_scenario):
  """The translation scenario wired onto a simulated network, not yet run."""
  return build_world(translation_scenario.sim, translation_scenario)
