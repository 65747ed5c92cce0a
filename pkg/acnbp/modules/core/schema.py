# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import frozen, field, evolve
from enum import IntEnum
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

import math

from acnbp import settings
from acnbp.lib.canonical import canonical_encode, digest
from acnbp.lib.crypto import KeyPair, sign, verify
from acnbp.lib.errors import MalformedKey
from acnbp.utils import is_namespace, is_ontology_tag, is_version, from_hex

__all__ = (
  "AgentId",
  "OntologyPath",
  "ParamSlot",
  "EncryptionLevel",
  "SecurityProfile",
  "BASELINE_SECURITY",
  "CapabilitySpec",
  "CapabilityQuery",
  "Version",
  "ProtocolExtension",
  "NegotiatedExtension",
  "Certificate",
  "AnriSecurity",
  "ANRI",
  "MatchResult",
  "Terms",
  "BindingCommitment",
)

Scalar = Union[int, float]
MAX_NAME_BYTES = 255
MAX_ONTOLOGY_DEPTH = 8


# =================================================================================================
# Identity


def _check_name(instance, attribute, value):
  if not isinstance(value, str) or len(value) == 0:
    raise ValueError("Agent name must be a nonempty string")
  if len(value.encode("utf-8")) > MAX_NAME_BYTES:
    raise ValueError(f"Agent name exceeds {MAX_NAME_BYTES} bytes")


def _check_namespace(instance, attribute, value):
  if not is_namespace(value):
    raise ValueError(f"Invalid namespace '{value}'")


@frozen(order=True)
class AgentId:
  name: str = field(validator=_check_name)
  namespace: str = field(default="agents", validator=_check_namespace)

  def __str__(self):
    return self.name

  @property
  def qualified(self):
    return f"{self.namespace}/{self.name}"

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(name=d["name"], namespace=d["namespace"])


# =================================================================================================
# Capabilities


def _to_segments(value: Any):
  if isinstance(value, str):
    value = value.split("/")
  return tuple(value)


@frozen(order=True)
class OntologyPath:
  segments: Tuple[str, ...] = field(converter=_to_segments)

  @segments.validator
  def _check_segments(self, attribute, value):
    if not 1 <= len(value) <= MAX_ONTOLOGY_DEPTH:
      raise ValueError(f"Ontology path must have 1 to {MAX_ONTOLOGY_DEPTH} segments")
    for segment in value:
      if not is_ontology_tag(segment):
        raise ValueError(f"Invalid ontology tag '{segment}'")

  def __len__(self):
    return len(self.segments)

  def __str__(self):
    return "/".join(self.segments)

  def shared_prefix(self, other: "OntologyPath"):
    n = 0
    for a, b in zip(self.segments, other.segments):
      if a != b:
        break
      n += 1
    return n

  def is_prefix_of(self, other: "OntologyPath"):
    return len(self) <= len(other) and self.shared_prefix(other) == len(self)

  def to_plain(self):
    return list(self.segments)

  @classmethod
  def from_plain(cls, value: Any):
    return cls(value)


@frozen
class ParamSlot:
  name: str
  type: str

  def to_plain(self):
    return {"name": self.name, "type": self.type}

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(name=d["name"], type=d["type"])


class EncryptionLevel(IntEnum):
  NONE = 0
  BASIC = 1
  ADVANCED = 2

  @classmethod
  def parse(cls, value: Union[int, str, "EncryptionLevel"]):
    if isinstance(value, str):
      try:
        return cls[value.strip().upper()]
      except KeyError:
        raise ValueError(f"Unknown encryption level '{value}'") from None
    return cls(value)


@frozen
class SecurityProfile:
  encryption_level: EncryptionLevel = field(default=EncryptionLevel.NONE, converter=EncryptionLevel.parse)
  certifications: FrozenSet[str] = field(factory=frozenset, converter=frozenset)
  signing_required: bool = field(default=False, converter=bool)

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      encryption_level=d.get("encryption_level", 0),
      certifications=d.get("certifications") or (),
      signing_required=d.get("signing_required", False),
    )


BASELINE_SECURITY = SecurityProfile()


def _to_slots(value: Any):
  return tuple(v if isinstance(v, ParamSlot) else ParamSlot.from_plain(v) for v in value or ())


def _to_constraints(value: Any):
  return dict(value or {})


@frozen
class CapabilitySpec:
  """
  An advertised service: what it is (desc), what it takes and returns, the
  operating constraints it guarantees, and the security it offers.

  Construction is permissive so that submitted records can be inspected;
  `validate()` lists invariant violations.
  """
  desc: OntologyPath = field(converter=lambda v: v if isinstance(v, OntologyPath) else OntologyPath(v))
  input: Tuple[ParamSlot, ...] = field(factory=tuple, converter=_to_slots)
  output: Tuple[ParamSlot, ...] = field(factory=tuple, converter=_to_slots)
  constraints: Dict[str, Scalar] = field(factory=dict, converter=_to_constraints)
  security: SecurityProfile = field(factory=SecurityProfile)

  def validate(self) -> List[str]:
    violations = []
    for direction, slots in (("input", self.input), ("output", self.output)):
      names = [s.name for s in slots]
      if len(names) != len(set(names)):
        violations.append(f"{self.desc}: duplicate {direction} slot names")
    for key, value in self.constraints.items():
      if isinstance(value, bool) or not isinstance(value, (int, float)):
        violations.append(f"{self.desc}: constraint '{key}' is not numeric")
      elif not math.isfinite(value) or value < 0:
        violations.append(f"{self.desc}: constraint '{key}' must be nonnegative")
    return violations

  @property
  def input_names(self):
    return [s.name for s in self.input]

  @property
  def output_names(self):
    return [s.name for s in self.output]

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      desc=OntologyPath.from_plain(d["desc"]),
      input=d.get("input") or (),
      output=d.get("output") or (),
      constraints=d.get("constraints") or {},
      security=SecurityProfile.from_plain(d.get("security") or {}),
    )


@frozen
class CapabilityQuery:
  required: OntologyPath = field(converter=lambda v: v if isinstance(v, OntologyPath) else OntologyPath(v))
  constraints: Dict[str, Scalar] = field(factory=dict, converter=_to_constraints)
  security_reqs: SecurityProfile = field(factory=SecurityProfile)
  input: Tuple[ParamSlot, ...] = field(factory=tuple, converter=_to_slots)
  output: Tuple[ParamSlot, ...] = field(factory=tuple, converter=_to_slots)

  def relaxed(self):
    """The same query without security requirements."""
    return evolve(self, security_reqs=BASELINE_SECURITY)

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      required=OntologyPath.from_plain(d["required"]),
      constraints=d.get("constraints") or {},
      security_reqs=SecurityProfile.from_plain(d.get("security_reqs") or {}),
      input=d.get("input") or (),
      output=d.get("output") or (),
    )


@frozen
class MatchResult:
  matched: bool
  similarity: float


# =================================================================================================
# Protocol versions


@frozen(order=True)
class Version:
  major: int
  minor: int
  patch: int

  @classmethod
  def parse(cls, value: Union[str, "Version"]):
    if isinstance(value, Version):
      return value
    if not is_version(value):
      raise ValueError(f"Invalid version '{value}'")
    major, minor, patch = (int(p) for p in value.split("."))
    return cls(major, minor, patch)

  def __str__(self):
    return f"{self.major}.{self.minor}.{self.patch}"

  def to_plain(self):
    return str(self)


@frozen
class ProtocolExtension:
  version: Version = field(converter=Version.parse)
  extensions: FrozenSet[str] = field(factory=frozenset, converter=frozenset)
  compatibility: Version = field(default=None, converter=lambda v: Version.parse(v) if v is not None else None)

  def __attrs_post_init__(self):
    if self.compatibility is None:
      object.__setattr__(self, "compatibility", self.version)
    if self.compatibility > self.version:
      raise ValueError(f"Compatibility {self.compatibility} is above version {self.version}")

  def supported_versions(self, releases: Optional[List[Union[str, Version]]] = None):
    """Known releases within [compatibility, version], always including version."""
    releases = releases if releases is not None else settings.protocol.releases
    found = {Version.parse(r) for r in releases}
    found.add(self.version)
    return sorted(v for v in found if self.compatibility <= v <= self.version)

  @classmethod
  def from_supported(cls, versions: List[Union[str, Version]], extensions: Any = ()):
    parsed = sorted(Version.parse(v) for v in versions)
    if len(parsed) == 0:
      raise ValueError("Supported-version list is empty")
    return cls(version=parsed[-1], extensions=extensions, compatibility=parsed[0])

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      version=d["version"],
      extensions=d.get("extensions") or (),
      compatibility=d.get("compatibility"),
    )

  @classmethod
  def default(cls):
    return cls(
      version=settings.protocol.version,
      extensions=settings.protocol.extensions,
      compatibility=settings.protocol.compatibility,
    )


@frozen
class NegotiatedExtension:
  version: Version = field(converter=Version.parse)
  extensions: FrozenSet[str] = field(factory=frozenset, converter=frozenset)

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(version=d["version"], extensions=d.get("extensions") or ())


# =================================================================================================
# Credentials and registry records


@frozen
class Certificate:
  subject: AgentId
  subject_key: bytes
  issuer: str
  certifications: FrozenSet[str] = field(factory=frozenset, converter=frozenset)
  serial: int = field(default=0)
  signature: bytes = field(default=b"", repr=False)

  def preimage(self):
    return canonical_encode(self, omit=("signature",))

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      subject=AgentId.from_plain(d["subject"]),
      subject_key=from_hex(d["subject_key"], "subject_key"),
      issuer=d["issuer"],
      certifications=d.get("certifications") or (),
      serial=d["serial"],
      signature=from_hex(d["signature"], "signature"),
    )


@frozen
class AnriSecurity:
  public_key: bytes = field(repr=lambda b: b.hex()[:12])
  certificate: Certificate

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      public_key=from_hex(d["public_key"], "public_key"),
      certificate=Certificate.from_plain(d["certificate"]),
    )


@frozen
class ANRI:
  """
  Agent Name Resolution Item: the signed registry record of an agent.

  The signature covers the canonical encoding of every other field and
  verifies under the embedded public key.
  """
  id: AgentId
  capabilities: Tuple[CapabilitySpec, ...] = field(converter=tuple)
  location: str
  security: AnriSecurity
  metadata: Dict[str, Any] = field(factory=dict, converter=dict)
  signature: bytes = field(default=b"", repr=False)

  # Metadata accessors ---------------------------------------------------------------------------

  @property
  def reputation(self) -> float:
    value = self.metadata.get("reputation")
    return settings.negotiation.default_reputation if value is None else float(value)

  @property
  def risk(self) -> Optional[float]:
    value = self.metadata.get("risk")
    return None if value is None else float(value)

  @property
  def cost_per_unit(self) -> float:
    return float(self.metadata.get("cost_per_unit", 0.0))

  @property
  def registered_at(self) -> int:
    return int(self.metadata.get("registered_at", 0))

  @property
  def ttl_ms(self) -> int:
    return int(self.metadata.get("ttl_ms", 0))

  @property
  def expires_at(self):
    return self.registered_at + self.ttl_ms

  def is_live(self, now_ms: int):
    return now_ms <= self.expires_at

  # Signing --------------------------------------------------------------------------------------

  def preimage(self):
    return canonical_encode(self, omit=("signature",))

  def signed(self, keypair: KeyPair):
    return evolve(self, signature=sign(keypair.secret, self.preimage(), keypair.scheme_id))

  def verify_signature(self):
    try:
      return verify(self.security.public_key, self.preimage(), self.signature)
    except MalformedKey:
      return False

  def record_hash(self):
    return digest(self)

  def with_metadata(self, **updates: Any):
    """Copy with updated metadata. The copy is unsigned."""
    return evolve(self, metadata=self.metadata | updates, signature=b"")

  # Validation -----------------------------------------------------------------------------------

  def validate(self) -> List[str]:
    violations = []
    if len(self.capabilities) == 0:
      violations.append(f"{self.id}: capabilities list is empty")
    for cap in self.capabilities:
      violations.extend(cap.validate())

    ttl = self.metadata.get("ttl_ms")
    if isinstance(ttl, bool) or not isinstance(ttl, int) or ttl <= 0:
      violations.append(f"{self.id}: ttl_ms must be a positive integer")
    reputation = self.metadata.get("reputation")
    if reputation is not None and not (isinstance(reputation, (int, float)) and 0.0 <= reputation <= 1.0):
      violations.append(f"{self.id}: reputation must be within [0, 1]")
    cost = self.metadata.get("cost_per_unit", 0.0)
    if isinstance(cost, bool) or not isinstance(cost, (int, float)) or not math.isfinite(cost) or cost < 0:
      violations.append(f"{self.id}: cost_per_unit must be nonnegative")
    return violations

  def renewed(self, registered_at: int, ttl_ms: int):
    return self.with_metadata(registered_at=registered_at, ttl_ms=ttl_ms)

  def revocation_preimage(self):
    return canonical_encode({"revoke": self.id, "record_hash": self.record_hash()})

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      id=AgentId.from_plain(d["id"]),
      capabilities=[CapabilitySpec.from_plain(c) for c in d["capabilities"]],
      location=d["location"],
      security=AnriSecurity.from_plain(d["security"]),
      metadata=d.get("metadata") or {},
      signature=from_hex(d["signature"], "signature"),
    )


# =================================================================================================
# Commitments


@frozen
class Terms:
  price: float = field(converter=float)
  deadline_ms: int = field(converter=int)
  quality_min: float = field(converter=float)
  penalty: float = field(default=0.0, converter=float)

  @quality_min.validator
  def _check_quality(self, attribute, value):
    if not 0.0 <= value <= 1.0:
      raise ValueError("quality_min must be within [0, 1]")

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      price=d["price"],
      deadline_ms=d["deadline_ms"],
      quality_min=d["quality_min"],
      penalty=d.get("penalty", 0.0),
    )


@frozen
class BindingCommitment:
  """
  Agreement between a requester and a provider over one capability instance
  and its terms. Both parties sign the same preimage.
  """
  requester: AgentId
  provider: AgentId
  capability: CapabilitySpec
  terms: Terms
  requester_signature: bytes = field(default=b"", repr=False)
  provider_signature: bytes = field(default=b"", repr=False)

  def preimage(self):
    return canonical_encode(self, omit=("requester_signature", "provider_signature"))

  def commitment_id(self):
    return digest(self, omit=("requester_signature", "provider_signature"))

  def sign_as_provider(self, keypair: KeyPair):
    return evolve(self, provider_signature=sign(keypair.secret, self.preimage(), keypair.scheme_id))

  def sign_as_requester(self, keypair: KeyPair):
    return evolve(self, requester_signature=sign(keypair.secret, self.preimage(), keypair.scheme_id))

  def verify_provider(self, provider_key: bytes):
    return _verify_quiet(provider_key, self.preimage(), self.provider_signature)

  def verify_requester(self, requester_key: bytes):
    return _verify_quiet(requester_key, self.preimage(), self.requester_signature)

  def verify(self, requester_key: bytes, provider_key: bytes):
    return self.verify_requester(requester_key) and self.verify_provider(provider_key)

  @property
  def fully_signed(self):
    return len(self.requester_signature) > 0 and len(self.provider_signature) > 0

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      requester=AgentId.from_plain(d["requester"]),
      provider=AgentId.from_plain(d["provider"]),
      capability=CapabilitySpec.from_plain(d["capability"]),
      terms=Terms.from_plain(d["terms"]),
      requester_signature=from_hex(d.get("requester_signature", ""), "requester_signature"),
      provider_signature=from_hex(d.get("provider_signature", ""), "provider_signature"),
    )


def _verify_quiet(public_key: bytes, payload: bytes, signature: bytes):
  try:
    return verify(public_key, payload, signature)
  except MalformedKey:
    return False
