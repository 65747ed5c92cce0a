# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from typing import Any, List, Optional

__all__ = (
  "ProtocolError",
  "UnencodableValue",
  "ParseError",
  "MalformedKey",
  "RegistrationError",
  "CredentialFailure",
  "CapabilityValidationError",
  "SignatureInvalid",
  "PowRejected",
  "RateLimited",
  "DuplicateRegistration",
  "UnknownAgent",
  "ReplayRejected",
  "StaleTimestamp",
  "DuplicateNonce",
  "NonMonotoneSequence",
  "NegotiationError",
  "IllegalPhase",
  "IncompatibleVersions",
  "DowngradeDetected",
  "KeyConfirmationFailed",
  "ConsistencyNotVerified",
  "TermsMismatch",
  "SlotMismatch",
  "ExecutionFailure",
  "DeadlineExceeded",
  "AuditFileCorrupt",
  "ScenarioInvalid",
  "SchemaViolation",
  "InvariantBreach",
)


class ProtocolError(Exception):
  def __init__(self, message: str = "") -> None:
    super().__init__(message or type(self).__name__)
    self.message = message

  @property
  def code(self):
    return type(self).__name__


# =============================================================================
# Codec and key material


class UnencodableValue(ProtocolError):
  def __init__(self, value: Any) -> None:
    super().__init__(f"Cannot encode value {value!r}")
    self.value = value


class ParseError(ProtocolError):
  def __init__(self, message: str, line: Optional[int] = None) -> None:
    super().__init__(f"line {line}: {message}" if line else message)
    self.line = line


class MalformedKey(ProtocolError):
  def __init__(self, expected: int, actual: int) -> None:
    super().__init__(f"Expected a {expected}-byte key, got {actual} bytes")
    self.expected = expected
    self.actual = actual


# =============================================================================
# Registry


class RegistrationError(ProtocolError):
  def __init__(self, agent: Any, reason: str = "") -> None:
    super().__init__(f"{agent}: {reason}" if reason else str(agent))
    self.agent = agent
    self.reason = reason


class CredentialFailure(RegistrationError):
  pass


class CapabilityValidationError(RegistrationError):
  pass


class SignatureInvalid(RegistrationError):
  pass


class PowRejected(RegistrationError):
  pass


class RateLimited(RegistrationError):
  pass


class DuplicateRegistration(RegistrationError):
  pass


class UnknownAgent(RegistrationError):
  pass


# =============================================================================
# Replay window


class ReplayRejected(ProtocolError):
  def __init__(self, sender: Any, reason: str) -> None:
    super().__init__(f"{sender}: {reason}")
    self.sender = sender
    self.reason = reason


class StaleTimestamp(ReplayRejected):
  pass


class DuplicateNonce(ReplayRejected):
  pass


class NonMonotoneSequence(ReplayRejected):
  pass


# =============================================================================
# Negotiation


class NegotiationError(ProtocolError):
  pass


class IllegalPhase(NegotiationError):
  def __init__(self, actor: Any, phase_from: Any, phase_to: Any, detail: str = "") -> None:
    super().__init__(
      f"{actor}: {getattr(phase_from, 'name', phase_from)} -> "
      f"{getattr(phase_to, 'name', phase_to)} is not a legal transition"
      + (f" ({detail})" if detail else "")
    )
    self.actor = actor
    self.phase_from = phase_from
    self.phase_to = phase_to


class IncompatibleVersions(NegotiationError):
  pass


class DowngradeDetected(NegotiationError):
  pass


class KeyConfirmationFailed(NegotiationError):
  pass


class ConsistencyNotVerified(NegotiationError):
  def __init__(self, agent: Any, failures: Optional[List[Any]] = None) -> None:
    failures = failures or []
    super().__init__(f"{agent}: " + (", ".join(str(f) for f in failures) or "not checked"))
    self.agent = agent
    self.failures = failures


class TermsMismatch(NegotiationError):
  pass


class SlotMismatch(NegotiationError):
  pass


class ExecutionFailure(NegotiationError):
  pass


class DeadlineExceeded(NegotiationError):
  pass


# =============================================================================
# Audit, scenarios, internals


class AuditFileCorrupt(ProtocolError):
  def __init__(self, index: int, reason: str) -> None:
    super().__init__(f"record {index}: {reason}")
    self.index = index
    self.reason = reason


class ScenarioInvalid(ProtocolError):
  pass


class SchemaViolation(ProtocolError):
  def __init__(self, violations: List[str]) -> None:
    super().__init__("; ".join(violations))
    self.violations = violations


class InvariantBreach(ProtocolError):
  pass
