# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from typing import Dict, List, Optional, Union

from acnbp import settings
from acnbp.lib.errors import IncompatibleVersions
from acnbp.modules.core.schema import (
  CapabilityQuery,
  CapabilitySpec,
  MatchResult,
  NegotiatedExtension,
  OntologyPath,
  ProtocolExtension,
  SecurityProfile,
)

__all__ = (
  "similarity",
  "constraint_satisfied",
  "unsatisfied_constraints",
  "security_dominates",
  "match_capability",
  "negotiate_extension",
  "ewma_reputation",
)

Scalar = Union[int, float]


def similarity(a: OntologyPath, b: OntologyPath):
  shared = a.shared_prefix(b)
  if shared == 0:
    return 0.0
  return shared / max(len(a), len(b))


def constraint_satisfied(key: str, bound: Scalar, offered: Optional[Scalar]):
  """
  Check one query bound against the offered value of the same constraint.

  `max_*` and `deadline_*` bounds are upper bounds, `min_*` bounds are lower
  bounds, and any other key requires equality. A missing offered value never
  satisfies.
  """
  if offered is None:
    return False
  if key.startswith("max_") or key.startswith("deadline_"):
    return offered <= bound
  if key.startswith("min_"):
    return offered >= bound
  return offered == bound


def unsatisfied_constraints(bounds: Dict[str, Scalar], offered: Dict[str, Scalar]) -> List[str]:
  return sorted(k for k, bound in bounds.items() if not constraint_satisfied(k, bound, offered.get(k)))


def security_dominates(offered: SecurityProfile, required: SecurityProfile):
  return (
    offered.encryption_level >= required.encryption_level
    and required.certifications <= offered.certifications
    and (offered.signing_required or not required.signing_required)
  )


def match_capability(query: CapabilityQuery, cap: CapabilitySpec):
  matched = (
    query.required.is_prefix_of(cap.desc)
    and len(unsatisfied_constraints(query.constraints, cap.constraints)) == 0
    and security_dominates(cap.security, query.security_reqs)
  )
  return MatchResult(matched=matched, similarity=similarity(query.required, cap.desc))


def negotiate_extension(mine: ProtocolExtension, theirs: ProtocolExtension):
  """
  Pick the highest version both peers support.

  Args:
      mine: Local protocol extension
      theirs: Peer's protocol extension

  Returns:
      NegotiatedExtension with the common extensions

  Raises:
      IncompatibleVersions: The supported ranges do not overlap
  """
  version = min(mine.version, theirs.version)
  if version < max(mine.compatibility, theirs.compatibility):
    raise IncompatibleVersions(
      f"[{mine.compatibility}, {mine.version}] and "
      f"[{theirs.compatibility}, {theirs.version}] do not overlap"
    )
  return NegotiatedExtension(version=version, extensions=mine.extensions & theirs.extensions)


def ewma_reputation(old: float, outcome: float, alpha: Optional[float] = None):
  """New reputation after an outcome of 1 (commit) or 0 (abort)."""
  alpha = settings.negotiation.reputation_alpha if alpha is None else alpha
  return alpha * outcome + (1.0 - alpha) * old
