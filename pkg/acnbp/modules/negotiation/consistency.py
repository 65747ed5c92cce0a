# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import frozen, evolve
from typing import List, Optional

from acnbp.modules.core.schema import (
  BASELINE_SECURITY,
  CapabilityQuery,
  CapabilitySpec,
  Terms,
)
from acnbp.modules.core.matching import match_capability, security_dominates, unsatisfied_constraints
from acnbp.modules.negotiation.schema import SessionRecord

__all__ = (
  "MS_PER_HOUR",
  "ConsistencyFailure",
  "query_deadline_ms",
  "consistency_check",
)

MS_PER_HOUR = 3_600_000


@frozen
class ConsistencyFailure:
  dimension: str
  detail: str

  def __str__(self):
    return f"{self.dimension}: {self.detail}"


def query_deadline_ms(query: CapabilityQuery, start_ms: int) -> Optional[int]:
  """Absolute deadline implied by the query's deadline constraint, if any."""
  if "deadline_ms" in query.constraints:
    return int(query.constraints["deadline_ms"])
  if "deadline_hours" in query.constraints:
    return start_ms + int(query.constraints["deadline_hours"] * MS_PER_HOUR)
  return None


def consistency_check(
  query: CapabilityQuery,
  offered: CapabilitySpec,
  session: Optional[SessionRecord],
  terms: Terms,
) -> List[ConsistencyFailure]:
  """
  Check an offered capability and draft terms against the query.

  Returns:
      Every failure found, across the syntactic, semantic, operational,
      security and temporal dimensions. Empty when the offer passes.
  """
  failures = []

  # Syntactic
  if session is None or session.negotiated is None:
    failures.append(ConsistencyFailure("syntactic", "no negotiated message format"))
  offered_in = {s.name: s.type for s in offered.input}
  offered_out = {s.name: s.type for s in offered.output}
  for direction, wanted, have in (("input", query.input, offered_in), ("output", query.output, offered_out)):
    for slot in wanted:
      if slot.name not in have:
        failures.append(ConsistencyFailure("syntactic", f"missing {direction} slot '{slot.name}'"))
      elif have[slot.name] != slot.type:
        failures.append(ConsistencyFailure(
          "syntactic", f"{direction} slot '{slot.name}' is {have[slot.name]}, expected {slot.type}"
        ))

  # Semantic
  functional = evolve(query, constraints={}, security_reqs=BASELINE_SECURITY)
  if not match_capability(functional, offered).matched:
    failures.append(ConsistencyFailure("semantic", f"{offered.desc} does not provide {query.required}"))

  # Operational
  for key in unsatisfied_constraints(query.constraints, offered.constraints):
    failures.append(ConsistencyFailure("operational", f"constraint '{key}' not met"))

  # Security
  if not security_dominates(offered.security, query.security_reqs):
    failures.append(ConsistencyFailure("security", "offered profile below requirements"))

  # Temporal
  if session is not None:
    deadline = query_deadline_ms(query, session.established_at)
    if deadline is not None and terms.deadline_ms > deadline:
      failures.append(ConsistencyFailure("temporal", f"terms deadline {terms.deadline_ms} after {deadline}"))
    if terms.deadline_ms <= session.established_at:
      failures.append(ConsistencyFailure("temporal", "terms deadline already passed"))

  return failures
