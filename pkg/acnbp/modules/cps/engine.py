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
Candidate pre-screening and selection.

Candidates pass two hard gates (functional compatibility, then security)
and survivors are scored by weighted sum over compatibility, security
presence, reputation, cohort-relative cost and risk.
"""

from attrs import frozen
from typing import AbstractSet, Iterable, List, Optional, Tuple

from acnbp import logger
from acnbp.modules.core.schema import ANRI, CapabilityQuery, CapabilitySpec
from acnbp.modules.core.matching import match_capability, security_dominates
from acnbp.modules.registry.authority import verify_anri
from acnbp.modules.cps.schema import CandidateScore, ScoringWeights
from acnbp.utils import clamp

__all__ = (
  "ELIMINATED_COMPATIBILITY",
  "ELIMINATED_SECURITY",
  "screen_candidate",
  "cost_utility",
  "evaluate_candidate",
  "evaluate_cohort",
  "rank_candidates",
)

ELIMINATED_COMPATIBILITY = "compatibility"
ELIMINATED_SECURITY = "security"


@frozen
class Screening:
  compatibility: float
  capability: Optional[CapabilitySpec]
  reason: Optional[str]

  @property
  def passed(self):
    return self.reason is None


def screen_candidate(
  query: CapabilityQuery,
  anri: ANRI,
  ca_root: bytes,
  revoked: Optional[AbstractSet[int]] = None,
):
  """
  Compatibility and security gates.

  Compatibility is judged with the query's security requirements relaxed,
  so that a functionally suitable but insufficiently secured candidate is
  eliminated for security rather than compatibility. A surviving candidate
  is scored on its best capability that also meets the security floor.
  """
  relaxed = query.relaxed()
  matched: List[Tuple[float, int, CapabilitySpec]] = []
  for i, cap in enumerate(anri.capabilities):
    result = match_capability(relaxed, cap)
    if result.matched:
      matched.append((result.similarity, i, cap))

  if not matched:
    return Screening(compatibility=0.0, capability=None, reason=ELIMINATED_COMPATIBILITY)

  matched.sort(key=lambda t: (-t[0], t[1]))
  compatibility = matched[0][0]

  if not verify_anri(anri, ca_root, revoked):
    return Screening(compatibility=compatibility, capability=None, reason=ELIMINATED_SECURITY)
  for similarity, _, cap in matched:
    if security_dominates(cap.security, query.security_reqs):
      return Screening(compatibility=similarity, capability=cap, reason=None)
  return Screening(compatibility=compatibility, capability=None, reason=ELIMINATED_SECURITY)


def cost_utility(cost: float, cohort_min_cost: float):
  if cost <= 0:
    return 1.0
  return clamp(cohort_min_cost / cost)


def evaluate_candidate(
  query: CapabilityQuery,
  anri: ANRI,
  weights: ScoringWeights,
  ca_root: bytes,
  cohort_min_cost: Optional[float] = None,
  revoked: Optional[AbstractSet[int]] = None,
):
  """
  Score one candidate.

  Args:
      query: The requester's capability query
      anri: Candidate record
      weights: Scoring weights
      ca_root: Certificate authority root key
      cohort_min_cost: Lowest cost among surviving candidates; defaults to
        this candidate's own cost

  Returns:
      CandidateScore, with total 0 when eliminated
  """
  screening = screen_candidate(query, anri, ca_root, revoked)
  reputation = anri.reputation
  risk = anri.risk if anri.risk is not None else 1.0 - reputation

  if not screening.passed:
    return CandidateScore(
      agent=anri.id,
      compatibility=screening.compatibility,
      security_ok=False,
      reputation=reputation,
      cost_utility=0.0,
      risk=risk,
      total=0.0,
      eliminated=True,
      elimination_reason=screening.reason,
    )

  min_cost = anri.cost_per_unit if cohort_min_cost is None else cohort_min_cost
  utility = cost_utility(anri.cost_per_unit, min_cost)
  total = (
    weights.w_compat * screening.compatibility
    + weights.w_security * 1.0
    + weights.w_reputation * reputation
    + weights.w_cost * utility
    + weights.w_risk * (1.0 - risk)
  )
  return CandidateScore(
    agent=anri.id,
    compatibility=screening.compatibility,
    security_ok=True,
    reputation=reputation,
    cost_utility=utility,
    risk=risk,
    total=total,
    eliminated=False,
    capability=screening.capability,
  )


def evaluate_cohort(
  query: CapabilityQuery,
  anris: Iterable[ANRI],
  weights: ScoringWeights,
  ca_root: bytes,
  revoked: Optional[AbstractSet[int]] = None,
):
  """Score every candidate, normalizing cost against the cheapest survivor."""
  anris = list(anris)
  survivors = [a for a in anris if screen_candidate(query, a, ca_root, revoked).passed]
  min_cost = min((a.cost_per_unit for a in survivors), default=0.0)

  scores = [evaluate_candidate(query, a, weights, ca_root, min_cost, revoked) for a in anris]
  for s in scores:
    if s.eliminated:
      logger.info(f"CPS | {s.agent} eliminated ({s.elimination_reason})")
    else:
      logger.info(f"CPS | {s.agent} total={s.total:.4f}")
  return scores


def rank_candidates(scores: Iterable[CandidateScore]):
  survivors = [s for s in scores if not s.eliminated]
  survivors.sort(key=lambda s: (-s.total, s.agent))
  return [s.agent for s in survivors]
