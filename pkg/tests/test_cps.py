# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

import math

import pytest

from acnbp.modules.core.schema import CapabilityQuery, SecurityProfile
from acnbp.modules.cps.engine import (
  ELIMINATED_COMPATIBILITY,
  ELIMINATED_SECURITY,
  cost_utility,
  evaluate_candidate,
  evaluate_cohort,
  rank_candidates,
  screen_candidate,
)
from acnbp.modules.cps.schema import ScoringWeights


@pytest.fixture
def cohort(translators):
  return [anri for anri, _, _ in translators.values()]


def _by_name(scores):
  return {s.agent.name: s for s in scores}


class TestWeights:
  def test_default(self):
    w = ScoringWeights.default()
    assert w.as_tuple() == (0.30, 0.25, 0.20, 0.15, 0.10)

  def test_parse_normalizes(self):
    w = ScoringWeights.parse("1,1,0,2,0")
    assert math.isclose(w.w_cost, 0.5)
    assert math.isclose(sum(w.as_tuple()), 1.0)

  @pytest.mark.parametrize("text", ["0,0,0,0,0", "1,2,3", "a,b,c,d,e", "1,1,1,1,-9"])
  def test_parse_invalid(self, text):
    with pytest.raises(ValueError):
      ScoringWeights.parse(text)

  def test_must_sum_to_one(self):
    with pytest.raises(ValueError):
      ScoringWeights(0.5, 0.5, 0.5, 0, 0)

  def test_from_plain(self):
    w = ScoringWeights.from_plain({"w_compat": 3, "w_security": 0, "w_reputation": 1, "w_cost": 0, "w_risk": 0})
    assert math.isclose(w.w_compat, 0.75)
    assert ScoringWeights.from_plain([0, 0, 0, 1, 0]).w_cost == 1.0


class TestScreening:
  def test_gates(self, legal_query, translators, ca):
    results = {
      name: screen_candidate(legal_query, anri, ca.root)
      for name, (anri, _, _) in translators.items()
    }
    assert results["TranslatorC_Gov"].passed
    assert results["TranslatorD_Basic"].reason == ELIMINATED_SECURITY
    assert math.isclose(results["TranslatorB_Fast"].compatibility, 0.75)

  def test_incompatible(self, translators, ca):
    query = CapabilityQuery(required="summarization")
    screening = screen_candidate(query, translators["TranslatorC_Gov"][0], ca.root)
    assert screening.reason == ELIMINATED_COMPATIBILITY

  def test_unmet_constraint_is_incompatible(self, translators, ca):
    query = CapabilityQuery(required="translation/en-fr/legal", constraints={"deadline_hours": 10})
    assert screen_candidate(query, translators["TranslatorC_Gov"][0], ca.root).reason == ELIMINATED_COMPATIBILITY
    assert screen_candidate(query, translators["TranslatorB_Fast"][0], ca.root).passed

  def test_missing_certification(self, translators, ca):
    query = CapabilityQuery(
      required="translation/en-fr/legal",
      security_reqs=SecurityProfile(certifications={"gov-clearance"}),
    )
    assert screen_candidate(query, translators["TranslatorA_Corp"][0], ca.root).reason == ELIMINATED_SECURITY
    assert screen_candidate(query, translators["TranslatorC_Gov"][0], ca.root).passed

  def test_signing_required(self, translators, ca):
    query = CapabilityQuery(
      required="translation/en-fr/legal",
      security_reqs=SecurityProfile(encryption_level="basic", signing_required=True),
    )
    passed = {name for name, (anri, _, _) in translators.items() if screen_candidate(query, anri, ca.root).passed}
    assert passed == {"TranslatorA_Corp", "TranslatorC_Gov"}

  def test_compatibility_of_secure_capability(self, legal_query, make_anri, make_capability, ca):
    exact_insecure = make_capability("translation/en-fr/legal", 24, "none")
    express_basic = make_capability("translation/en-fr/legal/express", 2, "basic")
    anri, _, _ = make_anri("Mixed_Offer", capabilities=[exact_insecure, express_basic])

    screening = screen_candidate(legal_query, anri, ca.root)
    assert screening.passed
    assert screening.capability == express_basic
    assert math.isclose(screening.compatibility, 0.75)

  def test_unverifiable_record(self, legal_query, translators, ca):
    anri = translators["TranslatorC_Gov"][0].with_metadata(reputation=1.0)
    assert screen_candidate(legal_query, anri, ca.root).reason == ELIMINATED_SECURITY

  def test_revoked_certificate(self, legal_query, translators, ca):
    anri, cert, _ = translators["TranslatorC_Gov"]
    ca.revoke_certificate(cert)
    assert screen_candidate(legal_query, anri, ca.root, ca.revoked).reason == ELIMINATED_SECURITY


class TestScoring:
  """Weighted scoring of the translation cohort."""

  def test_worked_example(self, legal_query, cohort, ca):
    scores = _by_name(evaluate_cohort(legal_query, cohort, ScoringWeights.default(), ca.root))

    assert math.isclose(scores["TranslatorC_Gov"].total, 0.90, abs_tol=1e-9)
    assert math.isclose(scores["TranslatorA_Corp"].total, 0.845, abs_tol=1e-9)
    assert math.isclose(scores["TranslatorB_Fast"].total, 0.805, abs_tol=1e-9)
    assert scores["TranslatorD_Basic"].eliminated
    assert scores["TranslatorD_Basic"].elimination_reason == ELIMINATED_SECURITY
    assert scores["TranslatorD_Basic"].total == 0.0

  def test_ranking(self, legal_query, cohort, ca):
    scores = evaluate_cohort(legal_query, cohort, ScoringWeights.default(), ca.root)
    assert [a.name for a in rank_candidates(scores)] == ["TranslatorC_Gov", "TranslatorA_Corp", "TranslatorB_Fast"]

  def test_cost_only_selects_cheapest_survivor(self, legal_query, cohort, ca):
    scores = evaluate_cohort(legal_query, cohort, ScoringWeights.parse("0,0,0,1,0"), ca.root)
    ranking = rank_candidates(scores)
    assert ranking[0].name == "TranslatorB_Fast"
    # The eliminated candidate is cheaper but never counts
    assert math.isclose(_by_name(scores)["TranslatorB_Fast"].cost_utility, 1.0)

  def test_cost_utility(self):
    assert cost_utility(0.15, 0.08) == pytest.approx(0.08 / 0.15)
    assert cost_utility(0.0, 0.08) == 1.0
    assert cost_utility(0.05, 0.08) == 1.0

  def test_explicit_risk(self, legal_query, make_anri, ca):
    anri, _, _ = make_anri("Risky", metadata={"reputation": 0.9, "risk": 0.5, "cost_per_unit": 1.0})
    score = evaluate_candidate(legal_query, anri, ScoringWeights.parse("0,0,0,0,1"), ca.root)
    assert math.isclose(score.total, 0.5)

  def test_totals_within_unit_interval(self, legal_query, cohort, ca):
    for text in ("1,0,0,0,0", "0,1,0,0,0", "0,0,1,0,0", "0,0,0,1,0", "0,0,0,0,1", "1,1,1,1,1"):
      for s in evaluate_cohort(legal_query, cohort, ScoringWeights.parse(text), ca.root):
        assert 0.0 <= s.total <= 1.0 + 1e-12

  def test_ties_broken_by_agent(self, legal_query, make_anri, ca):
    twins = [
      make_anri(name, metadata={"reputation": 0.7, "cost_per_unit": 0.1})[0]
      for name in ("Twin_B", "Twin_A")
    ]
    scores = evaluate_cohort(legal_query, twins, ScoringWeights.default(), ca.root)
    assert [a.name for a in rank_candidates(scores)] == ["Twin_A", "Twin_B"]
