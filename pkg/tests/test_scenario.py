# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

import json

import pytest

from acnbp.lib.errors import ParseError, SchemaViolation
from acnbp.modules.scenario.loader import load_scenario, parse_scenario
from acnbp.modules.scenario.runner import check_expectations
from acnbp.modules.sim.schema import AdversaryKind

from conftest import SCENARIOS_DIR


@pytest.fixture
def tree():
  return json.loads((SCENARIOS_DIR / "translation.scenario").read_text(encoding="utf-8"))


def _text(tree):
  return json.dumps(tree, indent=2)


def _line_of(text, needle, occurrence=1):
  seen = 0
  for n, line in enumerate(text.splitlines(), start=1):
    if needle in line:
      seen += 1
      if seen == occurrence:
        return n
  raise AssertionError(f"'{needle}' not found")


def _violations(text):
  with pytest.raises(SchemaViolation) as e:
    parse_scenario(text)
  return e.value.violations


class TestParse:
  def test_translation(self):
    scenario = load_scenario(SCENARIOS_DIR / "translation.scenario")

    assert scenario.name == "translation"
    assert scenario.seed == 42
    assert scenario.sim.seed == 42
    assert scenario.registry.pow_difficulty == 8
    assert len(scenario.agents) == 5
    assert scenario.requester.agent == "LegalBot_Prime"
    assert scenario.fixture("TranslatorC_Gov").skill.quality == 0.98
    assert scenario.expect["selected"] == "TranslatorC_Gov"

  def test_translation_signing(self):
    scenario = load_scenario(SCENARIOS_DIR / "translation.scenario")

    signing = {
      fixture.name for fixture in scenario.agents
      if any(cap.security.signing_required for cap in fixture.capabilities)
    }
    assert signing == {"TranslatorA_Corp", "TranslatorC_Gov"}
    assert not scenario.requester.query.security_reqs.signing_required

  def test_bytes_and_text_agree(self, tree):
    text = _text(tree)
    assert parse_scenario(text) == parse_scenario(text.encode("utf-8"))

  @pytest.mark.parametrize("text", ["", "   \n", "[1, 2]", '"translation"', "{\"name\": "])
  def test_not_a_scenario(self, text):
    with pytest.raises(ParseError):
      parse_scenario(text)

  def test_duplicate_key(self):
    with pytest.raises(ParseError):
      parse_scenario('{"name": "a", "name": "b"}')

  def test_adversaries(self):
    scenario = load_scenario(SCENARIOS_DIR / "flood.scenario")
    (spec,) = scenario.sim.adversaries
    assert spec.kind == AdversaryKind.FLOODER
    assert scenario.fixture(spec.target[0]).role == "adversary"


class TestViolations:
  def test_duplicate_agent(self, tree):
    tree["agents"].append(dict(tree["agents"][1]))
    text = _text(tree)

    (violation,) = _violations(text)
    line = _line_of(text, '"name": "TranslatorA_Corp"', occurrence=2)
    assert violation.startswith(f"line {line}: agents[5].name:")
    assert "TranslatorA_Corp" in violation

  def test_unknown_field(self, tree):
    tree["colour"] = "blue"
    text = _text(tree)

    (violation,) = _violations(text)
    assert violation == f"line {_line_of(text, 'colour')}: colour: unknown field"

  def test_unknown_expectation(self, tree):
    tree["expect"]["winner"] = "TranslatorC_Gov"
    (violation,) = _violations(_text(tree))
    assert "expect.winner: unknown expectation" in violation

  def test_unknown_requester(self, tree):
    tree["requester"]["agent"] = "Nobody"
    violations = _violations(_text(tree))
    assert any("requester.agent: unknown agent 'Nobody'" in v for v in violations)

  def test_requester_role(self, tree):
    tree["requester"]["agent"] = "TranslatorA_Corp"
    violations = _violations(_text(tree))

    assert any("does not have the requester role" in v for v in violations)
    assert any("agents[0].role" in v for v in violations)

  def test_unknown_adversary_target(self, tree):
    tree["sim"]["adversaries"] = [{"kind": "REPLAYER", "target": ["Nobody", "LegalBot_Prime"]}]
    (violation,) = _violations(_text(tree))
    assert "sim.adversaries[0].target: unknown agent 'Nobody'" in violation

  def test_unknown_adversary_kind(self, tree):
    tree["sim"]["adversaries"] = [{"kind": "SPY", "target": "LegalBot_Prime"}]
    (violation,) = _violations(_text(tree))
    assert "sim.adversaries[0]" in violation

  def test_flooder_role(self, tree):
    tree["sim"]["adversaries"] = [{"kind": "FLOODER", "target": "TranslatorB_Fast"}]
    (violation,) = _violations(_text(tree))
    assert "must have the adversary role" in violation

  @pytest.mark.parametrize("difficulty", [-1, 25])
  def test_pow_difficulty(self, tree, difficulty):
    tree["registry"]["pow_difficulty"] = difficulty
    (violation,) = _violations(_text(tree))
    assert violation.split(": ")[1] == "registry.pow_difficulty"

  def test_bad_probability(self, tree):
    tree["sim"]["drop_prob"] = 2
    (violation,) = _violations(_text(tree))
    assert "drop_prob" in violation

  def test_all_reported(self, tree):
    tree["colour"] = "blue"
    tree["seed"] = "forty-two"
    tree["agents"][2]["role"] = "bystander"
    tree["expect"]["winner"] = "TranslatorC_Gov"

    violations = _violations(_text(tree))
    assert len(violations) == 4
    assert all(v.startswith("line ") for v in violations)

  def test_empty_agents(self, tree):
    tree["agents"] = []
    violations = _violations(_text(tree))
    assert any("agents: must be a nonempty list" in v for v in violations)


class TestExpectations:
  def test_all_hold(self, translation_scenario, translation_world):
    report = translation_world.run()
    assert check_expectations(report, translation_scenario.expect) == []

  def test_mismatches(self, translation_world):
    report = translation_world.run()
    mismatches = check_expectations(report, {
      "outcome": "ABORTED",
      "eliminated": ["TranslatorD_Basic"],
      "reputation_after": {"TranslatorC_Gov": 0.9, "Nobody": 0.5},
      "rate_limited_min": 1,
    })

    assert len(mismatches) == 4
    assert mismatches[0] == "outcome: expected 'ABORTED', got 'COMMITTED'"
    assert mismatches[1].startswith("reputation_after.TranslatorC_Gov: expected 0.9, got 0.9")
    assert mismatches[2] == "reputation_after.Nobody: expected 0.5, got None"
    assert mismatches[3] == "rate_limited_min: expected at least 1, got 0"
