# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import define, evolve, field
from os import PathLike
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import math

from acnbp import logger, settings
from acnbp.lib.canonical import canonical_encode
from acnbp.modules.cps.schema import ScoringWeights
from acnbp.modules.scenario.schema import Scenario
from acnbp.modules.sim.runner import build_world
from acnbp.modules.sim.schema import SimReport

__all__ = (
  "TRACE_FILE",
  "REPORT_FILE",
  "AUDIT_FILE",
  "SNAPSHOT_FILE",
  "ScenarioResult",
  "run_scenario",
  "check_expectations",
)

FileName = Union[str, PathLike]
REPUTATION_TOLERANCE = 1e-9

TRACE_FILE = "trace.jsonl"
REPORT_FILE = "report.json"
AUDIT_FILE = "audit.log"
SNAPSHOT_FILE = "registry.snapshot"


@define
class ScenarioResult:
  report: SimReport
  out_dir: Path
  checked: int = 0
  mismatches: List[str] = field(factory=list)

  @property
  def exit_code(self):
    return 1 if self.mismatches else 0


def run_scenario(
  scenario: Scenario,
  seed: Optional[int] = None,
  weights: Optional[ScoringWeights] = None,
  check: bool = False,
  trace_dir: Optional[FileName] = None,
):
  """
  Run a scenario and write its trace, report, audit log and registry
  snapshot.

  Args:
      scenario: Validated scenario
      seed: Overrides the scenario seed
      weights: Overrides the requester's scoring weights
      check: Compare the report with the scenario's expected outcomes
      trace_dir: Output directory, by default `<trace_dir setting>/<scenario name>`

  Returns:
      ScenarioResult

  Raises:
      ScenarioInvalid: The scenario cannot be wired
      InvariantBreach: An agent ended outside a terminal phase
  """
  config = scenario.sim if seed is None else evolve(scenario.sim, seed=seed)
  if weights is not None:
    scenario = evolve(scenario, requester=evolve(scenario.requester, weights=weights))

  out_dir = Path(trace_dir) if trace_dir else Path(settings.acnbp.trace_dir) / scenario.name
  out_dir.mkdir(parents=True, exist_ok=True)

  world = build_world(config, scenario)
  try:
    report = world.run()
  finally:
    world.network.write_trace(out_dir / TRACE_FILE)
    world.audit.save(out_dir / AUDIT_FILE)
    world.registry.export_snapshot(out_dir / SNAPSHOT_FILE)
  (out_dir / REPORT_FILE).write_bytes(canonical_encode(report) + b"\n")

  mismatches = check_expectations(report, scenario.expect) if check else []
  if mismatches:
    logger.warning(f"Scenario | '{scenario.name}' failed {len(mismatches)} expectations")
  return ScenarioResult(
    report=report,
    out_dir=out_dir,
    checked=len(scenario.expect) if check else 0,
    mismatches=mismatches,
  )


def check_expectations(report: SimReport, expect: Dict[str, Any]) -> List[str]:
  """Describe every expected outcome the report does not meet."""
  mismatches = []

  def compare(key: str, expected: Any, actual: Any):
    if expected != actual:
      mismatches.append(f"{key}: expected {expected!r}, got {actual!r}")

  for key in ("outcome", "final_phase", "reason", "selected", "ranking", "registry_unchanged"):
    if key in expect:
      compare(key, expect[key], getattr(report, key))

  if "eliminated" in expect:
    expected = expect["eliminated"]
    if isinstance(expected, list):
      compare("eliminated", sorted(expected), sorted(report.eliminated))
    else:
      compare("eliminated", expected, report.eliminated)

  for name, value in (expect.get("reputation_after") or {}).items():
    actual = report.reputation_after.get(name)
    if actual is None or not math.isclose(actual, value, abs_tol=REPUTATION_TOLERANCE):
      mismatches.append(f"reputation_after.{name}: expected {value!r}, got {actual!r}")

  for name, value in (expect.get("registrations") or {}).items():
    compare(f"registrations.{name}", value, report.registrations.get(name))

  if "replays_accepted" in expect:
    compare("replays_accepted", expect["replays_accepted"], report.adversary_total("accepted", "REPLAYER"))
  if "downgrades_detected" in expect:
    compare("downgrades_detected", expect["downgrades_detected"], report.adversary_total("downgrades_detected", "DOWNGRADER"))
  if "bindings_over_downgrade" in expect:
    compare("bindings_over_downgrade", expect["bindings_over_downgrade"], report.adversary_total("bound", "DOWNGRADER"))
  if "rate_limited_min" in expect:
    actual = report.adversary_total("rate_limited", "FLOODER")
    if actual < expect["rate_limited_min"]:
      mismatches.append(f"rate_limited_min: expected at least {expect['rate_limited_min']}, got {actual}")

  return mismatches
