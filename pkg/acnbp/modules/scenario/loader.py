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
Scenario files.

A scenario is written in the canonical text encoding (whitespace allowed).
Loading collects every schema violation with the line it sits on before
failing, so one pass over a broken file reports all of its problems.
"""

from attrs import evolve
from os import PathLike
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from acnbp import logger
from acnbp.lib.canonical import canonical_decode
from acnbp.lib.crypto import MAX_POW_DIFFICULTY
from acnbp.lib.errors import ParseError, ProtocolError, SchemaViolation
from acnbp.modules.scenario.schema import (
  EXPECTATION_KEYS,
  AgentFixture,
  RegistryParams,
  RequesterFixture,
  Scenario,
)
from acnbp.modules.sim.schema import AdversaryKind, AdversarySpec, SimConfig

__all__ = (
  "SCENARIO_KEYS",
  "load_scenario",
  "parse_scenario",
)

FileName = Union[str, PathLike]
Path_ = Tuple[Union[str, int], ...]

SCENARIO_KEYS = ("name", "seed", "agents", "requester", "sim", "registry", "expect")


def load_scenario(path: FileName):
  """
  Load and validate a scenario file.

  Raises:
      OSError: The file cannot be read
      ParseError: The file is empty or not valid canonical text
      SchemaViolation: The file parses but breaks the scenario schema
  """
  text = Path(path).read_bytes()
  scenario = parse_scenario(text)
  logger.info(f"Scenario | Loaded '{scenario.name}' from {path}: {len(scenario.agents)} agents")
  return scenario


def parse_scenario(text: Union[bytes, str]):
  tree = canonical_decode(text)
  if isinstance(text, bytes):
    text = text.decode("utf-8")
  if not isinstance(tree, dict):
    raise ParseError("Scenario must be an object", line=1)
  return _ScenarioBuilder(tree, _line_index(text)).build()


class _ScenarioBuilder:
  def __init__(self, tree: Dict[str, Any], lines: Dict[Path_, int]):
    self.tree  = tree
    self.lines = lines
    self.violations: List[str] = []


  def violation(self, path: Path_, message: str):
    line = None
    for n in range(len(path), -1, -1):
      line = self.lines.get(path[:n])
      if line is not None:
        break
    self.violations.append(f"line {line or 1}: {_format_path(path)}: {message}")


  def convert(self, path: Path_, fn: Callable[[Any], Any], plain: Any):
    """Convert one subtree, recording a violation instead of raising."""
    try:
      return fn(plain)
    except KeyError as e:
      self.violation(path, f"missing field {e}")
    except (TypeError, AttributeError):
      self.violation(path, f"unexpected value {plain!r}")
    except (ValueError, ProtocolError) as e:
      self.violation(path, str(e))
    return None


  def build(self):
    tree = self.tree
    for key in tree:
      if key not in SCENARIO_KEYS:
        self.violation((key,), "unknown field")

    name = tree.get("name")
    if not isinstance(name, str) or len(name.strip()) == 0:
      self.violation(("name",), "must be a nonempty string")
    seed = tree.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
      self.violation(("seed",), "must be an integer")
      seed = 0

    agents = self.build_agents(tree.get("agents"))
    requester = self.build_requester(tree.get("requester"), agents)
    sim = self.build_sim(tree.get("sim") or {}, seed, agents)
    registry = self.convert(("registry",), RegistryParams.from_plain, tree.get("registry") or {})
    if registry is not None and not 0 <= registry.pow_difficulty <= MAX_POW_DIFFICULTY:
      self.violation(("registry", "pow_difficulty"), f"must be within 0 and {MAX_POW_DIFFICULTY}")
    expect = self.build_expect(tree.get("expect") or {})

    if self.violations:
      raise SchemaViolation(self.violations)
    return Scenario(
      name=name,
      seed=seed,
      agents=agents,
      requester=requester,
      sim=sim,
      registry=registry,
      expect=expect,
    )


  def build_agents(self, plain: Any):
    if not isinstance(plain, list) or len(plain) == 0:
      self.violation(("agents",), "must be a nonempty list")
      return []

    agents: List[AgentFixture] = []
    seen = set()
    for i, item in enumerate(plain):
      if not isinstance(item, Mapping):
        self.violation(("agents", i), "must be an object")
        continue
      fixture = self.convert(("agents", i), AgentFixture.from_plain, item)
      if fixture is None:
        continue
      if fixture.agent_id in seen:
        self.violation(("agents", i, "name"), f"duplicate agent id '{fixture.agent_id.qualified}'")
        continue
      seen.add(fixture.agent_id)
      agents.append(fixture)
    return agents


  def build_requester(self, plain: Any, agents: List[AgentFixture]):
    if not isinstance(plain, Mapping):
      self.violation(("requester",), "must be an object")
      return None

    requester = self.convert(("requester",), RequesterFixture.from_plain, plain)
    if requester is None:
      return None
    names = {a.name: a for a in agents}
    fixture = names.get(requester.agent)
    if fixture is None:
      self.violation(("requester", "agent"), f"unknown agent '{requester.agent}'")
    elif fixture.role != "requester":
      self.violation(("requester", "agent"), f"agent '{requester.agent}' does not have the requester role")
    for i, a in enumerate(agents):
      if a.role == "requester" and a.name != requester.agent:
        self.violation(("agents", i, "role"), f"'{a.name}' is a requester but the scenario requester is '{requester.agent}'")
    return requester


  def build_sim(self, plain: Any, seed: int, agents: List[AgentFixture]):
    if not isinstance(plain, Mapping):
      self.violation(("sim",), "must be an object")
      return SimConfig(seed=seed)

    roles = {a.name: a.role for a in agents}
    adversaries: List[AdversarySpec] = []
    for i, item in enumerate(plain.get("adversaries") or []):
      path = ("sim", "adversaries", i)
      spec = self.convert(path, AdversarySpec.from_plain, item)
      if spec is None:
        continue
      for name in spec.target:
        if name not in roles:
          self.violation(path + ("target",), f"unknown agent '{name}'")
      if spec.kind == AdversaryKind.FLOODER and roles.get(spec.target[0], "adversary") != "adversary":
        self.violation(path + ("target",), f"flooder '{spec.target[0]}' must have the adversary role")
      adversaries.append(spec)

    rest = {k: v for k, v in plain.items() if k != "adversaries"}
    config = self.convert(("sim",), lambda d: SimConfig.from_plain(d, seed=seed), rest)
    if config is None:
      return SimConfig(seed=seed)
    return evolve(config, adversaries=adversaries)


  def build_expect(self, plain: Any):
    if not isinstance(plain, Mapping):
      self.violation(("expect",), "must be an object")
      return {}
    for key in plain:
      if key not in EXPECTATION_KEYS:
        self.violation(("expect", key), "unknown expectation")
    return dict(plain)


def _format_path(path: Path_):
  text = ""
  for part in path:
    text += f"[{part}]" if isinstance(part, int) else (f".{part}" if text else part)
  return text or "<root>"


def _line_index(text: str) -> Dict[Path_, int]:
  """Line of every object key and list item, by path."""
  try:
    node = yaml.compose(text)
  except yaml.YAMLError:
    return {}

  lines: Dict[Path_, int] = {}

  def walk(node: Optional[yaml.Node], path: Path_):
    if node is None:
      return
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
      for key, value in node.value:
        child = path + (key.value,)
        lines[child] = key.start_mark.line + 1
        walk(value, child)
        lines[child] = key.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
      for i, item in enumerate(node.value):
        walk(item, path + (i,))

  walk(node, ())
  return lines
