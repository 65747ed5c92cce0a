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
Fixture skills: the private implementations behind advertised capabilities.

A skill takes the bound capability and the input payload and returns the
output payload with the quality it asserts for it.
"""

from attrs import frozen, field
from typing import Any, Dict, Mapping, Tuple

from acnbp.lib.errors import ExecutionFailure, SlotMismatch
from acnbp.modules.core.schema import CapabilitySpec

__all__ = (
  "SKILL_KINDS",
  "Skill",
  "missing_slots",
)

SKILL_KINDS = ("translate", "echo", "partial", "fail")


def _check_kind(instance, attribute, value):
  if value not in SKILL_KINDS:
    raise ValueError(f"Unknown skill kind '{value}', expected one of {', '.join(SKILL_KINDS)}")


def _check_quality(instance, attribute, value):
  if not 0.0 <= value <= 1.0:
    raise ValueError("Skill quality must be within [0, 1]")


def missing_slots(names, payload: Mapping[str, Any]):
  return [n for n in names if n not in payload]


@frozen
class Skill:
  kind: str = field(default="echo", validator=_check_kind)
  quality: float = field(default=1.0, converter=float, validator=_check_quality)
  latency_ms: int = field(default=100, converter=int)

  def __call__(self, capability: CapabilitySpec, payload: Mapping[str, Any]) -> Tuple[Dict[str, Any], float]:
    """
    Run the skill.

    Raises:
        SlotMismatch: Payload lacks an input slot of the capability
        ExecutionFailure: The skill failed
    """
    missing = missing_slots(capability.input_names, payload)
    if missing:
      raise SlotMismatch(f"missing input slots: {', '.join(missing)}")

    if self.kind == "fail":
      raise ExecutionFailure(f"skill for {capability.desc} failed")

    if self.kind == "translate":
      source = " ".join(str(payload[n]) for n in capability.input_names)
      output = {s.name: f"[{s.type}] {source}" for s in capability.output}
    else:
      output = {s.name: payload.get(s.name, "") for s in capability.output}

    if self.kind == "partial" and capability.output:
      output.pop(capability.output[-1].name)
    return output, self.quality

  @classmethod
  def from_plain(cls, d: Mapping[str, Any]):
    return cls(
      kind=d.get("kind", "echo"),
      quality=d.get("quality", 1.0),
      latency_ms=d.get("latency_ms", 100),
    )
