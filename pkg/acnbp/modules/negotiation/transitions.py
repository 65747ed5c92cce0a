# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from yaml import safe_load
from os import PathLike
from pathlib import Path
from typing import Dict, FrozenSet, Optional, Set, Tuple, Type, Union

from acnbp import logger
from acnbp.modules.negotiation.schema import RequesterPhase, ProviderPhase

__all__ = (
  "TRANSITIONS_YAML",
  "TransitionTable",
  "requester_table",
  "provider_table",
)

TRANSITIONS_YAML = Path(__file__).resolve().parent.parent.parent / "data" / "transitions.yaml"


class TransitionTable:
  legal: Dict[str, FrozenSet[str]]
  terminal: FrozenSet[str]
  phases: Type


  def __init__(self, phases: Type, legal: Dict[str, FrozenSet[str]], terminal: FrozenSet[str]):
    self.phases   = phases
    self.legal    = legal
    self.terminal = terminal

    names = {p.value for p in phases}
    unknown = (set(legal) | {t for ts in legal.values() for t in ts} | set(terminal)) - names
    if unknown:
      raise ValueError(f"Unknown phases in transition table: {', '.join(sorted(unknown))}")


  @classmethod
  def load(cls, section: str, phases: Type, filename: Union[str, PathLike, None] = None):
    with open(filename or TRANSITIONS_YAML, encoding="UTF-8") as f:
      data = safe_load(f)
    try:
      legal = {k: frozenset(v or ()) for k, v in data[section].items()}
      terminal = frozenset(data["terminal"][section])
    except KeyError as e:
      raise KeyError(f"Missing transition table: {str(e)}") from None
    logger.debug(f"Transitions | Loaded {sum(len(v) for v in legal.values())} {section} transitions")
    return cls(phases, legal, terminal)


  def allows(self, phase_from, phase_to):
    return _name(phase_to) in self.legal.get(_name(phase_from), frozenset())


  def is_terminal(self, phase):
    return _name(phase) in self.terminal


  def edges(self) -> Set[Tuple[str, str]]:
    return {(a, b) for a, bs in self.legal.items() for b in bs}


def _name(phase):
  return getattr(phase, "value", phase)


requester_table = TransitionTable.load("requester", RequesterPhase)
provider_table = TransitionTable.load("provider", ProviderPhase)
