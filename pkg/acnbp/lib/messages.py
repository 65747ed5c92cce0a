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
Human-readable summaries from YAML message templates.

A template has a `title`, a `description` and optionally `multiline` blocks
whose rows are repeated once per data item. `${name}` placeholders are
filled from the data; unknown placeholders are left as they are.
"""

from yaml import safe_load
from attrs import define
from typing import Any, Dict, List, Optional, Union
from string import Template
from copy import deepcopy
from os import PathLike
from pathlib import Path

from acnbp import settings, logger

__all__ = (
  "Message",
  "MessageMan",
  "BUNDLED_MESSAGES_DIR",
  "root",
  "load_message",
  "load_multiline",
)

FileName = Union[str, PathLike]
BUNDLED_MESSAGES_DIR = Path(__file__).resolve().parent.parent.parent / "messages"


@define
class Message:
  title: Optional[str] = None
  description: Optional[str] = None

  def text(self):
    parts = [p for p in (self.title, self.description) if p]
    return "\n".join(parts)

  def __str__(self):
    return self.text()


class MessageMan:
  def __init__(self, template_file: Optional[FileName] = None):
    self._templates: Dict[str, Any] = {}
    self._strings: Dict[str, str] = {}
    if template_file:
      self.load(template_file)


  @classmethod
  def from_dir(cls, template_dir: FileName):
    base = cls()
    base.load_dir(template_dir)
    return base


  def load_dir(self, template_dir: FileName, modify: bool = False):
    """
    Load or reload every template file in a directory.

    Args:
        template_dir: Directory of YAML template files; defaults.yaml loads first
        modify: Whether to modify existing templates or load anew
    """
    p = Path(template_dir)
    default_template_path = p / "defaults.yaml"
    if not modify:
      if default_template_path.exists():
        self.load(default_template_path)
      else:
        self._clear()

    for template_path in sorted(f for f in p.rglob("*") if f.suffix.lower() in {".yaml", ".yml"}):
      if template_path == default_template_path:
        continue
      try:
        self.modify(template_path)
      except OSError:
        logger.exception(f"Messages | Unable to open template file '{template_path}'")
      except Exception:
        logger.exception(f"Messages | Cannot load template file '{template_path}'")


  def load(self, template_file: FileName):
    self._clear()
    self.modify(template_file)


  def modify(self, template_file: FileName):
    """Add templates from a file, overwriting existing ones of the same name."""
    templates = self._load(template_file)
    for k, v in templates.items():
      if isinstance(v, str):
        self._strings[k] = v
      else:
        self._templates[k] = v
    logger.debug(f"Messages | Added/modified {len(templates)} templates from '{template_file}'")


  def has(self, template_name: str):
    return template_name in self._templates


  def message(self, template_name: str, data: Optional[Dict[str, Any]] = None):
    """
    Fill a message template.

    Raises:
        ValueError: Message template does not exist
    """
    return self.multiline(template_name, {}, data)


  def multiline(
    self,
    template_name: str,
    lines_data: Dict[str, List[Dict[str, Any]]],
    base_data: Optional[Dict[str, Any]] = None,
  ):
    """
    Fill a message template whose `multiline` blocks repeat per row.

    Args:
        template_name: Name of the template
        lines_data: Rows for each multiline block id
        base_data: Data shared by the template and every row

    Returns:
        Message
    """
    if template_name not in self._templates:
      raise ValueError(f"Message template '{template_name}' is invalid or does not exist")

    base_data = self._strings | (base_data or {})
    template = self._template("default") | self._template(template_name)
    template = _assign_data(template, base_data)

    assigned = {}
    for block in template.get("multiline") or []:
      block_id = block.get("id")
      value = block.get("value")
      if not block_id or not isinstance(value, str):
        continue
      rows = [_assign_string(value, base_data | row) for row in lines_data.get(block_id, [])]
      if rows:
        assigned[block_id] = (block.get("separator") or "\n").join(rows)
      else:
        assigned[block_id] = block.get("value_ifnone") or ""

    template = _assign_data(template, assigned)
    return Message(
      title=_stripped(template.get("title")),
      description=_stripped(template.get("description")),
    )


  def _load(self, template_file: FileName):
    with open(template_file, encoding="UTF-8") as f:
      source: Dict[str, Any] = safe_load(f)
    if not isinstance(source, dict):
      raise ValueError(f"Message template file '{template_file}' is invalid")

    namespace = ""
    if isinstance(source.get("_namespace"), str):
      namespace = source["_namespace"] + "_"
    templates = {}
    if namespace and "_" in source:
      templates[namespace.removesuffix("_")] = source["_"]
    templates |= {namespace + k: v for k, v in source.items() if not k.startswith("_")}
    return templates


  def _template(self, name: str):
    return deepcopy(self._templates.get(name) or {})


  def _clear(self):
    self._templates = {}
    self._strings = {}


def _stripped(value: Any):
  if value is None:
    return None
  value = str(value).strip()
  return value or None


def _assign_data(template: Dict[str, Any], data: Optional[Dict[str, Any]] = None):
  if not data:
    return template

  DEPTH = 3

  def _recurse_assign(temp: Any, recursions: int = 0):
    if isinstance(temp, str):
      return Template(temp).safe_substitute(data)
    if recursions >= DEPTH:
      return temp
    if isinstance(temp, dict):
      return {k: _recurse_assign(v, recursions + 1) for k, v in temp.items()}
    if isinstance(temp, list):
      return [_recurse_assign(v, recursions + 1) for v in temp]
    return temp

  # Rows of multiline blocks are filled per row, not here
  blocks = template.get("multiline")
  assigned = _recurse_assign({k: v for k, v in template.items() if k != "multiline"})
  if blocks is not None:
    assigned["multiline"] = deepcopy(blocks)
  return assigned


def _assign_string(string: str, data: Dict[str, Any]):
  return Template(string).safe_substitute(data).rstrip()


def _messages_dir():
  configured = settings.acnbp.messages_dir
  if configured is not None and len(str(configured).strip()) > 0:
    return Path(configured)
  return BUNDLED_MESSAGES_DIR


root = MessageMan()
if _messages_dir().is_dir():
  root.load_dir(_messages_dir())
else:
  logger.warning(f"Messages | Template directory '{_messages_dir()}' not found, summaries will be empty")


def load_message(template_name: str, data: Optional[Dict[str, Any]] = None):
  """Fill a template of the root MessageMan, loaded from the messages directory setting."""
  return root.message(template_name, data)


def load_multiline(
  template_name: str,
  lines_data: Dict[str, List[Dict[str, Any]]],
  base_data: Optional[Dict[str, Any]] = None,
):
  return root.multiline(template_name, lines_data, base_data)
