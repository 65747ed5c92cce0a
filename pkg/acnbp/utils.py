# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from typing import Optional

import regex as re

__all__ = (
  "is_namespace",
  "is_ontology_tag",
  "is_version",
  "ManualClock",
  "clamp",
  "from_hex",
  "short_hex",
  "format_tb",
)


_namespace_segment_re = re.compile(r"[a-z0-9_-]+")
_ontology_tag_re = re.compile(r"[\p{Ll}\p{Nd}_.+-]+")
_version_re = re.compile(r"(0|[1-9][0-9]*)\.(0|[1-9][0-9]*)\.(0|[1-9][0-9]*)")


def is_namespace(namespace: str):
  """
  Check a dot-separated namespace such as `translation.gov`.

  Args:
      namespace: Namespace string

  Returns:
      Whether every segment matches `[a-z0-9_-]+`
  """
  if not isinstance(namespace, str) or len(namespace) == 0:
    return False
  return all(_namespace_segment_re.fullmatch(s) for s in namespace.split("."))


def is_ontology_tag(tag: str):
  return isinstance(tag, str) and _ontology_tag_re.fullmatch(tag) is not None


def is_version(version: str):
  return isinstance(version, str) and _version_re.fullmatch(version) is not None


class ManualClock:
  """Virtual millisecond clock advanced by hand. Calling it returns the time."""

  def __init__(self, start_ms: int = 0):
    self.now_ms = start_ms


  def __call__(self):
    return self.now_ms


  def advance(self, ms: int):
    if ms < 0:
      raise ValueError("Clock cannot go backwards")
    self.now_ms += ms
    return self.now_ms


def clamp(value: float, low: float = 0.0, high: float = 1.0):
  return max(low, min(high, value))


def from_hex(value: str, field_name: Optional[str] = None):
  try:
    return bytes.fromhex(value)
  except (TypeError, ValueError):
    raise ValueError(f"Field '{field_name or '?'}' is not lowercase hex") from None


def short_hex(value: bytes, length: int = 12):
  return value.hex()[:length]


def format_tb(e: BaseException):
  # Locate the innermost acnbp frame of the traceback
  tb = e.__traceback__
  acnbp_tb = None
  while tb is not None:
    if "acnbp" in tb.tb_frame.f_code.co_filename:
      acnbp_tb = tb
    tb = tb.tb_next

  if acnbp_tb is None:
    return f"{type(e).__name__}: {str(e)}"

  e_path = (
    acnbp_tb.tb_frame.f_code.co_filename
    .replace("\\", "/")
    .split("acnbp/", maxsplit=1)[-1]
    .rsplit(".", maxsplit=1)[0]
    .replace("/", ".")
    .replace(".__init__", "")
  )
  return (
    f"acnbp.{e_path}:{acnbp_tb.tb_frame.f_code.co_name}:{acnbp_tb.tb_lineno}: "
    f"{type(e).__name__}: {str(e)}"
  )
