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
Canonical text encoding shared by the wire, signing preimages, audit records
and files.

Values are lowered to plain JSON trees and written with keys sorted by code
point, no insignificant whitespace, minimal integers, shortest round-trip
reals and lowercase hex for byte strings. Domain types either provide a
`to_plain()` method or are attrs classes whose fields are lowered in order;
fields declared with `metadata={"canonical": False}` are never encoded.
"""

from attrs import has as _is_attrs, fields as _fields
from collections.abc import Mapping
from enum import Enum
from hashlib import sha3_256
from typing import Any, Iterable, Union

import json
import math

from acnbp.lib.errors import UnencodableValue, ParseError

__all__ = (
  "to_plain",
  "canonical_encode",
  "canonical_decode",
  "is_canonical",
  "digest",
)


def to_plain(value: Any, omit: Iterable[str] = ()):
  """
  Lower a value to a plain JSON-compatible tree.

  Args:
      value: Domain value, attrs instance or builtin container
      omit: Top-level attrs field names to leave out

  Returns:
      Tree of dict, list, str, int, float, bool and None

  Raises:
      UnencodableValue: NaN or infinite reals, non-string map keys, or
        unsupported types
  """
  if value is None or isinstance(value, bool):
    return value
  if isinstance(value, Enum):
    return to_plain(value.value)
  if isinstance(value, int):
    return int(value)
  if isinstance(value, float):
    if not math.isfinite(value):
      raise UnencodableValue(value)
    return value
  if isinstance(value, str):
    return value
  if isinstance(value, (bytes, bytearray, memoryview)):
    return bytes(value).hex()
  if hasattr(value, "to_plain") and not omit:
    return value.to_plain()
  if isinstance(value, Mapping):
    plain = {}
    for k, v in value.items():
      if not isinstance(k, str):
        raise UnencodableValue(k)
      plain[k] = to_plain(v)
    return plain
  if isinstance(value, (set, frozenset)):
    return sorted((to_plain(v) for v in value), key=_sort_key)
  if isinstance(value, (list, tuple)):
    return [to_plain(v) for v in value]
  if _is_attrs(type(value)):
    omit = set(omit)
    return {
      f.name: to_plain(getattr(value, f.name))
      for f in _fields(type(value))
      if f.metadata.get("canonical", True) and f.name not in omit
    }
  raise UnencodableValue(value)


def canonical_encode(value: Any, omit: Iterable[str] = ()) -> bytes:
  return _dumps(to_plain(value, omit=omit))


def canonical_decode(data: Union[bytes, str]):
  """
  Parse canonical (or whitespace-relaxed) text into a plain tree.

  Raises:
      ParseError: Invalid UTF-8, invalid JSON, duplicate keys or NaN constants
  """
  if isinstance(data, (bytes, bytearray)):
    try:
      data = bytes(data).decode("utf-8")
    except UnicodeDecodeError as e:
      raise ParseError(f"Invalid UTF-8: {e.reason}") from None

  if len(data.strip()) == 0:
    raise ParseError("Empty input", line=1)

  try:
    return json.loads(
      data,
      object_pairs_hook=_no_duplicates,
      parse_constant=_no_constants,
    )
  except json.JSONDecodeError as e:
    raise ParseError(e.msg, line=e.lineno) from None


def is_canonical(data: bytes):
  try:
    return _dumps(canonical_decode(data)) == data
  except (ParseError, UnencodableValue):
    return False


def digest(value: Any, omit: Iterable[str] = ()) -> bytes:
  return sha3_256(canonical_encode(value, omit=omit)).digest()


# =============================================================================


def _dumps(plain: Any) -> bytes:
  try:
    return json.dumps(
      plain,
      sort_keys=True,
      separators=(",", ":"),
      ensure_ascii=False,
      allow_nan=False,
    ).encode("utf-8")
  except ValueError:
    raise UnencodableValue(plain) from None


def _sort_key(plain: Any):
  return _dumps(plain)


def _no_duplicates(pairs):
  d = {}
  for k, v in pairs:
    if k in d:
      raise ParseError(f"Duplicate key '{k}'")
    d[k] = v
  return d


def _no_constants(name: str):
  raise ParseError(f"Constant '{name}' is not allowed")
