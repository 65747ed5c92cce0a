# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from dotenv import load_dotenv
load_dotenv(override=True)

# Init logging first - used by every other acnbp module
import logging
from sys import stderr

_log_format = logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s")

_acnbp_log_handler = logging.StreamHandler(stderr)
_acnbp_log_handler.setFormatter(_log_format)
_acnbp_logger = logging.getLogger("acnbp")
_acnbp_logger.setLevel(logging.WARNING)
_acnbp_logger.addHandler(_acnbp_log_handler)
logger = _acnbp_logger

from typing import List, Optional

# Settings must load first
from acnbp import settings
from acnbp.version import __version__

__all__ = (
  "__version__",
  "logger",
  "run",
)

if settings.acnbp.log_info:
  logger.setLevel(logging.INFO)


def run(argv: Optional[List[str]] = None):
  from acnbp.cli import main
  raise SystemExit(main(argv))
