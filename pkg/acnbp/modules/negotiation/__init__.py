# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.


from acnbp.modules.negotiation.schema import *
from acnbp.modules.negotiation.transitions import *
from acnbp.modules.negotiation.consistency import *
from acnbp.modules.negotiation.skills import *
from acnbp.modules.negotiation.agent import *
from acnbp.modules.negotiation.provider import *
from acnbp.modules.negotiation.requester import *
