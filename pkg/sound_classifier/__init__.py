from . import bird
from . import binary
