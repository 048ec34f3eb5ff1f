"""SharpContour settings, re-exported so callers can `from config import settings` or import names directly."""
from config.settings import *
