"""Silent-speech decoding engine: synthetic choker signals, 144 ms token
decoding, transfer learning and distillation, DFT-based emotion decoding,
and the token-synthesis / sentence-expansion agents."""

from ithroat._core import *  # noqa: F401,F403
from ithroat._core import __doc__ as _core_doc

__all__ = [name for name in dir() if not name.startswith("_")]
