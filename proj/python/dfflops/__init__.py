"""Learned sparse retrieval with FLOPS and DF-FLOPS regularisation."""

from ._dfflops import *  # noqa: F401,F403
from ._dfflops import __version__  # noqa: F401
