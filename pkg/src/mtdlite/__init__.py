"""Lightweight moving-target defense for IoT-class hosts.

The package bundles a deterministic sandbox environment, synthetic telemetry
generation, small from-scratch classifiers, a proactive/reactive decision
module, policy-driven enforcement, four defense mechanisms, and scripted
malware-behavior emulators, all tied together by a scenario runner and CLI.
"""

from .errors import MtdError
from .labels import Behavior

__version__ = "0.1.0"

__all__ = ["MtdError", "Behavior", "__version__"]
