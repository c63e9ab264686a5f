"""Defense mechanism implementations and the deployment registry."""

from .base import (
    STATUS_FAILED,
    STATUS_MITIGATED,
    STATUS_NOOP,
    Mechanism,
    MechanismContext,
    MtdOutcome,
)
from .file_format import FileFormatMechanism
from .ip_shuffle import IpShuffleMechanism
from .libraries import LibrariesMechanism
from .ransomware_trap import TrapMechanism

MECHANISM_IDS = (
    TrapMechanism.id,
    FileFormatMechanism.id,
    LibrariesMechanism.id,
    IpShuffleMechanism.id,
)

__all__ = [
    "Mechanism",
    "MechanismContext",
    "MtdOutcome",
    "STATUS_MITIGATED",
    "STATUS_NOOP",
    "STATUS_FAILED",
    "MECHANISM_IDS",
    "TrapMechanism",
    "FileFormatMechanism",
    "LibrariesMechanism",
    "IpShuffleMechanism",
]
