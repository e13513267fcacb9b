"""Hardware-security audit toolkit for MAX 10 class flash FPGAs.

Scan-chain surveys, flash access mapping, configuration-image forensics,
a STAPL script interpreter, calibrated fault-injection campaigns, and
synthetic boot power traces -- all runnable against a bit-accurate
simulated device or a remote scan server speaking the wire protocol.
"""

from .bits import BitVector
from .device import (
    AccessPath,
    DeviceState,
    FuseSet,
    build_device,
)
from .profiles import DeviceProfile, bundled_profiles, load_profile
from .scanner import Scanner
from .server import ScanServer, serve_background
from .transport import RemoteTransport, SimTransport, TapController

__version__ = "0.1.0"

__all__ = [
    "AccessPath",
    "BitVector",
    "DeviceProfile",
    "DeviceState",
    "FuseSet",
    "RemoteTransport",
    "ScanServer",
    "Scanner",
    "SimTransport",
    "TapController",
    "build_device",
    "bundled_profiles",
    "load_profile",
    "serve_background",
    "__version__",
]
