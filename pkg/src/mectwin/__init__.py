"""Digital-twin simulator and optimizer for multi-AP MEC with URLLC and delay-tolerant users."""

from mectwin.params import RadioConfig, SystemParams, UrllcQos

__version__ = "0.1.0"

__all__ = ["RadioConfig", "SystemParams", "UrllcQos", "__version__"]
