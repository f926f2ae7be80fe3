"""spillnet: LTC spill forecasting plus a coordinated containment simulator."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
