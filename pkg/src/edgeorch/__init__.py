"""Edge analytics orchestration: placement, routing, provisioning and simulation."""

__version__ = "0.1.0"
