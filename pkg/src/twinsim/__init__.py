"""Digital-twin platform engine and discrete-event simulator."""

__version__ = "0.1.0"
