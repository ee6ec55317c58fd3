"""Multiuser MISO downlink simulator with learned adaptive-order
symbol-level precoding and detection, plus classical baselines."""

__version__ = "0.1.0"
