"""Fuel cell voltage control: plant simulator, GP dynamics models, QP-based MPC."""

__version__ = "0.1.0"
