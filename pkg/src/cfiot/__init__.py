"""Wirelessly powered cell-free IoT network: closed-form analysis, Monte Carlo
validation and long-term scheduling with power control."""

__version__ = "0.1.0"
