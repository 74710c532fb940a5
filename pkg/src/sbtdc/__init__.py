"""Behavioral simulator for a multi-channel stochastic-bitstream FPGA TDC."""

__version__ = "0.1.0"
