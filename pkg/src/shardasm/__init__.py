"""Desk-scale de Bruijn genome assembler on an emulated rank-sharded hash-table runtime."""

__version__ = "0.1.0"
