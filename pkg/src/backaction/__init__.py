"""Measurement backaction on ultracold bosons in an optical lattice.

Fixed-N Fock spaces, light-matter coupling operators, quantum-trajectory and
master-equation dynamics, and the emergent subspaces that the combined
measurement and tunnelling dynamics selects.
"""

__version__ = "0.1.0"
