"""
Rooted weighted networks: specs, generators, the phi-product lattice and
finite regions.

Import submodules directly (``networks.generators``, ``networks.region``).
"""
