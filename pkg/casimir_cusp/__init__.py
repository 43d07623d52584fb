"""
Casimir Cusp
Lorenz flow -> Casimir-maxima section -> cusp interval map -> invariant density and stability
"""

__version__ = "1.0.0"
