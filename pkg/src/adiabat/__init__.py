"""Adiabatic transition amplitudes for driven two-level systems.

Computes the exponentially small probability of a level transition under
slow driving along two independent routes: direct numerical integration of
the amplitude evolution equations, and asymptotic formulas built from the
Stokes geometry of the associated effective potential in the complex time
plane.  The two routes cross-validate each other; the command line tool
``adiabat`` exposes both.
"""

from __future__ import annotations

__version__ = "0.1.0"
