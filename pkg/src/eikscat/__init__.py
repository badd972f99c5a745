"""Maximal eikonal solutions for long-range potentials and their scattering diagnostics.

Modules
-------
potential   potential models, decay classes, conformal metric
pathspace   discretized path space and the energy functional
geodesic    Newton minimization of the energy (geodesic solves)
eikonal     the eikonal field S, its derivatives and decay profiles
flow        the eikonal flow, its surface measure and the direction map
scattering  2-D resolvent, radiation observables, far-field transforms
acceptance  acceptance checks as callable criteria
cli         command-line driver
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .potential import (ConformalMetric, PotentialModel, anisotropic_model, chi_plus,  # noqa: F401
                        load_model, make_conformal_metric, model_from_spec, oscillatory_power,
                        radial_power, three_body_cutoff_potential, three_body_exponents,
                        zero_potential)
from .geodesic import GeodesicResult, minimize_energy  # noqa: F401
from .eikonal import EikonalField, ExponentSchedule, RadialOracle, RegularizedField  # noqa: F401
from .flow import FlowBundle, FlowTrajectory, SphereMap, build_sphere_map, integrate_flows  # noqa: F401
