"""flatscan: multiscale flatness coefficients and corona-type decompositions
for discrete measures."""

from __future__ import annotations

__version__ = "0.1.0"

from flatscan.measure import (  # noqa: F401
    AffinePlane,
    Ball,
    DiscreteMeasure,
    PlaneQuadrature,
    ball_mass,
    density,
    f_b_distance,
    flat_quadrature,
    plane_angle,
    read_csv,
    read_json,
    read_measure,
)
