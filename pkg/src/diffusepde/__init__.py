"""Measure-valued generalized solutions of fully nonlinear PDE systems.

Numerical machinery for diffuse (measure-valued) derivatives of merely
measurable maps, verifiable solution criteria built on them, and an
existence pipeline for degenerate elliptic second-order systems via
regularized linear solves and a nearness fixed-point iteration.
"""

__version__ = "0.1.0"
