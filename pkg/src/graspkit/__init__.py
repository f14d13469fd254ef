"""Diffusion-based 6-DOF grasp generation, scoring, analytic labeling and
evaluation on desk-scale primitive objects."""

__version__ = "0.1.0"
