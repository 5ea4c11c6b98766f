"""Simulation, path-property audits and minimum-action rate estimates for
SDEs with logarithmic super-linear coefficients."""

__version__ = "0.1.0"
