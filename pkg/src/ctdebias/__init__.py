"""Plug-in identification of continuous-time nonlinear autoregressions.

Local-polynomial differentiation filters feed three estimators: least
squares, bias-corrected least squares and a staggered-filter instrumental
variables method.
"""

__version__ = "0.1.0"
