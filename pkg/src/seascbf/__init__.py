"""State-estimation-aware stochastic control barrier functions.

Safety filters for linear-Gaussian systems and for rigid bodies on
SE(2)/SE(3) whose state is only known through a Kalman filter, plus
finite-time exit-probability certificates and Monte Carlo tooling.
"""
from . import barriers, certificates, estimation, filters, lie, sim

__all__ = ["barriers", "certificates", "estimation", "filters", "lie", "sim"]
__version__ = "0.1.0"
