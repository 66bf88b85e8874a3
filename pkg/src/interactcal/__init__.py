"""Parameter identification for interacting agent models (traffic and crowds)
with neural-network or classical interaction forces, exact discrete adjoint
gradients and noisy ADADELTA descent."""

from .adjoint import cost_and_gradient, fd_gradient, tracking_cost
from .calibration import run_calibration
from .dynamics import LwrTraffic, NNCrowd, NNTraffic, Scene, SimConfig, SocialForceCrowd, Trajectory, make_family
from .forces import SF_OPTIMUM, LwrParams, SocialForceParams, WallGeometry
from .optim import AdadeltaState, AdmissibleSet, NoiseSchedule, adadelta_step, project

__version__ = "0.1.0"

__all__ = [
    "AdadeltaState", "AdmissibleSet", "LwrParams", "LwrTraffic", "NNCrowd", "NNTraffic", "NoiseSchedule",
    "SF_OPTIMUM", "Scene", "SimConfig", "SocialForceCrowd", "SocialForceParams", "Trajectory", "WallGeometry",
    "adadelta_step", "cost_and_gradient", "fd_gradient", "make_family", "project", "run_calibration",
    "tracking_cost",
]
