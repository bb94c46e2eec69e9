"""Multi-camera drone trajectory reconstruction with a flight-dynamics prior."""
from .association import ObservationTable, TriangulationConfig, initialize_trajectory, ransac_triangulate
from .dynamics import (
    ControlSequence,
    InitialState,
    LatentSequence,
    QuadParams,
    Trajectory,
    latent_to_trajectory,
    trajectory_to_latent,
)
from .evaluation import control_metrics, run_method_suite, trajectory_metrics
from .losses import RobustLoss
from .priors import Dynamics, GaussianSmooth, KalmanCA, NoPrior, SplineSmooth
from .scene import Camera, Intrinsics, align_similarity
from .simulator import NoiseConfig, PerturbConfig, SimConfig, simulate
from .solver import SolverConfig, optimize

__version__ = "0.1.0"
