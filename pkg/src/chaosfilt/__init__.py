"""Filtering the Lorenz '96 model with fixed and adaptive observation operators."""
from .model import (ModelParams, TangentPropagator, vector_field, bilinear_B, jacobian,
                    rk4_step, flow, propagate_tangent, spin_up)
from .observations import (ObservationOperator, NoiseModel, build_P, build_P36, build_P24,
                           build_identity, adaptive_H, complement, observe)
from .filters import (FilterConfig, FilterState, threedvar_step, exkf_step, aus_step,
                      sync_discrete_run, sync_continuous_run, continuous_3dvar_run)
from .lyapunov import LyapunovResult, lyapunov_spectrum

__version__ = "0.1.0"
