"""MRI reconstruction: SENSE model, CG-based inverse, VarNet and MoDL."""

from .cg import InverseNlop, SolverError, cg, cg_normal_solve, make_inverse_nlop
from .modl import ModlConfig, build_modl, cg_sense, data_consistency_operator, denoiser, modl_step
from .normalize import normalize, normalize_kspace
from .rbf import RBF, rbf_activation, rbf_centers
from .sense import (BATCH, adjoint_recon, build_sense, check_binary, estimate_pattern, image_shape, kspace_shape,
                    pattern_shape, sense_adjoint, sense_forward, sense_normal)
from .varnet import VarNetConfig, build_varnet, map0, param_count, varnet_step
