"""Wavelet-regularized SENSE reconstruction of 3D and 3D+t multi-coil MRI data."""
from .core import CoilDataset, NoiseCovariance, SenseGeometry, hermitian_solve, nmse, psnr, pseudo_inverse_solve
from .hyperparams import HyperParams, estimate_all, fit_gg_temporal, fit_ggl, powell_minimize
from .ppxa import SolverConfig, eval_criterion, solve_3d, solve_4d
from .prox import GGLParams, TemporalParams, prox_data_fidelity, prox_ggl, prox_lp_scalar, prox_temporal_pair
from .sense import EncodingOperator, estimate_noise_cov, estimate_sensitivities, fold, sense_wls, sos
from .wavelet3d import CoeffField, WaveletSpec, forward, inverse

__version__ = "0.1.0"
