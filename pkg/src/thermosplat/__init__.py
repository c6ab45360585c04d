"""thermosplat: multi-modal (RGB + thermal) 3D Gaussian splatting on the CPU.

A shared Gaussian cloud renders color, temperature and depth through two
alpha-blending passes with separate opacities. The thermal branch is
view-invariant: an orthogonal split of the appearance embedding removes the
SH-aligned (view-dependent) component, and a heat-conduction transform over a
K-NN graph refines thermal features before rendering. Training adds a
physics-based structural loss built from the Stefan-Boltzmann and
inverse-square laws on top of the usual photometric terms.
"""

from .autodiff import (FiniteDifferenceReport, ParamSet, Tensor,
                       finite_difference_check, grad, tensor)
from .gaussians import (Gaussian, GaussianCloud, covariance_from_rs,
                        gaussian_density, random_cloud, validate_cloud)
from .appearance import (eval_sh, orthogonal_extract, positional_encoding,
                         color_head, thermal_feature, thermal_head)
from .heat import NeighborGraph, build_knn, feature_gradient, heat_flux, refine_features
from .radiation import (RadiationConfig, boltz_loss, depth_uncertainty,
                        radiation_map, radiation_raw, s_ssim)
from .losses import (LossBreakdown, LossWeights, metrics, modality_loss,
                     smoothness_loss, ssim, total_loss)
from .rasterize import (ProjectedGaussians, RenderOutput, View, alpha_blend,
                        compute_alpha, project_gaussians)
from .pipeline import LossConfig, ModelConfig, compute_losses, render_arrays, render_view
from .scenes import SceneSpec, CameraRig, generate_scene, load_dataset, save_dataset
from .trainer import TrainConfig, TrainResult, evaluate, lambda_boltz_at, train

__version__ = "0.1.0"
