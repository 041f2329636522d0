"""dit4d: a desk-scale factorized 4D diffusion transformer stack.

Layers of the package, bottom up:

  tensor        float64 arrays + reverse-mode autodiff (the only backend)
  nn            parameters, layers, Adam, checkpoints, gradient checking
  geometry      cameras, orbits, skinned biped, linear blend skinning
  render        z-buffered rasterizer: RGB frames and normal maps
  conditioning  camera/time/step embeddings, pose and identity encoders
  model         spatial/view/temporal attention blocks and the denoiser
  diffusion     DDPM schedule, forward noising, posterior step, slice plans
  sampler       two-strategy windowed sampling over long sequences
  data          synthetic multi-modality dataset store
  training      modality-gated two-phase training loop
  metrics       PSNR / SSIM
  verify        oracle suites behind `dit4d verify`
"""

from .tensor import (ContractError, ShapeError, Tensor, backward, conv2d, gelu,
                     layer_norm, linear, matmul, no_grad, rearrange, reshape,
                     softmax_lastaxis, transpose)
from .diffusion import (DiffusionSchedule, SlicePlan, ddpm_step, make_schedule,
                        plan_slices, q_sample)
from .model import Block4DConfig, Denoiser, DenoiserConfig, WindowCond
from .sampler import GenerationSpec, generate, preset_plan, st_sample

__version__ = "0.1.0"
