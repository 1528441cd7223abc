"""hirivit: five-stage hybrid CNN/ViT backbones on a NumPy autograd engine.

Subpackages:
  engine    -- Tensor, reverse-mode autodiff, numeric kernels
  train     -- Cutmix/Mixup, EMA-teacher distillation, AdamW, training loop
Modules:
  blocks    -- stem / HR / downsampling / feed-forward / attention blocks
  zoo       -- declarative builders for the S/B/L variants and baselines
  analyzer  -- static parameter and FLOP accounting
  params    -- named parameter trees and binary checkpoints
  config    -- model-config text format
  cli       -- command-line harness
"""

__version__ = "0.1.0"
