"""vrckit: probabilistic dual-path point cloud completion at desk scale.

Library layout:
  autodiff  -- reverse-mode differentiation engine (float64, tape-based)
  optim     -- parameter registry, Adam, learning-rate schedule
  geometry  -- KNN, farthest point sampling, Poisson disk sampling, normalize
  shapes    -- synthetic analytic-surface shape corpus
  views     -- 26-pose cameras, partial-view rendering, dataset assembly
  metrics   -- Chamfer distance, F-score, Gaussian KL, accuracy metrics
  kernels   -- relational point kernels (self-attention, selective fusion,
               edge-preserved pool/unpool, feature expansion)
  pmnet     -- dual-path probabilistic coarse completion network
  renet     -- relational refinement network and full completion pipeline
  training  -- joint loss, training loop, evaluation harness
  classifier-- reduced point classifier and completion-vs-partial benchmark
  io        -- PLY files, dataset manifests, parameter checkpoints
  cli       -- vrckit command-line entry point
"""

__version__ = "0.1.0"
