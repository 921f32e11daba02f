"""Speech-driven emotional 3D facial animation, desk scale.

Submodules:
  data      - core types, synthetic factorized dataset, smoothing, alignment
  encoders  - content/emotion audio feature extractors
  decoder   - emotion-guided feature fusion decoder (52 blendshape channels)
  losses    - cross/self reconstruction, velocity, classification objectives
  training  - training harness, inference, evaluation, checkpoints
  rig       - blendshape-to-mesh transform and vertex-error metrics
  cli       - operator command surface
"""

__version__ = "0.1.0"
