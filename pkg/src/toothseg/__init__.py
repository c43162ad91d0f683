"""Degradation-robust 2D tooth segmentation laboratory.

Subpackages and modules:

- `degrade`: the four stochastic degradation operators
- `losses`: SSIM, structural constraint loss, Dice/BCE, metric suite
- `model`: dual-branch fusion U-Net with channel-wise cross fusion skips
- `data`: synthetic dental phantom dataset generator and augmentations
- `trainer`: training loop, evaluation, ablations, checkpoints
- `recon`: slice stacking and marching-cubes mesh reconstruction
- `cli`: command-line entry point tying it all together
"""

__version__ = "0.1.0"
