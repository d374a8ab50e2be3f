"""Unrolled gradient-descent video super-resolution toolkit.

Subpackages:

- ``operators``: differentiable blur / decimation / warping building blocks
- ``degradation``: HR-to-LR data synthesis and blur-kernel PCA encoding
- ``unrolled``: the iterative reconstruction core (single-image and video)
- ``networks``: the learned prior and optical-flow networks
- ``training``: loss, data pipeline and the optimization loop
- ``evaluation``: luma PSNR / SSIM protocol, runtime benchmark
- ``synthetic``: procedural test sequences with known ground-truth motion
- ``dataio``: PNG sequence and checkpoint I/O
- ``cli``: the ``unrollsr`` command-line entry point
"""

__version__ = "0.1.0"
