"""Discriminative segmentor plus Bernoulli diffusion refiner, on a numpy-only stack.

Submodules: ``schedule`` and ``kernel`` (noise schedule, forward process,
posterior, samplers), ``autodiff`` and ``optim`` (tape autodiff, AdamW),
``losses``, ``bitops`` (bit-packed XNOR GEMM and cost accounting),
``models``, ``pipeline`` (training and inference), ``evalio`` (metrics,
file formats, synthetic data), ``experiment`` and ``cli``.
"""

__version__ = "0.1.0"
