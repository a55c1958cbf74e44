"""cadseq: parametric CAD command-sequence modeling at desk scale.

Encode command sequences into a compact latent block with a forget-gate
SSM encoder and Transformer decoder, learn the latent distribution with
a multi-scale windowed-attention diffusion model, and evaluate
reconstructions and generations with Chamfer/coverage/JSD-style metrics.
"""

__version__ = "0.1.0"
