"""Instance-wise LoRA for sequential recommendation at desk scale.

Everything runs on float64 numpy with a small tape-based autodiff. The
subpackages are ``core`` (autodiff, optimizer, checkpoints), ``lm`` (toy
language model and adapted training) and ``analysis`` (evaluation, clustering,
gradient heatmaps, exports).
"""
__version__ = "0.1.0"
