"""Tensor-product-representation captioning toolkit.

Exact TPR binding with Hadamard roles, a TPR filler generator, six
tag-decomposed SCN-LSTM variants, teacher-forced and self-critical training,
and BLEU / ROUGE-L / CIDEr-D scoring, all on a small numpy autodiff core.
"""

__version__ = "0.1.0"
