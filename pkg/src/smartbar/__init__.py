"""EAN-13 barcode decoding with checksum-constrained candidate search.

Modules: :mod:`symbology` (codec), :mod:`imaging` and :mod:`datasets`
(synthetic degraded corpora), :mod:`soft_decoder` (classical logit source),
:mod:`inference` (greedy / MPA / augmentation / voting), :mod:`tinynet`
(trainable multidigit classifier with distillation) and :mod:`evaluation`.
"""

from .inference import SIConfig, SIResult, greedy_decode, mpa, mpa_aug, mpa_aug_vote
from .soft_decoder import SoftDecoder, decode_soft
from .symbology import compute_check_digit, decode_exact, encode, validate_checksum

__all__ = [
    "SIConfig", "SIResult", "greedy_decode", "mpa", "mpa_aug", "mpa_aug_vote",
    "SoftDecoder", "decode_soft",
    "compute_check_digit", "decode_exact", "encode", "validate_checksum",
]
__version__ = "0.1.0"
