"""Privacy-preserving laboratory QC over oblivious fixed-point integer circuits."""

from .codec import DEFAULT_CONFIG, EncodedValue, FixedPointConfig, decode, encode, encode_batch
from .rules import RuleSpec, RuleVerdict, plan, rule1_eval, rule2_eval, rule3_eval, rule3_eval_parallel

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CONFIG", "EncodedValue", "FixedPointConfig", "RuleSpec", "RuleVerdict", "decode",
    "encode", "encode_batch", "plan", "rule1_eval", "rule2_eval", "rule3_eval",
    "rule3_eval_parallel",
]
