"""
Exact parameter counting
"""

from dataclasses import dataclass
from typing import Union

from src.hierarchy.params import WORD_TOKENS, ModelParams, ModelShape, param_shapes


@dataclass(frozen=True)
class ParamCount:
    """Parameter totals; the word-token table is kept apart from the network weights"""

    network: int
    word_tokens: int = 0

    @property
    def total(self) -> int:
        return self.network + self.word_tokens


@dataclass(frozen=True)
class ParamOverhead:
    """Extra parameters of SpeechFormer++ over the baseline"""

    baseline: int
    speechformer: int

    @property
    def difference(self) -> int:
        return self.speechformer - self.baseline

    @property
    def percent(self) -> float:
        return 100.0 * self.difference / self.baseline

    def percent_of(self, reference: int) -> float:
        """Overhead relative to an externally reported baseline size"""
        return 100.0 * self.difference / reference


def merging_block_params(d: int) -> int:
    """Shared affine map plus the two norms of one merging block"""
    return d * d + d + 2 * (2 * d)


def encoder_layer_params(d: int, d_ff: int) -> int:
    return 4 * d * d + (d * d_ff + d_ff) + (d_ff * d + d) + 2 * (2 * d)


def count_params(params: ModelParams) -> ParamCount:
    word_tokens = params[WORD_TOKENS].size if WORD_TOKENS in params else 0
    return ParamCount(network=params.size - word_tokens, word_tokens=word_tokens)


def count_params_for(shape: ModelShape, kind: str) -> ParamCount:
    """Count from the layout alone, without allocating weights"""
    network = 0
    word_tokens = 0
    for name, (rows, cols) in param_shapes(shape, kind).items():
        if name == WORD_TOKENS:
            word_tokens = rows * cols
        else:
            network += rows * cols
    return ParamCount(network=network, word_tokens=word_tokens)


def param_overhead(baseline: Union[ParamCount, ModelParams], speechformer: Union[ParamCount, ModelParams]) -> ParamOverhead:
    """Network-weight difference between the two kinds"""
    if isinstance(baseline, ModelParams):
        baseline = count_params(baseline)
    if isinstance(speechformer, ModelParams):
        speechformer = count_params(speechformer)
    return ParamOverhead(baseline=baseline.network, speechformer=speechformer.network)
