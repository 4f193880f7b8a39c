"""
Parameter views consumed by the attention layers
"""

from dataclasses import dataclass

from src.numerics.errors import ShapeError
from src.numerics.tape import Matrix


@dataclass
class MsaParams:
    """Multi-head attention projections; heads are concatenated column blocks of each d x d matrix"""

    w_q: Matrix
    w_k: Matrix
    w_v: Matrix
    w_o: Matrix
    heads: int

    def __post_init__(self):
        d = self.w_q.rows
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        if self.heads < 1 or d % self.heads:
            raise ShapeError(f"{self.heads} heads do not divide width {d}")

    @property
    def d(self) -> int:
        return self.w_q.rows

    @property
    def head_dim(self) -> int:
        return self.d // self.heads


@dataclass
class EncoderLayerParams:
    """Attention, feed-forward and the two norms of one encoder layer"""

    msa: MsaParams
    ffn_w1: Matrix
    ffn_b1: Matrix
    ffn_w2: Matrix
    ffn_b2: Matrix
    norm1_gamma: Matrix
    norm1_beta: Matrix
    norm2_gamma: Matrix
    norm2_beta: Matrix

    def __post_init__(self):
        d = self.msa.d
        if self.ffn_w1.rows != d or self.ffn_w2.cols != d:
            raise ShapeError(f"feed-forward maps must read and write width {d}")
        if self.ffn_w1.cols != self.ffn_w2.rows:
            raise ShapeError("feed-forward hidden widths disagree")

    @property
    def d(self) -> int:
        return self.msa.d

    @property
    def d_ff(self) -> int:
        return self.ffn_w1.cols
