"""
Model parameter layout, initialisation and binding to tapes
"""

import zlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from src.attention.params import EncoderLayerParams, MsaParams
from src.hierarchy.errors import PlanError
from src.numerics.errors import ShapeError
from src.numerics.ops import slice_rows
from src.numerics.tape import Matrix, Tape

SPEECHFORMER = "speechformer"
BASELINE = "baseline"
MODEL_KINDS = (SPEECHFORMER, BASELINE)
MERGING_BLOCKS = 3
WORD_TOKENS = "word_tokens"


@dataclass(frozen=True)
class ModelShape:
    """Widths and depths that fix every parameter shape"""

    d: int
    heads: int
    classes: int
    layers: Tuple[int, int, int, int] = (2, 2, 4, 4)
    d_in: Optional[int] = None
    d_ff: Optional[int] = None
    d_cls: Optional[int] = None
    word_tokens: int = 1

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ShapeError(f"{self.heads} heads must divide width {self.d}")
        if self.classes < 2:
            raise ShapeError(f"need at least two classes, got {self.classes}")
        if len(self.layers) != 4 or min(self.layers) < 0:
            raise ShapeError(f"layers needs four counts >= 0, got {self.layers}")
        if self.word_tokens < 1:
            raise ShapeError(f"word token count must be >= 1, got {self.word_tokens}")
        for name in ("input_width", "ffn_width", "classifier_width"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")

    @property
    def input_width(self) -> int:
        return self.d if self.d_in is None else self.d_in

    @property
    def ffn_width(self) -> int:
        return self.d // 2 if self.d_ff is None else self.d_ff

    @property
    def classifier_width(self) -> int:
        return self.d // 2 if self.d_cls is None else self.d_cls

    @property
    def total_layers(self) -> int:
        return sum(self.layers)


def encoder_layer_shapes(prefix: str, d: int, d_ff: int) -> "OrderedDict[str, Tuple[int, int]]":
    shapes: "OrderedDict[str, Tuple[int, int]]" = OrderedDict()
    for name in ("w_q", "w_k", "w_v", "w_o"):
        shapes[f"{prefix}.attn.{name}"] = (d, d)
    shapes[f"{prefix}.ffn.w1"] = (d, d_ff)
    shapes[f"{prefix}.ffn.b1"] = (1, d_ff)
    shapes[f"{prefix}.ffn.w2"] = (d_ff, d)
    shapes[f"{prefix}.ffn.b2"] = (1, d)
    for norm in ("norm1", "norm2"):
        shapes[f"{prefix}.{norm}.gamma"] = (1, d)
        shapes[f"{prefix}.{norm}.beta"] = (1, d)
    return shapes


def merging_block_shapes(prefix: str, d: int) -> "OrderedDict[str, Tuple[int, int]]":
    shapes: "OrderedDict[str, Tuple[int, int]]" = OrderedDict()
    shapes[f"{prefix}.weight"] = (d, d)
    shapes[f"{prefix}.bias"] = (1, d)
    for norm in ("norm_x", "norm_z"):
        shapes[f"{prefix}.{norm}.gamma"] = (1, d)
        shapes[f"{prefix}.{norm}.beta"] = (1, d)
    return shapes


def param_shapes(shape: ModelShape, kind: str) -> "OrderedDict[str, Tuple[int, int]]":
    """Every parameter name of a model kind with its shape, in a fixed order"""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind '{kind}', must be one of {MODEL_KINDS}")
    d = shape.d
    shapes: "OrderedDict[str, Tuple[int, int]]" = OrderedDict()

    if shape.input_width != d:
        shapes["input.weight"] = (shape.input_width, d)
        shapes["input.bias"] = (1, d)

    for index in range(shape.total_layers):
        shapes.update(encoder_layer_shapes(f"layers.{index}", d, shape.ffn_width))

    if kind == SPEECHFORMER:
        for index in range(MERGING_BLOCKS):
            shapes.update(merging_block_shapes(f"merge.{index}", d))
        shapes[WORD_TOKENS] = (shape.word_tokens, d)

    shapes["classifier.w1"] = (d, shape.classifier_width)
    shapes["classifier.b1"] = (1, shape.classifier_width)
    shapes["classifier.w2"] = (shape.classifier_width, shape.classes)
    shapes["classifier.b2"] = (1, shape.classes)
    return shapes


def _rng(seed: int, name: str) -> np.random.Generator:
    # one stream per parameter name keeps shared weights identical across model kinds
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _initial_values(name: str, size: Tuple[int, int], seed: int) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(size)
    if leaf in ("beta", "bias", "b1", "b2"):
        return np.zeros(size)
    bound = 1.0 / np.sqrt(size[0])
    return _rng(seed, name).uniform(-bound, bound, size=size)


def init_word_tokens(T_z: int, d: int, seed: int) -> Matrix:
    """Word-token table drawn uniformly from +-1/sqrt(d)"""
    if T_z < 1:
        raise PlanError(f"word token count must be >= 1, got {T_z}")
    bound = 1.0 / np.sqrt(d)
    return Matrix(_rng(seed, WORD_TOKENS).uniform(-bound, bound, size=(T_z, d)))


@dataclass
class ClassifierParams:
    w1: Matrix
    b1: Matrix
    w2: Matrix
    b2: Matrix


@dataclass
class MergingParams:
    """Affine map shared by the token and word-token paths, with one norm per path"""

    weight: Matrix
    bias: Matrix
    norm_x_gamma: Matrix
    norm_x_beta: Matrix
    norm_z_gamma: Matrix
    norm_z_beta: Matrix


class ModelParams:
    """Named parameter arrays of one model"""

    def __init__(self, arrays: Mapping[str, np.ndarray], heads: int):
        self.arrays: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.asarray(values, dtype=np.float64)) for name, values in arrays.items()
        )
        self.heads = heads

    @classmethod
    def initialize(cls, shape: ModelShape, kind: str = SPEECHFORMER, seed: int = 0) -> "ModelParams":
        """Fresh parameters; the same seed gives the same value to a name in either model kind"""
        arrays: Dict[str, np.ndarray] = OrderedDict()
        for name, size in param_shapes(shape, kind).items():
            if name == WORD_TOKENS:
                arrays[name] = init_word_tokens(size[0], size[1], seed).data
            else:
                arrays[name] = _initial_values(name, size, seed)
        return cls(arrays, heads=shape.heads)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: object) -> bool:
        return name in self.arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    @property
    def size(self) -> int:
        return int(sum(values.size for values in self.arrays.values()))

    @property
    def word_token_capacity(self) -> int:
        return self.arrays[WORD_TOKENS].shape[0] if WORD_TOKENS in self.arrays else 0

    def copy(self) -> "ModelParams":
        return ModelParams({name: values.copy() for name, values in self.arrays.items()}, self.heads)

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        """New parameter set with some arrays swapped out"""
        arrays = OrderedDict(self.arrays)
        for name, values in updates.items():
            if name not in arrays:
                raise KeyError(f"unknown parameter '{name}'")
            if np.shape(values) != arrays[name].shape:
                raise ShapeError(f"{name}: shape {np.shape(values)} does not match {arrays[name].shape}")
            arrays[name] = values
        return ModelParams(arrays, self.heads)

    def bind(self, tape: Optional[Tape] = None) -> "BoundParams":
        return BoundParams(self, tape)

    def __str__(self) -> str:
        return f"ModelParams({len(self)} arrays, {self.size} values, {self.heads} heads)"


class BoundParams:
    """Parameters exposed as matrices, registered on a tape when one is given"""

    def __init__(self, params: ModelParams, tape: Optional[Tape] = None):
        self.params = params
        self.tape = tape
        self._cache: Dict[str, Matrix] = {}

    def matrix(self, name: str) -> Matrix:
        if name not in self._cache:
            values = self.params[name]
            self._cache[name] = Matrix(values) if self.tape is None else self.tape.parameter(name, values)
        return self._cache[name]

    def has(self, name: str) -> bool:
        return name in self.params

    def encoder_layer(self, index: int) -> EncoderLayerParams:
        prefix = f"layers.{index}"
        if f"{prefix}.attn.w_q" not in self.params:
            raise PlanError(f"model has no encoder layer {index}")

        def get(suffix: str) -> Matrix:
            return self.matrix(f"{prefix}.{suffix}")

        return EncoderLayerParams(
            msa=MsaParams(
                w_q=get("attn.w_q"),
                w_k=get("attn.w_k"),
                w_v=get("attn.w_v"),
                w_o=get("attn.w_o"),
                heads=self.params.heads,
            ),
            ffn_w1=get("ffn.w1"),
            ffn_b1=get("ffn.b1"),
            ffn_w2=get("ffn.w2"),
            ffn_b2=get("ffn.b2"),
            norm1_gamma=get("norm1.gamma"),
            norm1_beta=get("norm1.beta"),
            norm2_gamma=get("norm2.gamma"),
            norm2_beta=get("norm2.beta"),
        )

    def merging_block(self, index: int) -> MergingParams:
        prefix = f"merge.{index}"
        if f"{prefix}.weight" not in self.params:
            raise PlanError(f"model has no merging block {index}")
        return MergingParams(
            weight=self.matrix(f"{prefix}.weight"),
            bias=self.matrix(f"{prefix}.bias"),
            norm_x_gamma=self.matrix(f"{prefix}.norm_x.gamma"),
            norm_x_beta=self.matrix(f"{prefix}.norm_x.beta"),
            norm_z_gamma=self.matrix(f"{prefix}.norm_z.gamma"),
            norm_z_beta=self.matrix(f"{prefix}.norm_z.beta"),
        )

    def word_tokens(self, count: int) -> Matrix:
        """The first `count` rows of the word-token table"""
        capacity = self.params.word_token_capacity
        if not 1 <= count <= capacity:
            raise PlanError(f"{count} word tokens requested, the model holds {capacity}")
        table = self.matrix(WORD_TOKENS)
        return table if count == capacity else slice_rows(table, 0, count)

    def input_projection(self) -> Optional[Tuple[Matrix, Matrix]]:
        if not self.has("input.weight"):
            return None
        return self.matrix("input.weight"), self.matrix("input.bias")

    def classifier(self) -> ClassifierParams:
        return ClassifierParams(
            w1=self.matrix("classifier.w1"),
            b1=self.matrix("classifier.b1"),
            w2=self.matrix("classifier.w2"),
            b2=self.matrix("classifier.b2"),
        )
