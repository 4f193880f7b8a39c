"""
Four-stage SpeechFormer++ model and the Transformer baseline
"""

import itertools
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.attention.encoders import (
    project_keys_values,
    transformer_encoder_step,
    unit_encoder_step,
    word_encoder_step,
)
from src.attention.params import EncoderLayerParams
from src.attention.record import AttentionRecord
from src.hierarchy.errors import PlanError
from src.hierarchy.merging import merging_block, pool_validity
from src.hierarchy.params import (
    BASELINE,
    SPEECHFORMER,
    BoundParams,
    ClassifierParams,
    ModelParams,
    ModelShape,
)
from src.hierarchy.planner import STAGE_NAMES, StagePlan
from src.models.feature_sequence import FeatureSequence
from src.numerics.counter import section
from src.numerics.ops import add_bias, concat_rows, matmul, mean_rows, relu
from src.numerics.tape import Matrix, Tape

Planner = Callable[[int, float], StagePlan]


@dataclass(frozen=True)
class Ablations:
    """Switches for the three SpeechFormer++ components"""

    unit_encoder: bool = True
    word_encoder: bool = True
    merging: bool = True

    @property
    def word_tokens_active(self) -> bool:
        # the word encoder only exists alongside the unit encoder
        return self.unit_encoder and self.word_encoder

    @property
    def label(self) -> str:
        flags = (("unit", self.unit_encoder), ("word", self.word_encoder), ("merge", self.merging))
        return " ".join(f"{name}={'on' if enabled else 'off'}" for name, enabled in flags)

    @classmethod
    def combinations(cls) -> List["Ablations"]:
        return [cls(*flags) for flags in itertools.product((True, False), repeat=3)]


@dataclass
class ForwardResult:
    """Logits of one sequence and, when requested, one attention record per layer"""

    logits: Matrix
    records: List[AttentionRecord] = field(default_factory=list)

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.logits.data[0]))

    @property
    def probabilities(self) -> np.ndarray:
        shifted = self.logits.data[0] - self.logits.data[0].max()
        exps = np.exp(shifted)
        return exps / exps.sum()


def classifier_head(pooled: Matrix, classifier: ClassifierParams) -> Matrix:
    with section("classifier"):
        hidden = relu(add_bias(matmul(pooled, classifier.w1), classifier.b1))
        return add_bias(matmul(hidden, classifier.w2), classifier.b2)


def _prefix_validity(frames: int, valid: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if valid is None:
        return None
    flags = np.asarray(valid, dtype=bool)
    if flags.shape != (frames,):
        raise PlanError(f"validity mask of length {flags.shape} does not match {frames} frames")
    count = int(flags.sum())
    if count == 0:
        raise PlanError("sequence has no valid frames")
    if not flags[:count].all():
        raise PlanError("valid frames must form a prefix of the sequence")
    return None if count == frames else flags


def _input_tokens(features: FeatureSequence, bound: BoundParams) -> Matrix:
    x = Matrix(features.values)
    projection = bound.input_projection()
    if projection is None:
        return x
    weight, bias = projection
    return add_bias(matmul(x, weight), bias)


def speechformer_block(
    x: Matrix,
    z: Optional[Matrix],
    layer: EncoderLayerParams,
    t_w: int,
    word_tokens_enabled: bool,
    valid: Optional[np.ndarray] = None,
) -> Tuple[Matrix, Optional[Matrix], AttentionRecord]:
    """Word encoder then unit encoder, sharing one key/value projection of x"""
    kv = project_keys_values(x, layer.msa)
    z_bar = None
    if word_tokens_enabled:
        valid_length = None if valid is None else int(np.sum(valid))
        z_bar = word_encoder_step(z, x, layer.msa, valid_length, kv)
    x_bar, record = unit_encoder_step(x, z_bar, layer, t_w, word_tokens_enabled, valid, kv)
    return x_bar, z_bar, record


def speechformer_forward(
    features: FeatureSequence,
    params: ModelParams,
    plan: StagePlan,
    ablations: Ablations = Ablations(),
    record_attention: bool = False,
    valid: Optional[np.ndarray] = None,
    tape: Optional[Tape] = None,
) -> ForwardResult:
    """
    Run the frame, phone, word and utterance stages

    Args:
        features: Input sequence, T_1 frames
        params: Model parameters
        plan: Stage plan derived for T_1 frames
        ablations: Components to switch off
        record_attention: Keep one attention record per encoder layer
        valid: Prefix mask of real frames for padded sequences
        tape: Tape to record on for training and gradient checks

    Returns:
        Logits (1 x C) and optional attention records

    Raises:
        PlanError: If plan, parameters and features disagree
    """
    if features.frames != plan.lengths[0]:
        raise PlanError(f"plan expects {plan.lengths[0]} frames, features have {features.frames}")
    if plan.merging != ablations.merging:
        raise PlanError("plan was derived with a different merging setting than the ablations ask for")
    if plan.total_layers > 0 and f"layers.{plan.total_layers - 1}.attn.w_q" not in params:
        raise PlanError(f"plan needs {plan.total_layers} encoder layers")

    valid = _prefix_validity(features.frames, valid)
    valid_frames = features.frames if valid is None else int(valid.sum())
    bound = params.bind(tape)
    use_words = ablations.word_tokens_active

    x = _input_tokens(features, bound)
    z = bound.word_tokens(plan.word_tokens_for(valid_frames)) if use_words else None
    records: List[AttentionRecord] = []
    layer_index = 0

    for stage in range(3):
        for _ in range(plan.layers[stage]):
            layer = bound.encoder_layer(layer_index)
            if ablations.unit_encoder:
                x, z, record = speechformer_block(x, z, layer, plan.windows[stage], use_words, valid)
            else:
                x, record = transformer_encoder_step(x, layer, valid)
            record.layer = f"{STAGE_NAMES[stage]}.{layer_index}"
            records.append(record)
            layer_index += 1

        if ablations.merging:
            x, z = merging_block(x, z, plan.merges[stage], bound.merging_block(stage), valid)
            valid = pool_validity(valid, plan.merges[stage])

    # utterance stage over the merged tokens and the word tokens together
    tokens = x if z is None else concat_rows([x, z])
    token_valid = valid
    if valid is not None and z is not None:
        token_valid = np.concatenate([valid, np.ones(z.rows, dtype=bool)])

    for _ in range(plan.layers[3]):
        tokens, record = transformer_encoder_step(tokens, bound.encoder_layer(layer_index), token_valid)
        record.layer = f"{STAGE_NAMES[3]}.{layer_index}"
        records.append(record)
        layer_index += 1

    logits = classifier_head(mean_rows(tokens, token_valid), bound.classifier())
    return ForwardResult(logits=logits, records=records if record_attention else [])


def baseline_transformer_forward(
    features: FeatureSequence,
    params: ModelParams,
    num_layers: int,
    valid: Optional[np.ndarray] = None,
    tape: Optional[Tape] = None,
    record_attention: bool = False,
) -> ForwardResult:
    """Stack of standard encoder layers over the full sequence, mean pooling, classifier"""
    if num_layers < 0:
        raise PlanError(f"layer count must be >= 0, got {num_layers}")
    valid = _prefix_validity(features.frames, valid)
    bound = params.bind(tape)

    x = _input_tokens(features, bound)
    records: List[AttentionRecord] = []
    for index in range(num_layers):
        x, record = transformer_encoder_step(x, bound.encoder_layer(index), valid)
        record.layer = f"layers.{index}"
        records.append(record)

    logits = classifier_head(mean_rows(x, valid), bound.classifier())
    return ForwardResult(logits=logits, records=records if record_attention else [])


class SpeechFormerModel:
    """Parameters, stage plan and ablations bundled behind one forward()"""

    kind = SPEECHFORMER

    def __init__(
        self,
        params: ModelParams,
        plan: StagePlan,
        ablations: Ablations = Ablations(),
        planner: Optional[Planner] = None,
    ):
        self.params = params
        self.plan = plan
        self.ablations = ablations
        self.planner = planner
        self._plans: Dict[Tuple[int, float], StagePlan] = {}
        self._plans_lock = threading.Lock()

    @classmethod
    def create(
        cls,
        shape: ModelShape,
        plan: StagePlan,
        ablations: Ablations = Ablations(),
        seed: int = 0,
        planner: Optional[Planner] = None,
    ) -> "SpeechFormerModel":
        return cls(ModelParams.initialize(shape, SPEECHFORMER, seed), plan, ablations, planner)

    def with_params(self, params: ModelParams) -> "SpeechFormerModel":
        """Same plan and ablations, different parameters"""
        model = SpeechFormerModel(params, self.plan, self.ablations, self.planner)
        model._plans = self._plans
        model._plans_lock = self._plans_lock
        return model

    def plan_for(self, features: FeatureSequence) -> StagePlan:
        """The model plan, or one derived for sequences of a different length or hop"""
        if features.frames == self.plan.lengths[0] and features.hop_ms == self.plan.hop_ms:
            return self.plan
        if self.planner is None:
            raise PlanError(
                f"plan expects {self.plan.lengths[0]} frames at {self.plan.hop_ms} ms, "
                f"got {features.frames} at {features.hop_ms} ms"
            )
        key = (features.frames, features.hop_ms)
        with self._plans_lock:
            if key not in self._plans:
                self._plans[key] = self._fit_word_tokens(self.planner(features.frames, features.hop_ms))
            return self._plans[key]

    def _fit_word_tokens(self, plan: StagePlan) -> StagePlan:
        # longer inputs may ask for more word tokens than the table holds
        capacity = self.params.word_token_capacity
        if 0 < capacity < plan.word_tokens:
            return replace(plan, word_tokens=capacity)
        return plan

    def forward(
        self,
        features: FeatureSequence,
        valid: Optional[np.ndarray] = None,
        tape: Optional[Tape] = None,
        record_attention: bool = False,
    ) -> ForwardResult:
        return speechformer_forward(
            features,
            self.params,
            self.plan_for(features),
            self.ablations,
            record_attention=record_attention,
            valid=valid,
            tape=tape,
        )


class BaselineModel:
    """Standard Transformer classifier"""

    kind = BASELINE

    def __init__(self, params: ModelParams, num_layers: int):
        self.params = params
        self.num_layers = num_layers

    @classmethod
    def create(cls, shape: ModelShape, seed: int = 0) -> "BaselineModel":
        return cls(ModelParams.initialize(shape, BASELINE, seed), shape.total_layers)

    def with_params(self, params: ModelParams) -> "BaselineModel":
        return BaselineModel(params, self.num_layers)

    def forward(
        self,
        features: FeatureSequence,
        valid: Optional[np.ndarray] = None,
        tape: Optional[Tape] = None,
        record_attention: bool = False,
    ) -> ForwardResult:
        return baseline_transformer_forward(
            features, self.params, self.num_layers, valid=valid, tape=tape, record_attention=record_attention
        )
