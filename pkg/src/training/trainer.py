"""
Minibatch training loop with cosine-annealed SGD
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from src.hierarchy.model import ForwardResult
from src.hierarchy.params import ModelParams
from src.models.feature_sequence import FeatureSequence, pad_or_truncate
from src.numerics.ops import concat_rows, masked_softmax
from src.numerics.tape import Matrix, Tape, backward
from src.training.loss import LossInputError, cross_entropy, one_hot
from src.training.metrics import Confusion, Metrics, metrics
from src.training.optim import SGDMomentum, cosine_lr
from src.utils.logger import logger

METRIC_NAMES = ("WA", "UA", "WF1", "MF1")


class Classifier(Protocol):
    params: ModelParams

    def forward(
        self,
        features: FeatureSequence,
        valid: Optional[np.ndarray] = None,
        tape: Optional[Tape] = None,
        record_attention: bool = False,
    ) -> ForwardResult: ...

    def with_params(self, params: ModelParams) -> "Classifier": ...


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings"""

    epochs: int
    learning_rate: float
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    select_metric: str = "WA"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.select_metric not in METRIC_NAMES:
            raise ValueError(f"select_metric must be one of {METRIC_NAMES}, got {self.select_metric}")

    def lr_at(self, epoch: int) -> float:
        # the final epoch runs at the annealed floor
        return cosine_lr(epoch, self.epochs - 1, self.learning_rate)


@dataclass
class LabeledSequence:
    """Training sample: features, class index and optional validity mask"""

    features: FeatureSequence
    label: int
    valid: Optional[np.ndarray] = None

    @classmethod
    def from_sequence(cls, seq: FeatureSequence, max_frames: Optional[int] = None) -> "LabeledSequence":
        if seq.label is None:
            raise LossInputError(f"{seq.name or 'sequence'} has no label")
        if max_frames is None:
            return cls(seq, seq.label)
        fitted, valid = pad_or_truncate(seq, max_frames)
        return cls(fitted, seq.label, None if valid.all() else valid)


@dataclass
class EvalResult:
    loss: float
    confusion: Confusion
    predictions: List[int]

    @property
    def metrics(self) -> Metrics:
        return metrics(self.confusion)


@dataclass
class EpochResult:
    """Outcome of one training epoch"""

    epoch: int
    lr: float
    loss: float
    confusion: Confusion
    validation: Optional[EvalResult] = None

    @property
    def metrics(self) -> Metrics:
        return metrics(self.confusion)

    @property
    def accuracy(self) -> float:
        return self.metrics.wa

    def __str__(self) -> str:
        text = f"epoch {self.epoch}: lr {self.lr:.3e} loss {self.loss:.4f} {self.metrics}"
        if self.validation is not None:
            text += f" | val loss {self.validation.loss:.4f} {self.validation.metrics}"
        return text


@dataclass
class TrainingHistory:
    epochs: List[EpochResult] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("-inf")
    best_params: Optional[ModelParams] = None


def batch_loss(
    model: Classifier, batch: Sequence[LabeledSequence], classes: int, tape: Optional[Tape] = None
) -> Tuple[Matrix, np.ndarray]:
    """
    Mean cross-entropy of a minibatch

    Returns:
        The 1 x 1 loss and the S x C class probabilities
    """
    logits = concat_rows([model.forward(sample.features, sample.valid, tape).logits for sample in batch])
    if logits.cols != classes:
        raise LossInputError(f"model produces {logits.cols} logits, expected {classes} classes")
    probs = masked_softmax(logits)
    loss = cross_entropy(probs, one_hot([sample.label for sample in batch], classes))
    return loss, probs.data


class Trainer:
    """Owns the model, the optimiser state and the shuffling generator"""

    def __init__(self, model: Classifier, classes: int, config: TrainConfig):
        self.model = model
        self.classes = classes
        self.config = config
        self.optimizer = SGDMomentum(config.momentum)
        self._rng = np.random.default_rng(config.seed)

    @property
    def params(self) -> ModelParams:
        return self.model.params

    def _batches(self, count: int) -> List[np.ndarray]:
        order = self._rng.permutation(count)
        size = self.config.batch_size
        return [order[start : start + size] for start in range(0, count, size)]

    def train_epoch(self, samples: Sequence[LabeledSequence], epoch: int, lr: Optional[float] = None) -> EpochResult:
        """
        One pass over shuffled minibatches

        Args:
            samples: Training data
            epoch: Epoch index, selects the cosine learning rate
            lr: Learning rate to use instead of the schedule

        Returns:
            Mean loss and the confusion of predictions made before each update
        """
        if not samples:
            raise LossInputError("no training samples")
        rate = self.config.lr_at(epoch) if lr is None else lr
        confusion = Confusion.empty(self.classes)
        total_loss = 0.0

        for indices in self._batches(len(samples)):
            batch = [samples[i] for i in indices]
            tape = Tape()
            loss, probs = batch_loss(self.model, batch, self.classes, tape)
            gradients = backward(tape, loss)
            self.model = self.model.with_params(self.optimizer.step(self.model.params, gradients, rate))

            total_loss += loss.item() * len(batch)
            confusion.add([sample.label for sample in batch], probs.argmax(axis=1))
            logger.debug(f"Batch of {len(batch)}: loss {loss.item():.4f}")

        return EpochResult(epoch=epoch, lr=rate, loss=total_loss / len(samples), confusion=confusion)

    def evaluate(self, samples: Sequence[LabeledSequence], workers: int = 1) -> EvalResult:
        """Loss and confusion without updating parameters; workers share a frozen parameter snapshot"""
        if not samples:
            raise LossInputError("no evaluation samples")
        frozen = self.model.with_params(self.model.params.copy())

        def score(sample: LabeledSequence) -> np.ndarray:
            return frozen.forward(sample.features, sample.valid).logits.data

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(score, samples))
        else:
            rows = [score(sample) for sample in samples]

        probs = masked_softmax(Matrix(np.vstack(rows)))
        labels = [sample.label for sample in samples]
        loss = cross_entropy(probs, one_hot(labels, self.classes)).item()
        predictions = [int(p) for p in probs.data.argmax(axis=1)]
        return EvalResult(loss=loss, confusion=Confusion.from_predictions(labels, predictions, self.classes), predictions=predictions)

    def fit(
        self,
        samples: Sequence[LabeledSequence],
        validation: Optional[Sequence[LabeledSequence]] = None,
        workers: int = 1,
    ) -> TrainingHistory:
        """
        Train for the configured number of epochs

        The parameters scoring best on `select_metric` (validation metrics when a
        validation set is given, training metrics otherwise) are kept in the history.
        """
        history = TrainingHistory()
        logger.info(f"Training on {len(samples)} samples for {self.config.epochs} epochs")

        for epoch in range(self.config.epochs):
            result = self.train_epoch(samples, epoch)
            if validation:
                result.validation = self.evaluate(validation, workers)
            history.epochs.append(result)

            scored = result.validation.metrics if result.validation is not None else result.metrics
            score = scored.as_dict()[self.config.select_metric]
            if score > history.best_score:
                history.best_score = score
                history.best_epoch = epoch
                history.best_params = self.model.params.copy()
            logger.info(str(result))

        logger.info(f"Best {self.config.select_metric} {history.best_score:.4f} at epoch {history.best_epoch}")
        return history


def training_log_frame(history: TrainingHistory) -> pd.DataFrame:
    """One row per epoch: epoch, lr, loss, WA, UA, WF1, MF1 and validation columns when present"""
    rows: List[Dict[str, float]] = []
    for result in history.epochs:
        row: Dict[str, float] = {"epoch": result.epoch, "lr": result.lr, "loss": result.loss}
        row.update(result.metrics.as_dict())
        if result.validation is not None:
            row["val_loss"] = result.validation.loss
            row.update({f"val_{name}": value for name, value in result.validation.metrics.as_dict().items()})
        rows.append(row)
    return pd.DataFrame(rows)
