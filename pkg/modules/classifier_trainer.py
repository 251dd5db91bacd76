"""
🏋️ Classifier Trainer
Cross-entropy training of the video classifier with Adam.

Training is deterministic for a fixed seed: mini-batch order comes from a
keyed Philox stream per epoch and batch gradients reduce in content order.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix
from sklearn.model_selection import train_test_split

from modules.diffnet import (Architecture, ModelParams, PARAM_ORDER, grad_params,
                             init_params, predict_batch)
from modules.exceptions import TrainingError, ValidationError
from modules.optimizers import Adam
from modules.utils import make_rng, RNG_SPLIT, RNG_TRAIN_SHUFFLE
from modules.video_data import LabeledVideo, check_same_dims


@dataclass
class TrainConfig:
    """Optimizer and schedule settings for classifier training"""

    learning_rate: float = 3e-3
    batch_size: int = 8
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    weight_decay: float = 0.0
    eval_fraction: float = 0.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ValidationError(f"learning_rate must be finite and >= 0 (got {self.learning_rate})")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1 (got {self.epochs})")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0 (got {self.weight_decay})")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ValidationError(f"eval_fraction must be in [0, 1) (got {self.eval_fraction})")

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (payload or {}).items() if k in known})

    def to_dict(self) -> Dict[str, Any]:
        # n_jobs is scheduling only and stays out of artifacts
        return {k: v for k, v in asdict(self).items() if k != 'n_jobs'}


@dataclass
class TrainingReport:
    """Trained weights plus the numbers worth keeping about the run"""

    params: ModelParams
    history: List[Dict[str, float]] = field(default_factory=list)
    eval_accuracy: Optional[float] = None
    confusion: Optional[List[List[int]]] = None
    train_size: int = 0
    eval_size: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': 1,
            'variant': self.params.variant.value,
            'num_classes': int(self.params.num_classes),
            'dims': self.params.dims.to_dict(),
            'history': self.history,
            'eval_accuracy': self.eval_accuracy,
            'confusion': self.confusion,
            'train_size': self.train_size,
            'eval_size': self.eval_size,
        }


def accuracy(params: ModelParams, clips: Sequence[LabeledVideo], n_jobs: int = 1) -> float:
    """Fraction of clips whose top class equals the label"""
    if not clips:
        return float('nan')
    labels = [clip.label for clip in clips]
    return float(accuracy_score(labels, predict_batch(params, clips, n_jobs)))


class ClassifierTrainer:
    """
    Trains ModelParams on labelled clips

    Owns its Adam state for the duration of one fit; nothing is shared
    between fits.
    """

    def __init__(self, config: Dict[str, Any] = None):
        """
        Initialize trainer

        Args:
            config: Full configuration dictionary (reads the 'training' section)
        """
        self.config = config.get('training', {}) if config else {}
        self.logger = logging.getLogger(__name__)
        self.train_config = TrainConfig.from_dict(self.config)

    def _split(self, dataset: List[LabeledVideo],
               cfg: TrainConfig) -> Tuple[List[LabeledVideo], List[LabeledVideo]]:
        if cfg.eval_fraction <= 0:
            return dataset, []
        labels = [clip.label for clip in dataset]
        train_idx, eval_idx = train_test_split(
            np.arange(len(dataset)), test_size=cfg.eval_fraction,
            stratify=labels, random_state=int(make_rng(cfg.seed, RNG_SPLIT).integers(2 ** 32))
        )
        self.logger.info(f"Held out {len(eval_idx)} of {len(dataset)} clips for evaluation")
        return [dataset[i] for i in sorted(train_idx)], [dataset[i] for i in sorted(eval_idx)]

    def fit(self, dataset: Sequence[LabeledVideo], cfg: TrainConfig = None,
            variant: Union[str, Architecture] = Architecture.A,
            num_classes: Optional[int] = None,
            eval_set: Optional[Sequence[LabeledVideo]] = None,
            initial: Optional[ModelParams] = None) -> TrainingReport:
        """
        Train a classifier with mini-batch Adam on cross-entropy

        Args:
            dataset: Training clips (non-empty, one geometry)
            cfg: Training settings (defaults to the config's 'training' section)
            variant: Architecture to train
            num_classes: K (defaults to max label + 1, at least 2)
            eval_set: Held-out clips; when absent, eval_fraction may carve one out
            initial: Starting weights (He initialisation from cfg.seed otherwise)

        Returns:
            TrainingReport with the final weights and history
        """
        cfg = cfg or self.train_config
        dataset = list(dataset)
        if not dataset:
            raise ValidationError("Training dataset is empty")
        dims = dataset[0].dims
        for clip in dataset:
            check_same_dims(dims, clip.dims, f"clip {clip.clip_id}")
        if num_classes is None:
            num_classes = max(2, max(clip.label for clip in dataset) + 1)
        for clip in dataset:
            clip.check_label(num_classes)

        if eval_set is None:
            train_set, eval_set = self._split(dataset, cfg)
        else:
            train_set, eval_set = dataset, list(eval_set)

        params = initial.copy() if initial is not None else init_params(variant, dims, num_classes, cfg.seed)
        optimizer = Adam({name: params.tensors[name].shape for name in PARAM_ORDER},
                         lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

        self.logger.info(f"Training variant {params.variant.value} on {len(train_set)} clips "
                         f"(K={num_classes}, epochs={cfg.epochs}, batch={cfg.batch_size}, lr={cfg.learning_rate})")

        history = []
        iteration = 0
        n = len(train_set)
        for epoch in range(cfg.epochs):
            order = make_rng(cfg.seed, RNG_TRAIN_SHUFFLE, epoch).permutation(n)
            losses = []
            for start in range(0, n, cfg.batch_size):
                batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
                loss, grads = grad_params(params, batch, n_jobs=cfg.n_jobs)
                if not np.isfinite(loss):
                    self.logger.error(f"Non-finite training loss at iteration {iteration}")
                    raise TrainingError("Training diverged (non-finite loss)", iteration)
                if cfg.weight_decay > 0:
                    for name in PARAM_ORDER:
                        if name.endswith('.weight'):
                            grads[name] = grads[name] + cfg.weight_decay * params.tensors[name]
                updated = optimizer.step(params.tensors, grads)
                if not all(np.all(np.isfinite(updated[name])) for name in PARAM_ORDER):
                    self.logger.error(f"Non-finite weights at iteration {iteration}")
                    raise TrainingError("Training diverged (non-finite weights)", iteration)
                params = params.replace(updated)
                losses.append(loss)
                iteration += 1

            train_acc = accuracy(params, train_set, cfg.n_jobs)
            entry = {'epoch': epoch + 1, 'loss': float(np.mean(losses)), 'train_accuracy': train_acc}
            history.append(entry)
            self.logger.info(f"Epoch {epoch + 1}/{cfg.epochs} - loss: {entry['loss']:.4f}, "
                             f"train acc: {train_acc:.3f}")

        report = TrainingReport(params=params, history=history,
                                train_size=len(train_set), eval_size=len(eval_set))
        if eval_set:
            labels = [clip.label for clip in eval_set]
            predicted = predict_batch(params, eval_set, cfg.n_jobs)
            report.eval_accuracy = float(accuracy_score(labels, predicted))
            report.confusion = confusion_matrix(labels, predicted,
                                                labels=list(range(num_classes))).tolist()
            self.logger.info(f"Held-out accuracy: {report.eval_accuracy:.3f} on {len(eval_set)} clips")
        return report


def train(dataset: Sequence[LabeledVideo], cfg: TrainConfig = None,
          variant: Union[str, Architecture] = Architecture.A,
          num_classes: Optional[int] = None,
          eval_set: Optional[Sequence[LabeledVideo]] = None) -> ModelParams:
    """Train and return only the weights"""
    return ClassifierTrainer().fit(dataset, cfg or TrainConfig(), variant, num_classes, eval_set).params
