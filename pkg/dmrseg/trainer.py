"""RMSProp training of segmentation networks, with or without the
distance-map regularizer, and best-validation-Dice checkpoint selection.
"""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from functools import lru_cache

import numpy as np
import pandas as pd

from .autograd import Tensor, backward, zero_grad, no_grad, get_tape, cross_entropy_loss, mad_loss
from .config import worker_count
from .dataio.preprocess import augment
from .distmap import dm_stack
from .errors import ConfigError, LabelError, UsageError, NonFiniteLossError
from .metrics import dice
from .mtl import make_weighting
from .networks import ArchSpec, build_model, forward, detach_regularizer, save_checkpoint


LOGGER = logging.getLogger(__name__)

RMSPROP_ALPHA = 0.99
RMSPROP_EPS = 1e-8

BASELINE_LR = 0.0001
MULTITASK_LR = 0.0005


def default_lr(arch):
    """Initial learning rate of a run that does not set one

    :type arch: ArchSpec
    :rtype: float
    """
    return MULTITASK_LR if arch.dmr_attached else BASELINE_LR


@dataclass
class TrainConfig():
    """Training settings. ``dm_threshold`` is copied into the architecture.

    :param lr0: Initial learning rate; by default BASELINE_LR without the regularizer and
        MULTITASK_LR with it
    :param lr_decay: Factor applied to the learning rate after every epoch
    :param weighting: ``learned`` (task log-scales) or ``fixed`` (w1 on MAD, w2 on CE)
    :param augment_copies: Similarity-transformed copies added per training slice
    :param dtype: Parameter and activation dtype
    """
    arch: ArchSpec = field(default_factory=ArchSpec)
    lr0: float = None
    lr_decay: float = 0.99
    epochs: int = 30
    batch_size: int = 15
    seed: int = 0
    weighting: str = 'learned'
    w1: float = 1.0
    w2: float = 1.0
    dm_threshold: float = 250.0
    augment_copies: int = 0
    dtype: str = 'float32'

    def __post_init__(self):
        if self.arch.dm_threshold != self.dm_threshold:
            self.arch = replace(self.arch, dm_threshold=float(self.dm_threshold))
        if self.lr0 is None:
            self.lr0 = default_lr(self.arch)

    def validate(self):
        if not self.lr0 > 0:
            raise ConfigError(f'lr0 must be positive, got {self.lr0}')
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f'lr_decay must lie in (0, 1], got {self.lr_decay}')
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError('batch_size and epochs must be at least 1')
        if self.weighting not in ('learned', 'fixed'):
            raise ConfigError(f'Unknown weighting {self.weighting}')
        if self.augment_copies < 0:
            raise ConfigError('augment_copies must be non-negative')
        if self.dtype not in ('float32', 'float64'):
            raise ConfigError(f'Unsupported dtype {self.dtype}')
        self.arch.validate()
        return self

    def config_hash(self):
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def lr_at(epoch, cfg):
    """lr0 * decay ** epoch
    """
    if epoch < 0:
        raise ValueError(f'Epoch must be non-negative, got {epoch}')
    return cfg.lr0 * cfg.lr_decay ** epoch


def rmsprop_step(params, grads, state, lr, alpha=RMSPROP_ALPHA, eps=RMSPROP_EPS):
    """Update parameters and mean-square state in place:
    v = alpha * v + (1 - alpha) * g^2, p = p - lr * g / (sqrt(v) + eps).
    A missing gradient counts as zero.

    :param params: Parameter arrays
    :param grads: Gradient arrays (or None) matching ``params``
    :param state: Mean-square arrays matching ``params``
    """
    for p, g, v in zip(params, grads, state):
        v *= alpha
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f'Gradient of shape {g.shape} for a parameter of shape {p.shape}')
        v += (1 - alpha) * g * g
        p -= lr * g / (np.sqrt(v) + eps)


class RMSProp():

    def __init__(self, tensors, alpha=RMSPROP_ALPHA, eps=RMSPROP_EPS):
        self.tensors = list(tensors)
        self.alpha = alpha
        self.eps = eps
        self.state = [np.zeros_like(t.data) for t in self.tensors]

    def step(self, lr):
        rmsprop_step([t.data for t in self.tensors], [t.grad for t in self.tensors], self.state, lr,
                     self.alpha, self.eps)


@dataclass
class TrainingSlice():
    """One 2-D training sample keyed by (case id, slice index, copy index); copy 0 is the original"""
    key: tuple
    image: np.ndarray
    labels: np.ndarray


def expand_training_slices(cases, copies=0, seed=0):
    """Every slice of every case plus ``copies`` randomly transformed versions of
    it. Copy ``c`` of the ``i``-th slice draws from the stream ``(seed, i, c)``.

    :rtype: list of TrainingSlice
    """
    slices = []
    index = 0
    for case in cases:
        for z in range(case.image.shape[2]):
            image, labels = case.image.slice(z), case.labels.slice(z)
            slices.append(TrainingSlice((case.case_id, z, 0), image, labels))
            for copy in range(1, copies + 1):
                warped, warped_labels = augment(image, labels, np.random.default_rng([seed, index, copy]))
                slices.append(TrainingSlice((case.case_id, z, copy), warped, warped_labels))
            index += 1
    return slices


_cache_size = 1000


class TargetCache():

    """Distance-map regression targets computed from reference labels on first
    use and cached per (slice key, threshold). The cache belongs to the
    instance and is sized by ``configure_cache_size`` at construction.

    :param slices: Training slices whose labels the targets come from
    :type slices: list of TrainingSlice
    :param num_classes: Number of classes including background
    :type num_classes: int
    """

    def __init__(self, slices, num_classes):
        self._labels = {s.key: s.labels for s in slices}
        self.num_classes = num_classes
        self.get = lru_cache(maxsize=_cache_size)(self._compute)

    def _compute(self, key, threshold):
        return dm_stack(self._labels[key], self.num_classes, threshold).channels

    def batch(self, keys, threshold, dtype=np.float64):
        """Targets of a batch as B x (C - 1) x H x W
        """
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            planes = list(pool.map(lambda key: self.get(key, threshold), keys))
        return np.stack(planes).astype(dtype)


def configure_cache_size(maxsize=1000):
    """Set how many distance-map targets a target cache keeps between batches.
    Applies to caches created afterwards.

    :param maxsize: The maximum number of cached targets
    :type maxsize: int
    """
    global _cache_size
    _cache_size = maxsize


@dataclass
class ValidationResult():
    dice_mean: float
    dice_per_class: list
    ce: float
    mad: float


def validate(params, cases, threshold=None, batch_size=8):
    """Eval-mode scores on validation volumes; parameters and running statistics
    are left untouched. Dice is computed per volume and averaged over volumes,
    then over foreground classes.

    :rtype: ValidationResult
    """
    if not cases:
        raise UsageError('Validation set is empty')
    threshold = params.spec.dm_threshold if threshold is None else threshold
    num_classes = params.spec.num_classes
    per_class = [[] for _ in range(1, num_classes)]
    ce_total = mad_total = 0.0
    count = 0
    with no_grad():
        for case in cases:
            images = np.moveaxis(case.image.voxels, 2, 0)[:, None].astype(params.dtype)
            labels = np.moveaxis(case.labels.labels, 2, 0)
            predicted = []
            for start in range(0, len(images), batch_size):
                batch_labels = labels[start:start + batch_size]
                out = forward(params, Tensor(images[start:start + batch_size]), 'eval')
                ce_total += cross_entropy_loss(out.logits, batch_labels).item() * len(batch_labels)
                if out.dm_pred is not None:
                    targets = np.stack([dm_stack(l, num_classes, threshold).channels for l in batch_labels])
                    mad_total += mad_loss(out.dm_pred, targets).item() * len(batch_labels)
                predicted.append(out.logits.data.argmax(axis=1))
            count += len(images)
            predicted = np.concatenate(predicted)
            for class_id in range(1, num_classes):
                per_class[class_id - 1].append(dice(predicted == class_id, labels == class_id))
    dice_per_class = [float(np.mean(scores)) for scores in per_class]
    mad = mad_total / count if params.dmr_attached else float('nan')
    return ValidationResult(float(np.mean(dice_per_class)), dice_per_class, ce_total / count, mad)


@dataclass
class Checkpoint():
    """Snapshot of the best epoch so far by mean validation Dice"""
    params: object
    epoch: int
    val_dice: float
    config_hash: str
    task_weights: dict = field(default_factory=dict)

    def meta(self):
        return {'epoch': self.epoch, 'val_dice': self.val_dice, 'config_hash': self.config_hash,
                'task_weights': self.task_weights}

    def save(self, path):
        save_checkpoint(self.params, path, self.meta())


@dataclass
class TrainResult():
    checkpoint: Checkpoint
    log: pd.DataFrame
    params: object


def _finite_gradients(tensors):
    return all(t.grad is None or np.isfinite(t.grad).all() for t in tensors)


def _log_columns(num_classes):
    return (['epoch', 'lr', 'train_loss', 'train_ce', 'train_mad', 'val_ce', 'val_mad', 'val_dice_mean']
            + [f'val_dice_c{k}' for k in range(1, num_classes)] + ['s1', 's2', 'w_mad', 'w_ce'])


def train(cfg, train_cases, val_cases=(), log_path=None, checkpoint_path=None):
    """Train a model from scratch.

    Each step forwards a batch in train mode, takes the cross-entropy of the
    logits and, with the regularizer attached, the MAD between the regressed and
    the label-derived distance maps, joins them with the configured weighting,
    and applies one RMSProp step to every learnable (task weights included).
    After each epoch the model is validated and checkpointed when the mean
    validation Dice improves. A non-finite loss or gradient stops training with
    NonFiniteLossError before the parameters are updated.

    :type cfg: TrainConfig
    :param train_cases: Preprocessed training cases
    :type train_cases: list of Case
    :param val_cases: Preprocessed validation cases; without them the last epoch is kept
    :type val_cases: list of Case
    :param log_path: Per-epoch CSV log, rewritten after every epoch
    :param checkpoint_path: Where the best checkpoint is saved as it improves
    :rtype: TrainResult
    """
    cfg.validate()
    if not train_cases:
        raise UsageError('Training set is empty')
    spec = cfg.arch
    for case in list(train_cases) + list(val_cases):
        if case.labels.num_classes > spec.num_classes:
            raise LabelError(f'Case {case.case_id} has {case.labels.num_classes} classes, '
                             f'the model {spec.num_classes}')
    dtype = np.dtype(cfg.dtype)
    slices = expand_training_slices(train_cases, cfg.augment_copies, cfg.seed)
    params = build_model(spec, cfg.seed, dtype)
    weighting = make_weighting(cfg.weighting, cfg.w1, cfg.w2, dtype) if spec.dmr_attached else None
    learnables = params.parameters() + (weighting.parameters() if weighting else [])
    optimizer = RMSProp(learnables)
    targets = TargetCache(slices, spec.num_classes)
    config_hash = cfg.config_hash()
    LOGGER.info('Training %s (dmr=%s, %s) on %d slices, %d parameters', spec.variant, spec.dmr_attached,
                cfg.weighting if weighting else 'cross-entropy', len(slices),
                sum(t.size for t in params.parameters()))

    best = None
    rows = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(slices))
        sums = {'loss': 0.0, 'ce': 0.0, 'mad': 0.0}
        steps = 0
        for step, start in enumerate(range(0, len(slices), cfg.batch_size)):
            batch = [slices[i] for i in order[start:start + cfg.batch_size]]
            images = np.stack([s.image for s in batch])[:, None].astype(dtype)
            labels = np.stack([s.labels for s in batch])
            zero_grad(learnables)
            # nodes left by a forward that never reached backward
            get_tape().clear()
            out = forward(params, Tensor(images), 'train')
            ce = cross_entropy_loss(out.logits, labels)
            mad = None
            if out.dm_pred is not None:
                mad = mad_loss(out.dm_pred, targets.batch([s.key for s in batch], spec.dm_threshold, dtype))
                loss = weighting.combine(mad, ce)
            else:
                loss = ce
            mad_value = mad.item() if mad is not None else float('nan')
            if not np.isfinite(loss.item()):
                get_tape().clear()
                LOGGER.error('Non-finite loss at epoch %d, step %d', epoch, step)
                raise NonFiniteLossError(epoch, step, ce.item(), mad_value, loss.item())
            backward(loss)
            if not _finite_gradients(learnables):
                LOGGER.error('Non-finite gradient at epoch %d, step %d', epoch, step)
                raise NonFiniteLossError(epoch, step, ce.item(), mad_value, loss.item())
            optimizer.step(lr)
            sums['loss'] += loss.item()
            sums['ce'] += ce.item()
            sums['mad'] += mad_value if mad is not None else 0.0
            steps += 1
            LOGGER.debug('epoch %d step %d: loss %.6g ce %.6g mad %.6g', epoch, step, loss.item(), ce.item(),
                         mad_value)

        if val_cases:
            result = validate(params, val_cases, spec.dm_threshold)
        else:
            nan = float('nan')
            result = ValidationResult(nan, [nan] * (spec.num_classes - 1), nan, nan)
        if weighting:
            weights = weighting.log_values()
        else:
            weights = {'s1': float('nan'), 's2': float('nan'), 'w_mad': 0.0, 'w_ce': 1.0}
        row = {'epoch': epoch, 'lr': lr, 'train_loss': sums['loss'] / steps, 'train_ce': sums['ce'] / steps,
               'train_mad': sums['mad'] / steps if spec.dmr_attached else float('nan'),
               'val_ce': result.ce, 'val_mad': result.mad, 'val_dice_mean': result.dice_mean}
        row.update({f'val_dice_c{k}': d for k, d in enumerate(result.dice_per_class, 1)})
        row.update(weights)
        rows.append(row)
        LOGGER.info('epoch %d lr %.3g loss %.4g ce %.4g mad %.4g val dice %.4f w_mad %.3g w_ce %.3g',
                    epoch, lr, row['train_loss'], row['train_ce'], row['train_mad'], result.dice_mean,
                    weights['w_mad'], weights['w_ce'])
        log = pd.DataFrame(rows, columns=_log_columns(spec.num_classes))
        if log_path:
            log.to_csv(log_path, index=False, float_format='%.10g')

        improved = best is None or (np.isfinite(result.dice_mean)
                                    and (not np.isfinite(best.val_dice) or result.dice_mean > best.val_dice))
        if not val_cases:
            improved = epoch == cfg.epochs - 1
        if improved:
            best = Checkpoint(params.copy(), epoch, result.dice_mean, config_hash,
                              {k: v for k, v in weights.items() if np.isfinite(v)})
            if checkpoint_path:
                best.save(checkpoint_path)
            LOGGER.info('Checkpoint at epoch %d (val dice %.4f)', epoch, result.dice_mean)
    return TrainResult(best, pd.DataFrame(rows, columns=_log_columns(spec.num_classes)), params)


def finalize(ckpt, path=None):
    """The deployable model: the checkpoint with its regularizer detached (a
    baseline is returned as it is), optionally re-saved with the same metadata

    :type ckpt: Checkpoint
    :rtype: ModelParams
    """
    params = detach_regularizer(ckpt.params) if ckpt.params.dmr_attached else ckpt.params
    if path:
        save_checkpoint(params, path, ckpt.meta())
    return params
