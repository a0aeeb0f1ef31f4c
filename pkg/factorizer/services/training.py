import logging
import math
from collections import OrderedDict, deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import TrainingDivergedError, UsageError
from factorizer.models.module import Parameter
from factorizer.models.network import Factorizer
from factorizer.schemas.config import AugmentPolicy, TrainConfig
from factorizer.services import checkpoint as ckpt
from factorizer.services.losses import encode_target, target_pyramid, total_loss
from factorizer.services.synthetic import VolumeSample
from factorizer.services.transforms import augment, pad_to, random_patch
from factorizer.utils import rng as rng_utils

logger = logging.getLogger(__name__)


def decays(name: str) -> bool:
    """Weight decay applies to conv and projection weights only"""
    return name.split(".")[-1] == "weight"


class AdamW:
    """Adam with decoupled weight decay: p <- p (1 - lr wd), then the bias-corrected Adam step"""

    def __init__(
        self,
        named_parameters: Sequence[Tuple[str, Parameter]],
        weight_decay: float = 1e-2,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = OrderedDict(named_parameters)
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, param in self.params.items():
            if param.grad is None:
                continue
            grad = param.grad
            data = param.numpy()
            if self.weight_decay and decays(name):
                data *= 1.0 - lr * self.weight_decay
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            param.assign(data)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = OrderedDict()
        for name in self.params:
            state[f"optim.m.{name}"] = self.m[name]
            state[f"optim.v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], t: int) -> None:
        for name in self.params:
            self.m[name] = np.array(state[f"optim.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(state[f"optim.v.{name}"], dtype=self.v[name].dtype)
        self.t = t


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr at `warmup_steps`, then cosine decay to 0 at `steps`"""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    if cfg.schedule == "constant":
        return cfg.base_lr
    progress = (step - cfg.warmup_steps) / max(1, cfg.steps - cfg.warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_batch(
    samples: Sequence[VolumeSample],
    patch_size: Sequence[int],
    policy: Optional[AugmentPolicy],
    seed: int,
    step: int,
    batch_size: int,
    first_slot: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Random patches (then augmentation); slot k draws from its own (seed, step, k) generator"""
    if not samples:
        raise UsageError("training needs at least one sample")
    images, labels = [], []
    for slot in range(first_slot, first_slot + batch_size):
        rng = rng_utils.generator(rng_utils.STREAM_BATCH, seed, step, slot)
        sample = samples[int(rng.integers(len(samples)))]
        patch = random_patch(pad_to(sample, patch_size), patch_size, rng)
        if policy is not None:
            patch = augment(patch, policy, rng)
        images.append(patch.image)
        labels.append(patch.label)
    return np.stack(images).astype(np.float32), np.stack(labels)


class BatchLoader:
    """
    Prefetches batches on worker threads.

    Batches come back in step order; each one depends only on (seed, step, slot),
    so the worker count never changes the stream.
    """

    def __init__(
        self,
        samples: Sequence[VolumeSample],
        cfg: TrainConfig,
        patch_size: Sequence[int],
        policy: Optional[AugmentPolicy],
        start_step: int = 1,
    ):
        self.samples = list(samples)
        self.cfg = cfg
        self.patch_size = list(patch_size)
        self.policy = policy
        self.start_step = start_step

    def _job(self, step: int) -> List[Tuple[np.ndarray, np.ndarray]]:
        size = self.cfg.batch_size
        return [
            make_batch(self.samples, self.patch_size, self.policy, self.cfg.seed, step, size, first_slot=micro * size)
            for micro in range(self.cfg.grad_accumulation)
        ]

    def __iter__(self) -> Iterator[Tuple[int, List[Tuple[np.ndarray, np.ndarray]]]]:
        steps = range(self.start_step, self.cfg.steps + 1)
        if self.cfg.num_workers == 0:
            for step in steps:
                yield step, self._job(step)
            return
        depth = max(2, self.cfg.num_workers)
        with ThreadPoolExecutor(max_workers=self.cfg.num_workers) as executor:
            pending: Deque[Tuple[int, Future]] = deque()
            queue = iter(steps)
            for step in queue:
                pending.append((step, executor.submit(self._job, step)))
                if len(pending) >= depth:
                    break
            while pending:
                step, future = pending.popleft()
                next_step = next(queue, None)
                if next_step is not None:
                    pending.append((next_step, executor.submit(self._job, next_step)))
                yield step, future.result()


@dataclass
class TrainResult:
    log: pd.DataFrame
    step: int
    checkpoint: Optional[Path]


def _save(
    model: Factorizer,
    optimizer: AdamW,
    step: int,
    cfg: TrainConfig,
    directory: Path,
) -> Path:
    checkpoint = ckpt.model_checkpoint(
        model, step, optimizer.state_dict(), train=cfg.model_dump(mode="json"), seeds={"train": cfg.seed}
    )
    checkpoint.extra["optimizer_t"] = optimizer.t
    ckpt.save_checkpoint(directory / f"step-{step:06d}.fckp", checkpoint)
    return ckpt.save_checkpoint(directory / "last.fckp", checkpoint)


def train(
    model: Factorizer,
    samples: Sequence[VolumeSample],
    cfg: TrainConfig,
    policy: Optional[AugmentPolicy] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    resume: Optional[ckpt.Checkpoint] = None,
) -> TrainResult:
    """
    Optimize `model` on random patches of preprocessed `samples`.

    A non-finite loss raises TrainingDivergedError before the optimizer step,
    so checkpoints already on disk stay the last good ones.
    """
    patch_size = cfg.patch_size or model.cfg.patch_size
    optimizer = AdamW(list(model.named_parameters()), cfg.weight_decay, tuple(cfg.betas), cfg.adam_eps)
    start = 1
    if resume is not None:
        optimizer.load_state_dict(resume.optimizer_state(), int(resume.extra.get("optimizer_t", resume.step)))
        start = resume.step + 1
    directory = Path(checkpoint_dir) if checkpoint_dir is not None else None
    policy = policy if cfg.augment else None
    levels = 1 + (2 if model.cfg.deep_supervision else 0)
    model.train()

    rows = []
    last_checkpoint = None
    step = start - 1
    logger.info(f"Training for steps {start}..{cfg.steps} on {len(samples)} samples, patch {patch_size}")
    for step, micro_batches in BatchLoader(samples, cfg, patch_size, policy, start_step=start):
        model.set_step(step)
        optimizer.zero_grad()
        lr = learning_rate(step, cfg)
        step_loss = 0.0
        for images, labels in micro_batches:
            output = model(Tensor(images), training=True)
            target = encode_target(labels, model.cfg.out_channels, model.cfg.output_mode)
            loss = total_loss(output, target_pyramid(target, levels), model.cfg.output_mode)
            loss = loss / float(cfg.grad_accumulation)
            value = loss.item()
            if not math.isfinite(value):
                logger.error(f"Loss became {value} at step {step}; stopping with the last saved checkpoint")
                raise TrainingDivergedError(f"non-finite loss {value} at step {step}")
            loss.backward()
            step_loss += value
        optimizer.step(lr)
        rows.append({"step": step, "lr": lr, "loss": step_loss})
        if step % cfg.log_every == 0 or step == cfg.steps:
            logger.info(f"step {step}/{cfg.steps} loss {step_loss:.5f} lr {lr:.3e}")
        if directory is not None and (step % cfg.checkpoint_every == 0 or step == cfg.steps):
            last_checkpoint = _save(model, optimizer, step, cfg, directory)

    model.eval()
    return TrainResult(log=pd.DataFrame(rows, columns=["step", "lr", "loss"]), step=step, checkpoint=last_checkpoint)
