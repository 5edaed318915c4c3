"""Shared training loop: Adam, plateau-halving learning-rate schedule,
early stopping, best-checkpoint tracking, and machine-parseable logging.

Schedule: an epoch improves when its validation loss is strictly lower than
the best seen. After every `halve_after` consecutive non-improving epochs the
learning rate is halved; after `stop_after` training stops. The schedule is
a pure function of the validation-loss trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import nn
from .errors import NumericError

LN2 = math.log(2.0)


@dataclass
class Schedule:
    halve_after: int = 3
    stop_after: int = 6

    def validate(self) -> None:
        if self.halve_after < 1 or self.stop_after < 1:
            raise NumericError("schedule thresholds must be >= 1")


@dataclass
class ScheduleState:
    best: float = math.inf
    stale: int = 0

    def update(self, val_loss: float, sched: Schedule) -> tuple[bool, bool, bool]:
        """Feed one validation loss; returns (improved, halve_now, stop_now)."""
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
            return True, False, False
        self.stale += 1
        halve = self.stale % sched.halve_after == 0
        return False, halve, self.stale >= sched.stop_after


def schedule_trace(
    losses: Iterable[float], lr0: float, sched: Schedule = Schedule()
) -> list[tuple[int, float, bool]]:
    """Replay the schedule on a fixed loss trace.

    Returns (epoch, lr after the epoch, stopped) per epoch, 1-based; useful
    for verifying the schedule in isolation from any model."""
    state = ScheduleState()
    lr = lr0
    out = []
    for epoch, loss in enumerate(losses, start=1):
        _, halve, stop = state.update(loss, sched)
        if halve:
            lr /= 2.0
        out.append((epoch, lr, stop))
        if stop:
            break
    return out


def format_log_line(epoch: int, split: str, bpc: float, lr: float) -> str:
    return f"{epoch}\t{split}\t{bpc:.6f}\t{lr:g}"


@dataclass
class TrainResult:
    best_valid_bpc: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    log_lines: list[str] = field(default_factory=list)
    best_blob: Optional[bytes] = None


def train_loop(
    params: list[nn.Tensor],
    epoch_batches: Callable[[int], Iterable],
    loss_fn: Callable,
    valid_fn: Callable[[], float],
    save_fn: Callable[[], bytes],
    lr: float,
    weight_decay: float = 0.0,
    clip: float = 1.0,
    sched: Schedule = Schedule(),
    max_epochs: int = 200,
    beta1: float = 0.9,
    beta2: float = 0.999,
    log: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Generic per-char NLL training.

    epoch_batches(epoch) yields the epoch's batches (reshuffled per epoch in
    word-level mode); loss_fn(batch, state) returns (scalar per-char loss
    tensor, char count, carryover state). valid_fn returns validation BPC;
    save_fn snapshots the current parameters as a checkpoint blob. Training
    BPC is the char-weighted mean of batch losses, in bits.
    """
    sched.validate()
    opt = nn.adam_init(params, lr=lr, beta1=beta1, beta2=beta2, weight_decay=weight_decay)
    state_sched = ScheduleState()
    result = TrainResult(best_valid_bpc=math.inf, best_epoch=0, epochs_run=0, stopped_early=False)

    def emit(line: str) -> None:
        result.log_lines.append(line)
        if log is not None:
            log(line)

    for epoch in range(1, max_epochs + 1):
        state = None
        nll_sum = 0.0
        char_sum = 0
        for batch in epoch_batches(epoch):
            loss, chars, state = loss_fn(batch, state)
            nn.zero_grads(params)
            nn.backward(loss)
            nn.adam_step(params, nn.collect_grads(params), opt, clip=clip)
            nll_sum += loss.item() * chars
            char_sum += chars
        if char_sum == 0:
            raise NumericError("epoch produced no characters to train on")
        train_bpc = nll_sum / char_sum / LN2
        valid_bpc = valid_fn()
        result.epochs_run = epoch
        emit(format_log_line(epoch, "train", train_bpc, opt.lr))
        emit(format_log_line(epoch, "valid", valid_bpc, opt.lr))
        improved, halve, stop = state_sched.update(valid_bpc, sched)
        if improved:
            result.best_valid_bpc = valid_bpc
            result.best_epoch = epoch
            result.best_blob = save_fn()
        if halve:
            opt.lr /= 2.0
        if stop:
            result.stopped_early = True
            break
    if result.best_blob is None:
        # no epoch improved on +inf is impossible unless valid was non-finite
        raise NumericError("training never produced a finite validation loss")
    return result
