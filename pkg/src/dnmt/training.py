"""Optimization: smoothed cross-entropy, Adam, warmup schedule, train loop.

Training is two-stage: the sentence model (embeddings, encoder, decoder,
path encoder) trains first at a large token batch; the context stage
loads that checkpoint, adds the hierarchical attention parameters, and
trains them at a smaller batch, freezing the stage-one parameters by
default. Every random draw is keyed to (seed, step), so a resumed run
reproduces the unresumed loss sequence exactly.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tt
from .checkpoint import load_checkpoint, save_checkpoint
from .model import ModelParams, decoder_logits, encode
from .tensor import Tensor

__all__ = [
    "TrainConfig", "OptimizerState", "TrainingError", "cross_entropy_loss",
    "adam_step", "lr_at", "token_batches", "train", "evaluate_loss",
]

STAGES = ("sentence", "context")


class TrainingError(RuntimeError):
    """Non-finite loss or an inconsistent training setup."""


@dataclass
class TrainConfig:
    stage: str = "sentence"
    lr_scale: float = 1.0
    warmup: int = 200
    batch_tokens: int = 256
    label_smoothing: float = 0.1
    dropout: float = 0.1
    max_steps: int = 100
    seed: int = 1
    checkpoint_every: int = 0
    log_every: int = 10
    freeze_sentence: bool = True
    context_grad: bool = False
    init_from: str = ""

    def validate(self) -> "TrainConfig":
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_tokens < 1 or self.max_steps < 1:
            raise ValueError("batch_tokens and max_steps must be >= 1")
        return self


def cross_entropy_loss(logits: Tensor, gold, smoothing: float = 0.0,
                       pad_id: int | None = None) -> Tensor:
    """Label-smoothed NLL averaged over non-PAD positions.

    Per position: (1 - eps) * nll(gold) + eps * mean over all classes of
    the negative log probability.
    """
    gold = list(gold)
    if pad_id is not None:
        keep = [i for i, g in enumerate(gold) if g != pad_id]
        if not keep:
            raise tt.EmptyInputError("all positions are PAD")
        if len(keep) < len(gold):
            logits = tt.take_rows(logits, keep)
            gold = [gold[i] for i in keep]
    vocab = logits.shape[1]
    logp = tt.log_softmax_rows(logits)
    nll = tt.mul(tt.pick(logp, gold), -1.0)
    if smoothing == 0.0:
        return tt.mean_all(nll)
    uniform = tt.mul(tt.sum_axis1(logp), -1.0 / vocab)
    per_token = tt.add(tt.mul(nll, 1.0 - smoothing), tt.mul(uniform, smoothing))
    return tt.mean_all(per_token)


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict = None
    v: dict = None

    def __post_init__(self):
        self.m = {} if self.m is None else self.m
        self.v = {} if self.v is None else self.v

    def to_arrays(self) -> dict:
        out = {}
        for name, arr in self.m.items():
            out[f"opt.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"opt.v.{name}"] = arr
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, step: int, **kwargs) -> "OptimizerState":
        state = cls(step=step, **kwargs)
        for key, arr in arrays.items():
            if key.startswith("opt.m."):
                state.m[key[len("opt.m."):]] = np.array(arr)
            elif key.startswith("opt.v."):
                state.v[key[len("opt.v."):]] = np.array(arr)
        return state


def adam_step(tensors: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update, in place, over the given named tensors."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, param in tensors.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(param.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        param.data = param.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_at(step: int, scale: float, warmup: int, model_dim: int) -> float:
    """Inverse-square-root schedule with linear warmup; peak at step == warmup."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return scale * model_dim ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def example_cost(example) -> int:
    return len(example.inp.src_ids) + example.target_token_count()


def token_batches(examples, order, budget: int) -> list:
    """Group example indices so no batch exceeds the token budget.

    Sentences are never split; an example costing more than the whole
    budget is a configuration error.
    """
    batches = []
    current, used = [], 0
    for idx in order:
        cost = example_cost(examples[idx])
        if cost > budget:
            raise TrainingError(
                f"example {idx} needs {cost} tokens, over the batch budget {budget}")
        if current and used + cost > budget:
            batches.append(current)
            current, used = [], 0
        current.append(idx)
        used += cost
    if current:
        batches.append(current)
    return batches


def epoch_order(example_count: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 9999, epoch])
    return rng.permutation(example_count)


def _batch_loss(batch, examples, params: ModelParams, cfg: TrainConfig,
                rng: np.random.Generator) -> tuple:
    """Token-weighted mean loss over one batch; returns (loss, token count)."""
    total = None
    tokens = 0
    for idx in batch:
        ex = examples[idx]
        h = encode(ex.inp, params, rng=rng, context_grad=cfg.context_grad)
        logits = decoder_logits(ex.tgt_ids[:-1], h, params, rng=rng)
        loss = cross_entropy_loss(logits, ex.tgt_ids[1:], cfg.label_smoothing)
        n = ex.target_token_count()
        weighted = tt.mul(loss, float(n))
        total = weighted if total is None else tt.add(total, weighted)
        tokens += n
    return tt.mul(total, 1.0 / tokens), tokens


def set_dropout(params: ModelParams, rate: float) -> None:
    params.encoder.dropout = rate
    params.decoder.dropout = rate
    if params.path is not None:
        params.path.stack.dropout = rate


def trainable_names(params: ModelParams, cfg: TrainConfig) -> list:
    if cfg.stage == "context" and cfg.freeze_sentence:
        names = params.context_param_names()
        if not names:
            raise TrainingError("context stage requires a model with use_han enabled")
        return names
    return [n for n, _ in params.named()]


def train(examples, params: ModelParams, cfg: TrainConfig,
          out_dir: str | None = None, start_step: int = 0,
          opt_state: OptimizerState | None = None,
          report_path: str | None = None) -> list:
    """Run the optimization loop; returns the log records it wrote.

    ``start_step`` > 0 resumes: earlier steps are skipped but the epoch
    shuffle stream is replayed so batch composition matches the original
    run exactly.
    """
    cfg.validate()
    if not examples:
        raise TrainingError("no training examples")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    set_dropout(params, cfg.dropout)
    tensors = params.tensors()
    trainable = {n: tensors[n] for n in trainable_names(params, cfg)}
    state = opt_state if opt_state is not None else OptimizerState(step=start_step)
    records = []
    report_fh = open(report_path, "w", encoding="utf-8") if report_path else None
    try:
        step = 0
        epoch = 0
        while step < cfg.max_steps:
            order = epoch_order(len(examples), cfg.seed, epoch)
            for batch in token_batches(examples, order, cfg.batch_tokens):
                step += 1
                if step > cfg.max_steps:
                    break
                if step <= start_step:
                    continue
                step_rng = np.random.default_rng([cfg.seed, step])
                started = time.perf_counter()
                with tt.Tape() as tape:
                    loss, tokens = _batch_loss(batch, examples, params, cfg, step_rng)
                    loss_value = loss.item()
                    if not np.isfinite(loss_value):
                        raise TrainingError(
                            f"non-finite loss {loss_value} at step {step} "
                            f"(stage {cfg.stage}, batch of {len(batch)} sentences)")
                    tape.backward(loss)
                grads = {n: t.grad for n, t in trainable.items() if t.grad is not None}
                lr = lr_at(step, cfg.lr_scale, cfg.warmup, params.config.model_dim)
                adam_step(trainable, grads, state, lr)
                for t in tensors.values():
                    t.grad = None
                elapsed = max(time.perf_counter() - started, 1e-9)
                if step % cfg.log_every == 0 or step == cfg.max_steps:
                    record = {"step": step, "stage": cfg.stage, "lr": lr,
                              "loss": loss_value,
                              "tokens_per_sec": round(tokens / elapsed, 2)}
                    records.append(record)
                    if report_fh is not None:
                        report_fh.write(json.dumps(record) + "\n")
                        report_fh.flush()
                if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save_model(os.path.join(out_dir, f"model_step{step}.ckpt"),
                               params, cfg, state, step)
            epoch += 1
        if out_dir:
            save_model(os.path.join(out_dir, "model_final.ckpt"), params, cfg, state,
                       min(step, cfg.max_steps))
    finally:
        if report_fh is not None:
            report_fh.close()
    return records


def save_model(path, params: ModelParams, cfg: TrainConfig | None = None,
               state: OptimizerState | None = None, step: int = 0) -> None:
    arrays = {name: t.data for name, t in params.named()}
    if state is not None:
        arrays.update(state.to_arrays())
    meta = {"step": step, "model_config": params.config.to_dict()}
    if cfg is not None:
        meta["train_config"] = asdict(cfg)
    save_checkpoint(path, arrays, meta)


def load_model_arrays(path) -> tuple:
    """Split a checkpoint into (model arrays, optimizer arrays, meta)."""
    arrays, meta = load_checkpoint(path)
    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    opt_arrays = {k: v for k, v in arrays.items() if k.startswith("opt.")}
    return model_arrays, opt_arrays, meta


def evaluate_loss(examples, params: ModelParams, label_smoothing: float = 0.0) -> float:
    """Mean per-token loss without dropout or gradient recording."""
    if not examples:
        raise TrainingError("no evaluation examples")
    total, tokens = 0.0, 0
    with tt.no_grad():
        for ex in examples:
            h = encode(ex.inp, params)
            logits = decoder_logits(ex.tgt_ids[:-1], h, params)
            loss = cross_entropy_loss(logits, ex.tgt_ids[1:], label_smoothing)
            n = ex.target_token_count()
            total += loss.item() * n
            tokens += n
    return total / tokens
