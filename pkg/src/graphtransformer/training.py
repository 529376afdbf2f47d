"""Optimization loop: inverse-sqrt warmup schedule, Adam, checkpoints and metric logs."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import __version__, checkpoint
from .autodiff import DropoutStream, Tensor
from .metrics import bleu
from .model import Example, Graph2Seq, ModelConfig, Vocabs, build_vocabs

log = logging.getLogger(__name__)

CODE_VERSION = __version__


@dataclass
class TrainConfig:
    # model
    layers: int = 6
    d_model: int = 512
    heads: int = 8
    d_ff: int = 1024
    node_dim: int = 300
    edge_dim: int = 200
    token_dim: int = 300
    char_dim: int = 32
    char_filters: int = 256
    char_width: int = 3
    char_out: int = 128
    rel_hidden: int = 128
    path_cap: int = 4
    max_path_len: int = 8
    # regularization
    dropout: float = 0.2
    unk_rate: float = 0.33
    # optimization
    warmup: int = 400
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-9
    batch_size: int = 16
    max_steps: int = 2000
    seed: int = 0
    precision: str = "float32"
    # bookkeeping
    log_every: int = 50
    save_every: int = 500
    eval_every: int = 0
    beam: int = 8
    max_decode_len: int = 50

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if not 0 <= self.unk_rate <= 1:
            raise ValueError("unk_rate must be in [0, 1]")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in types:
                raise KeyError(f"unknown config key {k!r}")
            t = types[k]
            if isinstance(v, str):
                v = {"int": int, "float": float, "str": str}[t](v)
            kw[k] = v
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "TrainConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        d = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            d[k] = v
        d.update(overrides or {})
        return cls.from_dict(d)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def sub_seed(seed: int, *keys) -> int:
    """Derive a named sub-seed; keys may be ints or strings."""
    ints = [int.from_bytes(k.encode(), "little") % (2**32) if isinstance(k, str) else int(k) for k in keys]
    return int(np.random.SeedSequence([seed, *ints]).generate_state(1)[0])


def lr_schedule(step: int, d_model: int = 512, warmup: int = 400) -> float:
    if step < 1:
        raise ValueError("step must be >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    def __init__(self, named_params: Sequence[tuple[str, Tensor]], beta1=0.9, beta2=0.999, eps=1e-9):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name, _ in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for name, p in self.params:
            self.m[name] = np.array(tensors[f"adam.m.{name}"], dtype=p.data.dtype)
            self.v[name] = np.array(tensors[f"adam.v.{name}"], dtype=p.data.dtype)
        self.t = t


class TrainingDiverged(RuntimeError):
    pass


def grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def epoch_batches(n_examples: int, sizes: Sequence[int], batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Seeded shuffle, then within pools of 8 batches sort by node count to limit padding."""
    order = np.random.default_rng(sub_seed(seed, "epoch", epoch)).permutation(n_examples)
    pool = batch_size * 8
    out = []
    for start in range(0, n_examples, pool):
        chunk = sorted(order[start:start + pool].tolist(), key=lambda i: sizes[i])
        out += [chunk[k:k + batch_size] for k in range(0, len(chunk), batch_size)]
    return out


def batch_for_step(step: int, n_examples: int, sizes, batch_size: int, seed: int) -> list[int]:
    per_epoch = math.ceil(n_examples / batch_size)
    epoch, k = divmod(step - 1, per_epoch)
    return epoch_batches(n_examples, sizes, batch_size, seed, epoch)[k]


def save_checkpoint(path, model: Graph2Seq, opt: Adam | None, step: int, config: TrainConfig) -> None:
    tensors = dict(model.state_dict())
    if opt is not None:
        tensors.update(opt.state())
    meta = {"code_version": CODE_VERSION, "step": step, "config": asdict(config),
            "vocabs": model.vocabs.to_json()}
    checkpoint.save(path, tensors, meta)


def load_model(path) -> tuple[Graph2Seq, dict, dict]:
    """Rebuild a model from a checkpoint; returns ``(model, tensors, meta)``."""
    tensors, meta = checkpoint.load(path)
    if meta.get("code_version") != CODE_VERSION:
        raise checkpoint.CheckpointError(
            f"checkpoint written by version {meta.get('code_version')}, this is {CODE_VERSION}")
    config = TrainConfig.from_dict(meta["config"])
    with ad.precision(config.precision):
        model = Graph2Seq(config.model_config(), Vocabs.from_json(meta["vocabs"]), seed=config.seed)
    model.load_state_dict(tensors)
    return model, tensors, meta


@dataclass
class StepLog:
    step: int
    loss: float
    lr: float
    grad_norm: float
    accuracy: float
    dev_bleu: float | None = None


@dataclass
class TrainResult:
    model: Graph2Seq
    history: list[StepLog]
    best_bleu: float | None = None


def evaluate_accuracy(model: Graph2Seq, examples: Sequence[Example], batch_size: int = 32) -> float:
    """Teacher-forced token accuracy with dropout off."""
    was = model.training
    model.eval()
    correct = total = 0
    with ad.no_grad():
        for k in range(0, len(examples), batch_size):
            res = model.loss(model.make_batch(examples[k:k + batch_size]))
            correct += res.n_correct
            total += res.n_tokens
    model.train(was)
    return correct / max(total, 1)


def evaluate_bleu(model: Graph2Seq, examples: Sequence[Example], beam: int = 1, max_len: int = 50) -> float:
    hyps = [" ".join(model.generate(ex, beam, max_len).words) for ex in examples]
    refs = [" ".join(ex.target) for ex in examples]
    return bleu(hyps, refs, case_sensitive=False)


def train(config: TrainConfig, examples: Sequence[Example], dev: Sequence[Example] | None = None,
          out_dir=None, resume=None, vocabs: Vocabs | None = None,
          on_step: Callable[[StepLog, Graph2Seq], bool | None] | None = None) -> TrainResult:
    """Train from scratch or resume from a checkpoint path.

    ``on_step`` receives every logged step; returning True stops training.
    With ``out_dir`` set, writes ``metrics.csv``, ``step_<k>.ckpt`` every
    ``save_every`` steps, ``last.ckpt`` and, when dev data is given,
    ``best.ckpt`` by dev BLEU.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("empty training corpus")
    with ad.precision(config.precision):
        if resume is not None:
            model, tensors, meta = load_model(resume)
            if meta["config"] != asdict(config):
                log.warning("resuming with a config that differs from the checkpoint's")
            start = int(meta["step"])
        else:
            model = Graph2Seq(config.model_config(), vocabs or build_vocabs(examples), seed=config.seed)
            start = 0
        opt = Adam(list(model.named_parameters()), config.beta1, config.beta2, config.adam_eps)
        if resume is not None:
            opt.load(tensors, start)
        return _run(config, model, opt, start, examples, dev, out_dir, on_step)


def _save_last_good(out, model, opt, step, config) -> None:
    # parameters are only updated after both checks pass, so they are still the last good ones
    if out is not None:
        save_checkpoint(out / "last.ckpt", model, opt, step, config)


def _run(config, model, opt, start, examples, dev, out_dir, on_step) -> TrainResult:
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.csv"
        fresh = not start or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["step", "loss", "lr", "grad_norm", "dev_bleu"])
    sizes = [ex.n for ex in examples]
    params = model.parameters()
    history: list[StepLog] = []
    best = None
    model.train()
    try:
        for step in range(start + 1, config.max_steps + 1):
            idx = batch_for_step(step, len(examples), sizes, config.batch_size, config.seed)
            batch = model.make_batch([examples[i] for i in idx], mode="train",
                                     seed=sub_seed(config.seed, "batch", step), unk_rate=config.unk_rate)
            stream = DropoutStream(sub_seed(config.seed, "dropout"), step)
            model.zero_grad()
            with ad.Tape():
                res = model.loss(batch, stream)
                loss_value = res.loss.item()
                if not math.isfinite(loss_value):
                    _save_last_good(out, model, opt, step - 1, config)
                    raise TrainingDiverged(f"non-finite loss at step {step}")
                res.loss.backward()
            gn = grad_norm(params)
            if not math.isfinite(gn):
                _save_last_good(out, model, opt, step - 1, config)
                raise TrainingDiverged(f"non-finite gradient norm at step {step}")
            lr = lr_schedule(step, config.d_model, config.warmup)
            opt.step(lr)
            if res.n_clamped:
                log.debug("step %d: %d gold tokens had probability below the floor", step, res.n_clamped)
            entry = StepLog(step, loss_value, lr, gn, res.accuracy)
            if dev and config.eval_every and step % config.eval_every == 0:
                entry.dev_bleu = evaluate_bleu(model, dev, beam=1, max_len=config.max_decode_len)
                model.train()
                if best is None or entry.dev_bleu > best:
                    best = entry.dev_bleu
                    if out is not None:
                        save_checkpoint(out / "best.ckpt", model, opt, step, config)
            history.append(entry)
            if writer is not None and (step % config.log_every == 0 or entry.dev_bleu is not None
                                       or step == config.max_steps):
                writer.writerow([step, f"{loss_value:.6f}", f"{lr:.8f}", f"{gn:.6f}",
                                 "" if entry.dev_bleu is None else f"{entry.dev_bleu:.4f}"])
            if step % config.log_every == 0:
                log.info("step %d loss %.4f lr %.6f |g| %.3f acc %.3f", step, loss_value, lr, gn, res.accuracy)
            if out is not None and config.save_every and step % config.save_every == 0:
                save_checkpoint(out / f"step_{step}.ckpt", model, opt, step, config)
            if on_step is not None and on_step(entry, model):
                break
        if out is not None:
            save_checkpoint(out / "last.ckpt", model, opt, history[-1].step if history else start, config)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model, history, best)
