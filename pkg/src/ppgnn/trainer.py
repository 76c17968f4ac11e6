"""Training loop, evaluation, convergence metric and epoch-time profiling."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import memtrack
from .errors import ConfigError
from .loader import PrefetchLoader, Tier, TierKind, TransferStats, serial_loader
from .models import AdamState, adam_step, build_model, cross_entropy
from .models._base import tape_nbytes
from .sampler import Method, epoch_seed, make_schedule

__all__ = [
    "TrainConfig",
    "EpochProfile",
    "RunResult",
    "train_run",
    "evaluate",
    "convergence_point",
    "throughput",
    "batch_dropout_seed",
]


@dataclass
class TrainConfig:
    model: str = "sign"
    hops: int = 3
    batch_size: int = 500
    chunk_rows: int | None = None
    method: str = "RR"
    tier: str = "resident"
    epochs: int = 50
    lr: float = 0.01
    dropout: float = 0.0
    seed: int = 0
    eval_every: int = 1
    hidden: int = 64
    heads: int = 4
    mlp_layers: int = 2
    prefetch: bool = True
    eval_batch: int = 4096
    inject_assemble_us: float = 0.0
    inject_transfer_us: float = 0.0
    inject_compute_us: float = 0.0
    dataset: str | None = None
    log: str | None = None
    checkpoint: str | None = None

    _INTS = ("hops", "batch_size", "chunk_rows", "epochs", "seed", "eval_every", "hidden",
             "heads", "mlp_layers", "eval_batch")
    _FLOATS = ("lr", "dropout", "inject_assemble_us", "inject_transfer_us", "inject_compute_us")

    def __post_init__(self):
        for name in self._INTS:
            value = getattr(self, name)
            if value is not None:
                if isinstance(value, bool) or not float(value).is_integer():
                    raise ConfigError(f"{name} must be an integer, got {value!r}")
                setattr(self, name, int(value))
        for name in self._FLOATS:
            if isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a number")
            setattr(self, name, float(getattr(self, name)))
        if not isinstance(self.prefetch, bool):
            raise ConfigError("prefetch must be true or false")
        try:
            self.method = Method(str(self.method).upper()).value
            self.tier = TierKind.parse(str(self.tier)).value
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.model = str(self.model).lower()

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def effective_chunk_rows(self) -> int | None:
        if Method(self.method) is Method.RR:
            return None
        return self.chunk_rows if self.chunk_rows is not None else self.batch_size

    def validate(self) -> "TrainConfig":
        if self.model not in ("sgc", "sign", "hoga"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.hops < 0:
            raise ConfigError("hops must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1 or self.eval_batch < 1:
            raise ConfigError("batch_size, epochs, eval_every and eval_batch must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if Method(self.method) is Method.CR:
            cr = self.effective_chunk_rows()
            if cr < 1 or cr > self.batch_size:
                raise ConfigError(
                    f"CR requires 1 <= chunk_rows <= batch_size (got {cr} > {self.batch_size})"
                )
        Tier(self.tier, self.inject_assemble_us, self.inject_transfer_us).check_method(self.method)
        if self.inject_compute_us < 0:
            raise ConfigError("inject_compute_us must be non-negative")
        return self

    def make_tier(self) -> Tier:
        return Tier(self.tier, self.inject_assemble_us, self.inject_transfer_us)


@dataclass
class EpochProfile:
    assembly_ms: float = 0.0
    transfer_ms: float = 0.0
    forward_ms: float = 0.0
    backward_ms: float = 0.0
    optimizer_ms: float = 0.0
    eval_ms: float = 0.0
    total_ms: float = 0.0
    bytes_transferred: int = 0

    def component_sum(self) -> float:
        return (self.assembly_ms + self.transfer_ms + self.forward_ms + self.backward_ms
                + self.optimizer_ms + self.eval_ms)


@dataclass
class RunResult:
    train_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    val_epochs: list = field(default_factory=list)
    test_acc_curve: list = field(default_factory=list)
    best_val_acc: float = float("nan")
    best_epoch: int = -1
    test_acc: float = float("nan")
    convergence_epoch: int = -1
    profiles: list = field(default_factory=list)
    train_rows: int = 0
    epochs: int = 0
    model: object = None

    def summary(self) -> dict:
        out = {
            "best_val_acc": self.best_val_acc,
            "best_epoch": self.best_epoch,
            "test_acc": self.test_acc,
            "convergence_epoch": self.convergence_epoch,
            "final_loss": self.train_loss[-1] if self.train_loss else None,
        }
        try:
            out["throughput_nodes_per_s"] = throughput(self)
        except ValueError:
            out["throughput_nodes_per_s"] = None
        return out


def convergence_point(val_curve) -> int:
    """Index of the first entry reaching 99% of the curve's peak."""
    val = np.asarray(val_curve, dtype=np.float64)
    if val.size == 0:
        raise ValueError("empty validation curve")
    return int(np.flatnonzero(val >= 0.99 * val.max())[0])


def evaluate(model, hops, labels, block: int = 4096) -> float:
    """Argmax accuracy over a split, in eval mode, streamed in row blocks."""
    labels = np.asarray(labels)
    n = labels.size
    if n == 0:
        raise ValueError("cannot evaluate on an empty split")
    correct = 0
    for start in range(0, n, block):
        stop = min(start + block, n)
        logits = model.predict_logits([h[start:stop] for h in hops])
        correct += int((logits.argmax(axis=1) == labels[start:stop]).sum())
    return correct / n


def throughput(result: RunResult) -> float:
    """Labeled training nodes processed per second of training time."""
    seconds = sum(p.total_ms - p.eval_ms for p in result.profiles) / 1000.0
    if seconds <= 0:
        raise ValueError("no elapsed training time recorded")
    return result.train_rows * result.epochs / seconds


def batch_dropout_seed(seed: int, epoch: int, ordinal: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(epoch), int(ordinal)]).generate_state(1)[0])


def _sleep_us(us):
    if us > 0:
        time.sleep(us / 1e6)


def train_run(config: TrainConfig, data, log_path=None, model=None, steps_limit=None) -> RunResult:
    """Train one model on prepared hop data and report the run metrics.

    ``data`` is a :class:`ppgnn.dataset.PreparedData`. Validation (and test)
    accuracy are measured every ``eval_every`` epochs and on the last epoch;
    the reported test accuracy is the one at the best validation epoch.
    ``steps_limit`` stops after that many optimizer steps (used by the memory
    probe).
    """
    config.validate()
    if config.hops > data.num_hops:
        raise ConfigError(f"config asks for {config.hops} hops, data has {data.num_hops}")
    tier = config.make_tier()
    train = data.train_data(tier, config.hops)
    n_train = data.n_train
    if model is None:
        model = build_model(config.model, data.feature_dim, data.num_classes, config.hops,
                            hidden=config.hidden, heads=config.heads,
                            mlp_layers=config.mlp_layers, dropout=config.dropout,
                            seed=config.seed)
    state = AdamState.for_params(model.params, lr=config.lr)
    param_bytes = sum(p.nbytes for p in model.params.values())
    memtrack.alloc(3 * param_bytes)  # weights + two Adam moments

    has_val = data.n_val > 0
    if has_val:
        val_hops, val_labels = data.split_hops("val", config.hops)
    if data.n_test > 0:
        test_hops, test_labels = data.split_hops("test", config.hops)

    log = open(log_path or config.log, "w") if (log_path or config.log) else None
    result = RunResult(train_rows=n_train, epochs=config.epochs, model=model)
    stats = TransferStats()
    steps = 0
    try:
        for epoch in range(config.epochs):
            prof = EpochProfile()
            stats.reset()
            t_epoch = time.perf_counter()
            sched = make_schedule(config.method, n_train, config.batch_size,
                                  epoch_seed(config.seed, epoch), config.effective_chunk_rows())
            sched_s = time.perf_counter() - t_epoch
            if config.prefetch:
                loader = PrefetchLoader(sched, tier, train, stats)
            else:
                loader = serial_loader(sched, tier, train, stats)
            max_rows = max(sched.batch_sizes(), default=0)
            slot_bytes = max_rows * train.feature_dim * 4 * train.num_hop_mats
            n_slots = 2 if config.prefetch else 1
            memtrack.alloc(n_slots * slot_bytes)
            loss_sum = 0.0
            wait_s = asm_s = xfer_s = fwd_s = bwd_s = opt_s = 0.0
            it = iter(loader)
            try:
                while True:
                    t0 = time.perf_counter()
                    try:
                        batch = next(it)
                    except StopIteration:
                        break
                    t1 = time.perf_counter()
                    wait_s += t1 - t0
                    asm_s += batch.assemble_s
                    xfer_s += batch.transfer_s

                    logits, tape = model.forward(
                        batch, train=True,
                        dropout_seed=batch_dropout_seed(config.seed, epoch, batch.ordinal))
                    tape_bytes = tape_nbytes(tape) + logits.nbytes
                    memtrack.alloc(tape_bytes)
                    loss, dlogits = cross_entropy(logits, batch.labels)
                    _sleep_us(config.inject_compute_us)
                    t2 = time.perf_counter()
                    grads = model.backward(tape, dlogits)
                    memtrack.alloc(param_bytes)
                    memtrack.free(tape_bytes)
                    t3 = time.perf_counter()
                    adam_step(model.params, grads, state)
                    memtrack.free(param_bytes)
                    t4 = time.perf_counter()
                    fwd_s += t2 - t1
                    bwd_s += t3 - t2
                    opt_s += t4 - t3
                    loss_sum += loss * batch.size
                    steps += 1
                    if steps_limit is not None and steps >= steps_limit:
                        break
            finally:
                loader.close()
                memtrack.free(n_slots * slot_bytes)

            # consumer-visible loading time, split like the producer's own timings
            produced = asm_s + xfer_s
            frac = asm_s / produced if produced > 0 else 1.0
            prof.assembly_ms = 1e3 * (sched_s + wait_s * frac)
            prof.transfer_ms = 1e3 * wait_s * (1.0 - frac)
            prof.forward_ms, prof.backward_ms, prof.optimizer_ms = 1e3 * fwd_s, 1e3 * bwd_s, 1e3 * opt_s
            prof.bytes_transferred = stats.bytes_transferred
            result.train_loss.append(loss_sum / n_train)

            record = {"epoch": epoch, "loss": result.train_loss[-1]}
            last = epoch == config.epochs - 1
            if (epoch + 1) % config.eval_every == 0 or last:
                t_eval = time.perf_counter()
                if has_val:
                    va = evaluate(model, val_hops, val_labels, config.eval_batch)
                    result.val_acc.append(va)
                    result.val_epochs.append(epoch)
                    record["val_acc"] = va
                if data.n_test > 0:
                    result.test_acc_curve.append(evaluate(model, test_hops, test_labels, config.eval_batch))
                prof.eval_ms = 1e3 * (time.perf_counter() - t_eval)
            prof.total_ms = 1e3 * (time.perf_counter() - t_epoch)
            result.profiles.append(prof)
            if log is not None:
                record.update(asdict(prof))
                log.write(json.dumps(record) + "\n")
            if steps_limit is not None and steps >= steps_limit:
                result.epochs = epoch + 1
                break
    except BaseException:
        if log is not None:
            log.close()
        raise
    finally:
        memtrack.free(3 * param_bytes)

    if result.val_acc:
        best = int(np.argmax(result.val_acc))
        result.best_val_acc = result.val_acc[best]
        result.best_epoch = result.val_epochs[best]
        if result.test_acc_curve:
            result.test_acc = result.test_acc_curve[best]
        result.convergence_epoch = result.val_epochs[convergence_point(result.val_acc)]
    elif result.test_acc_curve:
        result.test_acc = result.test_acc_curve[-1]
    if log is not None:
        log.write(json.dumps({"summary": True, **result.summary()}) + "\n")
        log.close()
    return result
