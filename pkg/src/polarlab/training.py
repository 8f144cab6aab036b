"""Training loop and checkpoint I/O.

The training set is the full codebook: every information pattern in
ascending binary order, encoded and BPSK-modulated once up front. An epoch
walks the codebook in that fixed order in consecutive batch slices; every
iteration draws fresh channel noise at the training Eb/N0, so the model
never sees the same received vector twice.
"""

import csv
import json
import os

import numpy as np
from dataclasses import dataclass, field

from polarlab import polar
from polarlab.models import Model, build, parse_arch_name
from polarlab.nn import Adam

CHECKPOINT_FORMAT_VERSION = 1
TRACE_HEADER = ["epoch", "step", "total_loss", "denoise_loss", "decode_loss"]


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 2 ** 16
    train_ebn0_db: float = 0.0
    lr: float = 0.001
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass
class Dataset:
    code: polar.PolarCode
    messages: np.ndarray   # (2^K, K) information bits, ascending binary order
    symbols: np.ndarray    # (2^K, N) BPSK codewords


def gen_dataset(code):
    """Every information pattern (most significant bit first), encoded."""
    if code.K > 16:
        raise ValueError(f"full codebook generation needs K <= 16, got {code.K}")
    count = 2 ** code.K
    messages = np.zeros((count, code.K), dtype=np.int64)
    for j in range(code.K):
        messages[:, j] = (np.arange(count) >> (code.K - 1 - j)) & 1
    symbols = polar.bpsk_modulate(polar.encode(code, messages))
    return Dataset(code=code, messages=messages, symbols=symbols)


@dataclass
class TraceRow:
    epoch: int
    step: int
    total_loss: float
    denoise_loss: float
    decode_loss: float


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for r in self.rows:
                writer.writerow([r.epoch, r.step, repr(r.total_loss),
                                 repr(r.denoise_loss), repr(r.decode_loss)])

    @classmethod
    def read_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != TRACE_HEADER:
                raise ValueError(f"unexpected trace header {header}")
            for row in reader:
                trace.rows.append(TraceRow(int(row[0]), int(row[1]),
                                           float(row[2]), float(row[3]),
                                           float(row[4])))
        return trace


def _batch_slices(count, batch_size):
    """Consecutive fixed-order slices; the tail slice may be short."""
    return [(lo, min(lo + batch_size, count))
            for lo in range(0, count, batch_size)]


def train(model, dataset, config, rng=None, epoch_callback=None):
    """Train ``model`` in place; returns the loss trace.

    ``rng`` defaults to a stream derived from ``config.seed`` that is
    independent of the build-time init stream. ``epoch_callback(model,
    epoch)`` fires every ``checkpoint_every`` epochs when set.

    Raises
    ------
    TrainingDiverged
        If any logged loss stops being finite.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    sigma = polar.ebn0_to_sigma(config.train_ebn0_db, dataset.code.rate)
    optimizer = Adam(model.params(), lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.eps)
    slices = _batch_slices(len(dataset.messages), config.batch_size)
    trace = TrainTrace()
    step = 0
    for epoch in range(1, config.epochs + 1):
        for lo, hi in slices:
            step += 1
            s = dataset.symbols[lo:hi]
            u = dataset.messages[lo:hi]
            y = s + sigma * rng.standard_normal(s.shape)
            values = model.loss(y, s, u, compute_grads=True)
            if not np.isfinite(values.total):
                raise TrainingDiverged(
                    f"non-finite loss {values.total} at epoch {epoch} step {step}")
            optimizer.step()
            if step % config.log_every == 0:
                trace.rows.append(TraceRow(epoch, step, values.total,
                                           values.denoise, values.decode))
        if (epoch_callback is not None and config.checkpoint_every
                and epoch % config.checkpoint_every == 0):
            epoch_callback(model, epoch)
    return trace


# ------------------------------------------------------------------ checkpoints

@dataclass(frozen=True)
class CheckpointMeta:
    arch_name: str
    seed: int
    epoch: int


def _infer_spec(base, shapes):
    """Recover layer widths from stored tensor shapes.

    The architecture name pins family/variant/N/K; the width fields are
    read back off the weight shapes at the builder's fixed layer indices.
    A file that does not expose the expected tensors fails here, and any
    deeper inconsistency fails the exact name/shape comparison afterwards.
    """
    from dataclasses import replace

    def dim(name, axis):
        if name not in shapes:
            raise CheckpointError(f"checkpoint lacks tensor {name!r} "
                                  f"required by {base.arch_name}")
        return int(shapes[name][axis])

    if base.family == "mlp":
        stack = "denoiser" if base.variant == "rnnd" else "decoder"
        hidden = tuple(dim(f"{stack}.{i}.W", 1) for i in (0, 2, 4))
        return replace(base, mlp_hidden=hidden)
    if base.family == "cnn":
        if base.variant == "rnnd":
            return replace(
                base,
                cnn_denoiser_channels=tuple(dim(f"denoiser.{i}.W", 1)
                                            for i in (1, 4, 7)),
                cnn_decoder_channels=tuple(dim(f"decoder.{i}.W", 1)
                                           for i in (1, 4, 7)))
        return replace(
            base,
            cnn_denoiser_channels=tuple(dim(f"decoder.{i}.W", 1)
                                        for i in (1, 4, 7)),
            cnn_decoder_channels=tuple(dim(f"decoder.{i}.W", 1)
                                       for i in (9, 12, 15)))
    if base.variant == "rnnd":
        return replace(base,
                       rnn_denoiser_hidden=dim("denoiser.1.Wh_i", 0),
                       rnn_decoder_hidden=dim("decoder.1.Wh_i", 0))
    return replace(base,
                   rnn_denoiser_hidden=dim("decoder.1.Wh_i", 0),
                   rnn_decoder_hidden=dim("decoder.2.Wh_i", 0))


def save_checkpoint(model, path, seed, epoch):
    """Write the model's tensors as JSON (decimal shortest-round-trip floats)."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch_name": model.spec.arch_name,
        "seed": int(seed),
        "epoch": int(epoch),
        "tensors": [
            {"name": name, "shape": list(p.value.shape),
             "values": p.value.reshape(-1).tolist()}
            for name, p in model.named_params()
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild the architecture named in the file and restore its tensors.

    Returns ``(model, meta)``. Any structural mismatch (version, tensor
    names, shapes, non-finite values) raises ``CheckpointError`` before the
    model is touched.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from None

    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format_version {version!r}; "
            f"this build reads {CHECKPOINT_FORMAT_VERSION}")
    for key in ("arch_name", "seed", "epoch", "tensors"):
        if key not in doc:
            raise CheckpointError(f"checkpoint {path} is missing field {key!r}")
    try:
        base_spec = parse_arch_name(doc["arch_name"])
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None

    stored = {}
    for entry in doc["tensors"]:
        arr = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(
                f"tensor {entry['name']!r} has {arr.size} values for shape {shape}")
        if not np.isfinite(arr).all():
            raise CheckpointError(f"tensor {entry['name']!r} has non-finite values")
        stored[entry["name"]] = arr.reshape(shape)

    spec = _infer_spec(base_spec, {name: a.shape for name, a in stored.items()})
    try:
        model = build(spec, seed=doc["seed"])
    except ValueError as exc:
        raise CheckpointError(f"cannot rebuild {doc['arch_name']}: {exc}") from None

    expected = dict(model.named_params())
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise CheckpointError(
            f"tensor names do not match {doc['arch_name']}: "
            f"missing {missing}, unexpected {extra}")
    for name, p in expected.items():
        if stored[name].shape != p.value.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {stored[name].shape}, "
                f"expected {p.value.shape}")
    for name, p in expected.items():
        p.value[...] = stored[name]
    meta = CheckpointMeta(arch_name=doc["arch_name"], seed=int(doc["seed"]),
                          epoch=int(doc["epoch"]))
    return model, meta
