"""Decoder model zoo: MLP / CNN / RNN families, each as a plain decoder
(NND) or with a residual denoiser in front (RNND).

The RNND forward is ``s_hat = y + H(y)`` followed by ``u_soft = G(s_hat)``;
its training loss is the sum of a denoising term ``||s_hat - s||^2 / N``
and a decoding term ``||u_soft - u||^2 / K``, both averaged over the batch.
The NND keeps the same trunk depth, drops the shortcut and the N-wide
bottleneck, and trains on the decoding term alone.
"""

import numpy as np
from dataclasses import dataclass, field

from polarlab.nn import (
    Affine,
    Conv1D,
    LSTM,
    Layer,
    MaxPool1D,
    ReLU,
    Sequential,
    Sigmoid,
    mse_loss,
    zero_grads,
)

FAMILIES = ("mlp", "cnn", "rnn")
VARIANTS = ("nnd", "rnnd")


class AsChannels(Layer):
    """(batch, N) -> (batch, 1, N)"""

    def forward(self, x):
        return x[:, None, :]

    def backward(self, dout):
        return dout[:, 0, :]


class Flatten(Layer):
    """(batch, channels, length) -> (batch, channels * length)"""

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class AsSequence(Layer):
    """(batch, N) -> (batch, N, 1): one symbol per timestep."""

    def forward(self, x):
        return x[:, :, None]

    def backward(self, dout):
        return dout[:, :, 0]


class TakeLast(Layer):
    """(batch, time, hidden) -> (batch, hidden), keeping the final step."""

    def forward(self, x):
        self._shape = x.shape
        return x[:, -1, :]

    def backward(self, dout):
        dx = np.zeros(self._shape)
        dx[:, -1, :] = dout
        return dx


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; dimension defaults target the (16, 8) code."""

    family: str
    variant: str
    N: int = 16
    K: int = 8
    mlp_hidden: tuple = (128, 64, 32)
    cnn_denoiser_channels: tuple = (64, 48, 32)
    cnn_decoder_channels: tuple = (64, 32, 32)
    rnn_denoiser_hidden: int = 64
    rnn_decoder_hidden: int = 48

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 1 <= self.K <= self.N:
            raise ValueError(f"need 1 <= K <= N, got K={self.K}, N={self.N}")

    @property
    def arch_name(self):
        return f"{self.family}-{self.variant}-{self.N}-{self.K}"


def parse_arch_name(name):
    """Inverse of ``ModelSpec.arch_name`` for the default dimension table."""
    parts = name.split("-")
    if len(parts) != 4:
        raise ValueError(f"bad architecture name {name!r}; want family-variant-N-K")
    family, variant, n_str, k_str = parts
    try:
        return ModelSpec(family=family, variant=variant, N=int(n_str), K=int(k_str))
    except ValueError as exc:
        raise ValueError(f"bad architecture name {name!r}: {exc}") from None


@dataclass
class LossValues:
    total: float
    denoise: float
    decode: float


def _mlp_stack(dims_in, hidden, dims_out, rng, sigmoid_head):
    layers = []
    prev = dims_in
    for width in hidden:
        layers += [Affine(prev, width, rng), ReLU()]
        prev = width
    layers.append(Affine(prev, dims_out, rng))
    if sigmoid_head:
        layers.append(Sigmoid())
    return Sequential(layers)


def _cnn_stack(channels, length, dims_out, rng, sigmoid_head):
    """Three conv blocks with pooling after the first two (length -> length/4)."""
    if length % 4 != 0:
        raise ValueError(f"cnn stacks pool twice; N must be divisible by 4, got {length}")
    c1, c2, c3 = channels
    layers = [
        AsChannels(),
        Conv1D(1, c1, rng), ReLU(), MaxPool1D(),
        Conv1D(c1, c2, rng), ReLU(), MaxPool1D(),
        Conv1D(c2, c3, rng), ReLU(),
        Flatten(),
        Affine(c3 * (length // 4), dims_out, rng),
    ]
    if sigmoid_head:
        layers.append(Sigmoid())
    return Sequential(layers)


def _cnn_nnd_stack(spec, rng):
    # Six conv layers; pools stay where the two three-conv stacks had them,
    # so the length runs N -> N/4 across the first half and N/4 -> N/16
    # across the second.
    if spec.N % 16 != 0:
        raise ValueError(
            f"cnn-nnd pools four times; N must be divisible by 16, got {spec.N}")
    c1, c2, c3 = spec.cnn_denoiser_channels
    d1, d2, d3 = spec.cnn_decoder_channels
    return Sequential([
        AsChannels(),
        Conv1D(1, c1, rng), ReLU(), MaxPool1D(),
        Conv1D(c1, c2, rng), ReLU(), MaxPool1D(),
        Conv1D(c2, c3, rng), ReLU(),
        Conv1D(c3, d1, rng), ReLU(), MaxPool1D(),
        Conv1D(d1, d2, rng), ReLU(), MaxPool1D(),
        Conv1D(d2, d3, rng), ReLU(),
        Flatten(),
        Affine(d3 * (spec.N // 16), spec.K, rng),
        Sigmoid(),
    ])


def _rnn_stack(n_in, hidden, dims_out, rng, sigmoid_head):
    layers = [AsSequence(), LSTM(n_in, hidden, rng), TakeLast(),
              Affine(hidden, dims_out, rng)]
    if sigmoid_head:
        layers.append(Sigmoid())
    return Sequential(layers)


def _build_stacks(spec, rng):
    """Returns (denoiser, decoder); denoiser is None for NND variants."""
    if spec.family == "mlp":
        if spec.variant == "rnnd":
            return (_mlp_stack(spec.N, spec.mlp_hidden, spec.N, rng, False),
                    _mlp_stack(spec.N, spec.mlp_hidden, spec.K, rng, True))
        return None, _mlp_stack(spec.N, spec.mlp_hidden + spec.mlp_hidden,
                                spec.K, rng, True)
    if spec.family == "cnn":
        if spec.variant == "rnnd":
            return (_cnn_stack(spec.cnn_denoiser_channels, spec.N, spec.N, rng, False),
                    _cnn_stack(spec.cnn_decoder_channels, spec.N, spec.K, rng, True))
        return None, _cnn_nnd_stack(spec, rng)
    if spec.variant == "rnnd":
        return (_rnn_stack(1, spec.rnn_denoiser_hidden, spec.N, rng, False),
                _rnn_stack(1, spec.rnn_decoder_hidden, spec.K, rng, True))
    nnd = Sequential([
        AsSequence(),
        LSTM(1, spec.rnn_denoiser_hidden, rng),
        LSTM(spec.rnn_denoiser_hidden, spec.rnn_decoder_hidden, rng),
        TakeLast(),
        Affine(spec.rnn_decoder_hidden, spec.K, rng),
        Sigmoid(),
    ])
    return None, nnd


class Model:
    """A built decoder (optionally with its residual denoiser)."""

    def __init__(self, spec, denoiser, decoder):
        self.spec = spec
        self.denoiser = denoiser
        self.decoder = decoder

    @property
    def is_rnnd(self):
        return self.denoiser is not None

    def params(self):
        out = []
        if self.denoiser is not None:
            out += self.denoiser.params()
        out += self.decoder.params()
        return out

    def named_params(self):
        out = []
        if self.denoiser is not None:
            out += self.denoiser.named_params(prefix="denoiser.")
        out += self.decoder.named_params(prefix="decoder.")
        return out

    def _check_input(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != self.spec.N:
            raise ValueError(f"expected (batch, {self.spec.N}), got {y.shape}")
        return y

    def forward(self, y):
        """Returns ``(s_hat, u_soft)``; ``s_hat`` is None for NND variants."""
        y = self._check_input(y)
        if self.denoiser is None:
            return None, self.decoder.forward(y)
        s_hat = y + self.denoiser.forward(y)
        return s_hat, self.decoder.forward(s_hat)

    def denoise(self, y):
        if self.denoiser is None:
            raise ValueError(f"{self.spec.arch_name} has no denoiser stage")
        y = self._check_input(y)
        return y + self.denoiser.forward(y)

    def loss(self, y, s_true, u_true, compute_grads=False):
        """Multi-task loss for RNND, decoding loss for NND.

        With ``compute_grads`` the parameter gradients of this batch are
        left in the layers (previous gradients are cleared first).
        """
        u_true = np.asarray(u_true, dtype=np.float64)
        s_hat, u_soft = self.forward(y)
        decode, d_u = mse_loss(u_soft, u_true, self.spec.K)
        if self.denoiser is None:
            if compute_grads:
                zero_grads(self.params())
                self.decoder.backward(d_u)
            return LossValues(total=decode, denoise=0.0, decode=decode)
        denoise, d_s = mse_loss(s_hat, np.asarray(s_true, dtype=np.float64),
                                self.spec.N)
        if compute_grads:
            zero_grads(self.params())
            d_s_total = d_s + self.decoder.backward(d_u)
            self.denoiser.backward(d_s_total)
        return LossValues(total=denoise + decode, denoise=denoise, decode=decode)

    def objective_loss(self, x, target, compute_grads=False):
        s_true, u_true = target
        return self.loss(x, s_true, u_true, compute_grads=compute_grads).total


def build(spec, seed):
    """Construct a model with deterministic seeded initialization.

    Affine and conv weights are Glorot-uniform, LSTM weights uniform within
    +-1/sqrt(hidden), all biases zero; the draw order is fixed (denoiser
    stack first, then decoder, in layer order).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    denoiser, decoder = _build_stacks(spec, rng)
    return Model(spec, denoiser, decoder)


def hard_decision(u_soft):
    """Threshold soft bits at 0.5; exactly 0.5 rounds to 1."""
    return (np.asarray(u_soft) >= 0.5).astype(np.int64)
