"""Monte-Carlo evaluation harness: BER sweeps, denoiser SNR gain,
signal histograms, and wall-clock timing, plus the CSV row formats.

Frame generation is organized in fixed-size blocks whose generators are
derived from ``(base, point, block)`` seeds, so results are identical for
any worker count and any stop point; the stop rule is applied while
consuming block results in block order. All floats are written to CSV via
``repr`` and parse back to the identical double.
"""

import csv
import time

import numpy as np
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from polarlab import polar
from polarlab.models import hard_decision

BER_BLOCK_FRAMES = 2048

BER_HEADER = ["decoder", "ebn0_db", "frames", "bit_errors", "ber"]
SNR_HEADER = ["ebn0_db", "input_snr_db", "output_snr_db"]
PDF_HEADER = ["bin_left", "bin_right", "density_received", "density_denoised"]
TIMING_HEADER = ["decoder", "frames", "total_time_s", "per_frame_s", "batch"]


@dataclass(frozen=True)
class BerRow:
    decoder: str
    ebn0_db: float
    frames: int
    bit_errors: int
    ber: float


@dataclass(frozen=True)
class SnrRow:
    ebn0_db: float
    input_snr_db: float
    output_snr_db: float


@dataclass(frozen=True)
class HistRow:
    bin_left: float
    bin_right: float
    density_received: float
    density_denoised: float


@dataclass(frozen=True)
class TimingRow:
    decoder: str
    frames: int
    total_time_s: float
    per_frame_s: float
    batch: int


@dataclass(frozen=True)
class StopRule:
    min_bit_errors: int = 100
    max_frames: int = 1_000_000

    def __post_init__(self):
        if self.min_bit_errors < 0:
            raise ValueError("min_bit_errors must be >= 0")
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")


class ScDecoder:
    """Adapter giving the SC baseline the common decode interface."""

    def __init__(self, code, name="sc"):
        self.code = code
        self.name = name

    def decode(self, y, sigma):
        return polar.sc_decode_batch(self.code, y, sigma)


class ModelDecoder:
    """Adapter running a neural decoder batched; ``sigma`` is ignored."""

    def __init__(self, model, name=None):
        self.model = model
        self.name = name or model.spec.arch_name

    def decode(self, y, sigma):
        _, u_soft = self.model.forward(y)
        return hard_decision(u_soft)


def _block_rng(base, point_idx, block_idx):
    return np.random.default_rng(np.random.SeedSequence([base, point_idx, block_idx]))


def _ber_block(decoder, code, sigma, frames, base, point_idx, block_idx):
    """Simulate one block of random frames; returns (frames, bit_errors)."""
    rng = _block_rng(base, point_idx, block_idx)
    msgs = rng.integers(0, 2, size=(frames, code.K))
    y = polar.awgn_channel(polar.bpsk_modulate(polar.encode(code, msgs)), sigma, rng)
    decoded = decoder.decode(y, sigma)
    return frames, int((decoded != msgs).sum())


def _block_schedule(stop):
    lo = 0
    idx = 0
    while lo < stop.max_frames:
        frames = min(BER_BLOCK_FRAMES, stop.max_frames - lo)
        yield idx, frames
        lo += frames
        idx += 1


def ber_eval(decoder, code, ebn0_list, stop=StopRule(), rng=None, workers=1):
    """Estimate bit error rate at each Eb/N0 point.

    Each point simulates random-message frames until ``stop.min_bit_errors``
    bit errors have been seen or ``stop.max_frames`` frames are spent,
    counting errors over information bits. Results depend only on the
    state of ``rng`` at entry, not on ``workers``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    base = int(rng.integers(0, 2 ** 63))
    rows = []
    for point_idx, ebn0_db in enumerate(ebn0_list):
        sigma = polar.ebn0_to_sigma(ebn0_db, code.rate)
        total_frames = 0
        total_errors = 0
        if workers == 1:
            for block_idx, frames in _block_schedule(stop):
                f, e = _ber_block(decoder, code, sigma, frames, base,
                                  point_idx, block_idx)
                total_frames += f
                total_errors += e
                if total_errors >= stop.min_bit_errors:
                    break
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                pending = []
                schedule = _block_schedule(stop)
                done = False
                while not done:
                    while len(pending) < workers + 2:
                        nxt = next(schedule, None)
                        if nxt is None:
                            break
                        block_idx, frames = nxt
                        pending.append(pool.submit(
                            _ber_block, decoder, code, sigma, frames, base,
                            point_idx, block_idx))
                    if not pending:
                        break
                    f, e = pending.pop(0).result()
                    total_frames += f
                    total_errors += e
                    if total_errors >= stop.min_bit_errors:
                        done = True
                for fut in pending:
                    fut.cancel()
        ber = total_errors / (total_frames * code.K)
        rows.append(BerRow(decoder=decoder.name, ebn0_db=float(ebn0_db),
                           frames=total_frames, bit_errors=total_errors, ber=ber))
    return rows


SNR_CHUNK_FRAMES = 4096


def snr_gain(model, code, ebn0_list, frames, rng=None):
    """Input and output SNR (dB) of the denoiser stage at each Eb/N0 point.

    SNR is ``10 log10(sum s^2 / sum (v - s)^2)`` over all simulated symbols,
    with ``v`` the received (input) or denoised (output) signal.
    """
    if model.denoiser is None:
        raise ValueError(f"{model.spec.arch_name} has no denoiser stage "
                         "(rnnd variants only)")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    rows = []
    for ebn0_db in ebn0_list:
        sigma = polar.ebn0_to_sigma(ebn0_db, code.rate)
        signal_power = noise_in = noise_out = 0.0
        remaining = frames
        while remaining > 0:
            n = min(SNR_CHUNK_FRAMES, remaining)
            remaining -= n
            msgs = rng.integers(0, 2, size=(n, code.K))
            s = polar.bpsk_modulate(polar.encode(code, msgs))
            y = polar.awgn_channel(s, sigma, rng)
            s_hat = model.denoise(y)
            signal_power += float((s * s).sum())
            noise_in += float(((y - s) ** 2).sum())
            noise_out += float(((s_hat - s) ** 2).sum())
        rows.append(SnrRow(
            ebn0_db=float(ebn0_db),
            input_snr_db=10.0 * np.log10(signal_power / noise_in),
            output_snr_db=10.0 * np.log10(signal_power / noise_out)))
    return rows


def pdf_hist(model, code, ebn0_db, frames, rng=None, bins=80, lo=-4.0, hi=4.0):
    """Histogram densities of received vs denoised symbol values.

    Values outside ``[lo, hi]`` are clipped into the edge bins; each
    density column integrates to 1 over the range.
    """
    if model.denoiser is None:
        raise ValueError(f"{model.spec.arch_name} has no denoiser stage "
                         "(rnnd variants only)")
    if bins < 10:
        raise ValueError("bins must be >= 10")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if rng is None:
        rng = np.random.default_rng(0)
    sigma = polar.ebn0_to_sigma(ebn0_db, code.rate)
    edges = np.linspace(lo, hi, bins + 1)
    counts_received = np.zeros(bins, dtype=np.int64)
    counts_denoised = np.zeros(bins, dtype=np.int64)
    remaining = frames
    while remaining > 0:
        n = min(SNR_CHUNK_FRAMES, remaining)
        remaining -= n
        msgs = rng.integers(0, 2, size=(n, code.K))
        s = polar.bpsk_modulate(polar.encode(code, msgs))
        y = polar.awgn_channel(s, sigma, rng)
        s_hat = model.denoise(y)
        counts_received += np.histogram(np.clip(y, lo, hi), bins=edges)[0]
        counts_denoised += np.histogram(np.clip(s_hat, lo, hi), bins=edges)[0]
    width = (hi - lo) / bins
    total = frames * code.N
    rows = []
    for b in range(bins):
        rows.append(HistRow(
            bin_left=float(edges[b]), bin_right=float(edges[b + 1]),
            density_received=counts_received[b] / (total * width),
            density_denoised=counts_denoised[b] / (total * width)))
    return rows


def timing_bench(code, decoders, frames, ebn0_db=0.0, batch=1024, rng=None):
    """Wall-clock decode timing over a shared set of random frames.

    The SC baseline is timed frame by frame (its natural sequential form);
    neural decoders are timed over batched forwards of size ``batch``.
    Raw numbers only; rows are not comparable claims.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    sigma = polar.ebn0_to_sigma(ebn0_db, code.rate)
    msgs = rng.integers(0, 2, size=(frames, code.K))
    y = polar.awgn_channel(polar.bpsk_modulate(polar.encode(code, msgs)), sigma, rng)
    rows = []
    for decoder in decoders:
        sequential = isinstance(decoder, ScDecoder)
        # warm-up outside the timed region
        decoder.decode(y[:min(8, frames)], sigma)
        start = time.perf_counter()
        if sequential:
            for i in range(frames):
                decoder.decode(y[i:i + 1], sigma)
        else:
            for lo_idx in range(0, frames, batch):
                decoder.decode(y[lo_idx:lo_idx + batch], sigma)
        elapsed = time.perf_counter() - start
        rows.append(TimingRow(decoder=decoder.name, frames=frames,
                              total_time_s=elapsed, per_frame_s=elapsed / frames,
                              batch=1 if sequential else batch))
    return rows


# ---------------------------------------------------------------------- CSV I/O

def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _write_csv(path, header, rows, fields):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow([_fmt(getattr(r, f)) for f in fields])


def _read_csv(path, header, make):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader)
        if got != header:
            raise ValueError(f"unexpected header {got}, want {header}")
        for line in reader:
            rows.append(make(line))
    return rows


def write_ber_csv(path, rows):
    _write_csv(path, BER_HEADER, rows, BER_HEADER)


def read_ber_csv(path):
    return _read_csv(path, BER_HEADER, lambda r: BerRow(
        decoder=r[0], ebn0_db=float(r[1]), frames=int(r[2]),
        bit_errors=int(r[3]), ber=float(r[4])))


def write_snr_csv(path, rows):
    _write_csv(path, SNR_HEADER, rows, SNR_HEADER)


def read_snr_csv(path):
    return _read_csv(path, SNR_HEADER, lambda r: SnrRow(
        ebn0_db=float(r[0]), input_snr_db=float(r[1]), output_snr_db=float(r[2])))


def write_pdf_csv(path, rows):
    _write_csv(path, PDF_HEADER, rows, PDF_HEADER)


def read_pdf_csv(path):
    return _read_csv(path, PDF_HEADER, lambda r: HistRow(
        bin_left=float(r[0]), bin_right=float(r[1]),
        density_received=float(r[2]), density_denoised=float(r[3])))


def write_timing_csv(path, rows):
    _write_csv(path, TIMING_HEADER, rows, TIMING_HEADER)


def read_timing_csv(path):
    return _read_csv(path, TIMING_HEADER, lambda r: TimingRow(
        decoder=r[0], frames=int(r[1]), total_time_s=float(r[2]),
        per_frame_s=float(r[3]), batch=int(r[4])))
