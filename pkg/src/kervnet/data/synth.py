"""Synthetic vibration surrogate for the (unavailable) helicopter flight-test data.

Each sample is a sum of sinusoids plus white noise, with per-sample gain,
noise level, frequency and phase drawn from the sample's own seeded stream
to mimic varying operating conditions. Abnormal samples add one of three
faults on top of exactly the same normal signal.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, DataError
from ..tensor import Rng
from .har import LabeledWindowSet

ANOMALY_KINDS = ("harmonic-injection", "amplitude-shift", "impulse-train")
VIBRATION_CLASSES = (0, 1)

IMPULSE_RATE_HZ = 8.0
RING_FREQ_HZ = 200.0
RING_TAPS = 32
RING_DECAY = 6.0


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: float = 1024.0
    sample_length: int = 61440
    base_freqs: tuple = (23.0, 57.0, 111.0)
    amplitudes: tuple = (1.0, 0.5, 0.25)
    noise_std: float = 0.2
    anomaly_kind: str = "harmonic-injection"
    # in units of noise_std
    anomaly_magnitude: float = 3.0
    # injected tone frequency as a multiple of the first base frequency
    harmonic: float = 2.0
    freq_jitter: float = 0.01
    gain_jitter: float = 0.1
    noise_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "base_freqs", tuple(float(f) for f in self.base_freqs))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if len(self.base_freqs) != len(self.amplitudes) or not self.base_freqs:
            raise ConfigurationError("base_freqs and amplitudes must be non-empty and equally long")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ConfigurationError(f"anomaly_kind must be one of {ANOMALY_KINDS}")
        if self.sample_length < 1 or self.sample_rate <= 0 or self.noise_std < 0:
            raise ConfigurationError("invalid sample geometry or noise level")
        nyquist = self.sample_rate / 2
        top = (1 + 4 * self.freq_jitter)
        tones = list(self.base_freqs) + [self.harmonic * self.base_freqs[0]]
        if self.anomaly_kind == "impulse-train":
            tones.append(RING_FREQ_HZ)
        for f in tones:
            if f * top >= nyquist:
                raise ConfigurationError(f"frequency {f} Hz aliases at sample rate {self.sample_rate} Hz")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_freqs"] = list(self.base_freqs)
        d["amplitudes"] = list(self.amplitudes)
        return d


def synth_sample(config: SynthConfig, key: str, abnormal: bool) -> np.ndarray:
    """One sample of shape ``(sample_length,)``; the normal part depends only on ``key``."""
    rng = Rng(config.seed).spawn(key)
    k = len(config.base_freqs)
    gain = np.exp(config.gain_jitter * rng.normal(()))
    noise_scale = np.exp(config.noise_jitter * rng.normal(()))
    freqs = np.asarray(config.base_freqs) * (1 + config.freq_jitter * rng.normal((k,)))
    phases = rng.uniform((k,), 0.0, 2 * np.pi)
    fault_phase = rng.uniform((), 0.0, 2 * np.pi)
    impulse_offset = int(rng.integers(0, int(config.sample_rate / IMPULSE_RATE_HZ)))
    noise = rng.normal((config.sample_length,))

    t = np.arange(config.sample_length) / config.sample_rate
    tones = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
    x = gain * (np.asarray(config.amplitudes) @ tones) + config.noise_std * noise_scale * noise
    if not abnormal:
        return x
    level = config.anomaly_magnitude * config.noise_std
    if config.anomaly_kind == "harmonic-injection":
        fault = np.sin(2 * np.pi * config.harmonic * freqs[0] * t + fault_phase)
    elif config.anomaly_kind == "amplitude-shift":
        fault = tones.sum(axis=0)
    else:
        spikes = np.zeros(config.sample_length)
        spikes[impulse_offset :: int(config.sample_rate / IMPULSE_RATE_HZ)] = 1.0
        n = np.arange(RING_TAPS)
        ring = np.exp(-n / RING_DECAY) * np.sin(2 * np.pi * RING_FREQ_HZ * n / config.sample_rate)
        fault = np.convolve(spikes, ring / np.abs(ring).max())[: config.sample_length]
    return x + level * fault


def synth_vibration(config: SynthConfig, n_normal: int, n_abnormal: int, n_train: int | None = None):
    """Returns ``(train, test, labels)``.

    ``train`` holds ``n_train`` (default ``n_normal``) healthy samples; ``test``
    holds ``n_normal`` healthy then ``n_abnormal`` faulty samples, labelled 0/1.
    """
    n_train = n_normal if n_train is None else n_train
    train = np.stack([synth_sample(config, f"train/{i}", False) for i in range(n_train)]) \
        if n_train else np.zeros((0, config.sample_length))
    test = [synth_sample(config, f"test/{i}", False) for i in range(n_normal)]
    test += [synth_sample(config, f"test/{n_normal + i}", True) for i in range(n_abnormal)]
    labels = np.array([0] * n_normal + [1] * n_abnormal, dtype=np.int64)
    test_arr = np.stack(test) if test else np.zeros((0, config.sample_length))
    return (
        LabeledWindowSet(train[..., None], np.zeros(n_train, dtype=np.int64), "train", VIBRATION_CLASSES),
        LabeledWindowSet(test_arr[..., None], labels, "test", VIBRATION_CLASSES),
        labels,
    )


# ---------------------------------------------------------------- export

SPLIT_HEADER = "# kervnet split v1"


def write_split(data: LabeledWindowSet, path) -> Path:
    """Raw little-endian float64 ``<path>.bin`` plus a plain-text ``<path>.idx`` sidecar."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".idx") else path
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".bin").write_bytes(data.windows.astype("<f8").tobytes())
    n, length, channels = data.windows.shape
    lines = [SPLIT_HEADER, f"split {data.split}", f"shape {n} {length} {channels}", "dtype <f8",
             "classes " + " ".join(map(str, data.classes)), "sample_id label"]
    lines += [f"{i} {int(lab)}" for i, lab in enumerate(data.labels)]
    base.with_suffix(".idx").write_text("\n".join(lines) + "\n")
    return base.with_suffix(".bin")


def read_split(path) -> LabeledWindowSet:
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".idx") else path
    binf, idxf = base.with_suffix(".bin"), base.with_suffix(".idx")
    if not binf.is_file() or not idxf.is_file():
        raise DataError(f"split files {binf} / {idxf} not found")
    lines = idxf.read_text().splitlines()
    try:
        if lines[0] != SPLIT_HEADER:
            raise DataError(f"{idxf}: not a kervnet split index")
        meta = dict(line.split(" ", 1) for line in lines[1:5])
        n, length, channels = (int(v) for v in meta["shape"].split())
        classes = tuple(int(v) for v in meta["classes"].split())
        labels = np.array([int(line.split()[1]) for line in lines[6 : 6 + n]], dtype=np.int64)
    except (IndexError, KeyError, ValueError) as exc:
        raise DataError(f"{idxf}: malformed index ({exc})") from exc
    if n == 0:
        raise DataError(f"{binf}: split is empty")
    raw = binf.read_bytes()
    if len(raw) != n * length * channels * 8 or len(labels) != n:
        raise DataError(f"{binf}: size does not match the index shape {n}x{length}x{channels}")
    windows = np.frombuffer(raw, dtype="<f8").reshape(n, length, channels).astype(np.float64)
    return LabeledWindowSet(windows, labels, meta["split"], classes)
