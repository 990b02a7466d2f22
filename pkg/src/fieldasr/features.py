"""Audio decoding and normalized log-mel filterbank features.

The front end is fixed at desk scale: 25 ms Hann windows every 10 ms,
magnitude-squared spectrum, triangular mel filters, natural log with a
1e-10 floor so digital silence stays finite.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, IntegrityError, RangeError, SizeError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    window_ms: int = 25
    hop_ms: int = 10
    n_fft: int = 512
    n_mels: int = 40
    mel_fmin: float = 20.0
    mel_fmax: float | None = None  # defaults to sample_rate / 2
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        if self.window_ms < self.hop_ms:
            raise ValueError("window_ms must be >= hop_ms")
        if self.n_fft < self.window_samples:
            raise ValueError("n_fft must cover the window")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")

    @property
    def window_samples(self):
        return self.sample_rate * self.window_ms // 1000

    @property
    def hop_samples(self):
        return self.sample_rate * self.hop_ms // 1000

    @property
    def fmax(self):
        return self.sample_rate / 2 if self.mel_fmax is None else self.mel_fmax

    def to_dict(self):
        return {
            "sample_rate": self.sample_rate,
            "window_ms": self.window_ms,
            "hop_ms": self.hop_ms,
            "n_fft": self.n_fft,
            "n_mels": self.n_mels,
            "mel_fmin": self.mel_fmin,
            "mel_fmax": self.mel_fmax,
            "log_floor": self.log_floor,
        }


@dataclass(frozen=True)
class FeatureMatrix:
    utterance_id: str
    frames: np.ndarray  # (T, n_mels)

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ValueError("frames must be 2-D")

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class CmvnStats:
    mean: np.ndarray
    stddev: np.ndarray  # clamped >= 1e-8

    def to_arrays(self):
        return self.mean, self.stddev


def frame_count(n_samples, cfg):
    return 1 + (n_samples - cfg.window_samples) // cfg.hop_samples


def decode_wav(path, start_ms=None, end_ms=None, cfg=FeatureConfig()):
    """Decode a PCM s16le WAV slice to mono samples in [-1, 1].

    Stereo is averaged; a sample rate different from the config is an error
    rather than a silent resample.
    """
    try:
        reader = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    with reader:
        n_channels = reader.getnchannels()
        samp_width = reader.getsampwidth()
        rate = reader.getframerate()
        n_frames = reader.getnframes()
        if reader.getcomptype() != "NONE":
            raise FormatError(
                f"{path}: compression type {reader.getcomptype()!r}, need PCM"
            )
        if samp_width != 2:
            raise FormatError(
                f"{path}: sample width {samp_width * 8} bits, need 16-bit PCM"
            )
        if rate != cfg.sample_rate:
            raise FormatError(
                f"{path}: sample rate {rate} Hz, expected {cfg.sample_rate} Hz"
            )
        if n_channels not in (1, 2):
            raise FormatError(f"{path}: {n_channels} channels, need mono or stereo")

        first = 0 if start_ms is None else start_ms * rate // 1000
        last = n_frames if end_ms is None else end_ms * rate // 1000
        if not (0 <= first <= last <= n_frames):
            raise RangeError(
                f"{path}: slice [{start_ms}, {end_ms}) ms outside file of "
                f"{n_frames} samples"
            )
        reader.setpos(first)
        raw = reader.readframes(last - first)

    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    return data


def hann_window(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg):
    """Triangular filters on FFT bin frequencies; (n_mels, n_fft//2+1)."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    mel_points = np.linspace(
        hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2
    )
    hz_points = mel_to_hz(mel_points)
    bank = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (fft_freqs - left) / (center - left)
        down = (right - fft_freqs) / (right - center)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


def mel_center_freqs(cfg):
    """Center frequency (Hz) of each mel band."""
    mel_points = np.linspace(
        hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2
    )
    return mel_to_hz(mel_points)[1:-1]


def logmel(samples, cfg=FeatureConfig(), utterance_id=""):
    """Log-mel features for a sample vector; T x n_mels."""
    samples = np.asarray(samples, dtype=np.float64)
    win = cfg.window_samples
    hop = cfg.hop_samples
    if samples.size < win:
        raise SizeError(
            f"need at least {win} samples for one window, got {samples.size}"
        )
    n_frames = frame_count(samples.size, cfg)
    window = hann_window(win)
    frames = np.empty((n_frames, win))
    for t in range(n_frames):
        frames[t] = samples[t * hop : t * hop + win]
    spectrum = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel_energy = power @ mel_filterbank(cfg).T
    out = np.log(np.maximum(mel_energy, cfg.log_floor))
    return FeatureMatrix(utterance_id=utterance_id, frames=out)


def cmvn_fit(feature_matrices):
    """Per-bin mean/stddev over all frames of the training set."""
    mats = [fm.frames for fm in feature_matrices]
    total = sum(m.shape[0] for m in mats)
    if total < 2:
        raise SizeError(f"need at least 2 frames to fit CMVN, got {total}")
    stacked = np.concatenate(mats, axis=0)
    mean = stacked.mean(axis=0)
    stddev = np.maximum(stacked.std(axis=0), 1e-8)
    return CmvnStats(mean=mean, stddev=stddev)


def cmvn_apply(fm, stats):
    return FeatureMatrix(
        utterance_id=fm.utterance_id,
        frames=(fm.frames - stats.mean) / stats.stddev,
    )


def utterance_features(corpus, cfg=FeatureConfig()):
    """Decode and featurize every utterance; {utt_id: FeatureMatrix}."""
    out = {}
    for utt in corpus.utterances:
        rec = corpus.recordings[utt.recording_id]
        samples = decode_wav(rec.path, utt.start_ms, utt.end_ms, cfg)
        out[utt.id] = logmel(samples, cfg, utterance_id=utt.id)
    return out


# --- binary feature cache ------------------------------------------------
# record = u32 id length, id bytes, u32 T, u32 n_mels, T*n_mels f32 LE

def write_feature_cache(path, feature_matrices):
    with open(path, "wb") as fh:
        for fm in feature_matrices:
            ident = fm.utterance_id.encode("utf-8")
            t_len, n_mels = fm.frames.shape
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<II", t_len, n_mels))
            fh.write(fm.frames.astype("<f4").tobytes())


def read_feature_cache(path):
    out = {}
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise IntegrityError(f"{path}: truncated record header")
            (id_len,) = struct.unpack("<I", head)
            ident = fh.read(id_len)
            dims = fh.read(8)
            if len(ident) < id_len or len(dims) < 8:
                raise IntegrityError(f"{path}: truncated record")
            t_len, n_mels = struct.unpack("<II", dims)
            payload = fh.read(4 * t_len * n_mels)
            if len(payload) < 4 * t_len * n_mels:
                raise IntegrityError(f"{path}: truncated payload")
            frames = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            uid = ident.decode("utf-8")
            out[uid] = FeatureMatrix(
                utterance_id=uid, frames=frames.reshape(t_len, n_mels)
            )
    return out
