"""Character error rate, synthetic corpora, and experiment harnesses.

CER counts come from one optimal Levenshtein alignment over unicode scalar
values (spaces count), with cell-level ties resolved in the order
substitution > deletion > insertion. Corpus CER is micro-averaged: total
edits over total reference characters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Recording, split_corpus, nested_subsets, utterance
from .ctc import CharInventory
from .errors import ParameterError, UndefinedRateError
from .features import CmvnStats, FeatureMatrix, cmvn_apply, cmvn_fit


@dataclass(frozen=True)
class CerReport:
    substitutions: int
    insertions: int
    deletions: int
    ref_chars: int
    cer: float

    @property
    def edits(self):
        return self.substitutions + self.insertions + self.deletions


def edit_counts(reference, hypothesis):
    """(S, I, D) of one optimal alignment, ties sub > del > ins."""
    n, m = len(reference), len(hypothesis)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        ref_ch = reference[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ref_ch != hypothesis[j - 1])
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = min(diag, up, left)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = reference[i - 1] != hypothesis[j - 1]
            if dist[i][j] == dist[i - 1][j - 1] + cost:
                subs += int(cost)
                i, j = i - 1, j - 1
                continue
        if i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
            continue
        ins += 1
        j -= 1
    return subs, ins, dels


def cer(reference, hypothesis):
    """Per-pair character error rate; empty/empty is 0, empty reference
    against a non-empty hypothesis has no defined rate."""
    if not reference:
        if not hypothesis:
            return CerReport(0, 0, 0, 0, 0.0)
        raise UndefinedRateError(
            "reference is empty; the rate denominator is zero "
            "(aggregate with corpus_cer instead)"
        )
    subs, ins, dels = edit_counts(reference, hypothesis)
    return CerReport(subs, ins, dels, len(reference),
                     (subs + ins + dels) / len(reference))


def corpus_cer(pairs):
    """Micro-averaged CER: total edit operations over total ref characters."""
    total_edits = 0
    total_chars = 0
    for reference, hypothesis in pairs:
        subs, ins, dels = edit_counts(reference, hypothesis)
        total_edits += subs + ins + dels
        total_chars += len(reference)
    if total_chars == 0:
        raise UndefinedRateError("all references are empty")
    return total_edits / total_chars


# --- synthetic corpus ---------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Stand-in for field recordings: per-character feature templates with
    Gaussian noise; one frame is worth 10 ms of synthetic time."""

    alphabet: str
    n_utterances: int
    template_frames_per_char: int = 5
    noise_sigma: float = 0.1
    utterance_length_chars: tuple = (3, 8)
    n_mels: int = 40
    seed: int = 0

    def __post_init__(self):
        if not self.alphabet:
            raise ParameterError("synth alphabet must not be empty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ParameterError("synth alphabet characters must be unique")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        lo, hi = self.utterance_length_chars
        if not 1 <= lo <= hi:
            raise ParameterError("bad utterance_length_chars range")


FRAME_MS = 10


def synth_templates(spec):
    rng = np.random.default_rng(spec.seed)
    return {
        ch: rng.normal(size=spec.n_mels)
        for ch in spec.alphabet
    }


def synth_corpus(spec):
    """Deterministic synthetic (Corpus, {utt_id: FeatureMatrix})."""
    rng = np.random.default_rng(spec.seed)
    templates = synth_templates(spec)
    lo, hi = spec.utterance_length_chars
    alphabet = list(spec.alphabet)

    recordings = []
    utterances = []
    features = {}
    for i in range(spec.n_utterances):
        length = int(rng.integers(lo, hi + 1))
        text = "".join(rng.choice(alphabet) for _ in range(length))
        frames = np.repeat(
            np.stack([templates[ch] for ch in text]),
            spec.template_frames_per_char,
            axis=0,
        )
        if spec.noise_sigma > 0:
            frames = frames + rng.normal(0.0, spec.noise_sigma, frames.shape)
        duration_ms = frames.shape[0] * FRAME_MS
        rec = Recording(
            id=f"s{i:04d}",
            path=f"synth/s{i:04d}.wav",
            sample_rate=16000,
            duration_ms=duration_ms,
        )
        utt = utterance(rec.id, "synth", 0, duration_ms, text)
        recordings.append(rec)
        utterances.append(utt)
        features[utt.id] = FeatureMatrix(utterance_id=utt.id, frames=frames)
    return Corpus.build(recordings, utterances), features


# --- harnesses ------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    train_minutes: float
    cer_percent: float
    epochs_used: int


def make_samples(corpus, features, cmvn=None):
    """TrainingSamples for every utterance, optionally CMVN-normalized."""
    from .model import TrainingSample

    samples = []
    for utt in corpus.utterances:
        fm = features[utt.id]
        if cmvn is not None:
            fm = cmvn_apply(fm, cmvn)
        samples.append(TrainingSample(utt.id, fm.frames, utt.text))
    return samples


def prepare_training(train_corpus, dev_corpus, features):
    """Fit CMVN on the training side only; returns (train samples,
    dev samples, stats, inventory built from training text)."""
    stats = cmvn_fit([features[u.id] for u in train_corpus.utterances])
    train_samples = make_samples(train_corpus, features, stats)
    dev_samples = make_samples(dev_corpus, features, stats) if dev_corpus else []
    vocab = CharInventory.from_texts(u.text for u in train_corpus.utterances)
    return train_samples, dev_samples, stats, vocab


def learning_curve(corpus, features, minutes, model_config, train_config,
                   seed, dev_fraction=0.1, log_sink=None):
    """Fig.-2-style experiment: one fresh model per nested subset, all
    trained the same number of epochs, scored on a shared dev split."""
    from .model import HybridModel, greedy_eval_pairs, train

    train_pool, dev = split_corpus(corpus, dev_fraction, seed)
    subsets = nested_subsets(train_pool, minutes, seed)
    points = []
    for subset in subsets:
        train_samples, dev_samples, stats, vocab = prepare_training(
            subset, dev, features
        )
        model = HybridModel.create(model_config, vocab, seed=seed)
        model.cmvn = stats
        train(model, train_samples, dev_samples, train_config,
              log_sink=log_sink)
        dev_cer = corpus_cer(greedy_eval_pairs(model, dev_samples))
        points.append(
            CurvePoint(
                train_minutes=subset.total_duration_ms / 60000.0,
                cer_percent=100.0 * dev_cer,
                epochs_used=train_config.epochs,
            )
        )
    return points


def training_profile(history):
    """Per-epoch (train CER, dev CER) rows from train()'s history."""
    if not history:
        raise ParameterError("empty training history")
    return [(m.epoch, m.train_cer, m.dev_cer) for m in history]


# --- CSV exports -----------------------------------------------------------


def write_profile_csv(path, history):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_cer", "dev_cer"])
        for epoch, train_cer, dev_cer in training_profile(history):
            writer.writerow([epoch, repr(train_cer), repr(dev_cer)])


def read_profile_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["epoch", "train_cer", "dev_cer"]:
            raise ValueError(f"unexpected profile header {header}")
        return [(int(e), float(t), float(d)) for e, t, d in reader]


def write_curve_csv(path, points):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["train_minutes", "cer_percent", "epochs_used"])
        for p in points:
            writer.writerow([repr(p.train_minutes), repr(p.cer_percent),
                             p.epochs_used])


def read_curve_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["train_minutes", "cer_percent", "epochs_used"]:
            raise ValueError(f"unexpected curve header {header}")
        return [
            CurvePoint(float(m), float(c), int(e)) for m, c, e in reader
        ]
