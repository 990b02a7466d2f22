"""Corpus model: recordings, time-aligned utterances, cleaning and slicing.

Utterance ids follow `<speaker>-<recording>-<start zero-padded to 8 digits>`
so that plain lexicographic sorting groups utterances by speaker, which keeps
the Kaldi-style files consistent with utt2spk.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NotFoundError, RangeError, SizeError

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")
_WS_RE = re.compile(r"\s+")


def make_utterance_id(speaker_id, recording_id, start_ms):
    return f"{speaker_id}-{recording_id}-{start_ms:08d}"


@dataclass(frozen=True)
class Recording:
    id: str
    path: str
    sample_rate: int
    duration_ms: int

    def __post_init__(self):
        if not _ID_RE.match(self.id):
            raise ValueError(f"invalid recording id {self.id!r}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be non-negative")


@dataclass(frozen=True)
class Utterance:
    id: str
    recording_id: str
    speaker_id: str
    start_ms: int
    end_ms: int
    text: str
    genre: str | None = None

    def __post_init__(self):
        if not (0 <= self.start_ms < self.end_ms):
            raise ValueError(
                f"utterance {self.id}: bad span [{self.start_ms}, {self.end_ms})"
            )
        if self.id != make_utterance_id(self.speaker_id, self.recording_id,
                                        self.start_ms):
            raise ValueError(f"utterance id {self.id!r} violates the id scheme")
        if unicodedata.normalize("NFC", self.text) != self.text:
            raise ValueError(f"utterance {self.id}: text is not NFC-normalized")

    @property
    def duration_ms(self):
        return self.end_ms - self.start_ms


def utterance(recording_id, speaker_id, start_ms, end_ms, text, genre=None):
    """Build an Utterance with the derived id and NFC-normalized text."""
    return Utterance(
        id=make_utterance_id(speaker_id, recording_id, start_ms),
        recording_id=recording_id,
        speaker_id=speaker_id,
        start_ms=start_ms,
        end_ms=end_ms,
        text=unicodedata.normalize("NFC", text),
        genre=genre,
    )


@dataclass(frozen=True)
class Corpus:
    recordings: dict = field(default_factory=dict)
    utterances: tuple = field(default_factory=tuple)

    @classmethod
    def build(cls, recordings, utterances):
        """Validate cross-references, sort by id, and freeze."""
        recs = {r.id: r for r in recordings}
        if len(recs) != len(list(recordings)):
            raise ValueError("duplicate recording ids")
        seen = set()
        for utt in utterances:
            if utt.id in seen:
                raise ValueError(f"duplicate utterance id {utt.id}")
            seen.add(utt.id)
            rec = recs.get(utt.recording_id)
            if rec is None:
                raise ValueError(
                    f"utterance {utt.id} references unknown recording "
                    f"{utt.recording_id}"
                )
            if utt.end_ms > rec.duration_ms:
                raise ValueError(
                    f"utterance {utt.id} ends at {utt.end_ms} ms beyond "
                    f"recording {rec.id} ({rec.duration_ms} ms)"
                )
        ordered = tuple(sorted(utterances, key=lambda u: u.id))
        return cls(recordings=recs, utterances=ordered)

    def __len__(self):
        return len(self.utterances)

    @property
    def speakers(self):
        return sorted({u.speaker_id for u in self.utterances})

    @property
    def genres(self):
        return sorted({u.genre for u in self.utterances if u.genre is not None})

    @property
    def total_duration_ms(self):
        return sum(u.duration_ms for u in self.utterances)

    def with_utterances(self, utterances):
        """Same recordings restricted to the given utterances."""
        keep = {u.recording_id for u in utterances}
        recs = [r for r in self.recordings.values() if r.id in keep]
        return Corpus.build(recs, utterances)

    def to_dict(self):
        return {
            "recordings": [
                {
                    "id": r.id,
                    "path": r.path,
                    "sample_rate": r.sample_rate,
                    "duration_ms": r.duration_ms,
                }
                for r in sorted(self.recordings.values(), key=lambda r: r.id)
            ],
            "utterances": [
                {
                    "id": u.id,
                    "recording_id": u.recording_id,
                    "speaker_id": u.speaker_id,
                    "start_ms": u.start_ms,
                    "end_ms": u.end_ms,
                    "text": u.text,
                    "genre": u.genre,
                }
                for u in self.utterances
            ],
        }

    @classmethod
    def from_dict(cls, data):
        recs = [Recording(**r) for r in data["recordings"]]
        utts = [Utterance(**u) for u in data["utterances"]]
        return cls.build(recs, utts)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class CleanConfig:
    """Character removal applied once at ingestion, before anything trains
    or scores on the text."""

    remove_chars: frozenset = frozenset()
    collapse_whitespace: bool = True
    lowercase: bool = False

    @classmethod
    def from_string(cls, chars, collapse_whitespace=True, lowercase=False):
        return cls(frozenset(chars), collapse_whitespace, lowercase)


def clean_text(text, cfg):
    """Delete configured code points, optionally collapse whitespace runs to
    a single space (stripping the ends), optionally lowercase."""
    if cfg.remove_chars:
        text = "".join(ch for ch in text if ch not in cfg.remove_chars)
    if cfg.collapse_whitespace:
        text = _WS_RE.sub(" ", text).strip()
    if cfg.lowercase:
        text = text.lower()
    return text


def clean_corpus(corpus, cfg):
    """Apply clean_text to every utterance; membership is unchanged."""
    utts = [replace(u, text=clean_text(u.text, cfg)) for u in corpus.utterances]
    return Corpus.build(corpus.recordings.values(), utts)


def filter_corpus(corpus, speaker=None, exclude_genres=frozenset()):
    """Retain utterances by speaker and genre; drop emptied recordings."""
    if speaker is not None and speaker not in {u.speaker_id for u in
                                               corpus.utterances}:
        raise NotFoundError(
            f"speaker {speaker!r} not in corpus (speakers: "
            f"{', '.join(corpus.speakers) or 'none'})"
        )
    exclude = set(exclude_genres)
    kept = [
        u
        for u in corpus.utterances
        if (speaker is None or u.speaker_id == speaker) and u.genre not in exclude
    ]
    return corpus.with_utterances(kept)


def split_corpus(corpus, dev_fraction, seed):
    """Deterministic train/dev split: floor(n * dev_fraction) but at least
    one utterance goes to dev."""
    n = len(corpus)
    if n < 2:
        raise SizeError(f"need at least 2 utterances to split, got {n}")
    if not 0.0 < dev_fraction < 1.0:
        raise RangeError(f"dev_fraction must be in (0,1), got {dev_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_dev = max(1, math.floor(n * dev_fraction))
    dev_idx = set(int(i) for i in order[:n_dev])
    dev = [u for i, u in enumerate(corpus.utterances) if i in dev_idx]
    train = [u for i, u in enumerate(corpus.utterances) if i not in dev_idx]
    return corpus.with_utterances(train), corpus.with_utterances(dev)


def nested_subsets(corpus, minutes, seed):
    """Duration-targeted subsets where each smaller set is a strict subset
    of every larger one (shared shuffled prefix)."""
    if any(b <= a for a, b in zip(minutes, minutes[1:])):
        raise RangeError(f"minutes must be strictly ascending, got {minutes}")
    total_min = corpus.total_duration_ms / 60000.0
    if minutes and minutes[-1] > total_min:
        raise RangeError(
            f"requested {minutes[-1]} minutes but corpus has only "
            f"{total_min:.3f} minutes"
        )
    rng = np.random.default_rng(seed)
    order = [corpus.utterances[int(i)] for i in rng.permutation(len(corpus))]
    subsets = []
    for m in minutes:
        target_ms = m * 60000.0
        acc = 0.0
        taken = []
        for utt in order:
            if acc >= target_ms:
                break
            taken.append(utt)
            acc += utt.duration_ms
        subsets.append(corpus.with_utterances(taken))
    return subsets


def parse_genre_manifest(text):
    """Sidecar manifest: one `recording-id<TAB>genre` per line."""
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"manifest line {lineno}: expected TAB separator")
        rec_id, genre = line.split("\t", 1)
        mapping[rec_id.strip()] = genre.strip()
    return mapping


def apply_genres(corpus, mapping):
    utts = [
        replace(u, genre=mapping.get(u.recording_id, u.genre))
        for u in corpus.utterances
    ]
    return Corpus.build(corpus.recordings.values(), utts)
