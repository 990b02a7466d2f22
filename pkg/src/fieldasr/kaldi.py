"""Kaldi-style data directory: wav.scp, segments, text, utt2spk.

One record per line, single-space separated, lexicographically sorted by
first field, UTF-8 with LF endings. Segment times carry exactly three
decimals (millisecond precision).
"""

from __future__ import annotations

import os
import wave
from pathlib import Path

from .corpus import Corpus, Recording, Utterance
from .errors import IntegrityError, ParseError

FILES = ("wav.scp", "segments", "text", "utt2spk")


def _ms_to_seconds_field(ms):
    return f"{ms // 1000}.{ms % 1000:03d}"


def _seconds_field_to_ms(text):
    if "." in text:
        whole, frac = text.split(".", 1)
        frac = (frac + "000")[:3]
    else:
        whole, frac = text, "000"
    return int(whole) * 1000 + int(frac)


def write_kaldi_dir(corpus, dest):
    """Write the four files; returns {filename: path}."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)

    seen = set()
    for utt in corpus.utterances:
        if utt.id in seen:
            raise IntegrityError(f"duplicate utterance id {utt.id}")
        seen.add(utt.id)
        if "\n" in utt.text or "\r" in utt.text:
            raise IntegrityError(f"utterance {utt.id}: text contains a newline")

    lines = {name: [] for name in FILES}
    for rec in corpus.recordings.values():
        lines["wav.scp"].append(f"{rec.id} {os.path.abspath(rec.path)}")
    for utt in corpus.utterances:
        start = _ms_to_seconds_field(utt.start_ms)
        end = _ms_to_seconds_field(utt.end_ms)
        lines["segments"].append(f"{utt.id} {utt.recording_id} {start} {end}")
        lines["text"].append(f"{utt.id} {utt.text}")
        lines["utt2spk"].append(f"{utt.id} {utt.speaker_id}")

    manifest = {}
    for name in FILES:
        path = dest / name
        body = "".join(line + "\n" for line in sorted(lines[name]))
        path.write_text(body, encoding="utf-8", newline="\n")
        manifest[name] = path
    return manifest


def _read_lines(path):
    try:
        content = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise IntegrityError(f"missing Kaldi file {path}") from None
    return [line for line in content.split("\n") if line]


def _wav_duration_ms(path, fallback_ms):
    try:
        with wave.open(str(path), "rb") as fh:
            frames = fh.getnframes()
            rate = fh.getframerate()
        return int(round(frames * 1000 / rate)), rate
    except (OSError, wave.Error):
        return fallback_ms, None


def read_kaldi_dir(src, default_sample_rate=16000):
    """Rebuild a Corpus from a data directory.

    Recording duration and sample rate are recomputed from the audio when
    the wav.scp path is readable; otherwise the duration falls back to the
    latest utterance end and the default rate.
    """
    src = Path(src)
    wav_paths = {}
    for line in _read_lines(src / "wav.scp"):
        rec_id, _, path = line.partition(" ")
        wav_paths[rec_id] = path

    texts = {}
    for line in _read_lines(src / "text"):
        utt_id, _, text = line.partition(" ")
        texts[utt_id] = text

    speakers = {}
    for line in _read_lines(src / "utt2spk"):
        utt_id, _, spk = line.partition(" ")
        speakers[utt_id] = spk

    utts = []
    rec_max_end = {}
    for line in _read_lines(src / "segments"):
        parts = line.split(" ")
        if len(parts) != 4:
            raise ParseError(f"bad segments line: {line!r}")
        utt_id, rec_id, start_s, end_s = parts
        if utt_id not in texts or utt_id not in speakers:
            raise IntegrityError(f"utterance {utt_id} missing from text/utt2spk")
        start_ms = _seconds_field_to_ms(start_s)
        end_ms = _seconds_field_to_ms(end_s)
        utts.append(
            Utterance(
                id=utt_id,
                recording_id=rec_id,
                speaker_id=speakers[utt_id],
                start_ms=start_ms,
                end_ms=end_ms,
                text=texts[utt_id],
            )
        )
        rec_max_end[rec_id] = max(rec_max_end.get(rec_id, 0), end_ms)

    recordings = []
    for rec_id, path in wav_paths.items():
        duration_ms, rate = _wav_duration_ms(path, rec_max_end.get(rec_id, 0))
        recordings.append(
            Recording(
                id=rec_id,
                path=path,
                sample_rate=rate or default_sample_rate,
                duration_ms=duration_ms,
            )
        )
    return Corpus.build(recordings, utts)
