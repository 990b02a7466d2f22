"""Pangloss sentence-level XML to ELAN conversion.

The Pangloss subset carries one S element per sentence with an AUDIO child
holding start/end in seconds and a FORM child holding the transcript. The
converter re-expresses those as alignable ELAN annotations so the rest of
the pipeline only ever parses one format.
"""

from __future__ import annotations

from decimal import Decimal, ROUND_HALF_UP, InvalidOperation

from .elan import _parse_xml, build_elan
from .errors import RangeError, StructuralError


def _seconds_to_ms(value):
    # Decimal keeps e.g. "1.0005" an exact tie, rounded half up to 1001 ms
    try:
        ms = Decimal(value) * 1000
    except InvalidOperation as exc:
        raise StructuralError(f"bad AUDIO time {value!r}") from exc
    return int(ms.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def pangloss_to_elan(doc):
    """Convert a Pangloss TEXT document (bytes or str) to ELAN bytes."""
    root = _parse_xml(doc)
    if root.tag != "TEXT":
        raise StructuralError(f"expected TEXT root, found {root.tag}")
    entries = []
    for i, s_el in enumerate(root.findall("S"), start=1):
        s_id = s_el.get("id") or f"#{i}"
        audio = s_el.find("AUDIO")
        form = s_el.find("FORM")
        if audio is None or audio.get("start") is None or audio.get("end") is None:
            raise StructuralError(f"S {s_id}: missing AUDIO start/end")
        if form is None or form.text is None:
            raise StructuralError(f"S {s_id}: missing FORM")
        start_ms = _seconds_to_ms(audio.get("start"))
        end_ms = _seconds_to_ms(audio.get("end"))
        if end_ms <= start_ms:
            raise RangeError(
                f"S {s_id}: end {audio.get('end')} s not after start "
                f"{audio.get('start')} s"
            )
        entries.append((start_ms, end_ms, form.text))
    return build_elan(entries)
