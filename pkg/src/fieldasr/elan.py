"""Reader for the alignable-annotation subset of ELAN .eaf documents.

Only what utterance extraction needs: the time order, tiers with their
PARTICIPANT attribute, and ALIGNABLE_ANNOTATIONs with two time-slot
references. Referring annotations, controlled vocabularies and the rest of
the schema are out of scope.
"""

from __future__ import annotations

import unicodedata
import xml.etree.ElementTree as ET
from xml.sax.saxutils import escape, quoteattr

from .corpus import utterance
from .errors import NotFoundError, ParseError, StructuralError


def _parse_xml(doc):
    if isinstance(doc, str):
        doc = doc.encode("utf-8")
    try:
        return ET.fromstring(doc)
    except ET.ParseError as exc:
        line, column = exc.position
        raise ParseError(f"malformed XML: {exc.msg.split(':')[0]}",
                         line=line, column=column) from exc


def parse_elan(doc, tier_id=None, recording_id="rec"):
    """Extract utterances from an .eaf document (bytes or str).

    tier_id selects a TIER by TIER_ID; by default the first tier that
    contains alignable annotations is used. The annotations' speaker is the
    tier's PARTICIPANT attribute, "unknown" when absent.
    """
    root = _parse_xml(doc)
    if root.tag != "ANNOTATION_DOCUMENT":
        raise StructuralError(
            f"expected ANNOTATION_DOCUMENT root, found {root.tag}"
        )

    slots = {}
    time_order = root.find("TIME_ORDER")
    if time_order is not None:
        for slot in time_order.findall("TIME_SLOT"):
            sid = slot.get("TIME_SLOT_ID")
            value = slot.get("TIME_VALUE")
            if sid is None:
                raise StructuralError("TIME_SLOT without TIME_SLOT_ID")
            if value is not None:
                slots[sid] = int(value)

    tiers = root.findall("TIER")
    if tier_id is not None:
        available = [t.get("TIER_ID", "?") for t in tiers]
        matches = [t for t in tiers if t.get("TIER_ID") == tier_id]
        if not matches:
            raise NotFoundError(
                f"tier {tier_id!r} not found (available tiers: "
                f"{', '.join(available) or 'none'})"
            )
        selected = matches
    else:
        selected = [
            t for t in tiers
            if t.find("ANNOTATION/ALIGNABLE_ANNOTATION") is not None
        ][:1]
        if not selected:
            return []

    tier = selected[0]
    speaker = tier.get("PARTICIPANT") or "unknown"
    utterances = []
    for ann in tier.findall("ANNOTATION/ALIGNABLE_ANNOTATION"):
        ann_id = ann.get("ANNOTATION_ID") or f"#{len(utterances) + 1}"
        ref1, ref2 = ann.get("TIME_SLOT_REF1"), ann.get("TIME_SLOT_REF2")
        for ref in (ref1, ref2):
            if ref is None or ref not in slots:
                raise StructuralError(
                    f"annotation {ann_id}: dangling time-slot reference {ref!r}"
                )
        value = ann.findtext("ANNOTATION_VALUE") or ""
        text = unicodedata.normalize("NFC", value)
        utterances.append(
            utterance(recording_id, speaker, slots[ref1], slots[ref2], text)
        )
    return utterances


def build_elan(entries, participant=None, tier_id="default"):
    """Serialize (start_ms, end_ms, text) entries as a minimal .eaf document.

    Used by the Pangloss converter; emits exactly the subset parse_elan
    reads back.
    """
    slot_lines = []
    ann_lines = []
    slot_n = 0
    for i, (start_ms, end_ms, text) in enumerate(entries, start=1):
        s1, s2 = f"ts{slot_n + 1}", f"ts{slot_n + 2}"
        slot_n += 2
        slot_lines.append(
            f'        <TIME_SLOT TIME_SLOT_ID="{s1}" TIME_VALUE="{start_ms}"/>'
        )
        slot_lines.append(
            f'        <TIME_SLOT TIME_SLOT_ID="{s2}" TIME_VALUE="{end_ms}"/>'
        )
        ann_lines.append(
            "        <ANNOTATION>\n"
            f'            <ALIGNABLE_ANNOTATION ANNOTATION_ID="a{i}" '
            f'TIME_SLOT_REF1="{s1}" TIME_SLOT_REF2="{s2}">\n'
            f"                <ANNOTATION_VALUE>{escape(text)}"
            "</ANNOTATION_VALUE>\n"
            "            </ALIGNABLE_ANNOTATION>\n"
            "        </ANNOTATION>"
        )
    participant_attr = (
        f" PARTICIPANT={quoteattr(participant)}" if participant else ""
    )
    body = "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            '<ANNOTATION_DOCUMENT VERSION="3.0" FORMAT="3.0">',
            "    <TIME_ORDER>",
            *slot_lines,
            "    </TIME_ORDER>",
            f"    <TIER TIER_ID={quoteattr(tier_id)}{participant_attr}>",
            *ann_lines,
            "    </TIER>",
            "</ANNOTATION_DOCUMENT>",
            "",
        ]
    )
    return body.encode("utf-8")
