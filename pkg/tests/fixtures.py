"""Inline document fixtures shared by parser and service tests."""

FIXTURE_EAF = b"""<?xml version="1.0" encoding="UTF-8"?>
<ANNOTATION_DOCUMENT VERSION="3.0" FORMAT="3.0">
    <TIME_ORDER>
        <TIME_SLOT TIME_SLOT_ID="ts1" TIME_VALUE="1000"/>
        <TIME_SLOT TIME_SLOT_ID="ts2" TIME_VALUE="2500"/>
    </TIME_ORDER>
    <TIER TIER_ID="T1" PARTICIPANT="spk1">
        <ANNOTATION>
            <ALIGNABLE_ANNOTATION ANNOTATION_ID="a1" TIME_SLOT_REF1="ts1" TIME_SLOT_REF2="ts2">
                <ANNOTATION_VALUE>kato</ANNOTATION_VALUE>
            </ALIGNABLE_ANNOTATION>
        </ANNOTATION>
    </TIER>
</ANNOTATION_DOCUMENT>
"""

EMPTY_TIER_EAF = b"""<?xml version="1.0" encoding="UTF-8"?>
<ANNOTATION_DOCUMENT VERSION="3.0" FORMAT="3.0">
    <TIME_ORDER/>
    <TIER TIER_ID="T1" PARTICIPANT="spk1"/>
</ANNOTATION_DOCUMENT>
"""

# three annotations across two tiers; T2 carries two of them
TWO_TIER_EAF = b"""<?xml version="1.0" encoding="UTF-8"?>
<ANNOTATION_DOCUMENT VERSION="3.0" FORMAT="3.0">
    <TIME_ORDER>
        <TIME_SLOT TIME_SLOT_ID="ts1" TIME_VALUE="0"/>
        <TIME_SLOT TIME_SLOT_ID="ts2" TIME_VALUE="800"/>
        <TIME_SLOT TIME_SLOT_ID="ts3" TIME_VALUE="1200"/>
        <TIME_SLOT TIME_SLOT_ID="ts4" TIME_VALUE="2000"/>
    </TIME_ORDER>
    <TIER TIER_ID="T1" PARTICIPANT="spk1">
        <ANNOTATION>
            <ALIGNABLE_ANNOTATION ANNOTATION_ID="a1" TIME_SLOT_REF1="ts1" TIME_SLOT_REF2="ts2">
                <ANNOTATION_VALUE>first</ANNOTATION_VALUE>
            </ALIGNABLE_ANNOTATION>
        </ANNOTATION>
    </TIER>
    <TIER TIER_ID="T2" PARTICIPANT="spk2">
        <ANNOTATION>
            <ALIGNABLE_ANNOTATION ANNOTATION_ID="a2" TIME_SLOT_REF1="ts2" TIME_SLOT_REF2="ts3">
                <ANNOTATION_VALUE>second</ANNOTATION_VALUE>
            </ALIGNABLE_ANNOTATION>
        </ANNOTATION>
        <ANNOTATION>
            <ALIGNABLE_ANNOTATION ANNOTATION_ID="a3" TIME_SLOT_REF1="ts3" TIME_SLOT_REF2="ts4">
                <ANNOTATION_VALUE>third</ANNOTATION_VALUE>
            </ALIGNABLE_ANNOTATION>
        </ANNOTATION>
    </TIER>
</ANNOTATION_DOCUMENT>
"""

DANGLING_REF_EAF = b"""<?xml version="1.0" encoding="UTF-8"?>
<ANNOTATION_DOCUMENT VERSION="3.0" FORMAT="3.0">
    <TIME_ORDER>
        <TIME_SLOT TIME_SLOT_ID="ts1" TIME_VALUE="1000"/>
    </TIME_ORDER>
    <TIER TIER_ID="T1">
        <ANNOTATION>
            <ALIGNABLE_ANNOTATION ANNOTATION_ID="a9" TIME_SLOT_REF1="ts1" TIME_SLOT_REF2="tsX">
                <ANNOTATION_VALUE>oops</ANNOTATION_VALUE>
            </ALIGNABLE_ANNOTATION>
        </ANNOTATION>
    </TIER>
</ANNOTATION_DOCUMENT>
"""

FIXTURE_PANGLOSS = b"""<?xml version="1.0" encoding="UTF-8"?>
<TEXT id="crdo-DEMO">
    <S id="s1">
        <AUDIO start="1.0" end="2.5"/>
        <FORM>kato</FORM>
    </S>
</TEXT>
"""

PANGLOSS_THREE = b"""<?xml version="1.0" encoding="UTF-8"?>
<TEXT id="crdo-DEMO3">
    <S id="s1"><AUDIO start="0.25" end="1.5"/><FORM>kato pem</FORM></S>
    <S id="s2"><AUDIO start="1.75" end="3.0"/><FORM>nalo</FORM></S>
    <S id="s3"><AUDIO start="3.5" end="4.0"/><FORM>tessu ki</FORM></S>
</TEXT>
"""

PANGLOSS_EMPTY = b"""<?xml version="1.0" encoding="UTF-8"?>
<TEXT id="crdo-EMPTY"></TEXT>
"""

PANGLOSS_MISSING_AUDIO = b"""<?xml version="1.0" encoding="UTF-8"?>
<TEXT id="crdo-BAD">
    <S id="s7"><FORM>kato</FORM></S>
</TEXT>
"""

PANGLOSS_BAD_RANGE = b"""<?xml version="1.0" encoding="UTF-8"?>
<TEXT id="crdo-BAD2">
    <S id="s3"><AUDIO start="2.0" end="2.0"/><FORM>kato</FORM></S>
</TEXT>
"""
