"""Minimal EDF/EDF+ writer used only as a test oracle for the parser.

It is written straight from the format description and shares no code with
``mibci.edf``.
"""

from __future__ import annotations

import math

import numpy as np


def _field(value, width):
    text = value if isinstance(value, str) else _num(value)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _num(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    text = repr(float(x))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def encode_tal(onset, duration=None, labels=()):
    """One timestamped annotation list: +onset[\\x15dur]\\x14label\\x14...\\x00"""
    out = (("+" if onset >= 0 else "") + _num(onset)).encode()
    if duration is not None:
        out += b"\x15" + _num(duration).encode()
    out += b"\x14"
    if not labels:
        out += b"\x14"
    for label in labels:
        out += label.encode("utf-8") + b"\x14"
    return out + b"\x00"


def quantize(physical, phys_min, phys_max, dig_min=-32768, dig_max=32767):
    gain = (phys_max - phys_min) / (dig_max - dig_min)
    d = np.round((np.asarray(physical, dtype=float) - phys_min) / gain + dig_min)
    return np.clip(d, dig_min, dig_max).astype(np.int64)


def write_edf(signals, n_records, record_duration=1, annotations=None,
              n_records_field=None, reserved=None, start="01.02.09", start_time="12.00.00"):
    """Serialise an EDF(+) file.

    ``signals``: list of dicts with keys label, digital (int array of length
    n_records*spr), spr, phys_min, phys_max, dig_min, dig_max, dim.
    ``annotations``: list of (onset, duration, label) or None for plain EDF.
    ``annotations`` may also be raw TAL bytes to place verbatim in record 0.
    """
    signals = [dict(s) for s in signals]
    plus = annotations is not None
    if plus:
        payloads = _annotation_payloads(annotations, n_records, record_duration)
        width = max(len(p) for p in payloads) if payloads else 2
        spr = max(1, math.ceil(width / 2))
        blobs = [p.ljust(2 * spr, b"\x00") for p in payloads]
        signals.append(dict(
            label="EDF Annotations", spr=spr, phys_min=-1, phys_max=1,
            dig_min=-32768, dig_max=32767, dim="", annotation_blobs=blobs,
        ))

    ns = len(signals)
    head = b"".join([
        _field("0", 8),
        _field("X X X X", 80),
        _field("Startdate 01-FEB-2009 X X X", 80),
        _field(start, 8),
        _field(start_time, 8),
        _field(256 * (ns + 1), 8),
        _field(reserved if reserved is not None else ("EDF+C" if plus else ""), 44),
        _field(n_records if n_records_field is None else n_records_field, 8),
        _field(record_duration, 8),
        _field(ns, 4),
    ])
    cols = [
        ("label", 16), ("transducer", 80), ("dim", 8), ("phys_min", 8), ("phys_max", 8),
        ("dig_min", 8), ("dig_max", 8), ("prefilter", 80), ("spr", 8), ("reserved", 32),
    ]
    for key, width in cols:
        for s in signals:
            head += _field(s.get(key, ""), width)
    assert len(head) == 256 * (ns + 1)

    body = bytearray()
    for r in range(n_records):
        for s in signals:
            if "annotation_blobs" in s:
                body += s["annotation_blobs"][r]
            else:
                chunk = np.asarray(s["digital"][r * s["spr"]:(r + 1) * s["spr"]])
                body += chunk.astype("<i2").tobytes()
    return bytes(head) + bytes(body)


def _annotation_payloads(annotations, n_records, record_duration):
    if isinstance(annotations, (bytes, bytearray)):
        stamps = [encode_tal(r * record_duration) for r in range(n_records)]
        if stamps:
            stamps[0] += bytes(annotations)
        return stamps
    per = math.ceil(len(annotations) / n_records) if n_records else 0
    payloads = []
    for r in range(n_records):
        p = encode_tal(r * record_duration)
        for onset, duration, label in annotations[r * per:(r + 1) * per]:
            p += encode_tal(onset, duration, [label])
        payloads.append(p)
    return payloads


def simple_signal(label, digital, spr, phys_min=-32768, phys_max=32767,
                  dig_min=-32768, dig_max=32767, dim="uV"):
    return dict(label=label, digital=np.asarray(digital), spr=spr, phys_min=phys_min,
                phys_max=phys_max, dig_min=dig_min, dig_max=dig_max, dim=dim)


def recording_to_edf(channels, data_uv, rate, annotations, record_duration=1,
                     phys_range=(-800.0, 800.0)):
    """Quantise a microvolt matrix into an EDF+ file (used by fixtures)."""
    spr = int(round(rate * record_duration))
    n = data_uv.shape[1]
    n_records = n // spr
    signals = []
    for name, row in zip(channels, data_uv):
        signals.append(simple_signal(name, quantize(row[:n_records * spr], *phys_range), spr,
                                     phys_min=phys_range[0], phys_max=phys_range[1]))
    return write_edf(signals, n_records, record_duration, annotations=list(annotations))
