"""Synthetic Sleep-EDF-like nights and a minimal EDF/EDF+ writer.

The writer exists for tests, benchmarks and demos; it is not meant for
producing clinical files. The EEG generator gives each stage a distinct
spectral signature (alpha in wake, theta in N1, spindles and K-complexes in
N2, high-amplitude delta in N3, sawtooth theta in REM) on top of 1/f
background noise, so that a classifier has something real to learn.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .edf import ANNOTATION_LABEL, EdfHeader, SignalSpec, StageAnnotation
from .pipeline import EPOCH_SECONDS, StageLabel

STAGE_TEXT = {
    StageLabel.Wake: "Sleep stage W",
    StageLabel.N1: "Sleep stage 1",
    StageLabel.N2: "Sleep stage 2",
    StageLabel.N3: "Sleep stage 3",
    StageLabel.REM: "Sleep stage R",
}


# --------------------------------------------------------------------------
# EDF writer
# --------------------------------------------------------------------------


def _num(v, width: int) -> str:
    if float(v) == int(v) and abs(v) < 10 ** (width - 1):
        s = str(int(v))
    else:
        s = ""
        for p in range(width, 0, -1):
            s = f"{float(v):.{p}g}"
            if len(s) <= width:
                break
    if len(s) > width:
        raise ValueError(f"{v} does not fit in {width} characters")
    return s


def _field(value, width: int) -> bytes:
    s = value if isinstance(value, str) else _num(value, width)
    raw = s.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{s!r} longer than {width} bytes")
    return raw.ljust(width, b" ")


def write_edf_bytes(header: EdfHeader, signals: Sequence[SignalSpec], digital: Sequence[np.ndarray]) -> bytes:
    """Serialize a header, signal headers and per-signal int16 samples.

    ``digital[i]`` must hold ``data_record_count * samples_per_record``
    values for signal ``i``.
    """
    ns = len(signals)
    n_rec = header.data_record_count
    parts = [
        _field(header.version, 8),
        _field(header.patient_id, 80),
        _field(header.recording_id, 80),
        _field(header.start_date, 8),
        _field(header.start_time, 8),
        _field(256 * (ns + 1), 8),
        _field(header.reserved, 44),
        _field(n_rec, 8),
        _field(header.record_duration_s, 8),
        _field(ns, 4),
    ]
    for attr, width in (("label", 16), ("transducer", 80), ("physical_dim", 8), ("physical_min", 8),
                        ("physical_max", 8), ("digital_min", 8), ("digital_max", 8),
                        ("prefiltering", 80), ("samples_per_record", 8), ("reserved", 32)):
        for s in signals:
            parts.append(_field(getattr(s, attr), width))
    cols = []
    for s, d in zip(signals, digital):
        d = np.asarray(d)
        if d.size != n_rec * s.samples_per_record:
            raise ValueError(f"{s.label}: expected {n_rec * s.samples_per_record} samples, got {d.size}")
        cols.append(d.astype("<i2").reshape(n_rec, s.samples_per_record))
    body = np.concatenate(cols, axis=1) if cols else np.zeros((n_rec, 0), "<i2")
    parts.append(np.ascontiguousarray(body, dtype="<i2").tobytes())
    return b"".join(parts)


def write_edf(path, header: EdfHeader, signals: Sequence[SignalSpec], digital: Sequence[np.ndarray]) -> None:
    Path(path).write_bytes(write_edf_bytes(header, signals, digital))


def _tal_num(v: float) -> str:
    return str(int(v)) if float(v) == int(v) else repr(float(v))


def encode_tal(onset: float, duration: float | None, texts: Sequence[str]) -> bytes:
    stamp = ("+" if onset >= 0 else "-") + _tal_num(abs(onset))
    if duration is not None:
        stamp += "\x15" + _tal_num(duration)
    return stamp.encode("ascii") + b"\x14" + b"".join(t.encode("utf-8") + b"\x14" for t in texts) + b"\x00"


def annotation_signal(annotations: Sequence[StageAnnotation], n_records: int = 1,
                      record_duration_s: float = 0.0) -> tuple[SignalSpec, np.ndarray]:
    """Pack annotations into an "EDF Annotations" signal.

    Record ``r`` starts with its timekeeping TAL; every annotation goes into
    the record containing its onset (all into record 0 when the record
    duration is 0).
    """
    per_record: list[bytes] = []
    for r in range(n_records):
        chunk = encode_tal(r * record_duration_s, None, [""])
        # timekeeping TAL has one empty annotation: "+t\x14\x14\x00"
        for a in annotations:
            rec = 0 if record_duration_s <= 0 else min(int(a.onset_s // record_duration_s), n_records - 1)
            if rec == r:
                chunk += encode_tal(a.onset_s, a.duration_s, [a.label_text])
        per_record.append(chunk)
    longest = max(len(c) for c in per_record)
    spr = (longest + 1) // 2 + 1
    raw = b"".join(c.ljust(2 * spr, b"\x00") for c in per_record)
    spec = SignalSpec(ANNOTATION_LABEL, "", "", -1, 1, -32768, 32767, "", spr)
    return spec, np.frombuffer(raw, dtype="<i2").copy()


# --------------------------------------------------------------------------
# synthetic EEG
# --------------------------------------------------------------------------


def _band_noise(rng, n: int, fs: float, lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    spec[(f < lo) | (f > hi)] = 0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _pink(rng, n: int, fs: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0
    x = np.fft.irfft(spec, n)
    return x / x.std()


def _spindle(rng, fs: float) -> np.ndarray:
    dur = rng.uniform(0.6, 1.5)
    t = np.arange(int(dur * fs)) / fs
    env = np.sin(np.pi * t / dur) ** 2
    return env * np.sin(2 * np.pi * rng.uniform(12, 14) * t + rng.uniform(0, 2 * np.pi))


def _k_complex(fs: float) -> np.ndarray:
    t = np.arange(int(0.8 * fs)) / fs
    return -np.sin(2 * np.pi * t / 0.8) * np.exp(-((t - 0.3) ** 2) / 0.05)


def synth_epoch(stage: int, rng: np.random.Generator, fs: float = 100, gain: float = 1.0) -> np.ndarray:
    """One 30 s epoch of stage-typical EEG in µV."""
    n = int(EPOCH_SECONDS * fs)
    x = 6.0 * _pink(rng, n, fs)
    amp = rng.uniform(0.8, 1.2)
    if stage == StageLabel.Wake:
        x += 14 * amp * _band_noise(rng, n, fs, 8, 12) + 6 * _band_noise(rng, n, fs, 16, 30)
    elif stage == StageLabel.N1:
        x += 16 * amp * _band_noise(rng, n, fs, 4, 7) + 4 * _band_noise(rng, n, fs, 8, 12)
    elif stage == StageLabel.N2:
        x += 14 * amp * _band_noise(rng, n, fs, 4, 7) + 8 * _band_noise(rng, n, fs, 1, 3)
        for _ in range(rng.integers(2, 5)):
            s = 25 * _spindle(rng, fs)
            at = rng.integers(0, n - len(s))
            x[at : at + len(s)] += s
        if rng.random() < 0.8:
            k = 70 * amp * _k_complex(fs)
            at = rng.integers(0, n - len(k))
            x[at : at + len(k)] += k
    elif stage == StageLabel.N3:
        x += 45 * amp * _band_noise(rng, n, fs, 0.5, 2) + 6 * _band_noise(rng, n, fs, 4, 7)
    elif stage == StageLabel.REM:
        t = np.arange(n) / fs
        f = rng.uniform(2, 3)
        saw = 2 * ((t * f) % 1) - 1
        bursts = (_band_noise(rng, n, fs, 0.05, 0.3) > 0.5).astype(float)
        x += 12 * amp * _band_noise(rng, n, fs, 4, 7) + 10 * saw * bursts + 5 * _band_noise(rng, n, fs, 16, 30)
    else:
        raise ValueError(f"unknown stage {stage}")
    return gain * x


def synthetic_hypnogram(rng: np.random.Generator, cycles: int = 4, lead_wake: int = 80,
                        tail_wake: int = 80) -> np.ndarray:
    """Stage sequence (one label per 30 s epoch) with NREM/REM cycles."""
    seq = [StageLabel.Wake] * lead_wake
    for c in range(cycles):
        seq += [StageLabel.N1] * int(rng.integers(2, 8))
        seq += [StageLabel.N2] * int(rng.integers(15, 35))
        seq += [StageLabel.N3] * max(2, int(rng.integers(10, 30)) - 6 * c)
        seq += [StageLabel.N2] * int(rng.integers(5, 15))
        seq += [StageLabel.REM] * (int(rng.integers(5, 15)) + 5 * c)
        if rng.random() < 0.5:
            seq += [StageLabel.Wake] * int(rng.integers(1, 4))
    seq += [StageLabel.Wake] * tail_wake
    return np.asarray(seq, dtype=np.uint8)


def synthetic_night(labels: Sequence[int], seed: int = 0, fs: float = 100, gain: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.concatenate([synth_epoch(int(s), rng, fs, gain) for s in labels])


def stage_runs(labels: Sequence[int]) -> list[StageAnnotation]:
    """Run-length encode per-epoch labels into stage annotations."""
    out = []
    start = 0
    labels = list(labels)
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            out.append(StageAnnotation(start * EPOCH_SECONDS, (i - start) * EPOCH_SECONDS,
                                       STAGE_TEXT[StageLabel(int(labels[start]))]))
            start = i
    return out


EEG_PHYS = 200.0  # ±µV range of the synthetic EEG channels


def _to_digital(x: np.ndarray, pmin: float, pmax: float, dmin: int = -2048, dmax: int = 2047) -> np.ndarray:
    d = np.round((x - pmin) * (dmax - dmin) / (pmax - pmin) + dmin)
    return np.clip(d, dmin, dmax).astype(np.int16)


def write_sleep_edf_pair(directory, night_id: int, labels: Sequence[int], seed: int = 0, fs: int = 100,
                         gain: float = 1.0, channel: str = "EEG Fpz-Cz",
                         trailing: Sequence[StageAnnotation] = ()) -> tuple[Path, Path]:
    """Write ``SC{id}E0-PSG.edf`` and ``SC{id}EC-Hypnogram.edf`` into ``directory``.

    The PSG file carries two EEG channels in 30 s records; the hypnogram is an
    EDF+ file whose only signal holds the run-length stage annotations plus
    ``trailing`` extra annotations.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    eeg = synthetic_night(labels, seed, fs, gain)
    eeg2 = 0.6 * synthetic_night(labels, seed + 7919, fs, gain)
    n_rec = len(labels)
    spr = EPOCH_SECONDS * fs
    specs = [SignalSpec(ch, "AgAgCl electrodes", "uV", -EEG_PHYS, EEG_PHYS, -2048, 2047, "HP:0.5Hz LP:100Hz", spr)
             for ch in (channel, "EEG Pz-Oz")]
    header = EdfHeader("0", f"X X X synth{night_id}", "Startdate 01-JAN-2000 X X X", "01.01.00", "22.00.00",
                       256 * 3, n_rec, float(EPOCH_SECONDS), 2)
    psg = directory / f"SC{night_id:04d}E0-PSG.edf"
    write_edf(psg, header, specs, [_to_digital(eeg, -EEG_PHYS, EEG_PHYS), _to_digital(eeg2, -EEG_PHYS, EEG_PHYS)])

    anns = stage_runs(labels) + list(trailing)
    spec, data = annotation_signal(anns)
    hyp_header = EdfHeader("0", f"X X X synth{night_id}", "Startdate 01-JAN-2000 X X X", "01.01.00",
                           "22.00.00", 512, 1, 0.0, 1, reserved="EDF+C")
    hyp = directory / f"SC{night_id:04d}EC-Hypnogram.edf"
    write_edf(hyp, hyp_header, [spec], [data])
    return psg, hyp
