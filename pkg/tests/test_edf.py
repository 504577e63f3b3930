import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from somno.edf import (
    EdfFile,
    EdfHeader,
    SignalSpec,
    StageAnnotation,
    digital_to_physical,
    parse_annotations,
    parse_header,
    parse_tal_record,
    read_signal,
)
from somno.errors import (
    ChannelNotFound,
    DegenerateScale,
    MalformedField,
    MalformedTal,
    TruncatedHeader,
    TruncatedRecord,
)
from somno.synth import annotation_signal, encode_tal, write_edf_bytes


def make_spec(label="EEG", spr=3, pmin=-1000.0, pmax=1000.0, dmin=-2048, dmax=2047):
    return SignalSpec(label, "AgAgCl", "uV", pmin, pmax, dmin, dmax, "HP:0.5Hz", spr)


def make_edf(specs, digital, n_rec, duration=1.0, reserved=""):
    h = EdfHeader("0", "patient x", "recording y", "01.02.03", "04.05.06", 256 * (len(specs) + 1),
                  n_rec, duration, len(specs), reserved)
    return h, write_edf_bytes(h, specs, digital)


def physical_oracle(d, spec):
    """Exact rational evaluation of the EDF scaling formula."""
    pmin, pmax = Fraction(str(spec.physical_min)), Fraction(str(spec.physical_max))
    return pmin + (d - spec.digital_min) * (pmax - pmin) / (spec.digital_max - spec.digital_min)


# -- header ------------------------------------------------------------------


def test_header_fields_trimmed_and_sized():
    specs = [make_spec("EEG Fpz-Cz"), make_spec("EEG Pz-Oz")]
    h, raw = make_edf(specs, [np.zeros(6, np.int16)] * 2, 2, duration=30)
    header, parsed = parse_header(raw)
    assert header.version == "0"
    assert header.signal_count == 2
    assert header.header_bytes == 768
    assert header.record_duration_s == 30.0
    assert header.patient_id == "patient x"
    assert [s.label for s in parsed] == ["EEG Fpz-Cz", "EEG Pz-Oz"]
    assert parsed[0] == specs[0]


def test_header_too_short():
    with pytest.raises(TruncatedHeader):
        parse_header(b"0" * 100)
    _, raw = make_edf([make_spec()], [np.zeros(3, np.int16)], 1)
    with pytest.raises(TruncatedHeader):
        parse_header(raw[:300])


def test_header_non_numeric_field():
    _, raw = make_edf([make_spec()], [np.zeros(3, np.int16)], 1)
    bad = raw[:236] + b"abc     " + raw[244:]
    with pytest.raises(MalformedField):
        parse_header(bad)


def test_samples_per_record_must_be_positive():
    _, raw = make_edf([make_spec(spr=3)], [np.zeros(3, np.int16)], 1)
    # samples_per_record of the only signal starts at 256 + 216*1
    off = 256 + (16 + 80 + 8 + 8 + 8 + 8 + 8 + 80)
    bad = raw[:off] + b"0       " + raw[off + 8 :]
    with pytest.raises(MalformedField):
        parse_header(bad)


# -- scaling -----------------------------------------------------------------


def test_digital_to_physical_examples():
    spec = make_spec()
    assert digital_to_physical(-2048, spec) == -1000.0
    assert digital_to_physical(2047, spec) == 1000.0
    assert digital_to_physical(0, spec) == pytest.approx(0.24420024420024420, abs=1e-12)
    assert digital_to_physical(0, spec) == pytest.approx(float(physical_oracle(0, spec)), rel=1e-15)


def test_digital_to_physical_degenerate():
    with pytest.raises(DegenerateScale):
        digital_to_physical(0, make_spec(dmin=5, dmax=5))
    with pytest.raises(DegenerateScale):
        digital_to_physical(0, make_spec(pmin=3.0, pmax=3.0))


@given(st.integers(-32768, 32767), st.integers(-32768, 32767), st.integers(-32768, 32767),
       st.floats(-5000, 5000), st.floats(-5000, 5000))
def test_scaling_matches_rational_oracle(d, a, b, pmin, pmax):
    dmin, dmax = min(a, b), max(a, b)
    if dmin == dmax or pmin == pmax:
        return
    spec = make_spec(pmin=pmin, pmax=pmax, dmin=dmin, dmax=dmax)
    dc = min(max(d, dmin), dmax)
    expected = float(physical_oracle(dc, spec))
    assert digital_to_physical(d, spec) == pytest.approx(expected, rel=1e-12, abs=1e-9)


@given(st.integers(-2048, 2046), st.integers(1, 100))
def test_scaling_monotone(d, step):
    spec = make_spec()
    d2 = min(d + step, 2047)
    assert digital_to_physical(d, spec) < digital_to_physical(d2, spec)


# -- signals -----------------------------------------------------------------


def test_read_signal_concatenates_records():
    spec = make_spec(spr=3, pmin=-2048, pmax=2047)  # identity scaling
    _, raw = make_edf([spec], [np.array([1, 2, 3, 4, 5, 6], np.int16)], 2)
    rec = read_signal(raw, "EEG")
    np.testing.assert_array_equal(rec.samples, [1, 2, 3, 4, 5, 6])
    assert rec.sample_rate_hz == 3.0
    assert rec.clamped == 0


def test_read_signal_interleaved_channels():
    a = make_spec("A", spr=2, pmin=-2048, pmax=2047)
    b = make_spec("B", spr=3, pmin=-2048, pmax=2047)
    _, raw = make_edf([a, b], [np.array([1, 2, 3, 4]), np.array([10, 20, 30, 40, 50, 60])], 2)
    f = EdfFile.open(raw)
    np.testing.assert_array_equal(f.digital("A"), [1, 2, 3, 4])
    np.testing.assert_array_equal(f.digital("B"), [10, 20, 30, 40, 50, 60])
    assert f.sample_rate("B") == 3.0


def test_read_signal_clamps_and_counts():
    spec = make_spec(spr=4, dmin=-100, dmax=100, pmin=-100, pmax=100)
    _, raw = make_edf([spec], [np.array([-200, -100, 100, 300])], 1)
    rec = read_signal(raw, "EEG")
    np.testing.assert_array_equal(rec.samples, [-100, -100, 100, 100])
    assert rec.clamped == 2


def test_channel_not_found_and_ambiguous():
    _, raw = make_edf([make_spec("A"), make_spec("A")], [np.zeros(3)] * 2, 1)
    with pytest.raises(ChannelNotFound):
        read_signal(raw, "B")
    with pytest.raises(ChannelNotFound):
        read_signal(raw, "A")


def test_truncated_record():
    _, raw = make_edf([make_spec(spr=3)], [np.zeros(6, np.int16)], 2)
    with pytest.raises(TruncatedRecord):
        EdfFile.open(raw[:-1])


def test_record_count_minus_one_resolved_from_size():
    spec = make_spec(spr=3)
    h, raw = make_edf([spec], [np.arange(9, dtype=np.int16)], 3)
    raw = raw[:236] + b"-1      " + raw[244:]
    f = EdfFile.open(raw)
    assert f.header.data_record_count == 3
    np.testing.assert_array_equal(f.digital("EEG"), np.arange(9))
    with pytest.raises(TruncatedRecord):
        EdfFile.open(raw[:-2])


def test_zero_record_duration_rejected_for_signal_files():
    _, raw = make_edf([make_spec()], [np.zeros(3)], 1, duration=0.0)
    with pytest.raises(MalformedField):
        EdfFile.open(raw)


header_text = st.text(alphabet=st.characters(min_codepoint=33, max_codepoint=126), max_size=8)


@settings(max_examples=60, deadline=None)
@given(
    n_rec=st.integers(0, 4),
    sprs=st.lists(st.integers(1, 7), min_size=1, max_size=3),
    patient=st.text(alphabet=st.characters(min_codepoint=33, max_codepoint=126), max_size=80),
    label=header_text,
    seed=st.integers(0, 2**32 - 1),
    duration=st.sampled_from([0.5, 1.0, 30.0, 0.25]),
)
def test_writer_parser_round_trip(n_rec, sprs, patient, label, seed, duration):
    rng = np.random.default_rng(seed)
    specs = [SignalSpec(f"{label}{i}", "t", "uV", -500.0, 500.0, -32768, 32767, "p", spr)
             for i, spr in enumerate(sprs)]
    digital = [rng.integers(-32768, 32768, n_rec * s.samples_per_record).astype(np.int16) for s in specs]
    h = EdfHeader("0", patient, "rec", "01.01.00", "00.00.00", 256 * (len(specs) + 1), n_rec, duration,
                  len(specs))
    f = EdfFile.open(write_edf_bytes(h, specs, digital))
    assert f.header == h
    assert f.signals == specs
    for s, d in zip(specs, digital):
        np.testing.assert_array_equal(f.digital(s.label), d)
        rec = read_signal(f, s.label)
        assert len(rec.samples) == n_rec * s.samples_per_record
        assert rec.sample_rate_hz == s.samples_per_record / duration


# -- annotations -------------------------------------------------------------


def test_tal_example():
    anns = parse_tal_record(b"+0\x15 30\x14Sleep stage W\x14\x00")
    assert anns == [StageAnnotation(0.0, 30.0, "Sleep stage W")]


def test_tal_empty_record():
    assert parse_tal_record(b"\x00" * 64) == []


def test_tal_timekeeping_skipped_and_multiple_texts():
    raw = b"+0\x14\x14\x00+30\x1560\x14Sleep stage 2\x14Note\x14\x00\x00\x00"
    anns = parse_tal_record(raw)
    assert anns == [StageAnnotation(30.0, 60.0, "Sleep stage 2"), StageAnnotation(30.0, 60.0, "Note")]


@pytest.mark.parametrize("raw", [b"+0\x1530\x14Sleep", b"abc\x14x\x14\x00", b"+0\x15x\x14W\x14\x00",
                                 b"0\x14W\x14\x00"])
def test_tal_malformed(raw):
    with pytest.raises(MalformedTal):
        parse_tal_record(raw)


def annotation_file(anns, n_records=1, record_duration=0.0):
    spec, data = annotation_signal(anns, n_records, record_duration)
    h = EdfHeader("0", "x", "y", "01.01.00", "00.00.00", 512, n_records, record_duration, 1, "EDF+C")
    return write_edf_bytes(h, [spec], [data])


def test_parse_annotations_sorted_across_records():
    anns = [StageAnnotation(60.0, 30.0, "Sleep stage 1"), StageAnnotation(0.0, 60.0, "Sleep stage W"),
            StageAnnotation(90.0, 30.0, "Sleep stage R")]
    raw = annotation_file(anns, n_records=3, record_duration=30.0)
    out = parse_annotations(raw)
    assert [a.onset_s for a in out] == [0.0, 60.0, 90.0]
    assert out[0] == StageAnnotation(0.0, 60.0, "Sleep stage W")


def test_parse_annotations_warns_on_odd_duration():
    raw = annotation_file([StageAnnotation(0.0, 45.0, "Sleep stage W")])
    with pytest.warns(UserWarning):
        parse_annotations(raw)


tal_text = st.text(alphabet=st.characters(blacklist_characters="\x00\x14\x15", blacklist_categories=("Cs",)),
                   min_size=1, max_size=20)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 100000), st.integers(0, 2000), tal_text), max_size=12))
def test_annotations_round_trip_and_ordered(items):
    anns = [StageAnnotation(float(o), float(30 * d), t) for o, d, t in items]
    raw = annotation_file(anns)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = parse_annotations(raw)
    onsets = [a.onset_s for a in out]
    assert onsets == sorted(onsets)
    assert sorted(out, key=lambda a: (a.onset_s, a.duration_s, a.label_text)) == sorted(
        anns, key=lambda a: (a.onset_s, a.duration_s, a.label_text))


def test_encode_tal_matches_hand_bytes():
    assert encode_tal(0, 30, ["Sleep stage W"]) == b"+0\x1530\x14Sleep stage W\x14\x00"


def test_synthetic_night_pair(night_paths):
    psg, hyp = night_paths[4001]
    f = EdfFile.open(psg)
    rec = read_signal(psg, "EEG Fpz-Cz")
    assert rec.sample_rate_hz == 100
    assert len(rec.samples) == f.header.data_record_count * 3000
    anns = parse_annotations(hyp)
    assert sum(a.duration_s for a in anns) == f.header.data_record_count * 30
    assert all(a.duration_s % 30 == 0 for a in anns)
