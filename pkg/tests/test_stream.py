import io
import socket
import threading
import time
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from somno.calibrate import CalibrationProfile
from somno.edf import read_signal
from somno.errors import BindFailure, DataBeforeHello, NonFiniteSample, ProtocolError, TruncatedFrame, UnknownFrameType
from somno.metrics import read_hypnogram
from somno.net import SleepNet
from somno.stream import Bye, Data, Hello, Session, Stage, batch_predict, decode_frame, encode_frame, make_server
from somno.stream.protocol import read_frame
from somno.stream.replay import replay, stream_samples

f32 = st.floats(width=32, allow_nan=False)
frames = st.one_of(
    st.builds(Hello, st.integers(0, 2**32 - 1), st.integers(0, 2**16 - 1), st.text(max_size=40).filter(
        lambda s: len(s.encode()) < 256)),
    st.builds(Data, hnp.arrays(np.float32, st.integers(0, 300), elements=f32)),
    st.builds(Stage, st.integers(0, 2**32 - 1), st.integers(0, 4), f32, st.tuples(*[f32] * 5)),
    st.just(Bye()),
)


# -- protocol ------------------------------------------------------------------


@given(frames)
def test_round_trip(frame):
    raw = encode_frame(frame)
    back, used = decode_frame(raw)
    assert used == len(raw)
    assert back == frame
    assert read_frame(io.BytesIO(raw)) == frame


def test_stage_frame_size():
    raw = encode_frame(Stage(0, 0, 1.0, (1.0, 0.0, 0.0, 0.0, 0.0)))
    # 4 + 1 + 4 + 5 * 4 payload bytes behind a 5-byte header
    assert raw[0] == 0x03
    assert int.from_bytes(raw[1:5], "little") == 29
    assert len(raw) == 34


def test_hello_layout():
    raw = encode_frame(Hello(256, 2, "band"))
    assert raw == b"\x01" + (11).to_bytes(4, "little") + (256).to_bytes(4, "little") + b"\x02\x00\x04band"


def test_unknown_type_and_truncation():
    with pytest.raises(UnknownFrameType):
        decode_frame(b"\x7f\x00\x00\x00\x00")
    raw = encode_frame(Data(np.arange(4, dtype=np.float32)))
    with pytest.raises(TruncatedFrame):
        decode_frame(raw[:3])
    with pytest.raises(TruncatedFrame):
        decode_frame(raw[:-1])
    with pytest.raises(TruncatedFrame):
        read_frame(io.BytesIO(raw[:-1]))
    assert read_frame(io.BytesIO(b"")) is None


def test_length_mismatch_is_protocol_error():
    bad = b"\x02" + (8).to_bytes(4, "little") + (5).to_bytes(4, "little") + b"\0" * 4
    with pytest.raises(ProtocolError):
        decode_frame(bad)


# -- session -------------------------------------------------------------------


@pytest.fixture(scope="module")
def model(small_config):
    return SleepNet(small_config, seed=3)


def _noise(n, seed=0, scale=20.0):
    return (np.random.default_rng(seed).standard_normal(n) * scale).astype(np.float32)


def test_epoch_boundary_at_256_hz(model):
    s = Session(model)
    s.handle(Hello(256, 1))
    assert s.ingest(Data(_noise(7679))) == []
    out = s.ingest(Data(_noise(1, 1)))
    assert len(out) == 1 and out[0].epoch_index == 0
    assert len(s._buffer) == 0


def test_two_epochs_in_one_frame_and_calibration(model):
    s = Session(model, default_calib_epochs=2)
    s.handle(Hello(100))
    out = s.ingest(Data(_noise(3000 * 5 + 10)))
    assert [f.epoch_index for f in out] == [0, 1, 2, 3, 4]
    for f in out[:2]:
        assert f.stage == 0 and f.confidence == 1.0 and f.probabilities == (1.0, 0.0, 0.0, 0.0, 0.0)
    assert s.profile is not None
    for f in out[2:]:
        assert abs(sum(f.probabilities) - 1) < 1e-6 and f.confidence == max(f.probabilities)
    assert len(s._buffer) == 10


def test_data_before_hello(model):
    with pytest.raises(DataBeforeHello):
        Session(model).handle(Data(_noise(10)))


def test_hello_validation(model):
    s = Session(model)
    s.handle(Hello(100, 0xFFFF))
    assert s.calib_remaining == 2
    with pytest.raises(ProtocolError):
        s.handle(Hello(100))
    with pytest.raises(ProtocolError):
        Session(model).handle(Hello(50))
    with pytest.raises(ProtocolError):
        Session(model).handle(Hello(100, 0))
    s = Session(model, profile=CalibrationProfile(0.0, 20.0, 3000))
    s.handle(Hello(100, 0))
    assert s.ingest(Data(_noise(3000)))[0].epoch_index == 0


def test_non_finite_epoch_dropped_counter_advances(model):
    s = Session(model, default_calib_epochs=1)
    s.handle(Hello(100))
    x = _noise(3000 * 3)
    x[3000 + 17] = np.nan
    with pytest.warns(NonFiniteSample):
        out = s.ingest(Data(x))
    assert [f.epoch_index for f in out] == [0, 2]
    assert s.dropped == [1]


def test_session_matches_batch_in_process(model):
    x = _noise(3000 * 6, seed=5)
    x[3000 * 3 + 1] = np.inf
    s = Session(model)
    s.handle(Hello(100))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonFiniteSample)
        streamed = s.ingest(Data(x))
    batch = batch_predict(x, 100, model)
    assert [f.epoch_index for f in streamed] == [f.epoch_index for f in batch] == [0, 1, 2, 4, 5]
    for a, b in zip(streamed, batch):
        assert a.stage == b.stage
        np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-6)


# -- server --------------------------------------------------------------------


@pytest.fixture()
def server(model, tmp_path):
    srv = make_server(0, model, log_dir=tmp_path / "sessions")
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def _wait_finished(srv, n, timeout=10.0):
    end = time.monotonic() + timeout
    while len(srv.finished) < n and time.monotonic() < end:
        time.sleep(0.01)
    assert len(srv.finished) >= n


def test_hello_then_silence(server):
    with socket.create_connection(("127.0.0.1", server.port)) as sock:
        sock.sendall(encode_frame(Hello(100, 2, "quiet")))
        sock.settimeout(0.3)
        with pytest.raises(socket.timeout):
            sock.recv(1)
    _wait_finished(server, 1)
    assert server.finished[0].records == []


def test_protocol_error_closes_only_that_session(server):
    with socket.create_connection(("127.0.0.1", server.port)) as bad:
        bad.sendall(b"\x7f\x00\x00\x00\x00")
        bad.settimeout(5)
        assert bad.recv(1) == b""
    res = stream_samples(_noise(3000 * 3), 100, "127.0.0.1", server.port)
    assert [f.epoch_index for f in res.stages] == [0, 1, 2]


def test_replay_night_matches_batch(server, night_paths, model, tmp_path):
    psg, _ = night_paths[4001]
    rec = read_signal(psg, "EEG Fpz-Cz")
    n_epochs = len(rec.samples) // 3000
    out = io.StringIO()
    a = replay(psg, "EEG Fpz-Cz", "127.0.0.1", server.port, speed=0, out=out)
    b = replay(psg, "EEG Fpz-Cz", "127.0.0.1", server.port, speed=0, out=None)
    assert len(a.stages) == n_epochs
    assert a.stages == b.stages
    assert len(out.getvalue().splitlines()) == n_epochs
    batch = batch_predict(rec.samples.astype(np.float32), 100, model)
    assert [f.epoch_index for f in batch] == [f.epoch_index for f in a.stages]
    np.testing.assert_allclose([f.probabilities for f in a.stages], [f.probabilities for f in batch], atol=1e-6)
    _wait_finished(server, 2)
    assert max(r.latency_s for s in server.finished for r in s.records) < 1.0
    csvs = sorted((tmp_path / "sessions").glob("session-*.csv"))
    assert len(csvs) == 2
    rows = read_hypnogram(csvs[0])
    assert len(rows) == n_epochs and rows[0]["true_stage"] is None


def test_replay_pacing(server):
    res = stream_samples(_noise(300), 100, "127.0.0.1", server.port, speed=4.0, chunk_s=0.25)
    # 3 s of signal at 4x real time
    assert 0.7 <= res.elapsed_s < 1.5
    assert res.samples_sent == 300 and res.stages == []


def test_bind_failure(server, model):
    with pytest.raises(BindFailure):
        make_server(server.port, model)


def test_weights_from_env(model, tmp_path, monkeypatch):
    from somno.net import save_weights

    save_weights(model, tmp_path / "w.ssw")
    monkeypatch.setenv("SOMNO_WEIGHTS", str(tmp_path / "w.ssw"))
    srv = make_server(0)
    try:
        assert srv.model.config == model.config
    finally:
        srv.server_close()
    monkeypatch.delenv("SOMNO_WEIGHTS")
    with pytest.raises(ValueError):
        make_server(0)
