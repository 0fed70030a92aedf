import http.client
import io
import socket
import threading
import time

import numpy as np
import pytest
from PIL import Image

from mjpeg_client import StreamClient
from pulsegrid import net
from pulsegrid.errors import ServerStartupError
from pulsegrid.ingest import RawFrame
from pulsegrid.pipeline import DataContainer, VitalsRecord

BOUNDARY = "pulsegridframe"


def test_format_example():
    rec = VitalsRecord(72, 15, 0, 1, 1, 0.45, 0.12)
    assert net.format_vhealth(rec) == "72.00,15.00,0.00,1,1,0.45,0.12"


def test_format_rounding_and_signs():
    rec = VitalsRecord(71.996, 0.004, 97.5, 0, 0, -0.456, -0.0)
    assert net.format_vhealth(rec) == "72.00,0.00,97.50,0,0,-0.46,-0.00"


def test_format_non_finite_is_zero():
    assert net.format_vhealth(VitalsRecord(float("nan"))).startswith("0.00,")


@pytest.mark.parametrize("kw", [{"rest_port": 9000, "stream_port": 9000}, {"boundary": ""},
                                {"boundary": "a b"}, {"jpeg_quality": 0}])
def test_stream_config_validation(kw):
    with pytest.raises(ValueError):
        net.StreamConfig(**kw)


def test_jpeg_is_standalone():
    frame = RawFrame(4, 3, bytes(range(36)))
    data = net.encode_jpeg(frame)
    assert data[:2] == b"\xff\xd8" and data[-2:] == b"\xff\xd9"
    assert Image.open(io.BytesIO(data)).size == (4, 3)


@pytest.fixture
def served():
    c = DataContainer()
    c.publish(VitalsRecord(72, 15, 0, 1, 1, 0.45, 0.12), 1, 0.0)
    handle = net.start_servers(net.StreamConfig(rest_port=0, stream_port=0), c)
    yield c, handle
    c.close()
    handle.shutdown()


def get(port, path, method="GET"):
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=5)
    conn.request(method, path)
    resp = conn.getresponse()
    body = resp.read().decode()
    conn.close()
    return resp, body


def test_vhealth(served):
    _, h = served
    resp, body = get(h.rest_port, "/vhealth")
    assert resp.status == 200 and resp.getheader("Content-Type") == "text/plain"
    assert body == "72.00,15.00,0.00,1,1,0.45,0.12"


def test_unknown_path_and_method(served):
    _, h = served
    assert get(h.rest_port, "/nope")[0].status == 404
    assert get(h.rest_port, "/vhealth", "POST")[0].status == 405
    assert get(h.stream_port, "/other")[0].status == 404


def test_occupied_port_names_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        with pytest.raises(ServerStartupError, match=str(port)):
            net.start_servers(net.StreamConfig(rest_port=port, stream_port=0), DataContainer())


def publisher(c, stop, fps=30, size=(32, 24)):
    k = 0
    while not stop.is_set():
        k += 1
        frame = RawFrame(size[0], size[1], bytes([k % 256]) * (3 * size[0] * size[1]))
        c.publish(VitalsRecord(g_hr=k), k, float(k), main=frame, pulse=frame)
        time.sleep(1 / fps)


@pytest.fixture
def streaming(served):
    c, h = served
    stop = threading.Event()
    t = threading.Thread(target=publisher, args=(c, stop), daemon=True)
    t.start()
    yield c, h
    stop.set()
    t.join()


@pytest.mark.parametrize("path", ["/mainstream", "/pulsestream"])
def test_stream_parts_decode(streaming, path):
    _, h = streaming
    client = StreamClient(h.stream_port, path)
    assert client.status == 200
    assert client.headers["content-type"] == f"multipart/x-mixed-replace; boundary={BOUNDARY}"
    for _ in range(10):
        headers, body = client.read_part(BOUNDARY)
        assert headers["content-type"] == "image/jpeg"
        img = Image.open(io.BytesIO(body))
        img.load()
        assert img.format == "JPEG" and img.size == (32, 24)
    client.close()


def test_two_clients_independent(streaming):
    _, h = streaming
    a = StreamClient(h.stream_port, "/mainstream")
    b = StreamClient(h.stream_port, "/pulsestream")
    for _ in range(3):
        for client in (a, b):
            Image.open(io.BytesIO(client.read_part(BOUNDARY)[1])).load()
    a.close()
    # the surviving client keeps receiving after the other disconnects
    for _ in range(3):
        Image.open(io.BytesIO(b.read_part(BOUNDARY)[1])).load()
    b.close()


def noisy_publisher(c, stop, fps=30):
    rng = np.random.default_rng(0)
    k = 0
    while not stop.is_set():
        k += 1
        frame = RawFrame.from_array(rng.integers(0, 256, (120, 160, 3), dtype=np.uint8))
        c.publish(VitalsRecord(g_hr=k), k, float(k), main=frame)
        time.sleep(1 / fps)


def test_paused_reader_skips_frames(served):
    c, h = served
    stop = threading.Event()
    threading.Thread(target=noisy_publisher, args=(c, stop), daemon=True).start()
    client = StreamClient(h.stream_port, "/mainstream", rcvbuf=16384)
    client.read_part(BOUNDARY)
    time.sleep(2.0)
    # drain what piled up during the pause; a slow read means we are live again
    backlog = 0
    while backlog < 200:
        t0 = time.monotonic()
        client.read_part(BOUNDARY)
        if time.monotonic() - t0 > 0.015:
            break
        backlog += 1
    stop.set()
    client.close()
    assert backlog < 60


def test_shutdown_closes_active_stream():
    c = DataContainer()
    h = net.start_servers(net.StreamConfig(rest_port=0, stream_port=0), c)
    stop = threading.Event()
    threading.Thread(target=publisher, args=(c, stop), daemon=True).start()
    client = StreamClient(h.stream_port, "/mainstream")
    client.read_part(BOUNDARY)
    t0 = time.monotonic()
    h.shutdown()
    client.settimeout(3.0)
    with pytest.raises(ConnectionError):
        while True:
            client.read_part(BOUNDARY)
    assert time.monotonic() - t0 < 3.0
    stop.set()
    client.close()
