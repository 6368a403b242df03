import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from segrel.errors import TransportError
from segrel.service import (
    GenerativeServiceClient,
    LocalMockClient,
    MockGenerativeModel,
    MockServiceServer,
    b64_to_image,
    image_to_b64,
    mask_to_b64,
)


@pytest.fixture(scope="module")
def server():
    with MockServiceServer() as srv:
        yield srv


@pytest.fixture(scope="module")
def client(server):
    return GenerativeServiceClient(server.url, timeout=10, backoff=(0.05, 0.05, 0.05))


def _image(rng, w=64, h=48):
    return rng.integers(0, 128, size=(h, w, 3)).astype(np.uint8)


def _inner_mask(w=64, h=48):
    mask = np.zeros((h, w), dtype=bool)
    mask[12:36, 16:48] = True
    return mask


class TestWireRoundTrip:
    def test_png_b64_round_trip(self, np_rng):
        img = _image(np_rng)
        assert np.array_equal(b64_to_image(image_to_b64(img)), img)

    def test_inpaint_matches_local(self, np_rng, client):
        img = _image(np_rng)
        mask = _inner_mask()
        local = LocalMockClient().inpaint(img, mask, "A photo of an zebra", 15.0, 25, 3)
        remote = client.inpaint(img, mask, "A photo of an zebra", 15.0, 25, 3)
        assert np.array_equal(local, remote)

    def test_refine_matches_local(self, np_rng, client):
        img = _image(np_rng)
        local = LocalMockClient().refine(img, 0.65, 7.5, 1)
        remote = client.refine(img, 0.65, 7.5, 1)
        assert np.array_equal(local, remote)

    def test_extract_mask_recovers_disc(self, np_rng, client):
        img = _image(np_rng)
        mask = _inner_mask()
        painted = client.inpaint(img, mask, "A photo of an koala", 15.0, 25, 0)
        extracted = client.extract_mask(painted, "koala")
        disc = ~(painted == img).all(axis=2)
        assert np.array_equal(extracted, disc)
        assert extracted.sum() > 0

    def test_generate_matches_local(self, np_rng, client):
        labels = np_rng.integers(0, 5, size=(32, 32)).astype(np.uint8)
        local = LocalMockClient().generate(labels, "x, in fog", 25, 8.0, 1.0, 0)
        remote = client.generate(labels, "x, in fog", 25, 8.0, 1.0, 0)
        assert np.array_equal(local, remote)
        # same class id maps to the same colour everywhere
        colors = {tuple(local[i, j]) for i in range(32) for j in range(32)}
        assert len(colors) == len(np.unique(labels))

    def test_caption_matches_local(self, np_rng, client):
        img = _image(np_rng)
        assert client.caption(img) == LocalMockClient().caption(img)

    def test_idempotent_given_seed(self, np_rng, client):
        img = _image(np_rng)
        mask = _inner_mask()
        a = client.inpaint(img, mask, "A photo of an lion", 15.0, 25, 42)
        b = client.inpaint(img, mask, "A photo of an lion", 15.0, 25, 42)
        assert np.array_equal(a, b)

    def test_unknown_endpoint_404(self, server):
        import requests

        resp = requests.post(f"{server.url}/nope", json={}, timeout=5)
        assert resp.status_code == 404

    def test_missing_field_400(self, server):
        import requests

        resp = requests.post(f"{server.url}/inpaint", json={"prompt": "x"}, timeout=5)
        assert resp.status_code == 400


class TestMockSemantics:
    def test_disc_inside_inner_region_only(self, np_rng):
        img = _image(np_rng)
        mask = _inner_mask()
        painted = MockGenerativeModel().inpaint(img, mask, "A photo of an bench", 15.0, 25, 0)
        changed = ~(painted == img).all(axis=2)
        assert changed.any()
        assert not (changed & ~mask).any()

    def test_disc_diameter(self, np_rng):
        img = np.zeros((100, 100, 3), dtype=np.uint8)
        mask = np.zeros((100, 100), dtype=bool)
        mask[10:90, 20:80] = True  # 60 wide, 80 tall
        painted = MockGenerativeModel().inpaint(img, mask, "p", 1.0, 1, 0)
        changed = ~(painted == img).all(axis=2)
        xs = np.nonzero(changed.any(axis=0))[0]
        assert xs.max() - xs.min() + 1 == pytest.approx(0.6 * 60, abs=1.5)

    def test_disc_color_high_bits(self):
        for prompt in ("a", "b", "A photo of an zebra"):
            color = MockGenerativeModel.disc_color(prompt)
            assert all(c >= 128 for c in color)

    def test_identity_model(self, np_rng):
        img = _image(np_rng)
        model = MockGenerativeModel(identity=True)
        assert np.array_equal(model.inpaint(img, _inner_mask(), "p", 1.0, 1, 0), img)
        assert model.extract_mask(img, "zebra").sum() == 0

    def test_refine_is_gentle(self, np_rng):
        img = _image(np_rng)
        refined = MockGenerativeModel().refine(img, 0.65, 7.5, 0)
        assert np.abs(refined.astype(int) - img.astype(int)).max() <= 32


class _FlakyHandler(BaseHTTPRequestHandler):
    failures_left = 2

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        self.rfile.read(length)
        cls = type(self)
        if cls.failures_left > 0:
            cls.failures_left -= 1
            self.send_response(503)
            self.end_headers()
            return
        body = json.dumps({"caption": "ok"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class TestRetries:
    def test_recovers_after_transient_failures(self, np_rng):
        _FlakyHandler.failures_left = 2
        httpd = ThreadingHTTPServer(("127.0.0.1", 0), _FlakyHandler)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{httpd.server_address[1]}"
            client = GenerativeServiceClient(url, timeout=5, backoff=(0.01, 0.01, 0.01))
            assert client.caption(_image(np_rng)) == "ok"
        finally:
            httpd.shutdown()
            httpd.server_close()

    def test_persistent_failure_raises_transport_error(self, np_rng):
        _FlakyHandler.failures_left = 10**9
        httpd = ThreadingHTTPServer(("127.0.0.1", 0), _FlakyHandler)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{httpd.server_address[1]}"
            client = GenerativeServiceClient(url, timeout=5, backoff=(0.01, 0.01))
            with pytest.raises(TransportError):
                client.caption(_image(np_rng))
        finally:
            httpd.shutdown()
            httpd.server_close()

    def test_unreachable_raises_transport_error(self, np_rng):
        client = GenerativeServiceClient("http://127.0.0.1:9", timeout=0.5, backoff=(0.01,))
        with pytest.raises(TransportError):
            client.caption(_image(np_rng))

    def test_mask_b64_binary_values(self):
        mask = np.array([[True, False]])
        import base64
        import io

        from PIL import Image

        raw = base64.b64decode(mask_to_b64(mask))
        arr = np.asarray(Image.open(io.BytesIO(raw)))
        assert set(np.unique(arr)) <= {0, 255}
