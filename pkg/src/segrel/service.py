"""Generative-service wire protocol: client, deterministic mock, HTTP server.

All neural steps (diffusion inpainting/refinement/generation, captioning,
mask extraction) sit behind five JSON-over-HTTP endpoints. Every endpoint
is idempotent given the request's ``seed``:

    POST /inpaint      {image_b64, inner_mask_b64, prompt, guidance_scale,
                        steps, seed} -> {image_b64}
    POST /refine       {image_b64, strength, guidance_scale, seed} -> {image_b64}
    POST /extract_mask {image_b64, object_name, seed} -> {mask_b64}
    POST /generate     {control_mask_b64, prompt, steps, guidance_scale,
                        control_strength, seed} -> {image_b64}
    POST /caption      {image_b64, seed} -> {caption}

Images and masks travel as base64 PNG (masks 0/255 single channel).

The mock implements all five deterministically so the whole pipeline can
be exercised hermetically: /inpaint paints a disc centred in the inner
region with diameter 0.6x the smaller inner-region side, coloured by the
FNV-1a hash of the prompt (each channel gets its high bit set, so test
fixtures that keep channel values below 128 can never collide);
/extract_mask recovers exactly the pixels of that colour.
"""
from __future__ import annotations

import base64
import io
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests
from PIL import Image

from .errors import TransportError
from .rng import fnv1a64

DEFAULT_BACKOFF = (0.5, 1.0, 2.0)


# --- wire encoding -----------------------------------------------------------


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def image_to_b64(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    return base64.b64encode(_png_bytes(Image.fromarray(arr, mode="RGB"))).decode("ascii")


def b64_to_image(data: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data))).convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def mask_to_b64(mask: np.ndarray) -> str:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    return base64.b64encode(_png_bytes(Image.fromarray(arr, mode="L"))).decode("ascii")


def b64_to_mask(data: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data)))
    return np.asarray(img, dtype=np.uint8) > 127


def label_to_b64(label: np.ndarray) -> str:
    arr = np.ascontiguousarray(label, dtype=np.uint8)
    return base64.b64encode(_png_bytes(Image.fromarray(arr, mode="L"))).decode("ascii")


def b64_to_label(data: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data)))
    return np.asarray(img, dtype=np.uint8)


# --- deterministic mock -------------------------------------------------------


class MockGenerativeModel:
    """Deterministic stand-in for the diffusion / captioning / mask models.

    With ``identity=True`` the inpainting step returns its input untouched,
    which makes downstream mask extraction come back empty; useful for
    exercising rejection paths.
    """

    def __init__(self, identity: bool = False):
        self.identity = identity

    @staticmethod
    def disc_color(prompt: str) -> tuple[int, int, int]:
        h = fnv1a64(prompt.encode("utf-8"))
        return (
            128 | (h & 0x7F),
            128 | ((h >> 8) & 0x7F),
            128 | ((h >> 16) & 0x7F),
        )

    def inpaint(
        self,
        image: np.ndarray,
        inner_mask: np.ndarray,
        prompt: str,
        guidance_scale: float,
        steps: int,
        seed: int,
    ) -> np.ndarray:
        if self.identity:
            return image.copy()
        mask = np.asarray(inner_mask, dtype=bool)
        ys, xs = np.nonzero(mask)
        if ys.size == 0:
            return image.copy()
        cx = (xs.min() + xs.max() + 1) / 2.0
        cy = (ys.min() + ys.max() + 1) / 2.0
        width = xs.max() + 1 - xs.min()
        height = ys.max() + 1 - ys.min()
        radius = 0.3 * min(width, height)
        yy, xx = np.mgrid[0 : image.shape[0], 0 : image.shape[1]]
        disc = ((xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2) <= radius * radius
        disc &= mask  # only the inner region is regenerated
        out = image.copy()
        out[disc] = self.disc_color(prompt)
        return out

    def refine(
        self, image: np.ndarray, strength: float, guidance_scale: float, seed: int
    ) -> np.ndarray:
        # Edge-clamped separable 3x3 box blur blended by strength.
        work = image.astype(np.float32)
        h, w = work.shape[:2]
        pad_y = np.pad(work, ((1, 1), (0, 0), (0, 0)), mode="edge")
        rows = pad_y[0:h] + pad_y[1 : h + 1]
        rows += pad_y[2 : h + 2]
        pad_x = np.pad(rows, ((0, 0), (1, 1), (0, 0)), mode="edge")
        blurred = pad_x[:, 0:w] + pad_x[:, 1 : w + 1]
        blurred += pad_x[:, 2 : w + 2]
        blurred /= 9.0
        alpha = np.float32(0.2 * strength)
        work *= 1 - alpha
        blurred *= alpha
        work += blurred
        np.rint(work, out=work)
        np.clip(work, 0, 255, out=work)
        return work.astype(np.uint8)

    def extract_mask(self, image: np.ndarray, object_name: str) -> np.ndarray:
        color = np.array(self.disc_color(f"A photo of an {object_name}"), dtype=np.uint8)
        return (image == color).all(axis=2)

    def generate(
        self,
        control_mask: np.ndarray,
        prompt: str,
        steps: int,
        guidance_scale: float,
        control_strength: float,
        seed: int,
    ) -> np.ndarray:
        h = fnv1a64(prompt.encode("utf-8"))
        ids = np.asarray(control_mask, dtype=np.uint8)
        palette = np.empty((256, 3), dtype=np.uint8)
        for cid in range(256):
            ch = fnv1a64(f"{h:016x}:{cid}".encode("ascii"))
            palette[cid] = (ch & 0xFF, (ch >> 8) & 0xFF, (ch >> 16) & 0xFF)
        return palette[ids]

    def caption(self, image: np.ndarray) -> str:
        h = fnv1a64(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
        return f"a street scene ({h & 0xFFFFFFFF:08x})"


# --- clients -------------------------------------------------------------------


class LocalMockClient:
    """In-process client with the same surface as the HTTP client."""

    def __init__(self, model: MockGenerativeModel | None = None):
        self.model = model or MockGenerativeModel()

    def inpaint(self, image, inner_mask, prompt, guidance_scale, steps, seed):
        return self.model.inpaint(image, inner_mask, prompt, guidance_scale, steps, seed)

    def refine(self, image, strength, guidance_scale, seed):
        return self.model.refine(image, strength, guidance_scale, seed)

    def extract_mask(self, image, object_name, seed=0):
        return self.model.extract_mask(image, object_name)

    def generate(self, control_mask, prompt, steps, guidance_scale, control_strength, seed):
        return self.model.generate(
            control_mask, prompt, steps, guidance_scale, control_strength, seed
        )

    def caption(self, image, seed=0):
        return self.model.caption(image)


class GenerativeServiceClient:
    """HTTP client with retries and exponential backoff.

    Connection failures, timeouts and 5xx responses are retried once per
    backoff entry; anything still failing raises TransportError. 4xx
    responses fail immediately (retrying cannot fix a bad request).
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 120.0,
        backoff: tuple[float, ...] = DEFAULT_BACKOFF,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.backoff = tuple(backoff)
        self._session = requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(len(self.backoff) + 1):
            if attempt > 0:
                time.sleep(self.backoff[attempt - 1])
            try:
                resp = self._session.post(
                    f"{self.base_url}{path}", json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = TransportError(f"{path}: server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"{path}: status {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise TransportError(f"{path}: service unreachable after retries: {last_error}")

    def inpaint(self, image, inner_mask, prompt, guidance_scale, steps, seed):
        out = self._post(
            "/inpaint",
            {
                "image_b64": image_to_b64(image),
                "inner_mask_b64": mask_to_b64(inner_mask),
                "prompt": prompt,
                "guidance_scale": guidance_scale,
                "steps": steps,
                "seed": seed,
            },
        )
        return b64_to_image(out["image_b64"])

    def refine(self, image, strength, guidance_scale, seed):
        out = self._post(
            "/refine",
            {
                "image_b64": image_to_b64(image),
                "strength": strength,
                "guidance_scale": guidance_scale,
                "seed": seed,
            },
        )
        return b64_to_image(out["image_b64"])

    def extract_mask(self, image, object_name, seed=0):
        out = self._post(
            "/extract_mask",
            {"image_b64": image_to_b64(image), "object_name": object_name, "seed": seed},
        )
        return b64_to_mask(out["mask_b64"])

    def generate(self, control_mask, prompt, steps, guidance_scale, control_strength, seed):
        out = self._post(
            "/generate",
            {
                "control_mask_b64": label_to_b64(control_mask),
                "prompt": prompt,
                "steps": steps,
                "guidance_scale": guidance_scale,
                "control_strength": control_strength,
                "seed": seed,
            },
        )
        return b64_to_image(out["image_b64"])

    def caption(self, image, seed=0):
        out = self._post("/caption", {"image_b64": image_to_b64(image), "seed": seed})
        return str(out["caption"])


def make_client(spec: str, **kwargs):
    """"mock" gives the in-process deterministic mock; anything else is a URL."""
    if spec == "mock":
        return LocalMockClient()
    return GenerativeServiceClient(spec, **kwargs)


# --- HTTP mock server -----------------------------------------------------------


class _MockHandler(BaseHTTPRequestHandler):
    model: MockGenerativeModel

    def log_message(self, *args):  # keep test output quiet
        pass

    def _reply(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            req = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, json.JSONDecodeError):
            self._reply(400, {"error": "malformed JSON body"})
            return
        model = self.server.model  # type: ignore[attr-defined]
        try:
            if self.path == "/inpaint":
                out = model.inpaint(
                    b64_to_image(req["image_b64"]),
                    b64_to_mask(req["inner_mask_b64"]),
                    str(req["prompt"]),
                    float(req["guidance_scale"]),
                    int(req["steps"]),
                    int(req.get("seed", 0)),
                )
                self._reply(200, {"image_b64": image_to_b64(out)})
            elif self.path == "/refine":
                out = model.refine(
                    b64_to_image(req["image_b64"]),
                    float(req["strength"]),
                    float(req["guidance_scale"]),
                    int(req.get("seed", 0)),
                )
                self._reply(200, {"image_b64": image_to_b64(out)})
            elif self.path == "/extract_mask":
                out = model.extract_mask(b64_to_image(req["image_b64"]), str(req["object_name"]))
                self._reply(200, {"mask_b64": mask_to_b64(out)})
            elif self.path == "/generate":
                out = model.generate(
                    b64_to_label(req["control_mask_b64"]),
                    str(req["prompt"]),
                    int(req["steps"]),
                    float(req["guidance_scale"]),
                    float(req["control_strength"]),
                    int(req.get("seed", 0)),
                )
                self._reply(200, {"image_b64": image_to_b64(out)})
            elif self.path == "/caption":
                self._reply(200, {"caption": model.caption(b64_to_image(req["image_b64"]))})
            else:
                self._reply(404, {"error": f"unknown endpoint {self.path}"})
        except KeyError as exc:
            self._reply(400, {"error": f"missing field {exc}"})


class MockServiceServer:
    """Threaded HTTP server around :class:`MockGenerativeModel`."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, model=None):
        self._httpd = ThreadingHTTPServer((host, port), _MockHandler)
        self._httpd.model = model or MockGenerativeModel()  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServiceServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Run the deterministic mock generative service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8763)
    args = parser.parse_args(argv)
    server = MockServiceServer(args.host, args.port)
    print(f"mock generative service on {server.url}")
    try:
        server._httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
