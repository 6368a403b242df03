"""Human-curation backend: verdict log, compaction, and the review API.

Verdicts are persisted append-only as JSON lines; the export step compacts
them idempotently with last-write-wins per sample. The HTTP API consumed
by the browser frontend:

    GET  /api/samples?page=1&page_size=50&filter=all|accepted|rejected|unreviewed
    GET  /api/image/<sample_id>      (PNG)
    GET  /api/mask/<sample_id>       (PNG)
    POST /api/verdict                {sample_id, verdict, reason_tag}

Static frontend files are served from an optional UI directory at /.
"""
from __future__ import annotations

import json
import mimetypes
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .manifest import DatasetManifest
from .types import VERDICTS, CurationRecord

REASON_TAGS = ("color saturation", "partial object", "other")


def append_verdict(log_path: str | Path, record: CurationRecord) -> None:
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_verdict_log(log_path: str | Path) -> list[CurationRecord]:
    path = Path(log_path)
    if not path.exists():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            records.append(CurationRecord.from_dict(json.loads(line)))
    return records


def compact_verdicts(records) -> dict[str, CurationRecord]:
    """Last verdict per sample, in log order."""
    latest: dict[str, CurationRecord] = {}
    for record in records:
        latest[record.sample_id] = record
    return latest


def save_curation_manifest(records, path: str | Path) -> None:
    doc = {"records": [r.to_dict() for r in sorted(records, key=lambda r: r.sample_id)]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_curation_manifest(path: str | Path) -> list[CurationRecord]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [CurationRecord.from_dict(d) for d in doc["records"]]


def export_verdicts(log_path: str | Path, out_path: str | Path) -> list[CurationRecord]:
    latest = compact_verdicts(read_verdict_log(log_path))
    records = list(latest.values())
    save_curation_manifest(records, out_path)
    return records


@dataclass
class _SampleInfo:
    sample_id: str
    object_name: str
    image_path: Path | None
    mask_path: Path | None


class CurationServer:
    """Review server over a generated-dataset manifest.

    Concurrent verdict posts are per-sample last-write-wins; a single lock
    serialises appends to the log file.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        log_path: str | Path,
        ui_dir: str | Path | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.samples: dict[str, _SampleInfo] = {}
        for entry in manifest.sorted_entries():
            object_name = ""
            if entry.domain_tag.startswith("inpaint:"):
                object_name = entry.domain_tag.split(":", 1)[1]
            self.samples[entry.sample_id] = _SampleInfo(
                sample_id=entry.sample_id,
                object_name=object_name,
                image_path=manifest.resolve(entry.image_path),
                mask_path=manifest.resolve(entry.ood_mask_path),
            )
        self.order = sorted(self.samples)
        self.log_path = Path(log_path)
        self.ui_dir = Path(ui_dir) if ui_dir is not None else None
        self._lock = threading.Lock()
        self.verdicts: dict[str, CurationRecord] = compact_verdicts(
            read_verdict_log(self.log_path)
        )
        self._httpd = ThreadingHTTPServer((host, port), _CurateHandler)
        self._httpd.app = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "CurationServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    # -- API logic ------------------------------------------------------------

    def record_verdict(self, sample_id: str, verdict: str, reason_tag: str) -> CurationRecord:
        record = CurationRecord(
            sample_id=sample_id,
            verdict=verdict,
            reason_tag=reason_tag,
            timestamp=time.time(),
        )
        with self._lock:
            self.verdicts[sample_id] = record
            append_verdict(self.log_path, record)
        return record

    def counts(self) -> dict:
        accepted = sum(1 for r in self.verdicts.values() if r.verdict == "accepted")
        rejected = len(self.verdicts) - accepted
        total = len(self.order)
        return {
            "total": total,
            "reviewed": len(self.verdicts),
            "accepted": accepted,
            "rejected": rejected,
            "remaining": total - len(self.verdicts),
        }

    def sample_payload(self, info: _SampleInfo) -> dict:
        record = self.verdicts.get(info.sample_id)
        return {
            "sample_id": info.sample_id,
            "object_name": info.object_name,
            "image_url": f"/api/image/{info.sample_id}",
            "mask_url": f"/api/mask/{info.sample_id}",
            "verdict": record.verdict if record else None,
            "reason_tag": record.reason_tag if record else "",
        }

    def list_samples(self, page: int, page_size: int, verdict_filter: str) -> dict:
        ids = self.order
        if verdict_filter in VERDICTS:
            ids = [s for s in ids if self.verdicts.get(s) and self.verdicts[s].verdict == verdict_filter]
        elif verdict_filter == "unreviewed":
            ids = [s for s in ids if s not in self.verdicts]
        start = (page - 1) * page_size
        chunk = ids[start : start + page_size]
        return {
            "page": page,
            "page_size": page_size,
            "total": len(ids),
            "counts": self.counts(),
            "reason_tags": list(REASON_TAGS),
            "samples": [self.sample_payload(self.samples[s]) for s in chunk],
        }


class _CurateHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    @property
    def app(self) -> CurationServer:
        return self.server.app  # type: ignore[attr-defined]

    def _json(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _file(self, path: Path, content_type: str | None = None) -> None:
        if not path.is_file():
            self._json(404, {"error": f"{path.name} not found"})
            return
        data = path.read_bytes()
        self.send_response(200)
        ctype = content_type or mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        parsed = urlparse(self.path)
        parts = parsed.path.strip("/").split("/")
        if parsed.path == "/api/samples":
            qs = parse_qs(parsed.query)
            page = max(1, int(qs.get("page", ["1"])[0]))
            page_size = max(1, int(qs.get("page_size", ["50"])[0]))
            verdict_filter = qs.get("filter", ["all"])[0]
            self._json(200, self.app.list_samples(page, page_size, verdict_filter))
            return
        if len(parts) == 3 and parts[0] == "api" and parts[1] in ("image", "mask"):
            info = self.app.samples.get(parts[2])
            if info is None:
                self._json(404, {"error": f"unknown sample {parts[2]!r}"})
                return
            path = info.image_path if parts[1] == "image" else info.mask_path
            if path is None:
                self._json(404, {"error": f"no {parts[1]} for sample {parts[2]!r}"})
                return
            self._file(path, "image/png")
            return
        if self.app.ui_dir is not None:
            rel = parsed.path.lstrip("/") or "index.html"
            target = (self.app.ui_dir / rel).resolve()
            if str(target).startswith(str(self.app.ui_dir.resolve())) and target.is_file():
                self._file(target)
                return
        self._json(404, {"error": f"no route for {parsed.path}"})

    def do_POST(self):
        if urlparse(self.path).path != "/api/verdict":
            self._json(404, {"error": f"no route for {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            sample_id = str(body["sample_id"])
            verdict = str(body["verdict"])
            reason_tag = str(body.get("reason_tag", ""))
        except (ValueError, KeyError, json.JSONDecodeError):
            self._json(400, {"error": "body must be JSON with sample_id and verdict"})
            return
        if verdict not in VERDICTS:
            self._json(400, {"error": f"verdict must be one of {list(VERDICTS)}"})
            return
        if sample_id not in self.app.samples:
            self._json(404, {"error": f"unknown sample {sample_id!r}"})
            return
        record = self.app.record_verdict(sample_id, verdict, reason_tag)
        self._json(200, {"ok": True, "record": record.to_dict(), "counts": self.app.counts()})
