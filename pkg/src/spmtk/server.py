"""HTTP service for mask review: JSON API plus the static UI bundle.

Built on the stdlib threading HTTP server.  Reads run concurrently; writes
to a frame are serialized by the store and acknowledged only after the
mask and its review record are durably on disk.  A lock file under the
dataset directory stops two services from reviewing the same dataset at
once (a lock whose process is gone counts as stale and is reclaimed).
"""

from __future__ import annotations

import errno
import json
import os
import re
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .errors import (
    DatasetLockedError,
    InvalidTransitionError,
    MismatchedDimensionsError,
    PortInUseError,
    RleInvalidError,
    SpmError,
)
from .imageio import encode_gray_png
from .review import ReviewStore, RevisionConflict

LOCK_NAME = ".review.lock"

_FRAME_RE = re.compile(r"^/api/frames/([^/]+)/(image\.png|masks/(\d+)(/physics-check)?)$")


def _preview_png(frame) -> bytes:
    """Render a frame to 8-bit grayscale, normalized per frame."""
    px = frame.pixels.astype(np.float64)
    lo, hi = float(px.min()), float(px.max())
    if hi > lo:
        px = (px - lo) / (hi - lo)
    else:
        px = np.zeros_like(px)
    return encode_gray_png(np.rint(px * 255.0).astype(np.uint8))


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def acquire_dataset_lock(dataset_dir) -> Path:
    """Create the exclusive lock file, reclaiming one left by a dead process."""
    lock = Path(dataset_dir) / LOCK_NAME
    payload = str(os.getpid()).encode()
    for _ in range(2):
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            try:
                os.write(fd, payload)
            finally:
                os.close(fd)
            return lock
        except FileExistsError:
            try:
                pid = int(lock.read_text().strip() or "0")
            except (OSError, ValueError):
                pid = 0
            if pid and _pid_alive(pid):
                raise DatasetLockedError(
                    "dataset %s is being reviewed by pid %d"
                    % (dataset_dir, pid))
            lock.unlink(missing_ok=True)
    raise DatasetLockedError("could not acquire lock under %s" % dataset_dir)


class ReviewApp:
    """Route handling over a ReviewStore, independent of socket plumbing."""

    def __init__(self, store: ReviewStore, static_dir=None):
        self.store = store
        self.static_dir = Path(static_dir) if static_dir else None

    # Every handler returns (status, content_type, body_bytes).

    def handle(self, method, path, body):
        try:
            return self._route(method, path, body)
        except RevisionConflict as exc:
            return self._json(409, {"revision": exc.current.revision,
                                    "status": exc.current.status})
        except KeyError as exc:
            return self._json(404, {"error": str(exc)})
        except (RleInvalidError, InvalidTransitionError,
                MismatchedDimensionsError, ValueError) as exc:
            return self._json(400, {"error": str(exc)})
        except SpmError as exc:
            return self._json(422, {"error": str(exc)})

    def _route(self, method, path, body):
        if path == "/api/frames" and method == "GET":
            frames = [{"id": f.id, "channel": f.channel,
                       "scan_size_um": f.scan_size_um,
                       "mask_count": f.mask_count, "statuses": f.statuses}
                      for f in self.store.list_frames()]
            return self._json(200, frames)

        m = _FRAME_RE.match(path)
        if m:
            frame_id = m.group(1)
            if m.group(2) == "image.png":
                if method != "GET":
                    return self._json(405, {"error": "GET only"})
                if frame_id not in self.store.frame_ids():
                    return self._json(404, {"error": "unknown frame"})
                png = _preview_png(self.store.load_frame(frame_id))
                return 200, "image/png", png
            k = int(m.group(3))
            if m.group(4):  # physics-check
                if method != "POST":
                    return self._json(405, {"error": "POST only"})
                delta, verdict = self.store.physics_check(frame_id, k)
                return self._json(200, {"delta_h_nm": delta,
                                        "verdict": verdict})
            if method == "GET":
                record, rle = self.store.get_mask(frame_id, k)
                return self._json(200, {"revision": record.revision,
                                        "status": record.status,
                                        "note": record.note, "rle": rle})
            if method == "PUT":
                try:
                    payload = json.loads(body or b"{}")
                except json.JSONDecodeError:
                    return self._json(400, {"error": "body must be JSON"})
                if "revision" not in payload:
                    return self._json(400, {"error": "revision required"})
                record = self.store.update_mask(
                    frame_id, k, payload["revision"],
                    status=payload.get("status"), rle=payload.get("rle"),
                    note=payload.get("note"))
                return self._json(200, {"revision": record.revision,
                                        "status": record.status})
            return self._json(405, {"error": "unsupported method"})

        if method == "GET" and not path.startswith("/api/"):
            return self._static(path)
        return self._json(404, {"error": "no such route"})

    def _static(self, path):
        if self.static_dir is None:
            return self._json(404, {"error": "no UI bundle configured"})
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        try:
            target.relative_to(self.static_dir.resolve())
        except ValueError:
            return self._json(404, {"error": "not found"})
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            return self._json(404, {"error": "not found"})
        ctype = {
            ".html": "text/html; charset=utf-8",
            ".js": "text/javascript; charset=utf-8",
            ".css": "text/css; charset=utf-8",
            ".png": "image/png",
            ".svg": "image/svg+xml",
            ".map": "application/json",
        }.get(target.suffix, "application/octet-stream")
        return 200, ctype, target.read_bytes()

    @staticmethod
    def _json(status, obj):
        return status, "application/json", json.dumps(obj).encode()


class _Handler(BaseHTTPRequestHandler):
    app: ReviewApp = None  # assigned by make_server

    def _serve(self, method):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        status, ctype, payload = self.app.handle(method, self.path, body)
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        self._serve("GET")

    def do_PUT(self):
        self._serve("PUT")

    def do_POST(self):
        self._serve("POST")

    def log_message(self, fmt, *args):  # quiet by default
        pass


def make_server(dataset_dir, port=0, static_dir=None):
    """Bind the review service; returns (server, lock_path).

    The caller runs server.serve_forever() (or uses serve_review) and must
    release the lock file when done.
    """
    store = ReviewStore(dataset_dir)
    lock = acquire_dataset_lock(dataset_dir)
    app = ReviewApp(store, static_dir=static_dir)
    handler = type("BoundHandler", (_Handler,), {"app": app})
    try:
        server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    except OSError as exc:
        lock.unlink(missing_ok=True)
        if exc.errno == errno.EADDRINUSE:
            raise PortInUseError("port %d is already in use" % port) from exc
        raise
    return server, lock


def serve_review(dataset_dir, port, static_dir=None):
    """Run the review service until interrupted; releases the lock on exit."""
    server, lock = make_server(dataset_dir, port=port, static_dir=static_dir)
    try:
        host, bound_port = server.server_address[:2]
        print("review service on http://%s:%d" % (host, bound_port), flush=True)
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        lock.unlink(missing_ok=True)
