"""Loopback HTTP service around a consent session.

Binds to 127.0.0.1 only and dies with the session: the review loop is
local signal processing made literal.  Bodies are UTF-8 JSON; the built
frontend, when present, is served statically from the same port so the
browser never talks to any other host.

Endpoints:
    GET  /session                     session state summary
    GET  /variables                   variable cards with decisions
    GET  /preview/{variable}?page=n   paged rows + illustration
    POST /decision                    {"variable": ..., "decision": ...}
    POST /finalize                    build the donation package
    GET  /package                     package summary (file goes out of band)
    POST /purge                       {"keep_archives": bool}
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .consent import (
    ConsentSession,
    consent_summary,
    finalize,
    preview,
    purge_local,
    record_decision,
    write_package,
)
from .errors import ConsentStateError, DonateKitError, UnknownVariableError

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
}


class ConsentService:
    """Owns one session and the lock serializing its mutations."""

    def __init__(self, session: ConsentSession, package_dir: str | Path,
                 ui_dir: str | Path | None = None):
        self.session = session
        self.package_dir = Path(package_dir)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.package_path: Path | None = None
        self.lock = threading.Lock()

    # ---- JSON views ------------------------------------------------------

    def session_view(self) -> dict:
        s = self.session
        return {
            "session_id": s.session_id,
            "study_id": s.study_id,
            "state": s.state,
            "status": s.status,
            "pending": len(s.pending),
            "nothing_to_share": s.nothing_to_share,
        }

    def variables_view(self) -> dict:
        return {
            "variables": [
                {
                    "variable": e.variable,
                    "count": e.count,
                    "decision": e.decision,
                    "description": e.description,
                }
                for _, e in sorted(self.session.entries.items())
            ]
        }

    def preview_view(self, variable: str, page: int) -> dict:
        page_data = preview(self.session, variable, page=page)
        return {
            "variable": page_data.variable,
            "page": page_data.page,
            "page_count": page_data.page_count,
            "rows": [
                {"timestamp": ts, "value": value, "confidence": conf}
                for ts, value, conf in page_data.rows
            ],
            "illustration": {
                "input": page_data.illustration.input_excerpt,
                "output": page_data.illustration.output_excerpt,
            },
        }

    def decide(self, variable: str, decision: str) -> dict:
        with self.lock:
            record_decision(self.session, variable, decision)
        entry = self.session.entries[variable]
        return {"variable": entry.variable, "decision": entry.decision,
                "pending": len(self.session.pending)}

    def do_finalize(self) -> dict:
        with self.lock:
            package = finalize(self.session)
            self.package_dir.mkdir(parents=True, exist_ok=True)
            if package is not None:
                name = f"donation_{package.pseudonym.value}.zip"
                self.package_path = write_package(package,
                                                  self.package_dir / name)
            summary_path = self.package_dir / "consent_summary.json"
            summary_path.write_text(json.dumps(consent_summary(self.session),
                                               indent=2), encoding="utf-8")
        return self.package_view()

    def package_view(self) -> dict:
        if self.session.state == "open":
            raise ConsentStateError("session is not finalized yet")
        package = self.session.package
        view: dict = {"state": self.session.state, "status": self.session.status}
        if package is None:
            view["package"] = None
        else:
            view["package"] = {
                "path": str(self.package_path) if self.package_path else None,
                "checksum": package.checksum,
                "manifest": package.manifest,
                "record_count": len(package.records),
            }
        return view

    def do_purge(self, keep_archives: bool) -> dict:
        with self.lock:
            report = purge_local(self.session, keep_archives=keep_archives)
        return {
            "state": self.session.state,
            "deleted": list(report.deleted),
            "kept": list(report.kept),
            "errors": list(report.errors),
        }


class _Handler(BaseHTTPRequestHandler):
    service: ConsentService  # set by serve()/make_server()

    # Quiet by default; the CLI enables logging explicitly.
    def log_message(self, format, *args):  # noqa: A002 (stdlib signature)
        pass

    def _send_json(self, payload: dict, status: int = 200) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, exc: Exception) -> None:
        if isinstance(exc, UnknownVariableError):
            status = 404
        elif isinstance(exc, ConsentStateError):
            status = 409
        elif isinstance(exc, (ValueError, json.JSONDecodeError, KeyError)):
            status = 400
        else:
            status = 500
        self._send_json({"error": str(exc)}, status=status)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        payload = json.loads(raw.decode("utf-8"))
        if not isinstance(payload, dict):
            raise ValueError("request body must be a JSON object")
        return payload

    def do_GET(self):  # noqa: N802 (stdlib naming)
        url = urlparse(self.path)
        try:
            if url.path == "/session":
                self._send_json(self.service.session_view())
            elif url.path == "/variables":
                self._send_json(self.service.variables_view())
            elif url.path.startswith("/preview/"):
                variable = unquote(url.path[len("/preview/"):])
                query = parse_qs(url.query)
                page = int(query.get("page", ["0"])[0])
                self._send_json(self.service.preview_view(variable, page))
            elif url.path == "/package":
                self._send_json(self.service.package_view())
            else:
                self._serve_static(url.path)
        except Exception as exc:
            self._send_error_json(exc)

    def do_POST(self):  # noqa: N802
        url = urlparse(self.path)
        try:
            body = self._read_body()
            if url.path == "/decision":
                self._send_json(self.service.decide(
                    str(body["variable"]), str(body["decision"])))
            elif url.path == "/finalize":
                self._send_json(self.service.do_finalize())
            elif url.path == "/purge":
                keep = bool(body.get("keep_archives", False))
                self._send_json(self.service.do_purge(keep))
            else:
                self._send_json({"error": "not found"}, status=404)
        except Exception as exc:
            self._send_error_json(exc)

    def _serve_static(self, path: str) -> None:
        ui_dir = self.service.ui_dir
        if ui_dir is None:
            self._send_json({"error": "not found"}, status=404)
            return
        name = path.lstrip("/") or "index.html"
        target = (ui_dir / name).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            self._send_json({"error": "not found"}, status=404)
            return
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type",
                         _STATIC_TYPES.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def make_server(service: ConsentService, port: int = 0) -> ThreadingHTTPServer:
    """Bind the service to loopback; port 0 picks a free port."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(service: ConsentService, port: int = 0,
          ready: threading.Event | None = None) -> None:
    """Run until the session is purged or the process is interrupted."""
    server = make_server(service, port)
    if ready is not None:
        ready.set()
    host, bound_port = server.server_address
    print(f"consent service on http://{host}:{bound_port}/ "
          f"(session {service.session.session_id})")
    try:
        server.serve_forever(poll_interval=0.2)
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
