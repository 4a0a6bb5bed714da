"""HTTP study server for pairwise-comparison sessions.

Serves the 2AFC protocol to a browser client: schedules neighboring-severity
pairs over a condition tree, streams lossless view images, enforces the 80%
view-coverage rule server-side, and appends every accepted response to a
per-session JSON-lines log.  Export folds the logs into per-scene comparison
matrices, resolving displayed sides back to condition identities.

The session API deliberately never exposes which condition sits on which
side; only the export does.  Sessions are presented as a monocular view
sweep, a declared fidelity reduction from a stereoscopic head-tracked rig,
recorded in the session metadata.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from .lightfield import VIEW_NAME
from .scaling import ComparisonMatrix, schedule_pairs
from .tree import ConditionEntry, read_index, view_counts

__all__ = [
    "COVERAGE_THRESHOLD",
    "FIDELITY_NOTE",
    "ProtocolError",
    "PairAssignment",
    "Session",
    "StudyDataset",
    "StudyServer",
    "make_http_server",
]

COVERAGE_THRESHOLD = 0.8
_COVERAGE_EPS = 1e-9

FIDELITY_NOTE = (
    "monocular view sweep on a conventional display; "
    "stereoscopic head-tracked presentation is out of scope"
)


class ProtocolError(ValueError):
    """Protocol violation; carries the HTTP status the handler should send."""

    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class PairAssignment:
    """One scheduled comparison as shown to the observer.

    ``left``/``right`` hold the condition ids actually displayed on each
    side; ``side_swap`` records whether the canonical order was flipped.
    """

    pair_id: str
    scene: str
    left: str
    right: str
    side_swap: bool

    def __post_init__(self) -> None:
        if self.left == self.right:
            raise ProtocolError("pair must show two different conditions")

    def public(self, index: int, view_count: int) -> dict:
        # no condition identities cross this boundary
        return {
            "pair_id": self.pair_id,
            "scene": self.scene,
            "index": index,
            "view_count": view_count,
        }


@dataclass
class Session:
    session_id: str
    observer_id: str
    scenes: tuple[str, ...]
    seed: int
    pairs: tuple[PairAssignment, ...]
    created_at: str
    cursor: int = 0

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.pairs)

    def current(self) -> PairAssignment:
        if self.done:
            raise ProtocolError("session already complete", status=409)
        return self.pairs[self.cursor]


class StudyDataset:
    """Read-only view over a condition tree for study serving."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.entries, self.meta = read_index(self.root)
        self._by_scene: dict[str, dict[str, ConditionEntry]] = {}
        for entry in self.entries:
            self._by_scene.setdefault(entry.scene, {})[entry.condition_id] = entry
        for scene, conds in self._by_scene.items():
            if "ref" not in conds:
                raise ProtocolError(f"scene {scene!r} has no reference condition")
        self._view_counts = view_counts(self.root, self.entries)

    def scenes(self) -> list[str]:
        return sorted(self._by_scene)

    def view_count(self, scene: str) -> int:
        return self._view_counts[scene]

    def conditions(self, scene: str) -> dict[str, ConditionEntry]:
        if scene not in self._by_scene:
            raise ProtocolError(f"unknown scene {scene!r}", status=404)
        return self._by_scene[scene]

    def schedule_conditions(self, scene: str) -> list[tuple[str, int]]:
        return sorted(
            (e.kind, e.level)
            for e in self.conditions(scene).values()
            if e.level >= 1
        )

    def view_bytes(self, scene: str, condition_id: str, view_index: int) -> bytes:
        conds = self.conditions(scene)
        if condition_id not in conds:
            raise ProtocolError(
                f"scene {scene!r} has no condition {condition_id!r}", status=404
            )
        v = self.view_count(scene)
        if not 0 <= view_index < v:
            raise ProtocolError(
                f"view index {view_index} outside 0..{v - 1}", status=404
            )
        path = conds[condition_id].absolute(self.root) / (VIEW_NAME % view_index)
        if not path.exists():
            raise ProtocolError(f"missing view file {path.name}", status=404)
        return path.read_bytes()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class StudyServer:
    """Session bookkeeping, protocol enforcement, and log persistence."""

    def __init__(
        self,
        dataset: StudyDataset,
        log_dir: str | Path,
        seed: int = 0,
        static_dir: str | Path | None = None,
    ):
        self.dataset = dataset
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.static_dir = Path(static_dir) if static_dir else None
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._pair_owner: dict[str, tuple[Session, PairAssignment]] = {}
        # continue numbering after any logs left by a previous run
        existing = len(list(self.log_dir.glob("session-*.jsonl")))
        self._counter = existing

    # ------------------------------------------------------------- sessions

    def create_session(
        self,
        observer_id: str,
        scene_subset: Sequence[str] | None = None,
        seed: int | None = None,
    ) -> Session:
        if not observer_id or not re.fullmatch(r"[\w.-]+", observer_id):
            raise ProtocolError("observer_id must be a non-empty token")
        if scene_subset is None:
            scenes = tuple(self.dataset.scenes())
        else:
            scenes = tuple(scene_subset)
            if not scenes:
                raise ProtocolError("scene subset is empty")
        for scene in scenes:
            if scene not in self.dataset.scenes():
                raise ProtocolError(f"unknown scene {scene!r}", status=404)
        with self._lock:
            number = self._counter
            self._counter += 1
        session_id = f"session-{number:04d}"
        session_seed = self.seed + number if seed is None else int(seed)
        rng = np.random.default_rng(session_seed ^ 0x5EED)
        pairs: list[PairAssignment] = []
        for scene in scenes:
            conditions = self.dataset.schedule_conditions(scene)
            if not conditions:
                raise ProtocolError(f"scene {scene!r} has no distorted conditions")
            for a, b in schedule_pairs(conditions, seed=session_seed):
                cid_a = "ref" if a[1] == 0 else f"{a[0]}_L{a[1]}"
                cid_b = "ref" if b[1] == 0 else f"{b[0]}_L{b[1]}"
                swap = bool(rng.random() < 0.5)
                left, right = (cid_b, cid_a) if swap else (cid_a, cid_b)
                pairs.append(
                    PairAssignment(
                        f"{session_id}-p{len(pairs):03d}", scene, left, right, swap
                    )
                )
        session = Session(
            session_id, observer_id, scenes, session_seed, tuple(pairs), _utc_now()
        )
        with self._lock:
            self._sessions[session_id] = session
            for pair in pairs:
                self._pair_owner[pair.pair_id] = (session, pair)
        self._append_log(
            session,
            {
                "type": "session",
                "session_id": session_id,
                "observer_id": observer_id,
                "scenes": list(scenes),
                "seed": session_seed,
                "created_at": session.created_at,
                "fidelity_note": FIDELITY_NOTE,
                "n_pairs": len(pairs),
            },
        )
        return session

    def session_public(self, session: Session) -> dict:
        return {
            "session_id": session.session_id,
            "observer_id": session.observer_id,
            "cursor": session.cursor,
            "total": len(session.pairs),
            "coverage_threshold": COVERAGE_THRESHOLD,
            "pairs": [
                pair.public(i, self.dataset.view_count(pair.scene))
                for i, pair in enumerate(session.pairs)
            ],
        }

    def _append_log(self, session: Session, record: dict) -> None:
        path = self.log_dir / f"{session.session_id}.jsonl"
        with open(path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    # ---------------------------------------------------------------- views

    def get_view(self, pair_id: str, side: str, view_index: int) -> bytes:
        if side not in ("left", "right"):
            raise ProtocolError(f"side must be left or right, got {side!r}", status=404)
        with self._lock:
            owner = self._pair_owner.get(pair_id)
        if owner is None:
            raise ProtocolError(f"unknown pair {pair_id!r}", status=404)
        _, pair = owner
        condition = pair.left if side == "left" else pair.right
        return self.dataset.view_bytes(pair.scene, condition, view_index)

    # ------------------------------------------------------------ responses

    def submit_response(self, payload: dict) -> dict:
        for key in ("session_id", "pair_id", "winner",
                    "views_seen_left", "views_seen_right"):
            if key not in payload:
                raise ProtocolError(f"response is missing {key!r}")
        with self._lock:
            session = self._sessions.get(payload["session_id"])
        if session is None:
            raise ProtocolError(f"unknown session {payload['session_id']!r}", status=404)
        winner = payload["winner"]
        if winner not in ("left", "right"):
            raise ProtocolError(f"winner must be left or right, got {winner!r}")
        try:
            seen_left = float(payload["views_seen_left"])
            seen_right = float(payload["views_seen_right"])
        except (TypeError, ValueError):
            raise ProtocolError("view coverage must be numeric") from None
        for value in (seen_left, seen_right):
            if not 0.0 <= value <= 1.0:
                raise ProtocolError(f"coverage {value} outside [0, 1]")
        with self._lock:
            if session.done or session.current().pair_id != payload["pair_id"]:
                raise ProtocolError(
                    f"pair {payload['pair_id']!r} is not the current pair", status=409
                )
            threshold = COVERAGE_THRESHOLD - _COVERAGE_EPS
            if seen_left < threshold or seen_right < threshold:
                raise ProtocolError("insufficient view coverage", status=422)
            pair = session.current()
            record = {
                "type": "response",
                "session_id": session.session_id,
                "observer_id": session.observer_id,
                "pair_id": pair.pair_id,
                "scene": pair.scene,
                "left": pair.left,
                "right": pair.right,
                "side_swap": pair.side_swap,
                "winner": winner,
                "views_seen_left": seen_left,
                "views_seen_right": seen_right,
                "response_time_ms": payload.get("response_time_ms"),
                "timestamp": _utc_now(),
            }
            self._append_log(session, record)
            session.cursor += 1
            done = session.done
            next_pair = (
                None
                if done
                else session.current().public(
                    session.cursor, self.dataset.view_count(session.current().scene)
                )
            )
        return {"accepted": True, "done": done, "next": next_pair}

    # --------------------------------------------------------------- export

    def export_matrices(self) -> tuple[dict[str, ComparisonMatrix], int]:
        return export_comparisons(sorted(self.log_dir.glob("*.jsonl")))

    def export_csv(self) -> tuple[str, int]:
        rows, skipped = _export_rows(sorted(self.log_dir.glob("*.jsonl")))
        lines = ["observer_id,scene,cond_i,cond_j,winner"]
        lines += [",".join(row) for row in rows]
        return "\n".join(lines) + "\n", skipped


def _export_rows(
    log_paths: Sequence[Path],
) -> tuple[list[tuple[str, str, str, str, str]], int]:
    """Un-swapped (observer, scene, cond_i, cond_j, winner_cond) rows."""
    rows = []
    skipped = 0
    for path in log_paths:
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                skipped += 1
                continue
            if record.get("type") != "response":
                continue
            try:
                left, right = record["left"], record["right"]
                winner_cond = left if record["winner"] == "left" else right
                # undo the display swap so column order is canonical
                cond_i, cond_j = (right, left) if record["side_swap"] else (left, right)
                rows.append(
                    (record["observer_id"], record["scene"], cond_i, cond_j, winner_cond)
                )
            except (KeyError, TypeError):
                skipped += 1
    return rows, skipped


def export_comparisons(
    log_paths: Sequence[Path],
) -> tuple[dict[str, ComparisonMatrix], int]:
    """Fold response logs into one comparison matrix per scene."""
    rows, skipped = _export_rows(log_paths)
    by_scene: dict[str, list[tuple[str, str, str, str]]] = {}
    for observer, scene, cond_i, cond_j, winner in rows:
        by_scene.setdefault(scene, []).append((observer, cond_i, cond_j, winner))
    matrices = {}
    for scene, scene_rows in sorted(by_scene.items()):
        names = {c for _, ci, cj, _ in scene_rows for c in (ci, cj)}
        ids = ["ref"] + sorted(names - {"ref"}) if "ref" in names else sorted(names)
        which = {cid: k for k, cid in enumerate(ids)}
        records = [
            (obs, which[ci], which[cj], which[win])
            for obs, ci, cj, win in scene_rows
        ]
        matrices[scene] = ComparisonMatrix.from_records(ids, records)
    return matrices, skipped


# ------------------------------------------------------------------ HTTP glue

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".json": "application/json",
}


class _Handler(BaseHTTPRequestHandler):
    server_version = "lfqa-study/1.0"
    study: StudyServer  # set by make_http_server

    def log_message(self, fmt, *args):  # tests and CLIs stay quiet
        pass

    def _send(self, status: int, content_type: str, body: bytes,
              cacheable: bool = False) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        if cacheable:
            self.send_header("Cache-Control", "public, max-age=31536000, immutable")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, payload: dict, status: int = 200) -> None:
        self._send(status, "application/json", json.dumps(payload).encode())

    def _send_error_json(self, exc: ProtocolError) -> None:
        self._send_json({"error": str(exc)}, status=exc.status)

    def do_GET(self):  # noqa: N802  (http.server naming)
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if url.path == "/session":
                query = parse_qs(url.query)
                observer = query.get("observer_id", ["anonymous"])[0]
                scenes = None
                if "scenes" in query:
                    scenes = [s for s in query["scenes"][0].split(",") if s]
                seed = int(query["seed"][0]) if "seed" in query else None
                session = self.study.create_session(observer, scenes, seed)
                self._send_json(self.study.session_public(session))
            elif len(parts) == 4 and parts[0] == "pair":
                _, pair_id, side, index = parts
                try:
                    view_index = int(index)
                except ValueError:
                    raise ProtocolError(f"bad view index {index!r}", status=404) from None
                body = self.study.get_view(pair_id, side, view_index)
                self._send(200, "image/png", body, cacheable=True)
            elif url.path == "/export":
                text, skipped = self.study.export_csv()
                self.send_response(200)
                self.send_header("Content-Type", "text/csv; charset=utf-8")
                self.send_header("X-Skipped-Lines", str(skipped))
                body = text.encode()
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            else:
                self._serve_static(url.path)
        except ProtocolError as exc:
            self._send_error_json(exc)

    def _serve_static(self, path: str) -> None:
        static = self.study.static_dir
        if static is None:
            raise ProtocolError(f"no route for {path!r}", status=404)
        name = "index.html" if path in ("", "/") else path.lstrip("/")
        target = (static / name).resolve()
        if not str(target).startswith(str(static.resolve())) or not target.is_file():
            raise ProtocolError(f"no route for {path!r}", status=404)
        ctype = _STATIC_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, ctype, target.read_bytes())

    def do_POST(self):  # noqa: N802
        if urlparse(self.path).path != "/response":
            self._send_json({"error": f"no route for {self.path!r}"}, status=404)
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            try:
                payload = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                raise ProtocolError("response body is not valid JSON") from None
            if not isinstance(payload, dict):
                raise ProtocolError("response body must be a JSON object")
            self._send_json(self.study.submit_response(payload))
        except ProtocolError as exc:
            self._send_error_json(exc)


def make_http_server(study: StudyServer, host: str = "127.0.0.1", port: int = 8321):
    """Bind a threading HTTP server; caller runs serve_forever/shutdown."""
    handler = type("BoundHandler", (_Handler,), {"study": study})
    return ThreadingHTTPServer((host, port), handler)
