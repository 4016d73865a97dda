"""Persistence for the human-feedback fine-tuning loop.

A session tracks the reference image, generated candidates and human
selections across the three stages.  State is an append-only JSON-lines
event log replayed on load (a truncated trailing line from an interrupted
write is ignored), plus a materialized snapshot for diffability.  Promote
freezes exactly quota selections into the next nested stage dataset.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import InvalidInputError, QuotaError, StateError
from .lora import StageDataset


@dataclass
class CandidateRecord:
    id: str
    path: str
    seed: int
    stage: int
    selected: bool = False
    selected_at: str | None = None


@dataclass
class CurationSession:
    id: str
    reference_image: str
    reference_caption: str
    quota: int = 50
    current_stage: int = 1
    candidates: dict[str, CandidateRecord] = field(default_factory=dict)
    promotions: dict[int, dict] = field(default_factory=dict)  # stage -> dataset manifest

    def selected_ids(self, stage: int) -> list[str]:
        return sorted(
            c.id for c in self.candidates.values() if c.stage == stage and c.selected
        )

    def dataset_for_stage(self, stage: int) -> StageDataset:
        if stage == 1:
            return StageDataset(
                stage=1,
                image_paths=(self.reference_image,),
                captions=(self.reference_caption,),
                quota=self.quota,
            )
        if stage not in self.promotions:
            raise StateError(f"stage {stage} has not been promoted yet")
        return StageDataset.from_manifest(self.promotions[stage])


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class SessionStore:
    """Event-sourced session storage under one root directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, CurationSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._store_lock = threading.Lock()
        for events in sorted(self.root.glob("*/events.jsonl")):
            session = self._replay(events)
            self._sessions[session.id] = session
            self._locks[session.id] = threading.Lock()

    # -- event log ---------------------------------------------------------

    def _session_dir(self, session_id: str) -> Path:
        return self.root / session_id

    def _append(self, session_id: str, event: dict) -> None:
        event = {"ts": _now(), **event}
        path = self._session_dir(session_id) / "events.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
        self._write_snapshot(session_id)

    def _write_snapshot(self, session_id: str) -> None:
        session = self._sessions[session_id]
        snap = {
            "id": session.id,
            "reference_image": session.reference_image,
            "reference_caption": session.reference_caption,
            "quota": session.quota,
            "current_stage": session.current_stage,
            "candidates": {k: asdict(v) for k, v in sorted(session.candidates.items())},
            "promotions": {str(k): v for k, v in session.promotions.items()},
        }
        path = self._session_dir(session_id) / "snapshot.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(snap, indent=2, sort_keys=True))
        tmp.replace(path)

    def _replay(self, events_path: Path) -> CurationSession:
        session: CurationSession | None = None
        for line in events_path.read_text().splitlines():
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                continue  # interrupted write: drop the partial tail
            kind = event.get("event")
            if kind == "session_created":
                session = CurationSession(
                    id=event["id"],
                    reference_image=event["reference_image"],
                    reference_caption=event["reference_caption"],
                    quota=event["quota"],
                )
            elif session is None:
                continue
            elif kind == "candidates_added":
                for rec in event["records"]:
                    session.candidates[rec["id"]] = CandidateRecord(
                        id=rec["id"], path=rec["path"], seed=rec["seed"], stage=rec["stage"]
                    )
            elif kind == "selected":
                for cid in event["ids"]:
                    if cid in session.candidates:
                        session.candidates[cid].selected = True
                        session.candidates[cid].selected_at = event["ts"]
            elif kind == "deselected":
                for cid in event["ids"]:
                    if cid in session.candidates:
                        session.candidates[cid].selected = False
                        session.candidates[cid].selected_at = None
            elif kind == "promoted":
                session.promotions[event["stage"]] = event["manifest"]
                session.current_stage = event["stage"]
        if session is None:
            raise StateError(f"event log {events_path} has no session_created event")
        return session

    # -- public operations ---------------------------------------------------

    def _get(self, session_id: str) -> CurationSession:
        if session_id not in self._sessions:
            raise InvalidInputError(f"unknown session '{session_id}'")
        return self._sessions[session_id]

    def _lock(self, session_id: str) -> threading.Lock:
        with self._store_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def sessions(self) -> list[CurationSession]:
        return [self._sessions[k] for k in sorted(self._sessions)]

    def create_session(
        self,
        reference_image,
        reference_caption: str,
        quota: int = 50,
        session_id: str | None = None,
        actor: str = "cli",
    ) -> CurationSession:
        if quota < 1:
            raise InvalidInputError(f"quota must be >= 1, got {quota}")
        if not Path(reference_image).exists():
            raise InvalidInputError(f"reference image not found: {reference_image}")
        session_id = session_id or uuid.uuid4().hex[:12]
        if session_id in self._sessions:
            raise InvalidInputError(f"session '{session_id}' already exists")
        session = CurationSession(
            id=session_id,
            reference_image=str(reference_image),
            reference_caption=reference_caption,
            quota=quota,
        )
        self._sessions[session_id] = session
        self._locks[session_id] = threading.Lock()
        self._append(
            session_id,
            {
                "event": "session_created",
                "actor": actor,
                "id": session_id,
                "reference_image": str(reference_image),
                "reference_caption": reference_caption,
                "quota": quota,
            },
        )
        return session

    def add_candidates(self, session_id: str, records: list[dict], actor: str = "cli") -> int:
        session = self._get(session_id)
        with self._lock(session_id):
            fresh = []
            for rec in records:
                if rec["id"] in session.candidates:
                    continue
                if rec["stage"] != session.current_stage:
                    raise InvalidInputError(
                        f"candidate {rec['id']} is stage {rec['stage']} but the "
                        f"session is at stage {session.current_stage}"
                    )
                if not Path(rec["path"]).exists():
                    raise InvalidInputError(f"candidate image missing: {rec['path']}")
                session.candidates[rec["id"]] = CandidateRecord(
                    id=rec["id"], path=rec["path"], seed=rec["seed"], stage=rec["stage"]
                )
                fresh.append({k: rec[k] for k in ("id", "path", "seed", "stage")})
            if fresh:
                self._append(
                    session_id,
                    {"event": "candidates_added", "actor": actor, "records": fresh},
                )
            return len(fresh)

    def list_candidates(
        self, session_id: str, stage: int | None = None, page: int = 0, page_size: int = 50
    ) -> dict:
        session = self._get(session_id)
        stage = session.current_stage if stage is None else stage
        items = sorted(
            (c for c in session.candidates.values() if c.stage == stage),
            key=lambda c: c.id,
        )
        total = len(items)
        pages = max(1, -(-total // page_size))
        chunk = items[page * page_size : (page + 1) * page_size]
        return {
            "items": [asdict(c) for c in chunk],
            "page": page,
            "pages": pages,
            "total": total,
            "page_size": page_size,
            "stage": stage,
        }

    def select(self, session_id: str, ids: list[str], actor: str = "ui") -> int:
        session = self._get(session_id)
        with self._lock(session_id):
            stage = session.current_stage
            for cid in ids:
                if cid not in session.candidates:
                    raise InvalidInputError(f"unknown candidate '{cid}'")
                if session.candidates[cid].stage != stage:
                    raise InvalidInputError(
                        f"candidate '{cid}' belongs to stage "
                        f"{session.candidates[cid].stage}, not current stage {stage}"
                    )
                if not Path(session.candidates[cid].path).exists():
                    raise StateError(f"candidate image missing on disk: {cid}")
            current = set(session.selected_ids(stage))
            would_be = current | set(ids)
            if len(would_be) > session.quota:
                raise QuotaError(
                    f"selection would exceed quota {session.quota} "
                    f"(currently {len(current)} selected)",
                    current=len(current),
                    quota=session.quota,
                )
            new = [cid for cid in ids if cid not in current]
            ts = _now()
            for cid in new:
                session.candidates[cid].selected = True
                session.candidates[cid].selected_at = ts
            if new:
                self._append(session_id, {"event": "selected", "actor": actor, "ids": new})
            return len(session.selected_ids(stage))

    def deselect(self, session_id: str, ids: list[str], actor: str = "ui") -> int:
        session = self._get(session_id)
        with self._lock(session_id):
            stage = session.current_stage
            hits = []
            for cid in ids:
                if cid not in session.candidates:
                    raise InvalidInputError(f"unknown candidate '{cid}'")
                if session.candidates[cid].selected:
                    session.candidates[cid].selected = False
                    session.candidates[cid].selected_at = None
                    hits.append(cid)
            if hits:
                self._append(session_id, {"event": "deselected", "actor": actor, "ids": hits})
            return len(session.selected_ids(stage))

    def promote(self, session_id: str, actor: str = "ui") -> StageDataset:
        session = self._get(session_id)
        with self._lock(session_id):
            if session.current_stage >= 3:
                raise StateError("session already reached stage 3; promotions are frozen")
            stage = session.current_stage
            selected = session.selected_ids(stage)
            if len(selected) != session.quota:
                raise StateError(
                    f"promotion requires exactly {session.quota} selections at "
                    f"stage {stage}, have {len(selected)}"
                )
            previous = session.dataset_for_stage(stage)
            new_paths = previous.image_paths + tuple(
                session.candidates[cid].path for cid in selected
            )
            new_captions = previous.captions + tuple(
                session.reference_caption for _ in selected
            )
            dataset = StageDataset(
                stage=stage + 1,
                image_paths=new_paths,
                captions=new_captions,
                quota=session.quota,
            )
            assert dataset.nests(previous)
            session.promotions[stage + 1] = dataset.to_manifest()
            session.current_stage = stage + 1
            self._append(
                session_id,
                {
                    "event": "promoted",
                    "actor": actor,
                    "stage": stage + 1,
                    "manifest": dataset.to_manifest(),
                },
            )
            return dataset

    def status(self, session_id: str) -> dict:
        session = self._get(session_id)
        stage = session.current_stage
        return {
            "id": session.id,
            "current_stage": stage,
            "quota": session.quota,
            "selected_count": len(session.selected_ids(stage)),
            "candidates_total": sum(
                1 for c in session.candidates.values() if c.stage == stage
            ),
            "reference_image_id": f"ref-{session.id}",
            "reference_caption": session.reference_caption,
            "promoted_stages": sorted(session.promotions),
        }

    def image_path(self, image_id: str) -> Path:
        """Resolve a candidate id (or 'ref-<session>') to its PNG path."""
        if image_id.startswith("ref-"):
            session = self._get(image_id[4:])
            return Path(session.reference_image)
        for session in self._sessions.values():
            if image_id in session.candidates:
                return Path(session.candidates[image_id].path)
        raise InvalidInputError(f"unknown image id '{image_id}'")
