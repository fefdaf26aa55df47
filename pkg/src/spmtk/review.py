"""Mask review state: RLE mask payloads and a durable per-mask record store.

The store works directly on a pair dataset directory (manifest.jsonl plus
clean/artefact/mask files).  Manifest entries sharing a clean frame are that
frame's masks, indexed in manifest order.  Each mask carries a JSON sidecar
next to its PGM holding {revision, status, note, modified}; writers bump the
revision and every write lands atomically (temp file, fsync, rename) so a
crash after acknowledgment can never lose an acknowledged change.

Statuses move one way — pending to accepted, rejected, or edited, and
onward to rejected — except that accepted and edited swap freely as a
reviewer alternates between touching up and approving a mask.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidTransitionError,
    MismatchedDimensionsError,
    RleInvalidError,
    SpmError,
)
from .imageio import MaskImage, load_pgm, load_spmf, read_manifest
from .masks import physics_filter, surface_delta_h

STATUSES = ("pending", "accepted", "rejected", "edited")

# from-status -> statuses a write may move to (staying put is always allowed)
_TRANSITIONS = {
    "pending": {"accepted", "rejected", "edited"},
    "accepted": {"edited", "rejected"},
    "edited": {"accepted", "rejected"},
    "rejected": set(),
}


def encode_rle(bits) -> dict:
    """Run-length encode a bool mask over row-major flattened indices."""
    arr = np.asarray(bits, dtype=bool)
    if arr.ndim != 2:
        raise RleInvalidError("mask must be 2-D")
    flat = arr.reshape(-1)
    # run starts: True preceded by False (or array start); ends symmetric
    padded = np.concatenate([[False], flat, [False]])
    delta = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(delta == 1)
    ends = np.flatnonzero(delta == -1)
    runs = [[int(s), int(e - s)] for s, e in zip(starts, ends)]
    h, w = arr.shape
    return {"width": int(w), "height": int(h), "runs": runs}


def decode_rle(payload) -> np.ndarray:
    """Decode an RLE payload to a bool array, validating its invariants."""
    if not isinstance(payload, dict):
        raise RleInvalidError("payload must be an object")
    try:
        w = int(payload["width"])
        h = int(payload["height"])
        runs = payload["runs"]
    except (KeyError, TypeError, ValueError) as exc:
        raise RleInvalidError("payload needs width, height, runs") from exc
    if w < 1 or h < 1:
        raise RleInvalidError("dimensions must be positive")
    if not isinstance(runs, list):
        raise RleInvalidError("runs must be a list")
    flat = np.zeros(h * w, dtype=bool)
    prev_end = None
    for item in runs:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           for v in item)):
            raise RleInvalidError("each run must be an [start, len] int pair")
        start, length = item
        if length < 1 or start < 0 or start + length > h * w:
            raise RleInvalidError("run [%d, %d] out of bounds" % (start, length))
        if prev_end is not None and start <= prev_end:
            raise RleInvalidError(
                "runs must be sorted, non-overlapping, and non-adjacent")
        flat[start:start + length] = True
        prev_end = start + length
    return flat.reshape(h, w)


@dataclass
class MaskRecord:
    """Stored review state of one mask."""

    revision: int = 0
    status: str = "pending"
    note: str = ""
    modified: float = 0.0

    def to_json(self):
        return {"revision": self.revision, "status": self.status,
                "note": self.note, "modified": self.modified}

    @classmethod
    def from_json(cls, d):
        return cls(revision=int(d.get("revision", 0)),
                   status=str(d.get("status", "pending")),
                   note=str(d.get("note", "")),
                   modified=float(d.get("modified", 0.0)))


def _atomic_write_bytes(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    dir_fd = os.open(path.parent, os.O_RDONLY)
    try:
        os.fsync(dir_fd)
    finally:
        os.close(dir_fd)


@dataclass
class FrameInfo:
    id: str
    channel: str
    scan_size_um: float
    mask_count: int
    statuses: list


class ReviewStore:
    """Review records over one dataset directory; writes serialized per frame."""

    def __init__(self, dataset_dir):
        self.root = Path(dataset_dir)
        manifest = self.root / "manifest.jsonl"
        if not manifest.exists():
            raise SpmError("no manifest.jsonl under %s" % self.root)
        entries = read_manifest(manifest)
        self._frames = {}  # frame id -> list of manifest entries, mask order
        self._meta = {}
        for e in entries:
            fid = Path(e.clean_path).stem
            self._frames.setdefault(fid, []).append(e)
            self._meta.setdefault(fid, e)
        self._locks = {fid: threading.Lock() for fid in self._frames}

    # -- listing ----------------------------------------------------------

    def frame_ids(self):
        return list(self._frames)

    def list_frames(self):
        out = []
        for fid, entries in self._frames.items():
            meta = self._meta[fid]
            statuses = [self.get_record(fid, k).status
                        for k in range(len(entries))]
            out.append(FrameInfo(id=fid, channel=meta.channel,
                                 scan_size_um=meta.scan_size_um,
                                 mask_count=len(entries), statuses=statuses))
        return out

    # -- per-mask access --------------------------------------------------

    def _entry(self, frame_id, k):
        try:
            entries = self._frames[frame_id]
        except KeyError:
            raise KeyError("unknown frame %r" % frame_id) from None
        if not 0 <= k < len(entries):
            raise KeyError("frame %r has no mask %d" % (frame_id, k))
        return entries[k]

    def _sidecar(self, entry) -> Path:
        return self.root / (entry.mask_path + ".review.json")

    def get_record(self, frame_id, k) -> MaskRecord:
        side = self._sidecar(self._entry(frame_id, k))
        if not side.exists():
            return MaskRecord()
        with open(side, "r", encoding="utf-8") as fh:
            return MaskRecord.from_json(json.load(fh))

    def get_mask(self, frame_id, k):
        entry = self._entry(frame_id, k)
        record = self.get_record(frame_id, k)
        bits = load_pgm(self.root / entry.mask_path).bits
        return record, encode_rle(bits)

    def load_frame(self, frame_id):
        return load_spmf(self.root / self._meta[frame_id].clean_path)

    # -- writes -----------------------------------------------------------

    def update_mask(self, frame_id, k, revision, status=None, rle=None,
                    note=None):
        """Apply a reviewed change; returns the new record.

        revision must match the stored one (optimistic concurrency) or the
        call fails with the current record attached to the exception.
        """
        entry = self._entry(frame_id, k)
        with self._locks[frame_id]:
            record = self.get_record(frame_id, k)
            if int(revision) != record.revision:
                raise RevisionConflict(record)
            new_bits = None
            if rle is not None:
                new_bits = decode_rle(rle)
                mask = load_pgm(self.root / entry.mask_path)
                if new_bits.shape != (mask.height, mask.width):
                    raise MismatchedDimensionsError(
                        "edited mask is %dx%d, frame mask is %dx%d"
                        % (new_bits.shape[1], new_bits.shape[0],
                           mask.width, mask.height))
                if status is None:
                    status = "edited"
            if status is not None:
                if status not in STATUSES:
                    raise InvalidTransitionError("unknown status %r" % status)
                if (status != record.status
                        and status not in _TRANSITIONS[record.status]):
                    raise InvalidTransitionError(
                        "cannot move %s -> %s" % (record.status, status))
            updated = MaskRecord(
                revision=record.revision + 1,
                status=status if status is not None else record.status,
                note=note if note is not None else record.note,
                modified=time.time())
            if new_bits is not None:
                h, w = new_bits.shape
                _atomic_write_bytes(self.root / entry.mask_path,
                                    _pgm_bytes(MaskImage(w, h, new_bits)))
            _atomic_write_bytes(self._sidecar(entry),
                                json.dumps(updated.to_json()).encode())
            return updated

    # -- physics ----------------------------------------------------------

    def physics_check(self, frame_id, k):
        entry = self._entry(frame_id, k)
        frame = load_spmf(self.root / self._meta[frame_id].clean_path)
        mask = load_pgm(self.root / entry.mask_path)
        delta = surface_delta_h(mask, frame)
        verdict = physics_filter(mask, frame)
        return delta, verdict.value


class RevisionConflict(SpmError):
    """Stale-revision write; .current carries the record that won."""

    def __init__(self, current: MaskRecord):
        super().__init__("revision %d is current" % current.revision)
        self.current = current


def export_reviewed(dataset_dir, out_manifest):
    """Write a manifest of every pair whose mask survived review.

    Entries whose mask was rejected are dropped; accepted and edited masks
    ship with whatever pixels review left in the mask file.  Returns the
    kept entries.
    """
    from .imageio import write_manifest

    store = ReviewStore(dataset_dir)
    kept = []
    for fid in store.frame_ids():
        for k, entry in enumerate(store._frames[fid]):
            if store.get_record(fid, k).status != "rejected":
                kept.append(entry)
    write_manifest(out_manifest, kept)
    return kept


def _pgm_bytes(mask: MaskImage) -> bytes:
    """Serialize a mask exactly as save_pgm writes it."""
    raw = np.where(mask.bits, 255, 0).astype(np.uint8)
    header = ("P5\n%d %d\n255\n" % (mask.width, mask.height)).encode("ascii")
    return header + raw.tobytes()
