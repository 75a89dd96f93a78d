"""Point tracks, binary masks, and trajectory-matrix condensation.

Dense per-frame point tracks come from an external tracker; a first-frame
object mask selects the tracks belonging to one object.  Those tracks are
condensed to at most P key points by k-means++ on their first-frame
positions, then resampled onto an N-frame grid of normalized coordinates
with (-1, -1) marking absent samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

SENTINEL = (-1.0, -1.0)


@dataclass(frozen=True)
class PointTrack:
    """One tracked scene point: per-frame pixel position plus visibility."""

    positions: tuple[tuple[float, float], ...]
    visible: tuple[bool, ...]

    def __post_init__(self):
        if len(self.positions) == 0 or len(self.positions) != len(self.visible):
            raise ValueError("positions and visible must have equal nonzero length")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def start(self) -> tuple[float, float]:
        return self.positions[0]


@dataclass(frozen=True)
class Mask:
    """Binary foreground mask, row-major RLE alternating bg/fg starting with bg."""

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask dimensions must be positive")
        if any(r < 0 for r in self.runs):
            raise ValueError("negative run length")
        if sum(self.runs) != self.width * self.height:
            raise ValueError(
                f"runs cover {sum(self.runs)} cells, expected {self.width * self.height}"
            )

    def to_array(self) -> np.ndarray:
        flat = np.zeros(self.width * self.height, dtype=bool)
        pos = 0
        fg = False
        for run in self.runs:
            if fg:
                flat[pos : pos + run] = True
            pos += run
            fg = not fg
        return flat.reshape(self.height, self.width)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Mask":
        arr = np.asarray(arr, dtype=bool)
        height, width = arr.shape
        flat = arr.reshape(-1)
        runs: list[int] = []
        fg = False
        pos = 0
        while pos < flat.size:
            end = pos
            while end < flat.size and flat[end] == fg:
                end += 1
            runs.append(end - pos)
            pos = end
            fg = not fg
        if not runs:
            runs = [width * height]
        return cls(width=width, height=height, runs=tuple(runs))

    def area(self) -> int:
        """Foreground pixel count."""
        return sum(self.runs[1::2])

    def contains(self, x: float, y: float) -> bool:
        """Pixel-center containment: the point lies in a foreground pixel cell."""
        px, py = math.floor(x), math.floor(y)
        if not (0 <= px < self.width and 0 <= py < self.height):
            return False
        return bool(self.to_array()[py, px])


@dataclass(frozen=True)
class TrajectoryMatrix:
    """P key points x N frames of coordinates in [0,1], or the (-1,-1) sentinel."""

    points: int
    frames: int
    coords: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self):
        if len(self.coords) != self.points:
            raise ValueError("coords row count != points")
        for row in self.coords:
            if len(row) != self.frames:
                raise ValueError("coords column count != frames")
            for cell in row:
                if not cell_is_valid(cell):
                    raise ValueError(f"invalid cell {cell}: must be in [0,1]^2 or (-1,-1)")

    def to_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float).reshape(self.points, self.frames, 2)

    def to_json(self) -> dict:
        return {
            "points": self.points,
            "frames": self.frames,
            "coords": [[list(cell) for cell in row] for row in self.coords],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrajectoryMatrix":
        return cls(
            points=obj["points"],
            frames=obj["frames"],
            coords=tuple(
                tuple((float(c[0]), float(c[1])) for c in row) for row in obj["coords"]
            ),
        )


def cell_is_valid(cell: Sequence[float]) -> bool:
    x, y = cell
    if (x, y) == SENTINEL:
        return True
    return 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0


def filter_tracks_by_mask(tracks: Sequence[PointTrack], mask: Mask) -> list[PointTrack]:
    """Keep exactly the tracks whose frame-0 position is visible and inside the mask."""
    if not tracks:
        return []
    n_frames = len(tracks[0])
    for track in tracks:
        if len(track) != n_frames:
            raise ValueError("tracks do not share one frame count")
    fg = mask.to_array()
    kept = []
    for track in tracks:
        if not track.visible[0]:
            continue
        x, y = track.start
        px, py = math.floor(x), math.floor(y)
        if not (0 <= px < mask.width and 0 <= py < mask.height):
            raise ValueError(
                f"visible track position ({x}, {y}) outside {mask.width}x{mask.height} mask"
            )
        if fg[py, px]:
            kept.append(track)
    return kept


def kmeans_pp(
    points: Sequence[tuple[float, float]],
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 100,
    tol: float = 1e-6,
    debug: bool = False,
) -> tuple[np.ndarray, np.ndarray, float]:
    """k-means with D^2 seeding, Lloyd iterations, and best-of-restarts by SSE.

    Returns (centers (k,2), assignments (n,), sse).  Deterministic for a given
    seed.  Raises ValueError when k exceeds the number of points.  With
    ``debug`` the per-iteration SSE monotonicity is asserted.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty list of (x, y) pairs")
    n = pts.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")

    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    for _ in range(max(1, restarts)):
        centers = _seed_centers(pts, k, rng)
        centers, assign, sse = _lloyd(pts, centers, max_iter, tol, debug)
        # Lloyd fixed points are not always optima even on tiny inputs;
        # single-point reassignment passes are a strict descent beyond them
        for _round in range(50):
            assign, moved = _reassign_pass(pts, assign, k)
            if not moved:
                break
            centers = _means(pts, assign, centers)
            centers, assign, new_sse = _lloyd(pts, centers, max_iter, tol, debug)
            if new_sse >= sse:
                break
            sse = new_sse
        centers = _means(pts, assign, centers)
        sse = _sse(pts, centers, assign)
        if best is None or sse < best[2]:
            best = (centers, assign, sse)
    assert best is not None
    return best


def _seed_centers(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    centers = np.empty((k, 2), dtype=float)
    centers[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            # all remaining points coincide with chosen centers
            idx = rng.integers(n)
        centers[i] = pts[idx]
        d2 = np.minimum(d2, np.sum((pts - centers[i]) ** 2, axis=1))
    return centers


def _lloyd(
    pts: np.ndarray, centers: np.ndarray, max_iter: int, tol: float, debug: bool
) -> tuple[np.ndarray, np.ndarray, float]:
    k = centers.shape[0]
    prev_sse = np.inf
    assign = _assign(pts, centers)
    for _ in range(max_iter):
        new_centers = centers.copy()
        for j in range(k):
            members = pts[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        move = np.sqrt(np.sum((new_centers - centers) ** 2, axis=1)).max()
        centers = new_centers
        assign = _assign(pts, centers)
        if debug:
            sse = _sse(pts, centers, assign)
            assert sse <= prev_sse + 1e-9 * max(1.0, prev_sse if np.isfinite(prev_sse) else 1.0)
            prev_sse = sse
        if move < tol:
            break
    return centers, assign, _sse(pts, centers, assign)


def _assign(pts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _means(pts: np.ndarray, assign: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    centers = fallback.copy()
    for j in range(fallback.shape[0]):
        members = pts[assign == j]
        if len(members):
            centers[j] = members.mean(axis=0)
    return centers


def _reassign_pass(pts: np.ndarray, assign: np.ndarray, k: int) -> tuple[np.ndarray, bool]:
    """One sweep of single-point moves that strictly reduce the SSE.

    Moving x from cluster A (size na, mean ma) to B changes the SSE by
    nb/(nb+1)*|x-mb|^2 - na/(na-1)*|x-ma|^2; empty targets cost nothing.
    """
    assign = assign.copy()
    counts = np.bincount(assign, minlength=k).astype(float)
    sums = np.zeros((k, pts.shape[1]))
    np.add.at(sums, assign, pts)
    moved = False
    for i in range(len(pts)):
        a = assign[i]
        if counts[a] <= 1:
            continue
        mean_a = sums[a] / counts[a]
        gain = counts[a] / (counts[a] - 1) * float(np.sum((pts[i] - mean_a) ** 2))
        best_delta, best_b = -1e-12, -1
        for b in range(k):
            if b == a:
                continue
            if counts[b] == 0:
                cost = 0.0
            else:
                mean_b = sums[b] / counts[b]
                cost = counts[b] / (counts[b] + 1) * float(np.sum((pts[i] - mean_b) ** 2))
            delta = cost - gain
            if delta < best_delta:
                best_delta, best_b = delta, b
        if best_b >= 0:
            sums[a] -= pts[i]
            counts[a] -= 1
            sums[best_b] += pts[i]
            counts[best_b] += 1
            assign[i] = best_b
            moved = True
    return assign, moved


def _sse(pts: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> float:
    return float(np.sum((pts - centers[assign]) ** 2))


def condense(tracks: Sequence[PointTrack], P: int, seed: int = 0) -> list[PointTrack]:
    """Condense tracks to at most P key-point tracks.

    First-frame positions are clustered into min(P, distinct-position-count)
    clusters; each cluster is represented by its medoid track (the member
    whose frame-0 point is nearest the cluster center, ties broken by lowest
    input index).  The result is ordered by frame-0 position (x, then y) so
    output does not depend on input order beyond the tie-break.
    """
    if not tracks:
        raise ValueError("condense requires at least one track")
    if P < 1:
        raise ValueError("P must be >= 1")
    starts = np.asarray([t.start for t in tracks], dtype=float)
    n_distinct = len({tuple(p) for p in starts.tolist()})
    k = min(P, n_distinct)
    centers, assign, _ = kmeans_pp(starts, k, seed=seed)
    medoids: list[PointTrack] = []
    for j in range(k):
        member_idx = np.flatnonzero(assign == j)
        if member_idx.size == 0:
            continue
        d2 = np.sum((starts[member_idx] - centers[j]) ** 2, axis=1)
        best = member_idx[int(np.argmin(d2))]  # argmin ties -> lowest index
        medoids.append(tracks[best])
    medoids.sort(key=lambda t: t.start)
    return medoids


def to_matrix(
    keypoints: Sequence[PointTrack],
    P: int,
    N: int,
    width: int,
    height: int,
    src_frames: int,
) -> TrajectoryMatrix:
    """Resample key-point tracks onto a P x N grid of normalized coordinates.

    Sample k reads source frame floor(k * src_frames / N).  Visible samples
    become (x/width, y/height); invisible samples and rows past the keypoint
    count are the (-1, -1) sentinel.
    """
    if len(keypoints) > P:
        raise ValueError("more keypoints than matrix rows")
    if src_frames < 1 or N < 1:
        raise ValueError("src_frames and N must be >= 1")
    rows: list[tuple[tuple[float, float], ...]] = []
    sample_idx = [min(src_frames - 1, (k * src_frames) // N) for k in range(N)]
    for j in range(P):
        if j >= len(keypoints):
            rows.append(tuple(SENTINEL for _ in range(N)))
            continue
        track = keypoints[j]
        row = []
        for src in sample_idx:
            if src < len(track) and track.visible[src]:
                x, y = track.positions[src]
                row.append((x / width, y / height))
            else:
                row.append(SENTINEL)
        rows.append(tuple(row))
    return TrajectoryMatrix(points=P, frames=N, coords=tuple(rows))


# --- file formats ----------------------------------------------------------


def track_from_json(obj: dict) -> PointTrack:
    return PointTrack(
        positions=tuple((float(x), float(y)) for x, y in obj["xy"]),
        visible=tuple(bool(v) for v in obj["vis"]),
    )


def track_to_json(track: PointTrack) -> dict:
    return {"xy": [list(p) for p in track.positions], "vis": list(track.visible)}


@dataclass
class ClipTracks:
    """One tracked clip: dimensions, frame count, and its point tracks."""

    clip_id: str
    width: int
    height: int
    frames: int
    tracks: list[PointTrack] = field(default_factory=list)

    @classmethod
    def from_json(cls, obj: dict) -> "ClipTracks":
        return cls(
            clip_id=str(obj["clip_id"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            frames=int(obj["frames"]),
            tracks=[track_from_json(t) for t in obj["tracks"]],
        )

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "width": self.width,
            "height": self.height,
            "frames": self.frames,
            "tracks": [track_to_json(t) for t in self.tracks],
        }


def iter_clip_tracks(path: str | Path) -> Iterator[ClipTracks]:
    """Read a JSONL track file, one clip per line."""
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield ClipTracks.from_json(json.loads(line))


def load_mask(path: str | Path) -> Mask:
    with open(path, encoding="utf-8") as handle:
        obj = json.load(handle)
    return Mask(width=int(obj["width"]), height=int(obj["height"]), runs=tuple(obj["rle"]))


def save_mask(mask: Mask, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"width": mask.width, "height": mask.height, "rle": list(mask.runs)}, handle)
