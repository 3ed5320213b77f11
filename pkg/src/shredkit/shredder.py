"""Synthetic shredding: cut an image into fragments and bundle them on disk.

Cuts are guided polylines that span the image, alternating near-horizontal /
near-vertical, with per-cut direction jitter and perpendicular vertex noise.
Cut-line pixels (1 px wide) belong to no fragment; everything else belongs to
exactly one. A bundle directory holds one lossless PNG per fragment plus a
manifest with groundtruth poses, and round-trips losslessly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np

from .geometry import Fragment, RigidTransform2D

MIN_FRAGMENT_AREA = 400
CUT_VERTEX_SPACING = 40.0
MAX_CUT_RETRIES = 50
MANIFEST_FORMAT = 1


class ShredParameterError(ValueError):
    pass


class BundleFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ShredParams:
    num_cuts: int = 4
    orientation_jitter: float = 0.12  # radians
    perturbation_amplitude: float = 6.0  # px
    t_junction_prob: float = 0.0  # chance a later cut stops at an earlier one

    def __post_init__(self):
        if self.num_cuts < 0:
            raise ShredParameterError("num_cuts must be >= 0")
        if self.orientation_jitter < 0 or self.perturbation_amplitude < 0:
            raise ShredParameterError("jitter and perturbation must be >= 0")
        if not 0.0 <= self.t_junction_prob <= 1.0:
            raise ShredParameterError("t_junction_prob must be in [0, 1]")


@dataclass
class PuzzleBundle:
    fragments: list
    poses: dict  # fragment id -> groundtruth RigidTransform2D (local -> source)
    source_size: tuple  # (w, h)
    seed: int | None = None
    params: ShredParams | None = None

    def fragment(self, frag_id: int) -> Fragment:
        for f in self.fragments:
            if f.id == frag_id:
                return f
        raise KeyError(frag_id)

    def __len__(self) -> int:
        return len(self.fragments)

    def gt_relative(self, i: int, j: int) -> RigidTransform2D:
        """Groundtruth transform stitching fragment i into fragment j's frame."""
        return self.poses[j].invert().compose(self.poses[i])

    def diagonal(self) -> float:
        w, h = self.source_size
        return math.hypot(w, h)

    def adjacency(self, min_seam_px: int = 30, dist_px: float = 3.0) -> set:
        """Unordered id pairs sharing a seam long enough to align against.

        A pair counts as adjacent when at least min_seam_px boundary pixels
        of one fragment lie within dist_px of the other's boundary under the
        groundtruth poses. Brief contacts near junction points carry no
        usable alignment signal and are excluded by the floor.
        """
        from scipy.spatial import cKDTree

        pairs = set()
        ids = sorted(f.id for f in self.fragments)
        pts = {fid: self.poses[fid].apply(self.fragment(fid).contour.points)
               for fid in ids}
        trees = {fid: cKDTree(p) for fid, p in pts.items()}
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                i, j = ids[a], ids[b]
                d, _ = trees[j].query(pts[i], distance_upper_bound=dist_px)
                if int(np.isfinite(d).sum()) >= min_seam_px:
                    pairs.add((i, j))
        return pairs


def make_test_image(seed: int, size: tuple = (360, 360),
                    stripes: bool = True) -> np.ndarray:
    """Procedural RGBA test picture: smooth gradients, shapes, optional stripes.

    Mixes photo-like smooth regions (which create matching ambiguity along
    straight cuts) with enough structure that correct seams are findable.
    """
    rng = np.random.default_rng(seed)
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = xx / max(w - 1, 1), yy / max(h - 1, 1)

    corners = rng.uniform(40, 215, size=(4, 3))
    img = ((1 - u)[..., None] * (1 - v)[..., None] * corners[0]
           + u[..., None] * (1 - v)[..., None] * corners[1]
           + (1 - u)[..., None] * v[..., None] * corners[2]
           + u[..., None] * v[..., None] * corners[3])

    for _ in range(3):
        freq = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * math.pi, size=2)
        amp = rng.uniform(6, 22)
        wave = np.sin(2 * math.pi * freq[0] * u + phase[0]) * np.cos(
            2 * math.pi * freq[1] * v + phase[1])
        img[..., rng.integers(0, 3)] += amp * wave

    canvas = np.clip(img, 0, 255).astype(np.uint8)
    canvas = np.ascontiguousarray(canvas)
    n_shapes = int(rng.integers(6, 12))
    for _ in range(n_shapes):
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        kind = rng.integers(0, 3)
        cx, cy = int(rng.integers(0, w)), int(rng.integers(0, h))
        if kind == 0:
            cv2.circle(canvas, (cx, cy), int(rng.integers(8, w // 5)), color, -1)
        elif kind == 1:
            x2, y2 = int(rng.integers(0, w)), int(rng.integers(0, h))
            cv2.rectangle(canvas, (cx, cy), (x2, y2), color, -1)
        else:
            x2, y2 = int(rng.integers(0, w)), int(rng.integers(0, h))
            cv2.line(canvas, (cx, cy), (x2, y2), color, int(rng.integers(2, 7)))

    if stripes and rng.random() < 0.5:
        period = int(rng.integers(14, 30))
        axis = rng.integers(0, 2)
        band = (yy if axis == 0 else xx).astype(int) // period % 2 == 0
        tint = rng.uniform(-30, 30, size=3)
        region = np.zeros((h, w), dtype=bool)
        rx, ry = int(rng.integers(0, w // 2)), int(rng.integers(0, h // 2))
        region[ry:ry + h // 2, rx:rx + w // 2] = True
        sel = band & region
        canvas[sel] = np.clip(canvas[sel].astype(float) + tint, 0, 255).astype(np.uint8)

    # Mid-frequency color field over everything, including the flat shapes.
    # Wavelengths of a few dozen pixels keep neighbouring pixels similar (true
    # seams still match) while points more than ~15px apart decorrelate, so a
    # false contact between distant picture regions fails color checks instead
    # of scoring freely inside some large uniform area.
    field = np.zeros((h, w, 3))
    for _ in range(5):
        ang = rng.uniform(0, math.pi)
        lam = rng.uniform(28, 80)
        phase = rng.uniform(0, 2 * math.pi)
        proj = (xx * math.cos(ang) + yy * math.sin(ang)) / lam
        amp = rng.uniform(6, 16, size=3)
        field += amp * np.sin(2 * math.pi * proj + phase)[..., None]
    canvas = np.clip(canvas.astype(float) + field, 0, 255).astype(np.uint8)

    noise = rng.integers(-3, 4, size=(h, w, 3))
    canvas = np.clip(canvas.astype(int) + noise, 0, 255).astype(np.uint8)
    out = np.dstack([canvas, np.full((h, w), 255, dtype=np.uint8)])
    return out


def make_ambiguous_image(seed: int, size: tuple = (360, 360),
                         n_anchors: int = 4,
                         tint_lo: float = 22.0,
                         tint_hi: float = 40.0) -> np.ndarray:
    """Procedural RGBA picture dominated by periodic stripes.

    Repetitive texture makes straight-cut seams nearly interchangeable: a
    fragment slid by one stripe period still matches well, so pair matching
    yields several plausible alignments per pair. A few distinctive anchor
    shapes keep the true tiling identifiable; with n_anchors=0 the picture
    degenerates into a near-perfect periodic pattern whose misassemblies are
    globally self-consistent. Useful for stressing global composition with
    wrong-but-closed loops.
    """
    rng = np.random.default_rng(seed)
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = xx / max(w - 1, 1), yy / max(h - 1, 1)

    corners = rng.uniform(70, 185, size=(4, 3))
    img = ((1 - u)[..., None] * (1 - v)[..., None] * corners[0]
           + u[..., None] * (1 - v)[..., None] * corners[1]
           + (1 - u)[..., None] * v[..., None] * corners[2]
           + u[..., None] * v[..., None] * corners[3])

    period = int(rng.integers(24, 33))
    axis = int(rng.integers(0, 2))
    coord = yy if axis == 0 else xx
    band = (coord.astype(int) // period) % 2 == 0
    for _ in range(2):
        pw = int(rng.uniform(0.4, 0.7) * w)
        ph = int(rng.uniform(0.4, 0.7) * h)
        px0 = int(rng.integers(0, max(w - pw, 1)))
        py0 = int(rng.integers(0, max(h - ph, 1)))
        patch = np.zeros((h, w), dtype=bool)
        patch[py0:py0 + ph, px0:px0 + pw] = True
        tint = rng.uniform(tint_lo, tint_hi, size=3) * rng.choice(
            [-1.0, 1.0], size=3)
        img[band & patch] += tint

    cross = (xx if axis == 0 else yy)
    img[..., int(rng.integers(0, 3))] += 12.0 * np.sin(
        2 * math.pi * cross / rng.uniform(50, 90))

    canvas = np.clip(img, 0, 255).astype(np.uint8)
    canvas = np.ascontiguousarray(canvas)
    for _ in range(n_anchors):
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        cx, cy = int(rng.integers(0, w)), int(rng.integers(0, h))
        if rng.integers(0, 2) == 0:
            cv2.circle(canvas, (cx, cy), int(rng.integers(15, 34)), color, -1)
        else:
            dx, dy = int(rng.integers(24, 60)), int(rng.integers(24, 60))
            cv2.rectangle(canvas, (cx, cy), (cx + dx, cy + dy), color, -1)

    noise = rng.integers(-2, 3, size=(h, w, 3))
    canvas = np.clip(canvas.astype(int) + noise, 0, 255).astype(np.uint8)
    return np.dstack([canvas, np.full((h, w), 255, dtype=np.uint8)])


def _cut_polyline(rng: np.random.Generator, w: int, h: int, cut_index: int,
                  n_same_orient: int, orient_rank: int,
                  params: ShredParams) -> np.ndarray:
    horizontal = cut_index % 2 == 0
    base = 0.0 if horizontal else math.pi / 2.0
    angle = base + rng.uniform(-params.orientation_jitter,
                               params.orientation_jitter)
    span = h if horizontal else w
    slot = span / (n_same_orient + 1)
    offset = (orient_rank + 1) * slot + rng.uniform(-0.35, 0.35) * slot
    center = (w / 2.0, offset) if horizontal else (offset, h / 2.0)
    d = np.array([math.cos(angle), math.sin(angle)])
    n_hat = np.array([-d[1], d[0]])
    reach = math.hypot(w, h) / 2.0 + 2 * CUT_VERTEX_SPACING
    ts = np.arange(-reach, reach + CUT_VERTEX_SPACING, CUT_VERTEX_SPACING)
    wiggle = rng.uniform(-params.perturbation_amplitude,
                         params.perturbation_amplitude, size=len(ts))
    pts = np.array(center) + ts[:, None] * d + wiggle[:, None] * n_hat
    return pts


def _truncate_at_cut(pts: np.ndarray, cut_mask: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray | None:
    """Clip a spanning cut polyline where it meets an existing cut.

    Keeps one side of a randomly picked crossing, so the cut ends at a T
    junction instead of spanning the image; three fragments then meet at
    the junction, giving the adjacency graph triangles. Returns None when
    the polyline crosses no existing cut.
    """
    h, w = cut_mask.shape
    fat = cv2.dilate(cut_mask, np.ones((3, 3), dtype=np.uint8))
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    samples, seg_of = [], []
    for si in range(len(seg)):
        n = max(1, int(math.ceil(seg_len[si])))
        for m in range(n):
            samples.append(pts[si] + seg[si] * (m / n))
            seg_of.append(si)
    samples.append(pts[-1])
    seg_of.append(len(seg) - 1)
    samples = np.asarray(samples)
    px = np.round(samples).astype(int)
    inside = ((px[:, 0] >= 0) & (px[:, 0] < w)
              & (px[:, 1] >= 0) & (px[:, 1] < h))
    hit = np.zeros(len(samples), dtype=bool)
    ii = np.nonzero(inside)[0]
    hit[ii] = fat[px[ii, 1], px[ii, 0]] > 0
    runs, k = [], 0
    while k < len(hit):
        if hit[k]:
            s = k
            while k < len(hit) and hit[k]:
                k += 1
            runs.append((s, k - 1))
        else:
            k += 1
    if not runs:
        return None
    s, e = runs[rng.integers(len(runs))]
    if rng.integers(2) == 0:
        return np.vstack([pts[:seg_of[e] + 1], samples[e][None, :]])
    return np.vstack([samples[s][None, :], pts[seg_of[s] + 1:]])


def shred(image: np.ndarray, params: ShredParams, seed: int) -> PuzzleBundle:
    """Cut `image` (RGBA) into fragments; deterministic for a given seed."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 4:
        raise ShredParameterError("image must be RGBA (H, W, 4)")
    h, w = image.shape[:2]
    rng = np.random.default_rng(seed)
    opaque = image[:, :, 3] > 0
    if opaque.sum() < MIN_FRAGMENT_AREA:
        raise ShredParameterError("image too small to shred")

    n_h = (params.num_cuts + 1) // 2
    n_v = params.num_cuts // 2
    cut_mask = np.zeros((h, w), dtype=np.uint8)
    for ci in range(params.num_cuts):
        rank = ci // 2
        n_orient = n_h if ci % 2 == 0 else n_v
        before = (opaque & (cut_mask == 0)).astype(np.uint8)
        n_before, _ = cv2.connectedComponents(before, connectivity=4)
        for attempt in range(MAX_CUT_RETRIES + 1):
            if attempt == MAX_CUT_RETRIES:
                raise ShredParameterError(
                    f"cut {ci}: could not keep every fragment above "
                    f"{MIN_FRAGMENT_AREA} px after {MAX_CUT_RETRIES} retries")
            pts = _cut_polyline(rng, w, h, ci, n_orient, rank, params)
            if rng.random() < params.t_junction_prob:
                clipped = _truncate_at_cut(pts, cut_mask, rng)
                if clipped is not None:
                    pts = clipped
            trial = cut_mask.copy()
            cv2.polylines(trial, [np.round(pts).astype(np.int32).reshape(-1, 1, 2)],
                          False, 1, 1)
            remaining = (opaque & (trial == 0)).astype(np.uint8)
            n_labels, labels = cv2.connectedComponents(remaining, connectivity=4)
            areas = np.bincount(labels.ravel())[1:n_labels]
            if (len(areas) and areas.min() >= MIN_FRAGMENT_AREA
                    and n_labels > n_before):
                cut_mask = trial
                break

    remaining = (opaque & (cut_mask == 0)).astype(np.uint8)
    n_labels, labels = cv2.connectedComponents(remaining, connectivity=4)
    return _bundle_from_labels(image, labels, range(1, n_labels), seed, params)


def _bundle_from_labels(image: np.ndarray, labels: np.ndarray, label_ids,
                        seed: int, params: ShredParams | None) -> PuzzleBundle:
    h, w = image.shape[:2]
    fragments, poses = [], {}
    for fid, label in enumerate(label_ids):
        component = labels == label
        ys, xs = np.nonzero(component)
        x0, x1 = xs.min(), xs.max() + 1
        y0, y1 = ys.min(), ys.max() + 1
        crop = np.zeros((y1 - y0, x1 - x0, 4), dtype=np.uint8)
        local = component[y0:y1, x0:x1]
        crop[local, :3] = image[y0:y1, x0:x1, :3][local]
        crop[local, 3] = 255
        fragments.append(Fragment.from_raster(fid, crop))
        poses[fid] = RigidTransform2D.translation(float(x0), float(y0))
    return PuzzleBundle(fragments, poses, (w, h), seed=seed, params=params)


def shred_voronoi(image: np.ndarray, pieces: int, seed: int,
                  perturbation_amplitude: float = 8.0,
                  max_retries: int = 50) -> PuzzleBundle:
    """Cut `image` into an irregular polygonal tiling of ~convex cells.

    Pixels are assigned to the nearest of `pieces` well-separated sites
    after a smooth random warp, so cell walls wiggle like torn edges and
    three cells routinely meet at a point.  Unlike `shred`, which layers
    image-spanning cuts (producing mostly four-way corners), this yields
    the three-way junctions typical of torn-paper fragments.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 4:
        raise ShredParameterError("image must be RGBA (H, W, 4)")
    if pieces < 1:
        raise ShredParameterError("pieces must be >= 1")
    h, w = image.shape[:2]
    opaque = image[:, :, 3] > 0
    if opaque.sum() < pieces * MIN_FRAGMENT_AREA:
        raise ShredParameterError("image too small for requested piece count")
    rng = np.random.default_rng(seed)
    min_dist = 0.72 * math.sqrt(w * h / pieces)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    for _ in range(max_retries):
        sites = []
        for _ in range(600):
            p = rng.uniform((0.08 * w, 0.08 * h), (0.92 * w, 0.92 * h))
            if all(np.hypot(*(p - q)) >= min_dist for q in sites):
                sites.append(p)
                if len(sites) == pieces:
                    break
        if len(sites) < pieces:
            continue
        sites = np.array(sites)

        # Smooth random warp of the query grid -> wiggly cell walls.
        xw, yw = xs.copy(), ys.copy()
        for target in (xw, yw):
            for _ in range(3):
                lam = rng.uniform(90.0, 220.0)
                phi = rng.uniform(0, 2 * np.pi)
                direction = rng.uniform(0, 2 * np.pi)
                amp = rng.uniform(0.3, 1.0) * perturbation_amplitude / 1.6
                proj = xs * np.cos(direction) + ys * np.sin(direction)
                target += amp * np.sin(2 * np.pi * proj / lam + phi)

        dist = np.full((h, w), np.inf)
        labels = np.full((h, w), -1, dtype=np.int32)
        for k, (sx, sy) in enumerate(sites):
            d = (xw - sx) ** 2 + (yw - sy) ** 2
            closer = d < dist
            dist[closer] = d[closer]
            labels[closer] = k
        labels[~opaque] = -1

        # Cells tile the opaque area exactly (no cut-line pixels); each must
        # come out as one well-sized connected region or we redraw the sites.
        ok = True
        for k in range(pieces):
            cell = (labels == k).astype(np.uint8)
            area = int(cell.sum())
            n_comp, _ = cv2.connectedComponents(cell, connectivity=4)
            if area < MIN_FRAGMENT_AREA or n_comp != 2:
                ok = False
                break
        if ok:
            return _bundle_from_labels(image, labels, range(pieces), seed, None)
    raise ShredParameterError(
        f"could not tile image into {pieces} pieces after {max_retries} tries")


def shred_to_piece_count(image: np.ndarray, pieces: int, seed: int,
                         orientation_jitter: float = 0.12,
                         perturbation_amplitude: float = 6.0,
                         t_junction_prob: float = 0.0,
                         max_cuts: int = 40) -> PuzzleBundle:
    """Add cuts one at a time until the bundle reaches `pieces` fragments."""
    if pieces < 1:
        raise ShredParameterError("pieces must be >= 1")
    num_cuts = max(0, int(round(2 * (math.sqrt(pieces) - 1))))
    while True:
        params = ShredParams(num_cuts, orientation_jitter,
                             perturbation_amplitude, t_junction_prob)
        bundle = shred(image, params, seed)
        if len(bundle) >= pieces or num_cuts >= max_cuts:
            return bundle
        num_cuts += 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_bundle(bundle: PuzzleBundle, path) -> Path:
    """Write manifest.json + fragment_<id>.png into directory `path`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for frag in sorted(bundle.fragments, key=lambda f: f.id):
        name = f"fragment_{frag.id}.png"
        bgra = cv2.cvtColor(frag.raster, cv2.COLOR_RGBA2BGRA)
        if not cv2.imwrite(str(root / name), bgra):
            raise BundleFormatError(f"could not write {root / name}")
        pose = bundle.poses[frag.id]
        entries.append({
            "id": frag.id,
            "file": name,
            "offset": [pose.tx, pose.ty],
            "pose": pose.as_flat(),
            "area": frag.area,
            "sha256": _sha256(root / name),
        })
    manifest = {
        "format": MANIFEST_FORMAT,
        "seed": bundle.seed,
        "params": asdict(bundle.params) if bundle.params else None,
        "source_size": list(bundle.source_size),
        "fragments": entries,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return root


def read_bundle(path) -> PuzzleBundle:
    root = Path(path)
    mf = root / "manifest.json"
    if not mf.is_file():
        raise BundleFormatError(f"missing manifest: {mf}")
    try:
        manifest = json.loads(mf.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise BundleFormatError(f"unparseable manifest {mf}: {e}") from e
    if manifest.get("format") != MANIFEST_FORMAT:
        raise BundleFormatError(
            f"{mf}: unsupported bundle format {manifest.get('format')!r}")
    fragments, poses, seen = [], {}, set()
    for entry in manifest.get("fragments", []):
        fid = entry["id"]
        if fid in seen:
            raise BundleFormatError(f"{mf}: duplicate fragment id {fid}")
        seen.add(fid)
        fp = root / entry["file"]
        if not fp.is_file():
            raise BundleFormatError(f"missing fragment file: {fp}")
        if _sha256(fp) != entry["sha256"]:
            raise BundleFormatError(f"checksum mismatch: {fp}")
        bgra = cv2.imread(str(fp), cv2.IMREAD_UNCHANGED)
        if bgra is None or bgra.ndim != 3 or bgra.shape[2] != 4:
            raise BundleFormatError(f"not an RGBA image: {fp}")
        raster = cv2.cvtColor(bgra, cv2.COLOR_BGRA2RGBA)
        frag = Fragment.from_raster(fid, raster)
        if frag.area != entry["area"]:
            raise BundleFormatError(f"{fp}: area disagrees with manifest")
        fragments.append(frag)
        poses[fid] = RigidTransform2D.from_matrix(np.array(entry["pose"]))
    params = None
    if manifest.get("params"):
        params = ShredParams(**manifest["params"])
    return PuzzleBundle(fragments, poses, tuple(manifest["source_size"]),
                        seed=manifest.get("seed"), params=params)
