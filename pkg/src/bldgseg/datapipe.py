"""Polygon rasterization, tile selection, footprint alignment and synthetic scenes."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import shapely.geometry as sg

from .labels import boundary_pixels
from .netgraph import SIZE_MULTIPLE
from .upsample import upsample_bilinear


class PolygonError(ValueError):
    pass


@dataclass(frozen=True)
class Polygon:
    vertices: tuple  # ((x, y), ...) pixel coordinates, implicitly closed

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)

    def validate(self):
        if len(self.vertices) < 3:
            raise PolygonError(f"polygon needs at least 3 vertices, got {len(self.vertices)}")
        shape = sg.Polygon(self.vertices)
        if shape.area <= 0 or not shape.is_valid:
            raise PolygonError("polygon is degenerate or self-intersecting")
        return self

    def scaled(self, s: float) -> "Polygon":
        return Polygon(tuple((x * s, y * s) for x, y in self.vertices))

    def shifted(self, dx: float, dy: float) -> "Polygon":
        return Polygon(tuple((x + dx, y + dy) for x, y in self.vertices))

    def shape(self):
        return sg.Polygon(self.vertices)

    @property
    def center(self):
        xs, ys = zip(*self.vertices)
        return (min(xs) + max(xs)) / 2, (min(ys) + max(ys)) / 2


def _inside_even_odd(vertices, px, py):
    """Even-odd membership of points (px, py); points on an edge are inside."""
    v = np.asarray(vertices, dtype=np.float64)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        crosses = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (px < xint)
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        within = ((px >= min(ax, bx)) & (px <= max(ax, bx))
                  & (py >= min(ay, by)) & (py <= max(ay, by)))
        on_edge |= (cross == 0) & within
    return inside | on_edge


def rasterize(polygons, height: int, width: int) -> np.ndarray:
    """Pixel (r, c) is set iff its center (c + 0.5, r + 0.5) lies in a polygon."""
    if height <= 0 or width <= 0:
        raise ValueError(f"raster extents must be positive, got {height}x{width}")
    out = np.zeros((height, width), dtype=np.uint8)
    for poly in polygons:
        poly.validate()
        xs, ys = zip(*poly.vertices)
        c0 = max(int(np.floor(min(xs) - 0.5)), 0)
        c1 = min(int(np.ceil(max(xs) - 0.5)) + 1, width)
        r0 = max(int(np.floor(min(ys) - 0.5)), 0)
        r1 = min(int(np.ceil(max(ys) - 0.5)) + 1, height)
        if c0 >= c1 or r0 >= r1:
            continue
        py, px = np.mgrid[r0:r1, c0:c1] + 0.5
        out[r0:r1, c0:c1] |= _inside_even_odd(poly.vertices, px, py).astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# tile selection


def border_crossings(polygons, x0: float, y0: float, window: int) -> int:
    """Number of polygons that are partly inside and partly outside the window."""
    box = sg.box(x0, y0, x0 + window, y0 + window)
    n = 0
    for p in polygons:
        s = p.shape()
        if s.intersects(box) and not box.contains(s) and s.intersection(box).area > 0:
            n += 1
    return n


def candidate_origins(anchor: Polygon, window: int, stride: int, search_radius: int,
                      scene_height: int, scene_width: int):
    """Window origins on a stride grid whose centers lie within the radius of the anchor center."""
    ax, ay = anchor.center
    steps = search_radius // stride if stride > 0 else 0
    out = []
    for j in range(-steps, steps + 1):
        for i in range(-steps, steps + 1):
            x0 = int(round(ax + i * stride - window / 2))
            y0 = int(round(ay + j * stride - window / 2))
            if 0 <= x0 and 0 <= y0 and x0 + window <= scene_width and y0 + window <= scene_height:
                out.append((x0, y0))
    return out


def select_tile_window(polygons, anchor_polygon: Polygon, window: int, stride: int = 8,
                       search_radius: int = 64, scene_height: int | None = None,
                       scene_width: int | None = None):
    """Return ((x0, y0), crossings) for the candidate window with fewest border-crossing polygons.

    Ties go to the window whose center is nearest the anchor center, then to
    row-major order of origins.
    """
    if scene_height is None or scene_width is None:
        raise ValueError("scene extents are required")
    if window > scene_height or window > scene_width:
        raise ValueError(f"window {window} does not fit a {scene_height}x{scene_width} scene")
    cands = candidate_origins(anchor_polygon, window, stride, search_radius, scene_height, scene_width)
    if not cands:
        raise ValueError("no candidate window fits inside the scene")
    ax, ay = anchor_polygon.center
    best = None
    for x0, y0 in cands:
        n = border_crossings(polygons, x0, y0, window)
        d = np.hypot(x0 + window / 2 - ax, y0 + window / 2 - ay)
        key = (n, d, y0, x0)
        if best is None or key < best:
            best = key
    return (best[3], best[2]), best[0]


# ---------------------------------------------------------------------------
# footprint alignment


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude, summed over channels."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    gy = np.zeros_like(img)
    gx = np.zeros_like(img)
    gy[1:-1] = (img[2:] - img[:-2]) / 2
    gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2
    return np.sqrt(gx ** 2 + gy ** 2).sum(axis=2)


def _ncc(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den == 0:
        return 0.0
    return float((a * b).sum() / den)


def shift_map(m: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """out[r + dy, c + dx] = m[r, c], zero filled."""
    h, w = m.shape[:2]
    out = np.zeros_like(m)
    src = m[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def align_footprints(mask: np.ndarray, image: np.ndarray, max_shift: int, tie_tol: float = 1e-12):
    """Integer (dx, dy) that best aligns the mask's boundary with image edges.

    The score is the normalized cross-correlation over the overlap of the
    shifted boundary map and the gradient magnitude.
    """
    mask = np.asarray(mask)
    h, w = mask.shape
    if image.shape[:2] != (h, w):
        raise ValueError(f"mask {mask.shape} and image {image.shape[:2]} differ in extent")
    if 2 * max_shift >= min(h, w):
        raise ValueError(f"max_shift {max_shift} must be below half the extent {min(h, w)}")
    grad = gradient_magnitude(image)
    edges = boundary_pixels(mask).astype(np.float64)
    scored = []
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            # overlap region of the shifted map with the image
            r0, r1 = max(0, dy), h + min(0, dy)
            c0, c1 = max(0, dx), w + min(0, dx)
            shifted = edges[r0 - dy:r1 - dy, c0 - dx:c1 - dx]
            scored.append((_ncc(shifted, grad[r0:r1, c0:c1]), dx, dy))
    top = max(s for s, _, _ in scored)
    ties = [(abs(dx) + abs(dy), dy, dx) for s, dx, dy in scored if s >= top - tie_tol]
    _, dy, dx = min(ties)
    return dx, dy


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneConfig:
    tile: int = 512
    building_count_range: tuple = (4, 12)
    size_range: tuple = (15.0, 100.0)
    aspect_range: tuple = (0.5, 1.0)
    rotation: bool = True
    max_coverage: float = 0.6
    margin: float = 3.0
    roof_brightness: tuple = (0.55, 0.9)
    ground_brightness: tuple = (0.2, 0.4)
    shadow_length: float = 0.15  # fraction of building size
    shadow_darkening: float = 0.5
    texture_amplitude: float = 0.06
    pixel_noise: float = 0.02
    max_retries: int = 200


def scene_seed(base: int, index: int) -> int:
    """Per-scene seed for the index-th scene of a dataset drawn with `base`."""
    return base * 1_000_003 + index


@dataclass
class SceneSample:
    image: np.ndarray  # tile x tile x 3 in [0, 1]
    mask: np.ndarray  # tile/2 x tile/2 binary, output resolution
    polygons: list  # image pixel coordinates
    seed: int
    requested_count: int = 0
    notes: list = field(default_factory=list)


def _rect(cx, cy, length, width, angle):
    c, s = np.cos(angle), np.sin(angle)
    pts = []
    for u, v in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        x = cx + u * length / 2 * c - v * width / 2 * s
        y = cy + u * length / 2 * s + v * width / 2 * c
        pts.append((x, y))
    return Polygon(tuple(pts))


def _smooth_noise(rng, size, cell, dtype=np.float64):
    n = size // cell + 1
    coarse = rng.uniform(-1, 1, size=(n, n, 1))
    fine = upsample_bilinear(coarse, cell)
    return fine[:size, :size, 0].astype(dtype)


def generate_scene(seed: int, config: SceneConfig | None = None) -> SceneSample:
    cfg = config or SceneConfig()
    if cfg.tile % SIZE_MULTIPLE:
        raise ValueError(f"tile {cfg.tile} must be divisible by {SIZE_MULTIPLE}")
    rng = np.random.default_rng(seed)
    t = cfg.tile
    lo, hi = cfg.building_count_range
    requested = int(rng.integers(lo, hi + 1))

    polys, shapes, area = [], [], 0.0
    tries = 0
    while len(polys) < requested and tries < cfg.max_retries:
        tries += 1
        length = rng.uniform(*cfg.size_range)
        width = length * rng.uniform(*cfg.aspect_range)
        angle = rng.uniform(0, np.pi) if cfg.rotation else 0.0
        half = np.hypot(length, width) / 2
        if 2 * (half + cfg.margin) >= t:
            continue
        cx = rng.uniform(half + cfg.margin, t - half - cfg.margin)
        cy = rng.uniform(half + cfg.margin, t - half - cfg.margin)
        poly = _rect(cx, cy, length, width, angle)
        shape = poly.shape()
        if any(shape.distance(o) < cfg.margin for o in shapes):
            continue
        if (area + shape.area) / t ** 2 > cfg.max_coverage:
            continue
        polys.append(poly)
        shapes.append(shape)
        area += shape.area

    notes = []
    if len(polys) < requested:
        notes.append(f"placed {len(polys)} of {requested} buildings")

    ground = rng.uniform(*cfg.ground_brightness)
    tint = rng.uniform(-0.05, 0.05, size=3) + np.array([0.0, 0.04, -0.03])
    base = ground + tint
    tex = cfg.texture_amplitude * (_smooth_noise(rng, t, 16) + 0.5 * _smooth_noise(rng, t, 4))
    image = base[None, None, :] + tex[..., None]

    # shadows fall toward the lower right of every building
    for p, s in zip(polys, shapes):
        size = np.sqrt(s.area)
        off = cfg.shadow_length * size
        shadow = rasterize([p.shifted(off, off)], t, t).astype(bool)
        image[shadow] *= cfg.shadow_darkening

    for p in polys:
        roof = rng.uniform(*cfg.roof_brightness)
        color = roof + rng.uniform(-0.04, 0.04, size=3)
        m = rasterize([p], t, t).astype(bool)
        image[m] = color + 0.5 * tex[m][:, None]

    image += cfg.pixel_noise * rng.standard_normal(image.shape)
    image = np.clip(image, 0.0, 1.0)
    mask = rasterize([p.scaled(0.5) for p in polys], t // 2, t // 2)
    return SceneSample(image, mask, polys, seed, requested, notes)


# ---------------------------------------------------------------------------
# GeoJSON subset: a FeatureCollection of Polygon geometries without holes


def polygons_to_geojson(polygons) -> dict:
    feats = []
    for p in polygons:
        ring = [list(v) for v in p.vertices] + [list(p.vertices[0])]
        feats.append({"type": "Feature", "properties": {},
                      "geometry": {"type": "Polygon", "coordinates": [ring]}})
    return {"type": "FeatureCollection", "features": feats}


def polygons_from_geojson(doc) -> list:
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("type") != "FeatureCollection":
        raise PolygonError("expected a FeatureCollection")
    out = []
    for feat in doc["features"]:
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise PolygonError(f"unsupported geometry {geom.get('type')!r}")
        rings = geom["coordinates"]
        if len(rings) != 1:
            raise PolygonError("polygons with holes are not supported")
        ring = [tuple(v) for v in rings[0]]
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        out.append(Polygon(tuple(ring)).validate())
    return out
