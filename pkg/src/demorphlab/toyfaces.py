"""Procedural toy faces with analytically known landmarks.

Every identity is a deterministic function of its seed. A seed first picks one
of a handful of *families* (background, skin, hair style and tones), then
draws continuous per-identity geometry and tone jitter inside the family. This
gives the identity space the coarse-plus-fine structure real faces have: the
toy matcher separates families easily and members of a family less easily.

Landmarks (16 points): left eye, right eye, nose tip, left mouth corner, right
mouth corner, then 11 jaw samples along the lower half of the head outline
from the left ear to the right ear.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .morphing import Landmarks

N_LANDMARKS = 16
N_JAW = 11

# background, skin, hair, shirt RGB in [0, 1] and hair style per family
FAMILIES = (
    dict(bg=(0.12, 0.14, 0.22), skin=(0.93, 0.82, 0.72), hair=(0.22, 0.13, 0.06),
         shirt=(0.20, 0.35, 0.75), style="cap", spread=1.6),
    dict(bg=(0.88, 0.88, 0.84), skin=(0.42, 0.27, 0.18), hair=(0.08, 0.06, 0.05),
         shirt=(0.85, 0.30, 0.25), style="bald", spread=1.6),
    dict(bg=(0.62, 0.78, 0.90), skin=(0.80, 0.62, 0.50), hair=(0.10, 0.07, 0.05),
         shirt=(0.30, 0.30, 0.30), style="long", spread=0.6),
    dict(bg=(0.25, 0.22, 0.28), skin=(0.96, 0.86, 0.78), hair=(0.92, 0.80, 0.45),
         shirt=(0.90, 0.90, 0.88), style="fringe", spread=1.6),
    dict(bg=(0.86, 0.80, 0.62), skin=(0.58, 0.40, 0.28), hair=(0.05, 0.05, 0.05),
         shirt=(0.25, 0.60, 0.30), style="afro", spread=0.7),
)

# documented parameter ranges, normalized image units
RANGES = dict(
    head_rx=(0.26, 0.31),
    head_ry=(0.33, 0.38),
    head_cy=(0.485, 0.515),
    head_cx=(0.488, 0.512),
    hair_extent=(-1.0, 1.0),
    neck_w=(0.35, 0.6),
    shoulder_y=(1.02, 1.14),
    eye_dx=(0.09, 0.14),
    eye_y=(-0.10, -0.02),
    eye_r=(0.030, 0.055),
    nose_len=(0.06, 0.14),
    mouth_w=(0.07, 0.14),
    mouth_y=(0.14, 0.22),
    mouth_curve=(-0.03, 0.04),
    brow_lift=(0.04, 0.08),
    tone_jitter=(-0.10, 0.10),
    shirt_jitter=(-0.15, 0.15),
)


@dataclass(frozen=True)
class ToyFaceParams:
    seed: int
    family: int
    head_rx: float
    head_ry: float
    head_cx: float
    head_cy: float
    eye_dx: float
    eye_y: float
    eye_r: float
    nose_len: float
    mouth_w: float
    mouth_y: float
    mouth_curve: float
    brow_lift: float
    hair_extent: float
    neck_w: float
    shoulder_y: float
    skin: tuple
    bg: tuple
    hair: tuple
    iris: tuple
    shirt: tuple

    @classmethod
    def from_seed(cls, seed: int) -> "ToyFaceParams":
        rng = np.random.default_rng([int(seed), 0x70F])
        family = int(rng.integers(len(FAMILIES)))
        fam = FAMILIES[family]

        def u(name):
            # family-specific spread around the middle of the documented range
            lo, hi = RANGES[name]
            return float((lo + hi) / 2 + fam["spread"] * (rng.uniform() - 0.5) * (hi - lo))

        def tone(base, key="tone_jitter"):
            lo, hi = RANGES[key]
            return tuple(float(np.clip(c + rng.uniform(lo, hi), 0.0, 1.0)) for c in base)

        geom = {k: u(k) for k in (
            "head_rx", "head_ry", "head_cx", "head_cy", "eye_dx", "eye_y", "eye_r",
            "nose_len", "mouth_w", "mouth_y", "mouth_curve", "brow_lift",
            "hair_extent", "neck_w", "shoulder_y",
        )}
        iris = tuple(float(v) for v in rng.uniform(0.05, 0.6, size=3))
        shirt = tone(fam["shirt"], "shirt_jitter")
        return cls(
            seed=int(seed), family=family, skin=tone(fam["skin"]), bg=tone(fam["bg"]),
            hair=tone(fam["hair"]), iris=iris, shirt=shirt, **geom,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _coverage(sd, px):
    """Anti-aliased coverage of a shape given its signed distance (<0 inside)."""
    return np.clip(0.5 - sd / px, 0.0, 1.0)


def _ellipse_sd(x, y, cx, cy, rx, ry):
    # first-order signed distance to an axis-aligned ellipse: (r - 1) / |grad r|
    nx = (x - cx) / rx
    ny = (y - cy) / ry
    r = np.sqrt(nx * nx + ny * ny) + 1e-12
    grad = np.sqrt((nx / rx) ** 2 + (ny / ry) ** 2) / r + 1e-12
    return (r - 1.0) / grad


def _paint(canvas, cov, color):
    cov = cov[:, :, None]
    return canvas * (1.0 - cov) + np.asarray(color)[None, None, :] * cov


def landmarks_for(p: ToyFaceParams, res: int) -> Landmarks:
    s = res - 1
    pts = [
        (p.head_cx - p.eye_dx, p.head_cy + p.eye_y),
        (p.head_cx + p.eye_dx, p.head_cy + p.eye_y),
        (p.head_cx, p.head_cy + p.eye_y + p.nose_len),
        (p.head_cx - p.mouth_w, p.head_cy + p.mouth_y),
        (p.head_cx + p.mouth_w, p.head_cy + p.mouth_y),
    ]
    for a in np.linspace(np.pi, 0.0, N_JAW):
        pts.append((p.head_cx + p.head_rx * np.cos(a), p.head_cy + p.head_ry * np.sin(a)))
    arr = np.clip(np.array(pts, dtype=np.float64) * s, 0.0, s)
    return Landmarks(arr, (res, res))


def render(p: ToyFaceParams, res: int) -> np.ndarray:
    """Render a face as an ``(res, res, 3)`` float image in [0, 1]."""
    c = (np.arange(res, dtype=np.float64)) / (res - 1)
    y, x = np.meshgrid(c, c, indexing="ij")
    px = 1.0 / (res - 1)
    style = FAMILIES[p.family]["style"]
    cx, cy, rx, ry = p.head_cx, p.head_cy, p.head_rx, p.head_ry
    he = p.hair_extent

    img = np.empty((res, res, 3))
    img[:] = np.asarray(p.bg)

    # behind-head hair
    if style == "long":
        sd = np.maximum(_ellipse_sd(x, y, cx, cy - 0.02, rx * (1.25 + 0.1 * he), ry * 1.2),
                        y - (cy + ry * (0.8 + 0.25 * he)))
        img = _paint(img, _coverage(sd, px), p.hair)
    elif style == "afro":
        sd = _ellipse_sd(x, y, cx, cy - 0.08, rx * (1.45 + 0.12 * he), ry * (1.05 + 0.06 * he))
        img = _paint(img, _coverage(sd, px), p.hair)

    # shoulders and neck
    shoulders = _ellipse_sd(x, y, cx, p.shoulder_y, 0.42, 0.22)
    img = _paint(img, _coverage(shoulders, px), p.shirt)
    neck = np.maximum(np.abs(x - cx) - rx * p.neck_w, np.maximum(cy - y, y - 0.95))
    img = _paint(img, _coverage(neck, px), p.skin)

    img = _paint(img, _coverage(_ellipse_sd(x, y, cx, cy, rx, ry), px), p.skin)

    # on-head hair
    if style == "cap":
        sd = np.maximum(_ellipse_sd(x, y, cx, cy, rx * 1.04, ry * 1.04), y - (cy - ry * (0.45 + 0.15 * he)))
        img = _paint(img, _coverage(sd, px), p.hair)
    elif style == "fringe":
        sd = np.maximum(_ellipse_sd(x, y, cx, cy, rx * 1.06, ry * 1.05), y - (cy - ry * (0.25 - 0.15 * he) + 0.05 * np.sin(x * 40)))
        img = _paint(img, _coverage(sd, px), p.hair)
    elif style == "long":
        sd = np.maximum(_ellipse_sd(x, y, cx, cy, rx * 1.05, ry * 1.05), y - (cy - ry * (0.5 + 0.12 * he)))
        img = _paint(img, _coverage(sd, px), p.hair)
    elif style == "bald":
        # beard along the jaw
        sd = np.maximum(_ellipse_sd(x, y, cx, cy, rx * 1.02, ry * 1.02), (cy + p.mouth_y - 0.03 - 0.05 * he) - y)
        img = _paint(img, _coverage(sd, px), p.hair)

    ey = cy + p.eye_y
    white = (0.97, 0.97, 0.97)
    for ex in (cx - p.eye_dx, cx + p.eye_dx):
        img = _paint(img, _coverage(_ellipse_sd(x, y, ex, ey, p.eye_r * 1.4, p.eye_r * 0.8), px), white)
        img = _paint(img, _coverage(np.hypot(x - ex, y - ey) - p.eye_r * 0.6, px), p.iris)
        img = _paint(img, _coverage(np.hypot(x - ex, y - ey) - p.eye_r * 0.25, px), (0.02, 0.02, 0.02))
        brow = np.maximum(np.abs(y - (ey - p.brow_lift)) - 0.012, np.abs(x - ex) - p.eye_r * 1.6)
        img = _paint(img, _coverage(brow, px), tuple(0.6 * v for v in p.hair))

    # nose: vertical ridge ending in a tip
    nose_tip = ey + p.nose_len
    dark = tuple(0.7 * v for v in p.skin)
    ridge = np.maximum(np.abs(x - cx) - 0.010, np.maximum(ey + 0.02 - y, y - nose_tip))
    img = _paint(img, _coverage(ridge, px), dark)
    img = _paint(img, _coverage(_ellipse_sd(x, y, cx, nose_tip, 0.035, 0.018), px), dark)

    # mouth: a curved band between the two corners
    my = cy + p.mouth_y
    t = (x - cx) / p.mouth_w
    curve_y = my + p.mouth_curve * (1.0 - t * t)
    lips = np.maximum(np.abs(y - curve_y) - 0.014, np.abs(x - cx) - p.mouth_w)
    img = _paint(img, _coverage(lips, px), (0.62, 0.18, 0.20))
    return np.clip(img, 0.0, 1.0)


def toy_face(seed: int, res: int = 64):
    """Image, landmarks and parameters of the toy identity ``seed``."""
    p = ToyFaceParams.from_seed(seed)
    return render(p, res), landmarks_for(p, res), p
