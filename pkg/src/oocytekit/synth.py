"""Synthetic oocyte scenes with analytically known ground truth.

Each oocyte is two nested ellipses (cytoplasm inside the outer contour of the
zona pellucida), optional polar-body discs inside the zona annulus and
optional cumulus discs outside it. Labels come from exact point-in-ellipse
tests on pixel centers, so every downstream measurement can be compared
with the generating parameters.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecOutOfFrame
from .geometry import Ellipse
from .imagery import Label
from .morphology import POLAR_BODY_MIN_AREA

FRAME_WIDTH, FRAME_HEIGHT = 1392, 1040

BACKGROUND_INTENSITY = 170.0
ZONA_INTENSITY = 205.0
POLAR_BODY_INTENSITY = 150.0
CUMULUS_INTENSITY = 135.0

# synthetic viability rule
VIABLE_MAX_ECCENTRICITY = 0.4
VIABLE_MAX_GRANULARITY = 8.0


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, *keys) -> int:
    """Deterministic sub-seed for a named stage or item."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.extend(key.encode())
        else:
            words.append(int(key))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Disc:
    x: float
    y: float
    radius: float

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2


@dataclass(frozen=True)
class OocyteSpec:
    cytoplasm: Ellipse
    zona: Ellipse
    polar_bodies: tuple[Disc, ...] = ()
    cumulus: tuple[Disc, ...] = ()
    base_intensity: float = 110.0
    granularity: float = 0.0
    grain_scale: float = 3.0
    fully_visible: bool = True

    def __post_init__(self):
        for ell in (self.cytoplasm, self.zona):
            if not (ell.a >= ell.b > 0):
                raise ValueError(f"semi-axes must satisfy a >= b > 0, got {ell}")
        rim = self.cytoplasm.sample(256)
        if not np.all(self.zona.contains(rim[:, 0], rim[:, 1])):
            raise ValueError("cytoplasm ellipse must lie strictly inside the zona ellipse")

    @property
    def has_cumulus(self) -> bool:
        return bool(self.cumulus)

    @property
    def n_polar_bodies(self) -> int:
        return sum(1 for d in self.polar_bodies if d.area >= POLAR_BODY_MIN_AREA)

    @property
    def eccentricity(self) -> float:
        c = self.cytoplasm
        return math.sqrt(1.0 - (c.b / c.a) ** 2)

    @property
    def viable(self) -> bool:
        return is_viable(self.n_polar_bodies, self.eccentricity, self.granularity)


def is_viable(n_pb: int, eccentricity: float, granularity: float) -> bool:
    return (n_pb == 1 and eccentricity < VIABLE_MAX_ECCENTRICITY
            and granularity < VIABLE_MAX_GRANULARITY)


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    oocytes: tuple[OocyteSpec, ...] = ()
    noise_sigma: float = 2.0
    seed: int = 0
    background: float = BACKGROUND_INTENSITY


def ellipse_extent(ell: Ellipse) -> tuple[float, float]:
    """Half width and half height of the axis-aligned bounding box."""
    c, s = math.cos(ell.theta), math.sin(ell.theta)
    return (math.sqrt((ell.a * c) ** 2 + (ell.b * s) ** 2),
            math.sqrt((ell.a * s) ** 2 + (ell.b * c) ** 2))


def _box(cx, cy, hx, hy, width, height):
    x0 = max(int(math.floor(cx - hx)) - 1, 0)
    x1 = min(int(math.ceil(cx + hx)) + 2, width)
    y0 = max(int(math.floor(cy - hy)) - 1, 0)
    y1 = min(int(math.ceil(cy + hy)) + 2, height)
    return x0, x1, y0, y1


def _value_noise(rng, shape, scale) -> np.ndarray:
    """Bilinearly interpolated lattice noise in [-1, 1]."""
    h, w = shape
    gh = int(math.ceil(h / scale)) + 2
    gw = int(math.ceil(w / scale)) + 2
    lattice = rng.uniform(-1.0, 1.0, size=(gh, gw))
    ys = np.arange(h) / scale
    xs = np.arange(w) / scale
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v00 = lattice[np.ix_(y0, x0)]
    v01 = lattice[np.ix_(y0, x0 + 1)]
    v10 = lattice[np.ix_(y0 + 1, x0)]
    v11 = lattice[np.ix_(y0 + 1, x0 + 1)]
    return (v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy)
            + v10 * (1 - fx) * fy + v11 * fx * fy)


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Render ``spec`` into ``(image, mask, truth)``.

    ``truth`` holds one record per oocyte with its generating parameters and
    :func:`reference_features`.
    """
    w, h = spec.width, spec.height
    for k, oo in enumerate(spec.oocytes):
        if not oo.fully_visible:
            continue
        hx, hy = ellipse_extent(oo.zona)
        if (oo.zona.cx - hx < 0 or oo.zona.cy - hy < 0
                or oo.zona.cx + hx > w - 1 or oo.zona.cy + hy > h - 1):
            raise SpecOutOfFrame(f"oocyte {k} leaves the {w}x{h} frame")

    rng = make_rng(spec.seed)
    mask = np.zeros((h, w), dtype=np.uint8)
    image = np.full((h, w), spec.background, dtype=float)

    for oo in spec.oocytes:
        hx, hy = ellipse_extent(oo.zona)
        x0, x1, y0, y1 = _box(oo.zona.cx, oo.zona.cy, hx, hy, w, h)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        sub = mask[y0:y1, x0:x1]
        img = image[y0:y1, x0:x1]
        in_zona = oo.zona.contains(xx, yy)
        in_cyto = oo.cytoplasm.contains(xx, yy)
        sub[in_zona] = Label.ZONA
        sub[in_cyto] = Label.CYTOPLASM
        img[in_zona] = ZONA_INTENSITY
        grain = _value_noise(rng, sub.shape, oo.grain_scale)
        img[in_cyto] = oo.base_intensity + oo.granularity * grain[in_cyto]
        for disc in oo.polar_bodies:
            # clipped to the annulus so the zona's outer contour stays intact
            inside = ((xx - disc.x) ** 2 + (yy - disc.y) ** 2 <= disc.radius ** 2) & (sub == Label.ZONA)
            sub[inside] = Label.POLAR_BODY
            img[inside] = POLAR_BODY_INTENSITY

    # cumulus only covers background, painted after every oocyte
    for oo in spec.oocytes:
        for disc in oo.cumulus:
            x0, x1, y0, y1 = _box(disc.x, disc.y, disc.radius, disc.radius, w, h)
            if x0 >= x1 or y0 >= y1:
                continue
            yy, xx = np.mgrid[y0:y1, x0:x1]
            sub = mask[y0:y1, x0:x1]
            inside = ((xx - disc.x) ** 2 + (yy - disc.y) ** 2 <= disc.radius ** 2) & (sub == Label.BACKGROUND)
            sub[inside] = Label.CUMULUS
            image[y0:y1, x0:x1][inside] = CUMULUS_INTENSITY

    if spec.noise_sigma > 0:
        image += rng.normal(0.0, spec.noise_sigma, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    truth = [oocyte_truth(oo) for oo in spec.oocytes]
    return image, mask, truth


def reference_features(oo: OocyteSpec) -> dict:
    """Exact geometric descriptors implied by the generating parameters.

    Areas are continuous (``pi * a * b``), so compactness is exactly 1.
    """
    c, z = oo.cytoplasm, oo.zona
    pbs = [d for d in oo.polar_bodies if d.area >= POLAR_BODY_MIN_AREA]
    return {
        "mu_c": (c.a + c.b) / 2.0,
        "e_c": math.sqrt(1.0 - (c.b / c.a) ** 2),
        "gamma_c": 1.0,
        "mu_z": (z.a + z.b) / 2.0,
        "e_z": math.sqrt(1.0 - (z.b / z.a) ** 2),
        "gamma_z": 1.0,
        "m": math.hypot(c.cx - z.cx, c.cy - z.cy),
        "r": (c.a * c.b) / (z.a * z.b),
        "n_pb": len(pbs),
        "S_pb": sum(d.area for d in pbs),
    }


def oocyte_truth(oo: OocyteSpec) -> dict:
    def ell(e: Ellipse) -> dict:
        return {"cx": e.cx, "cy": e.cy, "a": e.a, "b": e.b, "theta": e.theta}

    return {
        "cx": oo.cytoplasm.cx,
        "cy": oo.cytoplasm.cy,
        "viable": oo.viable,
        "cytoplasm": ell(oo.cytoplasm),
        "zona": ell(oo.zona),
        "polar_bodies": [[d.x, d.y, d.radius] for d in oo.polar_bodies],
        "cumulus": [[d.x, d.y, d.radius] for d in oo.cumulus],
        "base_intensity": oo.base_intensity,
        "granularity": oo.granularity,
        "grain_scale": oo.grain_scale,
        "reference": reference_features(oo),
    }


# --- sampling -------------------------------------------------------------

def _ray_exit(ell: Ellipse, px, py, ux, uy) -> float:
    """Distance along the ray ``p + s u`` (``p`` inside) to the ellipse boundary."""
    c, s = math.cos(ell.theta), math.sin(ell.theta)
    dx, dy = px - ell.cx, py - ell.cy
    p_u = (dx * c + dy * s) / ell.a
    p_v = (-dx * s + dy * c) / ell.b
    d_u = (ux * c + uy * s) / ell.a
    d_v = (-ux * s + uy * c) / ell.b
    qa = d_u * d_u + d_v * d_v
    qb = 2.0 * (p_u * d_u + p_v * d_v)
    qc = p_u * p_u + p_v * p_v - 1.0
    return (-qb + math.sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa)


def _disc_in_annulus(disc: Disc, inner: Ellipse, outer: Ellipse, margin: float = 1.5) -> bool:
    t = np.linspace(0.0, 2.0 * np.pi, 72, endpoint=False)
    rad = disc.radius + margin
    xs = disc.x + rad * np.cos(t)
    ys = disc.y + rad * np.sin(t)
    return bool(np.all(outer.contains(xs, ys)) and not np.any(inner.contains(xs, ys)))


def _annulus_disc(inner: Ellipse, outer: Ellipse, phi: float, radius: float) -> Disc | None:
    ux, uy = math.cos(phi), math.sin(phi)
    s_in = _ray_exit(inner, inner.cx, inner.cy, ux, uy)
    s_out = _ray_exit(outer, inner.cx, inner.cy, ux, uy)
    s_mid = 0.5 * (s_in + s_out)
    disc = Disc(inner.cx + s_mid * ux, inner.cy + s_mid * uy, radius)
    return disc if _disc_in_annulus(disc, inner, outer) else None


def place_polar_bodies(rng, inner: Ellipse, outer: Ellipse, radii) -> tuple[Disc, ...] | None:
    """Put discs in the widest part of the annulus, side by side."""
    if not radii:
        return ()
    phis = np.linspace(0.0, 2.0 * np.pi, 90, endpoint=False)
    gaps = [
        _ray_exit(outer, inner.cx, inner.cy, math.cos(p), math.sin(p))
        - _ray_exit(inner, inner.cx, inner.cy, math.cos(p), math.sin(p))
        for p in phis
    ]
    start = float(phis[int(np.argmax(gaps))]) + rng.uniform(-0.3, 0.3)
    placed: list[Disc] = []
    phi = start
    for radius in radii:
        for _ in range(40):
            disc = _annulus_disc(inner, outer, phi, radius)
            if disc is not None and all(
                math.hypot(disc.x - d.x, disc.y - d.y) > disc.radius + d.radius + 4 for d in placed
            ):
                placed.append(disc)
                break
            phi += 0.05
        else:
            return None
        phi += 0.05
    return tuple(placed)


def place_cumulus(rng, outer: Ellipse, avoid_phi: float) -> tuple[Disc, ...]:
    phi = avoid_phi + math.pi + rng.uniform(-0.6, 0.6)
    ux, uy = math.cos(phi), math.sin(phi)
    s_out = _ray_exit(outer, outer.cx, outer.cy, ux, uy)
    discs = []
    for _ in range(int(rng.integers(3, 6))):
        radius = rng.uniform(5.0, 9.0)
        along = s_out + radius + rng.uniform(1.0, 4.0)
        side = rng.uniform(-25.0, 25.0)
        discs.append(Disc(outer.cx + along * ux - side * uy, outer.cy + along * uy + side * ux, radius))
    return tuple(discs)


@dataclass
class OocyteSampler:
    """Random oocyte specifications.

    ``viable=None`` draws every parameter from its full range; ``True`` or
    ``False`` draws parameters so that the synthetic viability rule yields
    that label, keeping every deciding quantity away from its threshold.
    """

    major_range: tuple[float, float] = (80.0, 150.0)
    thickness_range: tuple[float, float] = (30.0, 38.0)
    max_offset: float = 15.0
    eccentricity_range: tuple[float, float] = (0.0, 0.6)
    polar_body_radius: tuple[float, float] = (13.5, 15.0)
    cumulus_probability: float = 0.3
    base_intensity: tuple[float, float] = (100.0, 120.0)
    granularity_range: tuple[float, float] = (0.0, 20.0)
    good_eccentricity: tuple[float, float] = (0.0, 0.3)
    bad_eccentricity: tuple[float, float] = (0.5, 0.65)
    good_granularity: tuple[float, float] = (0.0, 4.0)
    bad_granularity: tuple[float, float] = (12.0, 20.0)
    extra_fragment_probability: float = 0.3

    def sample(self, rng: np.random.Generator, center, viable: bool | None = None) -> OocyteSpec:
        for _ in range(100):
            spec = self._try(rng, center, viable)
            if spec is not None:
                return spec
        raise RuntimeError("could not place polar bodies; check the sampler ranges")

    def _decide(self, rng, viable):
        if viable is None:
            ecc = rng.uniform(*self.eccentricity_range)
            gran = rng.uniform(*self.granularity_range)
            n_pb = int(rng.integers(0, 3))
            return ecc, gran, n_pb
        bad = {"pb": False, "ecc": False, "gran": False}
        if not viable:
            while not any(bad.values()):
                bad = {k: bool(rng.random() < 0.5) for k in bad}
        ecc = rng.uniform(*(self.bad_eccentricity if bad["ecc"] else self.good_eccentricity))
        gran = rng.uniform(*(self.bad_granularity if bad["gran"] else self.good_granularity))
        n_pb = int(rng.choice([0, 2])) if bad["pb"] else 1
        return ecc, gran, n_pb

    def _try(self, rng, center, viable):
        ecc, gran, n_pb = self._decide(rng, viable)
        a = rng.uniform(*self.major_range)
        b = a * math.sqrt(1.0 - ecc * ecc)
        theta = rng.uniform(0.0, math.pi)
        thickness = rng.uniform(*self.thickness_range)
        offset = rng.uniform(0.0, self.max_offset)
        direction = rng.uniform(0.0, 2.0 * math.pi)
        cx, cy = center
        cyto = Ellipse(cx, cy, a, b, theta)
        zona = Ellipse(cx + offset * math.cos(direction), cy + offset * math.sin(direction),
                       a + thickness, b + thickness, theta)
        radii = [rng.uniform(*self.polar_body_radius) for _ in range(n_pb)]
        if n_pb == 0 and rng.random() < self.extra_fragment_probability:
            # sub-threshold fragment, must be suppressed by the feature stage
            radii = [rng.uniform(6.0, 9.0)]
        pbs = place_polar_bodies(rng, cyto, zona, radii)
        if pbs is None:
            return None
        cumulus = ()
        if rng.random() < self.cumulus_probability:
            anchor = math.atan2(pbs[0].y - cy, pbs[0].x - cx) if pbs else direction
            cumulus = place_cumulus(rng, zona, anchor)
        return OocyteSpec(
            cytoplasm=cyto,
            zona=zona,
            polar_bodies=pbs,
            cumulus=cumulus,
            base_intensity=rng.uniform(*self.base_intensity),
            granularity=gran,
        )


def single_oocyte_scene(seed: int, size: int = 448, sampler: OocyteSampler | None = None,
                        viable: bool | None = None, noise_sigma: float = 2.0) -> SceneSpec:
    """A square frame holding one oocyte near its center."""
    rng = make_rng(derive_seed(seed, "single"))
    sampler = sampler or OocyteSampler()
    center = (size / 2 + rng.uniform(-4, 4), size / 2 + rng.uniform(-4, 4))
    return SceneSpec(size, size, (sampler.sample(rng, center, viable),), noise_sigma, seed)


# 4 x 2 grid of cells on the canonical frame; at most one oocyte per cell
GRID_COLUMNS, GRID_ROWS = 4, 2
FRAME_SAMPLER = OocyteSampler(major_range=(80.0, 115.0), thickness_range=(30.0, 36.0),
                              max_offset=10.0)


def frame_scene(seed: int, n_oocytes: int | None = None, viable: list[bool] | None = None,
                sampler: OocyteSampler | None = None, noise_sigma: float = 2.0,
                width: int = FRAME_WIDTH, height: int = FRAME_HEIGHT) -> SceneSpec:
    """A full frame with 1 to 7 separated oocytes.

    ``viable`` optionally fixes the label of each oocyte (its length then
    fixes the count).
    """
    rng = make_rng(derive_seed(seed, "frame"))
    sampler = sampler or FRAME_SAMPLER
    if viable is not None:
        n_oocytes = len(viable)
    if n_oocytes is None:
        n_oocytes = int(rng.integers(1, 8))
    if not 0 <= n_oocytes < GRID_COLUMNS * GRID_ROWS:
        raise ValueError(f"a frame holds 0..{GRID_COLUMNS * GRID_ROWS - 1} oocytes")
    cw, ch = width / GRID_COLUMNS, height / GRID_ROWS
    cells = sorted(rng.choice(GRID_COLUMNS * GRID_ROWS, size=n_oocytes, replace=False).tolist())
    oocytes = []
    for k, cell in enumerate(cells):
        row, col = divmod(cell, GRID_COLUMNS)
        center = ((col + 0.5) * cw + rng.uniform(-8, 8), (row + 0.5) * ch + rng.uniform(-8, 8))
        oocytes.append(sampler.sample(rng, center, None if viable is None else viable[k]))
    return SceneSpec(width, height, tuple(oocytes), noise_sigma, seed)


def dataset_scenes(n_oocytes: int, seed: int, balanced: bool = True) -> list[SceneSpec]:
    """Frames holding ``n_oocytes`` oocytes in total, 1-7 per frame.

    With ``balanced`` the labels alternate viable/nonviable in a seeded
    shuffle so both classes are equally represented.
    """
    rng = make_rng(derive_seed(seed, "dataset"))
    labels = None
    if balanced:
        labels = [k % 2 == 0 for k in range(n_oocytes)]
        rng.shuffle(labels)
    scenes = []
    used = 0
    while used < n_oocytes:
        k = min(int(rng.integers(1, 8)), n_oocytes - used)
        chunk = None if labels is None else labels[used:used + k]
        scenes.append(frame_scene(derive_seed(seed, "scene", len(scenes)), n_oocytes=k, viable=chunk))
        used += k
    return scenes
