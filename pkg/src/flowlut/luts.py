"""Bank of differentiable 3D colour lookup tables.

Each LUT is a D x D x D lattice of RGB values; lattice point (i, j, k)
stores the transform of the normalised colour (i, j, k) / (D - 1).
Application is trilinear interpolation over the 8 surrounding lattice
points, differentiable with respect to the lattice entries, the blend
weights, and the input image. Banks initialise to eight analytic priors
(identity, gamma, warm, cool, saturation, brightness, S-curve, inversion)
and exchange with other tools through the Adobe ``.cube`` text format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CubeParseError, ShapeError, SizeError
from .tensor import Tensor, _record

__all__ = [
    "Lut3D",
    "LutBank",
    "PRIOR_NAMES",
    "init_specialized_luts",
    "identity_lattice",
    "trilinear_apply",
    "blend_apply",
    "export_cube",
    "import_cube",
]

PRIOR_NAMES = (
    "identity",
    "gamma",
    "warm",
    "cool",
    "saturation",
    "brightness",
    "s_curve",
    "inversion",
)


@dataclass
class Lut3D:
    """One trainable lattice. ``table`` has shape (D, D, D, 3), indexed
    (r_index, g_index, b_index, channel)."""

    size: int
    table: Tensor
    trainable: bool = True
    name: str = "lut"

    def __post_init__(self):
        d = self.size
        if self.table.data.shape != (d, d, d, 3):
            raise ShapeError(
                f"Lut3D: table must be {d}x{d}x{d}x3, got {tuple(self.table.data.shape)}"
            )


@dataclass
class LutBank:
    luts: list = field(default_factory=list)

    def __post_init__(self):
        sizes = {l.size for l in self.luts}
        if len(sizes) > 1:
            raise ShapeError(f"LutBank: member LUTs disagree on lattice size: {sorted(sizes)}")

    @property
    def num_luts(self):
        return len(self.luts)

    @property
    def size(self):
        return self.luts[0].size

    @property
    def names(self):
        return [l.name for l in self.luts]


def _unit_grid(d):
    """(D,D,D,3) float64 array of normalised lattice coordinates."""
    axis = np.arange(d, dtype=np.float64) / (d - 1)
    r, g, b = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([r, g, b], axis=-1)


def identity_lattice(d):
    return _unit_grid(d).astype(np.float32)


def _rgb_to_hsv(rgb):
    """Hexcone RGB->HSV on the last axis; max-channel ties resolved R > G > B."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = np.maximum(np.maximum(r, g), b)
    c = v - np.minimum(np.minimum(r, g), b)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.select(
        [r == v, g == v],
        [((g - b) / safe_c) % 6.0, (b - r) / safe_c + 2.0],
        default=(r - g) / safe_c + 4.0,
    )
    h = np.where(c > 0, h / 6.0, 0.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    return h, s, v


def _hsv_to_rgb(h, s, v):
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def _prior_lattices(d, gamma, temp_shift, sat_factor, brightness):
    p = _unit_grid(d)
    lattices = [p]                                  # identity
    lattices.append(p**gamma)                       # contrast via gamma
    warm = p.copy()
    warm[..., 0] += temp_shift
    warm[..., 2] -= temp_shift
    lattices.append(np.clip(warm, 0.0, 1.0))
    cool = p.copy()
    cool[..., 0] -= temp_shift
    cool[..., 2] += temp_shift
    lattices.append(np.clip(cool, 0.0, 1.0))
    h, s, v = _rgb_to_hsv(p)
    lattices.append(np.clip(_hsv_to_rgb(h, np.minimum(s * sat_factor, 1.0), v), 0.0, 1.0))
    lattices.append(np.clip(p + brightness, 0.0, 1.0))
    lattices.append(0.5 - 0.5 * np.cos(np.pi * p))  # sinusoidal S-curve
    lattices.append(1.0 - p)                        # inversion
    return lattices


def init_specialized_luts(n=8, d=33, *, gamma=0.75, temp_shift=0.1,
                          sat_factor=1.3, brightness=0.1, specialized=True):
    """Build a bank of `n` LUTs at lattice size `d`.

    The first eight follow the analytic priors in PRIOR_NAMES order; any
    further LUTs (and all of them when specialized=False) are identity.
    The prior constants are configurable; defaults are mild, monotone
    (except inversion) and [0,1]-preserving.
    """
    if d < 2:
        raise SizeError(f"lattice size must be >= 2, got {d}")
    if n < 1:
        raise SizeError(f"bank needs at least one LUT, got {n}")
    luts = []
    if specialized:
        lattices = _prior_lattices(d, gamma, temp_shift, sat_factor, brightness)
    else:
        lattices = []
    ident = _unit_grid(d)
    for i in range(n):
        if i < len(lattices):
            lat = lattices[i]
            name = PRIOR_NAMES[i]
        else:
            lat = ident
            name = "identity"
        luts.append(
            Lut3D(
                size=d,
                table=Tensor(lat.astype(np.float32), requires_grad=True, name=f"lut{i}"),
                name=name,
            )
        )
    return LutBank(luts=luts)


# --------------------------------------------------------------------------
# application

def _corner_data(image, d):
    """Clamp, scale and split pixel coordinates into cell indices + fractions.

    Returns (idx000 flat lattice index per pixel, fr, fg, fb, inside-mask).
    The cell index clamps to [0, D-2]; a coordinate of exactly 1 lands in
    the last cell with fraction 1.
    """
    p = image.reshape(3, -1)
    inside = (p >= 0.0) & (p <= 1.0)
    pc = np.clip(p, 0.0, 1.0) * np.float32(d - 1)
    i0 = np.minimum(pc.astype(np.int32), d - 2)
    f = pc - i0
    flat0 = (i0[0].astype(np.int64) * d + i0[1]) * d + i0[2]
    return flat0, f[0], f[1], f[2], inside


_CORNERS = [(dr, dg, db) for dr in (0, 1) for dg in (0, 1) for db in (0, 1)]


def _interp(flat_table, d, flat0, fr, fg, fb):
    """Trilinear blend; returns (npixels, 3) float32."""
    out = None
    for dr, dg, db in _CORNERS:
        w = (fr if dr else 1.0 - fr) * (fg if dg else 1.0 - fg) * (fb if db else 1.0 - fb)
        vals = flat_table[flat0 + (dr * d + dg) * d + db]
        term = vals * w[:, None]
        out = term if out is None else out + term
    return out


def _lattice_grad(gout_pix, d, flat0, fr, fg, fb):
    """Scatter pixel gradients back onto lattice entries (float64 bincount)."""
    size = d * d * d
    acc = np.zeros((size, 3), dtype=np.float64)
    for dr, dg, db in _CORNERS:
        w = (fr if dr else 1.0 - fr) * (fg if dg else 1.0 - fg) * (fb if db else 1.0 - fb)
        idx = flat0 + (dr * d + dg) * d + db
        for ch in range(3):
            acc[:, ch] += np.bincount(idx, weights=(w * gout_pix[:, ch]).astype(np.float64),
                                      minlength=size)
    return acc.astype(np.float32).reshape(d, d, d, 3)


def _image_grad(gout_pix, flat_table, d, flat0, fr, fg, fb, inside, shape):
    """Chain rule through the interpolation weights back to pixel coords."""
    npix = flat0.shape[0]
    gpix = np.zeros((3, npix), dtype=np.float32)
    wr = (np.float32(1.0) - fr, fr)
    wg = (np.float32(1.0) - fg, fg)
    wb = (np.float32(1.0) - fb, fb)
    sr = (np.float32(-1.0), np.float32(1.0))
    for dr, dg, db in _CORNERS:
        vals = flat_table[flat0 + (dr * d + dg) * d + db]
        dot = (vals * gout_pix).sum(axis=1)
        gpix[0] += sr[dr] * wg[dg] * wb[db] * dot
        gpix[1] += wr[dr] * sr[dg] * wb[db] * dot
        gpix[2] += wr[dr] * wg[dg] * sr[db] * dot
    gpix *= np.float32(d - 1)
    gpix *= inside
    return gpix.reshape(shape)


def trilinear_apply(lut, image):
    """Map a 3 x H x W image through one LUT.

    Inputs are clamped to [0,1] before lookup (refinement intermediates may
    exceed the range); the clamp contributes zero gradient outside [0,1].
    """
    img = image if isinstance(image, Tensor) else Tensor(image)
    if img.data.ndim != 3 or img.data.shape[0] != 3:
        raise ShapeError(f"trilinear_apply: image must be 3 x H x W, got {tuple(img.data.shape)}")
    d = lut.size
    table = lut.table
    flat_table = table.data.reshape(d * d * d, 3)
    flat0, fr, fg, fb, inside = _corner_data(img.data, d)
    pix = _interp(flat_table, d, flat0, fr, fg, fb)
    out = Tensor(pix.T.reshape(img.data.shape))
    shape = img.data.shape

    def build():
        def bwd(g):
            gp = g.reshape(3, -1).T
            g_img = _image_grad(gp, flat_table, d, flat0, fr, fg, fb, inside, shape)
            g_tab = _lattice_grad(gp, d, flat0, fr, fg, fb)
            return g_img, g_tab

        return bwd

    return _record("trilinear_apply", out, (img, table), build)


def blend_apply(bank, weights, image):
    """Weighted fusion of the whole bank: out = sum_i w_i * L_i(image).

    Implemented by blending the lattices first (interpolation is linear in
    the lattice values, so this is exact) and interpolating once, which
    keeps per-pixel cost independent of the bank size.
    """
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    img = image if isinstance(image, Tensor) else Tensor(image)
    n = bank.num_luts
    if w.data.shape != (n,):
        raise ShapeError(
            f"blend_apply: bank has {n} LUTs but weights have shape {tuple(w.data.shape)}"
        )
    if img.data.ndim != 3 or img.data.shape[0] != 3:
        raise ShapeError(f"blend_apply: image must be 3 x H x W, got {tuple(img.data.shape)}")
    d = bank.size
    tables = [l.table for l in bank.luts]
    blended = np.zeros((d, d, d, 3), dtype=np.float64)
    for wi, tab in zip(w.data, tables):
        blended += np.float64(wi) * tab.data
    flat_blend = blended.astype(np.float32).reshape(d * d * d, 3)
    flat0, fr, fg, fb, inside = _corner_data(img.data, d)
    pix = _interp(flat_blend, d, flat0, fr, fg, fb)
    out = Tensor(pix.T.reshape(img.data.shape))
    shape = img.data.shape

    def build():
        def bwd(g):
            gp = g.reshape(3, -1).T
            g_img = _image_grad(gp, flat_blend, d, flat0, fr, fg, fb, inside, shape)
            g_blend = _lattice_grad(gp, d, flat0, fr, fg, fb)
            gb64 = g_blend.astype(np.float64).reshape(-1)
            g_w = np.array(
                [np.dot(gb64, tab.data.astype(np.float64).reshape(-1)) for tab in tables],
                dtype=np.float32,
            )
            grads = [g_img, g_w]
            for wi in w.data:
                grads.append(g_blend * wi)
            return tuple(grads)

        return bwd

    return _record("blend_apply", out, (img, w, *tables), build)


# --------------------------------------------------------------------------
# .cube interchange

def export_cube(lut, path):
    """Write an Adobe-style .cube: `LUT_3D_SIZE D` then D^3 lines of three
    6-decimal floats, red index fastest, then green, then blue."""
    d = lut.size
    table = lut.table.data
    lines = [f"LUT_3D_SIZE {d}"]
    for b in range(d):
        for g in range(d):
            for r in range(d):
                v = table[r, g, b]
                lines.append(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def import_cube(path):
    """Parse a .cube written by export_cube; tolerates '#' comments and
    TITLE lines. Errors name the offending 1-based line number."""
    d = None
    entries = []
    data_line_for = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("TITLE"):
                continue
            if line.startswith("LUT_3D_SIZE"):
                parts = line.split()
                if len(parts) != 2:
                    raise CubeParseError("malformed LUT_3D_SIZE line", line=lineno)
                try:
                    d = int(parts[1])
                except ValueError:
                    raise CubeParseError(f"non-integer lattice size {parts[1]!r}", line=lineno)
                if d < 2:
                    raise CubeParseError(f"lattice size must be >= 2, got {d}", line=lineno)
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CubeParseError(
                    f"expected three values per data line, got {len(parts)}", line=lineno
                )
            try:
                entries.append([float(p) for p in parts])
            except ValueError:
                raise CubeParseError(f"non-numeric token in {line!r}", line=lineno)
            data_line_for.append(lineno)
    if d is None:
        raise CubeParseError("missing LUT_3D_SIZE header")
    if len(entries) != d**3:
        raise CubeParseError(
            f"expected D^3 = {d**3} entries for LUT_3D_SIZE {d}, found {len(entries)}"
        )
    table = np.empty((d, d, d, 3), dtype=np.float32)
    i = 0
    for b in range(d):
        for g in range(d):
            for r in range(d):
                table[r, g, b] = entries[i]
                i += 1
    return Lut3D(size=d, table=Tensor(table, requires_grad=True, name="imported"),
                 name="imported")
