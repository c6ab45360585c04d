"""File formats: binary PLY clouds, PFM float images, PNGs, and TOML configs.

Everything round-trips bit-exactly: PLY and PFM writers emit little-endian
IEEE floats with no lossy conversion, and the TOML subset writer is
deterministic (insertion order, repr-based floats).
"""

from __future__ import annotations

import io
import numpy as np
from PIL import Image

from .errors import FormatError
from .gaussians import GaussianCloud

# -- PLY ------------------------------------------------------------------------

_PLY_TYPES = {np.dtype(np.float32): "float", np.dtype(np.float64): "double"}
_PLY_DTYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}


def _ply_property_names(sh_bands, embed_dim):
    names = ["x", "y", "z"]
    names += [f"rot_{i}" for i in range(4)]
    names += [f"log_scale_{i}" for i in range(3)]
    names += ["opacity_c", "opacity_t", "t_base"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (sh_bands - 1))]
    names += [f"embed_{i}" for i in range(embed_dim)]
    return names


def write_ply(path_or_buf, cloud: GaussianCloud) -> None:
    """Binary little-endian PLY with one vertex element per Gaussian."""
    dtype = cloud.mu.dtype
    if dtype not in _PLY_TYPES:
        raise FormatError(f"unsupported cloud dtype {dtype}")
    names = _ply_property_names(cloud.sh_bands, cloud.embed_dim)
    m = cloud.count
    columns = np.concatenate([
        cloud.mu,
        cloud.rot,
        cloud.log_scale,
        cloud.o_c[:, None], cloud.o_t[:, None], cloud.t_base[:, None],
        cloud.sh[:, :, 0],
        cloud.sh[:, :, 1:].reshape(m, -1),
        cloud.e_m,
    ], axis=1).astype(dtype, copy=False)

    header = ["ply", "format binary_little_endian 1.0",
              f"comment sh_degree {cloud.sh_degree}",
              f"comment embed_dim {cloud.embed_dim}",
              f"element vertex {m}"]
    header += [f"property {_PLY_TYPES[dtype]} {n}" for n in names]
    header.append("end_header")
    blob = ("\n".join(header) + "\n").encode("ascii") + np.ascontiguousarray(
        columns.astype(f"<f{dtype.itemsize}")).tobytes()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(blob)
    else:
        with open(path_or_buf, "wb") as fh:
            fh.write(blob)


def read_ply(path_or_buf) -> GaussianCloud:
    """Parse a cloud written by write_ply; errors name the missing piece."""
    if hasattr(path_or_buf, "read"):
        blob = path_or_buf.read()
    else:
        with open(path_or_buf, "rb") as fh:
            blob = fh.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file (missing magic or end_header)")
    header = blob[:end].decode("ascii").splitlines()
    data_start = end + len(b"end_header\n")

    count = None
    props: list[tuple[str, str]] = []
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise FormatError(f"unsupported PLY format {parts[1]}")
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise FormatError(f"unsupported element {parts[1]}")
            count = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[2], parts[1]))
    if count is None:
        raise FormatError("missing vertex element")

    names = [n for n, _ in props]
    types = {n: t for n, t in props}
    f_rest = sorted(int(n.split("_")[-1]) for n in names if n.startswith("f_rest_"))
    embeds = sorted(int(n.split("_")[-1]) for n in names if n.startswith("embed_"))
    sh_bands = 1 + (len(f_rest) // 3)
    embed_dim = len(embeds)
    sh_degree = int(round(np.sqrt(sh_bands))) - 1
    if (sh_degree + 1) ** 2 != sh_bands:
        raise FormatError(f"f_rest property count {len(f_rest)} is not 3*((deg+1)^2-1)")

    expected = _ply_property_names(sh_bands, embed_dim)
    for name in expected:
        if name not in types:
            raise FormatError(f"missing property {name}")
    if len(names) != len(expected):
        extra = set(names) - set(expected)
        raise FormatError(f"property count mismatch (unexpected: {sorted(extra)})")

    rec = np.dtype([(n, _PLY_DTYPES[types[n]]) for n in expected])
    need = count * rec.itemsize
    body = blob[data_start:]
    if len(body) < need:
        raise FormatError(
            f"truncated payload: expected {need} bytes, file ends at byte "
            f"{data_start + len(body)} of {data_start + need}")
    rows = np.frombuffer(body[:need], dtype=rec)

    def cols(prefix, n):
        return np.stack([rows[f"{prefix}_{i}"] for i in range(n)], axis=1)

    sh = np.zeros((count, 3, sh_bands), dtype=rows["x"].dtype)
    sh[:, :, 0] = cols("f_dc", 3)
    if sh_bands > 1:
        sh[:, :, 1:] = cols("f_rest", 3 * (sh_bands - 1)).reshape(count, 3, sh_bands - 1)
    return GaussianCloud(
        mu=np.stack([rows["x"], rows["y"], rows["z"]], axis=1),
        rot=cols("rot", 4),
        log_scale=cols("log_scale", 3),
        o_c=rows["opacity_c"].copy(),
        o_t=rows["opacity_t"].copy(),
        sh=sh,
        e_m=cols("embed", embed_dim) if embed_dim else np.zeros((count, 0), rows["x"].dtype),
        t_base=rows["t_base"].copy(),
        sh_degree=sh_degree,
        embed_dim=embed_dim,
    )


# -- PFM ------------------------------------------------------------------------


def write_pfm(path_or_buf, image) -> None:
    """Grayscale PFM: 'Pf', dims, scale -1.0, float32 rows bottom-to-top."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"PFM writer takes (H, W) images, got shape {img.shape}")
    img = img.astype(np.float32, copy=False)
    h, w = img.shape
    blob = f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + np.flipud(img).astype("<f4").tobytes()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(blob)
    else:
        with open(path_or_buf, "wb") as fh:
            fh.write(blob)


def read_pfm(path_or_buf) -> np.ndarray:
    """Read a grayscale little-endian PFM; NaNs pass through untouched."""
    if hasattr(path_or_buf, "read"):
        blob = path_or_buf.read()
    else:
        with open(path_or_buf, "rb") as fh:
            blob = fh.read()
    stream = io.BytesIO(blob)

    def token():
        # whitespace-delimited header token
        out = b""
        while True:
            ch = stream.read(1)
            if not ch:
                raise FormatError("unexpected end of PFM header")
            if ch.isspace():
                if out:
                    return out
                continue
            out += ch

    magic = token()
    if magic == b"PF":
        raise FormatError("color PFM ('PF') is unsupported; expected grayscale 'Pf'")
    if magic != b"Pf":
        raise FormatError(f"bad PFM magic {magic!r}")
    try:
        w, h = int(token()), int(token())
        scale = float(token())
    except ValueError as exc:
        raise FormatError(f"malformed PFM header: {exc}") from exc
    if scale > 0:
        raise FormatError("big-endian PFM (positive scale) is unsupported")
    if scale == 0:
        raise FormatError("PFM scale must be nonzero")
    offset = stream.tell()
    need = w * h * 4
    body = blob[offset:]
    if len(body) < need:
        raise FormatError(
            f"truncated PFM payload: expected {need} bytes, got {len(body)} at byte {offset}")
    data = np.frombuffer(body[:need], dtype="<f4").reshape(h, w)
    return np.flipud(data).copy()


# -- PNG + thermal preview ---------------------------------------------------------


def save_png(path, image01) -> None:
    """8-bit PNG from a float image in [0, 1]; (H, W) or (H, W, 3)."""
    arr = np.clip(np.asarray(image01, dtype=float), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return arr


# Heat-style preview LUT: black -> purple -> red -> orange -> white, linearly
# interpolated over 256 entries. Fixed here so preview PNGs are deterministic;
# quantitative data lives only in the PFMs.
_LUT_STOPS = [(0.0, (0, 0, 0)), (0.25, (80, 0, 140)), (0.5, (230, 40, 20)),
              (0.75, (255, 170, 30)), (1.0, (255, 255, 255))]


def thermal_lut():
    xs = np.linspace(0.0, 1.0, 256)
    stops = np.array([s for s, _ in _LUT_STOPS])
    lut = np.stack([
        np.interp(xs, stops, [c[ch] for _, c in _LUT_STOPS]) for ch in range(3)
    ], axis=1)
    return np.round(lut).astype(np.uint8)


def save_thermal_preview(path, image01) -> None:
    """Colormapped 8-bit preview of a normalized thermal image."""
    idx = np.round(np.clip(np.asarray(image01, dtype=float), 0.0, 1.0) * 255.0).astype(int)
    Image.fromarray(thermal_lut()[idx]).save(path, format="PNG")


# -- TOML subset -------------------------------------------------------------------
# Flat sections of scalar keys cover every config in this package; values are
# strings, booleans, integers, floats, or homogeneous lists thereof.


def dump_toml(tree: dict) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        raise FormatError(f"cannot serialize {type(v).__name__} to TOML")

    lines = []
    sections = []
    for key, value in tree.items():
        if isinstance(value, dict):
            sections.append((key, value))
        else:
            lines.append(f"{key} = {fmt(value)}")
    for name, body in sections:
        lines.append("")
        lines.append(f"[{name}]")
        for key, value in body.items():
            if isinstance(value, dict):
                raise FormatError("TOML dump supports one level of sections")
            lines.append(f"{key} = {fmt(value)}")
    return "\n".join(lines) + "\n"


def _parse_value(text):
    text = text.strip()
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise FormatError(f"unterminated string: {text}")
        return text[1:-1].replace('\\"', '"').replace("\\\\", "\\")
    if text == "true":
        return True
    if text == "false":
        return False
    if text.startswith("["):
        if not text.endswith("]"):
            raise FormatError(f"unterminated list: {text}")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(part) for part in inner.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError as exc:
        raise FormatError(f"cannot parse TOML value: {text}") from exc


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"' and (i == 0 or line[i - 1] != "\\"):
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def parse_toml(text: str) -> dict:
    tree: dict = {}
    section = tree
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise FormatError(f"line {lineno}: malformed section header")
            name = line[1:-1].strip()
            section = tree.setdefault(name, {})
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        section[key.strip()] = _parse_value(value)
    return tree


def load_toml(path) -> dict:
    with open(path) as fh:
        return parse_toml(fh.read())


def save_toml(path, tree: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dump_toml(tree))
