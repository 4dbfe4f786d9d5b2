"""Minimal MRC2014 reader/writer for float32 images, stacks and volumes."""
import numpy as np

from .errors import InvalidArgument

HEADER_DTYPE = np.dtype([
    ("nx", "<i4"), ("ny", "<i4"), ("nz", "<i4"),
    ("mode", "<i4"),
    ("nxstart", "<i4"), ("nystart", "<i4"), ("nzstart", "<i4"),
    ("mx", "<i4"), ("my", "<i4"), ("mz", "<i4"),
    ("cella", "<f4", 3),
    ("cellb", "<f4", 3),
    ("mapc", "<i4"), ("mapr", "<i4"), ("maps", "<i4"),
    ("dmin", "<f4"), ("dmax", "<f4"), ("dmean", "<f4"),
    ("ispg", "<i4"),
    ("nsymbt", "<i4"),
    ("extra1", "V8"),
    ("exttyp", "S4"),
    ("nversion", "<i4"),
    ("extra2", "V84"),
    ("origin", "<f4", 3),
    ("map", "S4"),
    ("machst", "u1", 4),
    ("rms", "<f4"),
    ("nlabl", "<i4"),
    ("label", "S80", 10),
])
assert HEADER_DTYPE.itemsize == 1024

MACHINE_STAMP = (0x44, 0x44, 0x00, 0x00)


def write_mrc(path, data, pixel_size=1.0, volume=None, label="cryorient"):
    """Write a 2D image, an image stack ``(N, ny, nx)`` or a volume as mode 2.

    ``volume`` controls the space group field (1 for volumes, 0 for stacks);
    by default 3D input is treated as a volume.
    """
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidArgument(f"MRC data must be 2D or 3D, got shape {arr.shape}")
    if volume is None:
        volume = True
    nz, ny, nx = arr.shape
    h = np.zeros((), dtype=HEADER_DTYPE)
    h["nx"], h["ny"], h["nz"] = nx, ny, nz
    h["mode"] = 2
    h["mx"], h["my"], h["mz"] = nx, ny, (nz if volume else 1)
    h["cella"] = (nx * pixel_size, ny * pixel_size, (nz if volume else 1) * pixel_size)
    h["cellb"] = (90.0, 90.0, 90.0)
    h["mapc"], h["mapr"], h["maps"] = 1, 2, 3
    h["dmin"], h["dmax"], h["dmean"] = arr.min(), arr.max(), arr.mean(dtype=np.float64)
    h["rms"] = arr.std(dtype=np.float64)
    h["ispg"] = 1 if volume else 0
    h["exttyp"] = b"MRCO"
    h["nversion"] = 20140
    h["map"] = b"MAP "
    h["machst"] = MACHINE_STAMP
    h["nlabl"] = 1
    h["label"][0] = label.encode("ascii")[:80]
    with open(path, "wb") as fh:
        fh.write(h.tobytes())
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_mrc(path):
    """Return ``(data, pixel_size)``; data is ``(nz, ny, nx)`` float32 (a 2D image keeps nz=1)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 1024:
        raise InvalidArgument(f"{path}: truncated MRC header")
    h = np.frombuffer(raw[:1024], dtype=HEADER_DTYPE)[0]
    if h["map"] != b"MAP ":
        raise InvalidArgument(f"{path}: missing MAP identifier")
    if h["mode"] != 2:
        raise InvalidArgument(f"{path}: only mode 2 (float32) is supported, got {h['mode']}")
    nx, ny, nz = int(h["nx"]), int(h["ny"]), int(h["nz"])
    offset = 1024 + int(h["nsymbt"])
    data = np.frombuffer(raw[offset:offset + 4 * nx * ny * nz], dtype="<f4").reshape(nz, ny, nx)
    mx = int(h["mx"]) or nx
    pixel_size = float(h["cella"][0]) / mx if mx else 1.0
    return data.copy(), pixel_size
