"""Dataset loading, synthetic data, model files and PGM export."""

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ModelFileError, ParseError
from .model import MfaModel, PrecisionModel, sample

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MODEL_FORMAT_VERSION = 1
WEIGHT_SUM_TOL = 1e-12


@dataclass
class Dataset:
    data: np.ndarray
    labels: np.ndarray = None
    source_shape: tuple = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.data):
            raise ValueError(f"{len(self.labels)} labels for {len(self.data)} rows")

    def select_classes(self, classes):
        """Keep only rows whose label is in ``classes``."""
        if self.labels is None:
            raise ValueError("class filtering needs labels")
        keep = np.isin(self.labels, list(classes))
        return Dataset(self.data[keep], self.labels[keep], self.source_shape)


def _read_idx(path, magic, expected_dims):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ParseError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise ParseError(f"{path}: unexpected magic 0x{found:08x}, expected 0x{magic:08x}")
    header_len = 4 + 4 * expected_dims
    if len(raw) < header_len:
        raise ParseError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{expected_dims}I", raw[4:header_len])
    count = math.prod(dims)
    payload = len(raw) - header_len
    if payload != count:
        raise ParseError(f"{path}: header declares {count} bytes of data, file has {payload}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def load_idx(image_path, label_path=None):
    """Read an uncompressed IDX image file (and optional label file).

    Pixels are scaled to [0, 1] and each image flattened row-major.
    """
    images = _read_idx(image_path, IDX_IMAGES_MAGIC, 3)
    n, rows, cols = images.shape
    data = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = None
    if label_path is not None:
        labels = _read_idx(label_path, IDX_LABELS_MAGIC, 1).astype(np.int64)
        if len(labels) != n:
            raise ParseError(f"{n} images but {len(labels)} labels")
    return Dataset(data, labels, (rows, cols))


def write_idx(images, path, labels=None, label_path=None):
    """Write uint8 images (N, rows, cols) and optionally labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    if labels is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        with open(label_path, "wb") as fh:
            fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
            fh.write(labels.tobytes())


def load_csv(path, has_header=False):
    """Read a numeric CSV file.

    With a header whose last column is named ``label`` that column becomes
    the label vector.  Errors name the offending line.
    """
    rows = []
    labels = []
    width = None
    label_col = False
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            if has_header and width is None and lineno == 1:
                names = [c.strip() for c in record]
                label_col = names[-1].lower() == "label"
                width = len(names)
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(f"{path}: line {lineno} has {len(record)} fields, expected {width}")
            try:
                values = [float(cell) for cell in record]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if label_col:
                label = values.pop()
                if label != int(label):
                    raise ParseError(f"{path}: line {lineno}: non-integer label {label}")
                labels.append(int(label))
            rows.append(values)
    n_feat = (width or 0) - int(label_col)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), n_feat)
    return Dataset(data, np.array(labels, dtype=np.int64) if label_col else None)


def write_csv(path, data, labels=None):
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    d = data.shape[1]
    header = [f"x{j}" for j in range(d)] + (["label"] if labels is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, row in enumerate(data):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            writer.writerow(cells)


def synth_generate(true_model, n, seed):
    """Sample a labelled dataset from a known model."""
    x, labels = sample(true_model, n, seed)
    return Dataset(x, labels)


def _model_to_dict(model):
    k, d, m = model.dims
    doc = {"format_version": MODEL_FORMAT_VERSION, "dims": [k, d, m]}
    if isinstance(model, PrecisionModel):
        doc["parameterization"] = "precision"
        doc["constraint_params"] = {"m_min": model.m_min, "d_max": model.d_max}
        doc["components"] = [
            {"weight": float(model.weights[j]),
             "mean": model.means[j].tolist(),
             "sqrt_prec": model.sqrt_prec[j].tolist(),
             "prec_loading": model.prec_loading[j].tolist()}
            for j in range(k)
        ]
    else:
        doc["parameterization"] = "covariance"
        doc["psi_mode"] = model.psi_mode
        doc["components"] = [
            {"weight": float(model.weights[j]),
             "mean": model.means[j].tolist(),
             "loading": model.loadings[j].tolist(),
             "noise": model.noise[j].tolist()}
            for j in range(k)
        ]
    return doc


def save_model(model, path):
    """Write a model as versioned JSON.  Floats use Python's shortest
    round-trip repr, so a reload reproduces every bit."""
    with open(path, "w") as fh:
        json.dump(_model_to_dict(model), fh, indent=1)
        fh.write("\n")


def _array(values, shape, what):
    arr = np.array(values, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise ModelFileError(f"{what} has shape {arr.shape}, expected {shape}")
    return arr


def model_from_dict(doc):
    try:
        version = doc["format_version"]
        if version != MODEL_FORMAT_VERSION:
            raise ModelFileError(f"unsupported model format version {version}")
        k, d, m = (int(v) for v in doc["dims"])
        comps = doc["components"]
        if len(comps) != k:
            raise ModelFileError(f"{len(comps)} components listed, dims say {k}")
        weights = np.array([c["weight"] for c in comps], dtype=np.float64)
        means = _array([c["mean"] for c in comps], (k, d), "means")
        kind = doc["parameterization"]
        if kind == "covariance":
            model = MfaModel(weights, means,
                             _array([c["loading"] for c in comps], (k, d, m), "loadings"),
                             _array([c["noise"] for c in comps], (k, d), "noise"),
                             doc.get("psi_mode", "free"))
        elif kind == "precision":
            params = doc["constraint_params"]
            model = PrecisionModel(weights, means,
                                   _array([c["sqrt_prec"] for c in comps], (k, d), "sqrt_prec"),
                                   _array([c["prec_loading"] for c in comps], (k, d, m),
                                          "prec_loading"),
                                   params["m_min"], params["d_max"])
        else:
            raise ModelFileError(f"unknown parameterization {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ModelFileError(f"malformed model file: {exc!r}") from None
    try:
        model.check(weight_tol=WEIGHT_SUM_TOL)
    except ValueError as exc:
        raise ModelFileError(f"invariant violated: {exc}") from None
    return model


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not a model file ({exc})") from None
    return model_from_dict(doc)


def grid_shape(n):
    cols = max(1, math.ceil(math.sqrt(n)))
    return max(1, math.ceil(n / cols)), cols


def image_grid(rows, shape, value_range=(0.0, 1.0)):
    """Tile row vectors into a near-square uint8 image."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    r, c = shape
    if rows.shape[1] != r * c:
        raise ValueError(f"vectors have {rows.shape[1]} entries, shape {r}x{c} needs {r * c}")
    lo, hi = value_range
    if not hi > lo:
        raise ValueError("value range must have hi > lo")
    gr, gc = grid_shape(len(rows))
    canvas = np.zeros((gr * r, gc * c), dtype=np.uint8)
    scaled = np.clip((rows - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.rint(scaled * 255.0).astype(np.uint8)
    for i, tile in enumerate(pixels):
        y, x = divmod(i, gc)
        canvas[y * r:(y + 1) * r, x * c:(x + 1) * c] = tile.reshape(r, c)
    return canvas


def write_pgm(image, path):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def write_image_grid(rows, shape, path, value_range=(0.0, 1.0)):
    """Write row vectors as a tiled binary PGM (P5, maxval 255)."""
    write_pgm(image_grid(rows, shape, value_range), path)


def read_pgm(path):
    """Minimal reader for the P5 files written by :func:`write_pgm`."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ParseError(f"{path}: maxval {maxval} unsupported")
    pixels = parts[4] if len(parts) > 4 else b""
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)

