"""File formats.

Point clouds
    Binary: 8-byte magic "LKPC0001", then one record per point of four
    little-endian float32 values (x, y, z, intensity). CSV: one
    "x,y,z,intensity" line per point. Readers sniff the magic.

Images
    Binary PPM (P6), maxval 255. Grayscale rasters are replicated to RGB
    on write; reads return (H, W, 3) float32 in [0, 1].

Labels
    One JSON object per line with fields "lanes" (per lane, one x per
    anchor row, -2 where the lane is absent), "h_samples", and
    "raw_file". Keys are written sorted; floats use repr round-tripping,
    so write -> read -> write is byte-identical.

Checkpoints
    Little-endian throughout. Corrector: magic "LKCM0001", ten uint32
    header fields (in_h, in_w, hidden1, hidden2, c_f, grid_h, grid_w,
    grid_n, img_h, img_w), one float32 (conf_thresh), uint64 parameter
    count, float32 parameters in the documented flat order. Projection
    head: magic "LKPH0001", uint32 c_f and embed dim, uint64 count,
    float32 parameters. Train state: magic "LKST0001", uint32 epoch,
    then online corrector, online head, target corrector, target head.
"""

import json
import struct

import numpy as np

from .detector import CorrectorConfig, CorrectorModel, GridConfig
from .errors import ConfigError, ShapeMismatch
from .labels import MISSING, RowAnchorLabel
from .slc import ProjectionHead, TrainState

MAGIC_CLOUD = b"LKPC0001"
MAGIC_MODEL = b"LKCM0001"
MAGIC_HEAD = b"LKPH0001"
MAGIC_STATE = b"LKST0001"


# -- point clouds ----------------------------------------------------------


def write_cloud(path, cloud, fmt="binary"):
    from .extraction import PointCloud  # local to avoid cycles at import time

    assert isinstance(cloud, PointCloud)
    rec = np.column_stack([cloud.xyz, cloud.intensity]).astype("<f4")
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(MAGIC_CLOUD)
            fh.write(rec.tobytes())
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            for row in rec:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")


def read_cloud(path):
    from .extraction import PointCloud

    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC_CLOUD))
        if head == MAGIC_CLOUD:
            data = np.frombuffer(fh.read(), dtype="<f4").reshape(-1, 4)
            return PointCloud(data[:, :3].astype(float), data[:, 3].astype(float))
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    data = np.asarray(rows, dtype=float).reshape(-1, 4)
    return PointCloud(data[:, :3], data[:, 3])


# -- PPM images ------------------------------------------------------------


def write_ppm(path, image):
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if img.shape[2] != 3:
        raise ShapeMismatch("image must have 1 or 3 channels")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise ShapeMismatch("not a P6 PPM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment line
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=pos)
    return (data.reshape(h, w, 3).astype(np.float32)) / float(maxval)


# -- row-anchor label files --------------------------------------------------


def _label_line(label, raw_file):
    lanes = []
    for x in label.xs:
        lanes.append([int(v) if v == MISSING else float(v) for v in x])
    obj = {
        "h_samples": [int(v) for v in label.h_samples],
        "lanes": lanes,
        "raw_file": raw_file,
    }
    return json.dumps(obj, sort_keys=True)


def write_labels_jsonl(path, labels, raw_files):
    with open(path, "w", encoding="utf-8") as fh:
        for label, raw in zip(labels, raw_files):
            fh.write(_label_line(label, raw) + "\n")


def read_labels_jsonl(path):
    labels, raw_files = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            xs = [np.asarray(lane, dtype=float) for lane in obj["lanes"]]
            labels.append(RowAnchorLabel(np.asarray(obj["h_samples"], dtype=int), xs))
            raw_files.append(obj.get("raw_file", ""))
    return labels, raw_files


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# -- checkpoints -------------------------------------------------------------


def _write_model(fh, model):
    cfg = model.cfg
    g = cfg.grid
    fh.write(MAGIC_MODEL)
    fh.write(
        struct.pack(
            "<10I",
            cfg.in_h,
            cfg.in_w,
            cfg.hidden1,
            cfg.hidden2,
            cfg.c_f,
            g.h,
            g.w,
            g.n,
            g.img_h,
            g.img_w,
        )
    )
    fh.write(struct.pack("<f", g.conf_thresh))
    params = model.get_params().astype("<f4")
    fh.write(struct.pack("<Q", params.size))
    fh.write(params.tobytes())


def _read_model(fh):
    if fh.read(len(MAGIC_MODEL)) != MAGIC_MODEL:
        raise ConfigError("bad corrector checkpoint magic")
    in_h, in_w, h1, h2, c_f, gh, gw, gn, img_h, img_w = struct.unpack("<10I", fh.read(40))
    (conf,) = struct.unpack("<f", fh.read(4))
    cfg = CorrectorConfig(
        in_w=in_w,
        in_h=in_h,
        hidden1=h1,
        hidden2=h2,
        c_f=c_f,
        grid=GridConfig(w=gw, h=gh, n=gn, img_w=img_w, img_h=img_h, conf_thresh=float(conf)),
    )
    (count,) = struct.unpack("<Q", fh.read(8))
    params = np.frombuffer(fh.read(count * 4), dtype="<f4").astype(float)
    model = CorrectorModel.zeros(cfg)
    model.set_params(params)
    return model


def _write_head(fh, head):
    fh.write(MAGIC_HEAD)
    c_f = head.w1.shape[0]
    d = head.w2.shape[0]
    params = head.get_params().astype("<f4")
    fh.write(struct.pack("<2I", c_f, d))
    fh.write(struct.pack("<Q", params.size))
    fh.write(params.tobytes())


def _read_head(fh):
    if fh.read(len(MAGIC_HEAD)) != MAGIC_HEAD:
        raise ConfigError("bad projection-head checkpoint magic")
    c_f, d = struct.unpack("<2I", fh.read(8))
    (count,) = struct.unpack("<Q", fh.read(8))
    params = np.frombuffer(fh.read(count * 4), dtype="<f4").astype(float)
    head = ProjectionHead(
        w1=np.zeros((c_f, c_f)), b1=np.zeros(c_f), w2=np.zeros((d, c_f)), b2=np.zeros(d)
    )
    head.set_params(params)
    return head


def save_model(path, model):
    with open(path, "wb") as fh:
        _write_model(fh, model)


def load_model(path):
    with open(path, "rb") as fh:
        return _read_model(fh)


def save_state(path, state):
    with open(path, "wb") as fh:
        fh.write(MAGIC_STATE)
        fh.write(struct.pack("<I", state.epoch))
        _write_model(fh, state.online)
        _write_head(fh, state.online_head)
        _write_model(fh, state.target)
        _write_head(fh, state.target_head)


def load_state(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC_STATE)) != MAGIC_STATE:
            raise ConfigError("bad train-state checkpoint magic")
        (epoch,) = struct.unpack("<I", fh.read(4))
        online = _read_model(fh)
        online_head = _read_head(fh)
        target = _read_model(fh)
        target_head = _read_head(fh)
    return TrainState(
        online=online,
        online_head=online_head,
        target=target,
        target_head=target_head,
        epoch=epoch,
    )
