"""On-disk dataset layout: ``index.json`` plus binary PPM images and PGM masks."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .imaging import SyntheticSpec, sobel_map, synth_pair


def _quantize(values: np.ndarray) -> np.ndarray:
    # round half up, as in round(255 v) for v >= 0
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _read_netpbm(path: Path, magic: bytes) -> tuple[np.ndarray, int, int]:
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != magic:
        raise InputError(f"{path}: expected {magic.decode()} file, found {fields[0]!r}")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit files are supported (maxval {maxval})")
    pos += 1  # single whitespace before raster
    return np.frombuffer(data, dtype=np.uint8, offset=pos), height, width


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    h, w = image.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + _quantize(image).tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    raw, h, w = _read_netpbm(Path(path), b"P6")
    return raw[: h * w * 3].reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path: str | os.PathLike, values: np.ndarray) -> None:
    h, w = values.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + _quantize(values).tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    raw, h, w = _read_netpbm(Path(path), b"P5")
    return raw[: h * w].reshape(h, w).astype(np.float64) / 255.0


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FOCUS_THREADS", "1")))
    except ValueError:
        return 1


def write_synthetic_dataset(out_dir: str | os.PathLike, spec: SyntheticSpec, count: int) -> list[dict]:
    """Synthesize ``count`` pairs into ``out_dir`` and write ``index.json``.

    Each pair contributes two index entries. The real entry points
    ``real_file`` at its own image; the fake entry points ``real_file`` at its
    pristine source, ``fake_file`` at itself and ``mask_file`` at the mask.
    """
    spec.validate()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)

    def make(index: int) -> list[dict]:
        real, fake = synth_pair(spec, index)
        real_file = f"images/{index:06d}_real.ppm"
        fake_file = f"images/{index:06d}_fake.ppm"
        mask_file = f"masks/{index:06d}.pgm"
        write_ppm(out / real_file, real.pixels)
        write_ppm(out / fake_file, fake.pixels)
        write_pgm(out / mask_file, fake.gt_mask.astype(float))
        return [
            {"id": real.id, "label": 0, "real_file": real_file, "fake_file": None, "mask_file": None},
            {"id": fake.id, "label": 1, "real_file": real_file, "fake_file": fake_file, "mask_file": mask_file},
        ]

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        entries = [e for pair in pool.map(make, range(count)) for e in pair]
    meta = {"spec": spec.__dict__, "count": count}
    (out / "synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    (out / "index.json").write_text(json.dumps(entries, indent=1))
    return entries


def pair_key(sample_id: str) -> str:
    return sample_id.rsplit("_", 1)[0]


@dataclass
class Dataset:
    """A dataset directory loaded into memory (pixels in [0, 1], H x W x 3)."""

    root: Path
    ids: list[str]
    labels: np.ndarray
    images: np.ndarray
    references: np.ndarray
    masks: list[np.ndarray | None]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    def sobel(self) -> np.ndarray:
        return np.stack([sobel_map(img) for img in self.images])

    def index_of(self, sample_id: str) -> int:
        return self.ids.index(sample_id)


def load_index(root: str | os.PathLike) -> list[dict]:
    path = Path(root) / "index.json"
    if not path.exists():
        raise InputError(f"no index.json in {root}")
    entries = json.loads(path.read_text())
    for e in entries:
        missing = {"id", "label", "real_file", "fake_file", "mask_file"} - e.keys()
        if missing:
            raise InputError(f"index entry {e.get('id')!r} lacks {sorted(missing)}")
    return entries


def load_dataset(root: str | os.PathLike) -> Dataset:
    root = Path(root)
    entries = load_index(root)
    images, refs, masks, labels = [], [], [], []
    for e in entries:
        ref = read_ppm(root / e["real_file"])
        img = read_ppm(root / e["fake_file"]) if e["label"] == 1 else ref
        images.append(img)
        refs.append(ref)
        masks.append(read_pgm(root / e["mask_file"]) > 0.5 if e.get("mask_file") else None)
        labels.append(int(e["label"]))
    return Dataset(
        root=root,
        ids=[e["id"] for e in entries],
        labels=np.asarray(labels, dtype=np.int64),
        images=np.stack(images),
        references=np.stack(refs),
        masks=masks,
    )
