"""Dataset ingestion, label encoding, splitting, batching and the
preprocessed-example cache.

Two layouts are supported. The emotion-only CSV layout ("FER style": header
emotion,pixels,usage with 2304 space-separated 48x48 pixels per row) yields
examples whose gender/race/age masks are false. The directory layout ("RAF-DB
style": an emotion index file, per-image attribute files, PGM/PPM images and
a landmarks CSV) yields fully labeled examples run through the full
preprocessing pipeline.

Canonical label order is emotion, gender, race, age; emotion index 0 is
"surprise" (see heads.CLASS_NAMES). Emotion codes in FER-style CSVs follow
the common file convention (0=angry ... 6=neutral) and are remapped at
ingestion through an overridable table.
"""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    FormatError,
    IngestionError,
    LabelError,
    RangeError,
    RowError,
    SizeError,
)
from .heads import CLASS_NAMES, HEAD_ORDER, HEAD_SIZES
from .preprocess import (
    PreprocessConfig,
    normalize_pixels,
    preprocess_image,
    read_landmarks,
    read_pnm,
    resize_bilinear,
)
from .tensor import Rng, seeded_rng

CACHE_MAGIC = b"MTFERDS1"

# FER file convention (0=angry 1=disgust 2=fear 3=happy 4=sad 5=surprise
# 6=neutral) -> canonical emotion indices. Override per dataset release.
DEFAULT_FER_EMOTION_MAP = {0: 5, 1: 2, 2: 1, 3: 3, 4: 4, 5: 0, 6: 6}


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise LabelError(f"class index {index} outside [0, {size})")
    v = np.zeros(size, dtype=np.float64)
    v[index] = 1.0
    return v


def _class_index(head: str, value) -> int:
    """Accept an int index or a canonical class name."""
    if isinstance(value, str):
        try:
            return CLASS_NAMES[head].index(value)
        except ValueError:
            raise LabelError(f"unknown {head} class name {value!r}") from None
    idx = int(value)
    if not 0 <= idx < HEAD_SIZES[head]:
        raise LabelError(f"{head} index {idx} outside [0, {HEAD_SIZES[head]})")
    return idx


def encode_labels(emotion=None, gender=None, race=None, age=None):
    """Encode per-head classes into (labels, mask) dicts.

    emotion is mandatory; the optional heads may be class indices, class
    names, or None (absent). Present labels become exact one-hot vectors.
    """
    given = {"emotion": emotion, "gender": gender, "race": race, "age": age}
    labels, mask = {}, {}
    for head in HEAD_ORDER:
        v = given[head]
        if v is None:
            if head == "emotion":
                raise LabelError("emotion label is mandatory")
            labels[head] = None
            mask[head] = False
        else:
            labels[head] = one_hot(_class_index(head, v), HEAD_SIZES[head])
            mask[head] = True
    return labels, mask


@dataclass
class LabeledExample:
    image: np.ndarray          # (50, 50, 1) float64 in [0, 1]
    labels: dict               # head -> one-hot ndarray or None
    mask: dict                 # head -> bool
    source_id: str

    def label_index(self, head: str):
        return int(np.argmax(self.labels[head])) if self.mask[head] else None


@dataclass
class DatasetSplit:
    train: list
    validation: list
    seed: int


@dataclass
class Batch:
    images: np.ndarray         # (b, 50, 50, 1)
    labels: dict               # head -> (b, K); absent rows all-zero
    masks: dict                # head -> (b,) bool
    class_idx: dict            # head -> (b,) int, -1 where absent
    source_ids: list

    def __len__(self):
        return self.images.shape[0]


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def load_fer_csv(path, emotion_map=None, preprocess_cfg: PreprocessConfig = PreprocessConfig()):
    """Load an emotion-only CSV (columns emotion,pixels,usage).

    Each 48x48 pixel row is upscaled to 50x50 and normalized; gender, race
    and age are masked out. The file's emotion codes are remapped through
    emotion_map (default DEFAULT_FER_EMOTION_MAP).
    """
    emotion_map = DEFAULT_FER_EMOTION_MAP if emotion_map is None else emotion_map
    examples = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"emotion", "pixels"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise FormatError(f"{path}: CSV must have columns emotion,pixels,usage")
        for rownum, row in enumerate(reader, start=2):
            try:
                code = int(row["emotion"])
            except (TypeError, ValueError):
                raise RowError(f"{path}:{rownum}: non-integer emotion {row['emotion']!r}") from None
            if code not in emotion_map:
                raise LabelError(f"{path}:{rownum}: emotion code {code} outside the mapping table")
            pixels = row["pixels"].split()
            if len(pixels) != 48 * 48:
                raise RowError(f"{path}:{rownum}: expected {48*48} pixels, got {len(pixels)}")
            try:
                img = np.array([int(p) for p in pixels], dtype=np.int64)
            except ValueError:
                raise RowError(f"{path}:{rownum}: non-integer pixel value") from None
            if img.min() < 0 or img.max() > 255:
                raise RowError(f"{path}:{rownum}: pixel values outside 0..255")
            img = img.reshape(48, 48).astype(np.uint8)
            th, tw = preprocess_cfg.target_size
            tensor = normalize_pixels(resize_bilinear(img, th, tw))
            labels, mask = encode_labels(emotion=emotion_map[code])
            examples.append(LabeledExample(tensor, labels, mask, source_id=f"row{rownum}"))
    return examples


def load_rafdb(image_dir, emotion_labels_file, attribute_dir, landmarks_file,
               preprocess_cfg: PreprocessConfig = PreprocessConfig(),
               attr_suffix: str = "_attri.txt"):
    """Load a RAF-DB style directory.

    emotion_labels_file lines are ``<filename> <code 1-7>`` (codes map to the
    canonical emotion order as code-1); each image has an attribute file
    ``<stem><attr_suffix>`` under attribute_dir holding three integers on
    separate lines: gender (0-2), race (0-2), age group (0-4). Images missing
    a landmarks row are kept but not rotated.

    Returns (examples, skipped_rotations).
    """
    image_dir = Path(image_dir)
    attribute_dir = Path(attribute_dir)
    landmarks = read_landmarks(landmarks_file)
    examples = []
    skipped = 0
    with open(emotion_labels_file, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise RowError(f"{emotion_labels_file}:{lineno}: expected '<filename> <code>', got {line!r}")
            filename, code_str = parts
            try:
                code = int(code_str)
            except ValueError:
                raise RowError(f"{emotion_labels_file}:{lineno}: non-integer emotion code {code_str!r}") from None
            if not 1 <= code <= 7:
                raise LabelError(f"{emotion_labels_file}:{lineno}: emotion code {code} outside 1..7")

            img_path = image_dir / filename
            if not img_path.exists():
                raise IngestionError(f"image listed but missing: {img_path}")
            img = read_pnm(img_path)

            attr_path = attribute_dir / (Path(filename).stem + attr_suffix)
            if not attr_path.exists():
                raise IngestionError(f"attribute file missing: {attr_path}")
            fields = attr_path.read_text(encoding="utf-8").split()
            if len(fields) != 3:
                raise RowError(f"{attr_path}: expected 3 integers (gender race age), got {len(fields)}")
            try:
                gender, race, age = (int(v) for v in fields)
            except ValueError:
                raise RowError(f"{attr_path}: non-integer attribute") from None
            for head, v in (("gender", gender), ("race", race), ("age", age)):
                if not 0 <= v < HEAD_SIZES[head]:
                    raise LabelError(f"{attr_path}: {head} value {v} outside [0, {HEAD_SIZES[head]})")

            eyes = landmarks.get(filename)
            if eyes is None:
                skipped += 1
            tensor = preprocess_image(img, eyes, preprocess_cfg)
            labels, mask = encode_labels(emotion=code - 1, gender=gender, race=race, age=age)
            examples.append(LabeledExample(tensor, labels, mask, source_id=filename))
    if skipped:
        warnings.warn(f"{skipped} image(s) had no landmarks row; rotation skipped", stacklevel=2)
    return examples, skipped


# ---------------------------------------------------------------------------
# split / batches
# ---------------------------------------------------------------------------

def split(examples, ratio: float = 0.9, seed: int = 0) -> DatasetSplit:
    """Deterministic seeded shuffle, first floor(ratio * n) examples to train."""
    n = len(examples)
    if n < 2:
        raise SizeError(f"need at least 2 examples to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise RangeError(f"split ratio must be in (0, 1), got {ratio}")
    perm = seeded_rng(seed).permutation(n)
    n_train = math.floor(ratio * n)
    train = [examples[i] for i in perm[:n_train]]
    val = [examples[i] for i in perm[n_train:]]
    return DatasetSplit(train, val, seed)


def _stack_batch(batch_examples) -> Batch:
    b = len(batch_examples)
    images = np.stack([e.image for e in batch_examples]).astype(np.float64)
    labels, masks, class_idx = {}, {}, {}
    for head in HEAD_ORDER:
        k = HEAD_SIZES[head]
        lab = np.zeros((b, k), dtype=np.float64)
        msk = np.zeros(b, dtype=bool)
        idx = np.full(b, -1, dtype=np.int64)
        for i, e in enumerate(batch_examples):
            if e.mask[head]:
                lab[i] = e.labels[head]
                msk[i] = True
                idx[i] = int(np.argmax(e.labels[head]))
        labels[head] = lab
        masks[head] = msk
        class_idx[head] = idx
    return Batch(images, labels, masks, class_idx, [e.source_id for e in batch_examples])


def batches(examples, batch_size: int = 32, shuffle: bool = False, rng: Rng | None = None):
    """Partition examples into batches; the final partial batch is kept.

    With shuffle=True the order is a permutation drawn from rng; without, the
    source order is preserved. Every example appears exactly once.
    """
    if not examples:
        raise SizeError("cannot batch an empty example list")
    if batch_size < 1:
        raise RangeError(f"batch_size must be >= 1, got {batch_size}")
    order = list(range(len(examples)))
    if shuffle:
        if rng is None:
            raise RangeError("shuffle=True requires an rng")
        order = list(rng.permutation(len(examples)))
    out = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        out.append(_stack_batch(chunk))
    return out


# ---------------------------------------------------------------------------
# preprocessed cache (MTFERDS1)
# ---------------------------------------------------------------------------

def save_cache(path, examples) -> None:
    """Write the binary example cache.

    Layout: magic "MTFERDS1", u64 LE count, then per example: u16 LE length +
    UTF-8 source_id, 2500 float32 LE pixels, and for each head in canonical
    order a present flag (u8) and class index (u8).
    """
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<Q", len(examples)))
        for e in examples:
            sid = e.source_id.encode("utf-8")
            if len(sid) > 0xFFFF:
                raise RangeError(f"source_id too long to cache: {e.source_id[:40]}...")
            f.write(struct.pack("<H", len(sid)))
            f.write(sid)
            f.write(np.ascontiguousarray(e.image[:, :, 0], dtype="<f4").tobytes())
            for head in HEAD_ORDER:
                if e.mask[head]:
                    f.write(struct.pack("<BB", 1, int(np.argmax(e.labels[head]))))
                else:
                    f.write(struct.pack("<BB", 0, 0))


def load_cache(path):
    """Read a cache written by save_cache back into LabeledExamples."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CACHE_MAGIC:
        raise FormatError(f"{path}: not an example cache (bad magic)")
    pos = 8
    if len(blob) < pos + 8:
        raise CorruptionError(f"{path}: truncated count field")
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    examples = []
    for i in range(count):
        if len(blob) < pos + 2:
            raise CorruptionError(f"{path}: truncated at example {i}")
        (sid_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        need = sid_len + 2500 * 4 + 2 * len(HEAD_ORDER)
        if len(blob) < pos + need:
            raise CorruptionError(f"{path}: truncated at example {i}")
        sid = blob[pos:pos + sid_len].decode("utf-8")
        pos += sid_len
        pixels = np.frombuffer(blob, dtype="<f4", count=2500, offset=pos).astype(np.float64)
        pos += 2500 * 4
        image = pixels.reshape(50, 50)[:, :, None]
        kwargs = {}
        for head in HEAD_ORDER:
            present, idx = struct.unpack_from("<BB", blob, pos)
            pos += 2
            if present:
                kwargs[head] = int(idx)
        labels, mask = encode_labels(**kwargs)
        examples.append(LabeledExample(image, labels, mask, sid))
    if pos != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - pos} trailing bytes after {count} examples")
    return examples
