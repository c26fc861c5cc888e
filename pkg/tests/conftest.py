import numpy as np
import pytest

from mtfer.data import encode_labels, LabeledExample
from mtfer.model import conv, dense, FLATTEN, MAXPOOL, RELU, DROPOUT, ModelConfig
from mtfer.preprocess import write_pnm


def tiny_config(seed=0, dropout=0.0, dtype="float64"):
    """Small but structurally complete trunk: conv/pool/dense (+ optional dropout)."""
    blocks = (conv(4), RELU, MAXPOOL, conv(6), RELU, MAXPOOL, FLATTEN, dense(16), RELU)
    schedule = ()
    if dropout > 0:
        blocks = blocks + (DROPOUT,)
        schedule = (dropout,)
    return ModelConfig(blocks=blocks, dropout_schedule=schedule, seed=seed, dtype=dtype)


def random_example(rng, emotion=None, full=True):
    image = rng.uniform(0.0, 1.0, (50, 50, 1))
    e = int(rng.integers(0, 7)) if emotion is None else emotion
    if full:
        labels, mask = encode_labels(emotion=e, gender=e % 3, race=(e + 1) % 3, age=e % 5)
    else:
        labels, mask = encode_labels(emotion=e)
    return LabeledExample(image, labels, mask, source_id=f"ex{e}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def grad_check_error(analytic, numeric):
    """Max elementwise |ga - gn| / max(1, |ga| + |gn|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(a) + np.abs(n))
    return float(np.max(np.abs(a - n) / denom))


def central_diff(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. array x,
    perturbing x in place. Independent of any backward-pass code."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2.0 * eps)
    return g


def make_rafdb_fixture(root, rng, n=5, drop_landmark_for=None, size=(60, 56)):
    """Write a small RAF-DB style tree: images/, attrs/, emotion.txt, landmarks.csv.

    Returns dict of the four paths. Emotion codes cycle 1..7; attributes
    derive from the code so fixtures are self-consistent.
    """
    drop_landmark_for = drop_landmark_for or set()
    image_dir = root / "images"
    attr_dir = root / "attrs"
    image_dir.mkdir()
    attr_dir.mkdir()
    h, w = size
    lm_lines = ["filename,left_x,left_y,right_x,right_y"]
    em_lines = []
    for i in range(n):
        name = f"face{i:03d}.pgm"
        img = rng.integers(0, 256, (h, w)).astype(np.uint8)
        write_pnm(image_dir / name, img)
        code = (i % 7) + 1
        em_lines.append(f"{name} {code}")
        e = code - 1
        (attr_dir / f"face{i:03d}_attri.txt").write_text(
            f"{e % 3}\n{(e + 1) % 3}\n{e % 5}\n", encoding="utf-8")
        if name not in drop_landmark_for:
            lm_lines.append(f"{name},{10 + i},{20},{w - 12},{20 + i}")
    emotion_file = root / "emotion.txt"
    emotion_file.write_text("\n".join(em_lines) + "\n", encoding="utf-8")
    landmarks = root / "landmarks.csv"
    landmarks.write_text("\n".join(lm_lines) + "\n", encoding="utf-8")
    return {"image_dir": image_dir, "emotion_labels_file": emotion_file,
            "attribute_dir": attr_dir, "landmarks_file": landmarks}


def make_fer_csv(path, rows):
    """rows: list of (emotion_code, pixel_list_or_str, usage)."""
    lines = ["emotion,pixels,usage"]
    for code, pixels, usage in rows:
        if not isinstance(pixels, str):
            pixels = " ".join(str(int(p)) for p in pixels)
        lines.append(f'{code},"{pixels}",{usage}')
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
