"""Dense-array bundles, stimulus files and the synthetic dataset generator.

A tensor bundle is a pair of files sharing a stem: ``<stem>.json`` holds the
header and ``<stem>.bin`` holds raw little-endian float64 values in row-major
order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import FormatError, SchemaError, SequenceError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_CATEGORIES = ("social", "physical")
DEFAULT_WINDOW_MS = 25
DEFAULT_N_WINDOWS = 20

_HEADER_DTYPES = {"f64": "<f8", "f32": "<f4"}


@dataclass(frozen=True)
class Tensor:
    """Row-major float64 array with an explicit shape.

    Values must be finite unless ``meta["masked"]`` is true, in which case NaN
    marks cells without a defined value.
    """

    data: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if not self.meta.get("masked") and not np.isfinite(arr).all():
            raise ValidationError("tensor contains non-finite values; flag it with meta['masked']")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class ResponseTensor:
    """Brain responses of shape ``(n_words, n_channels, n_windows)``."""

    data: np.ndarray
    window_ms: int = DEFAULT_WINDOW_MS
    window_offsets_ms: tuple[int, ...] | None = None

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValidationError(
                f"response tensor must be 3-D with non-empty axes, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError("response tensor contains non-finite values")
        if self.window_ms <= 0:
            raise ValidationError("window_ms must be positive")
        offsets = self.window_offsets_ms
        if offsets is None:
            offsets = tuple(int(i * self.window_ms) for i in range(arr.shape[2]))
        offsets = tuple(int(o) for o in offsets)
        if len(offsets) != arr.shape[2]:
            raise ValidationError("window_offsets_ms length must equal n_windows")
        if any(b - a != self.window_ms for a, b in zip(offsets, offsets[1:])):
            raise ValidationError("window offsets must increase in steps of window_ms")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "window_offsets_ms", offsets)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def n_words(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_windows(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Hidden states of one LM layer, shape ``(n_words, n_dims)``."""

    data: np.ndarray
    layer_id: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ValidationError(f"embedding matrix must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding matrix contains non-finite values")
        if self.layer_id < 0:
            raise ValidationError("layer_id must be >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n_words(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class WordEvent:
    index: int
    token: str
    onset_ms: int
    duration_ms: int
    sentence_id: int
    story_id: int = 0
    annotations: Mapping[str, bool] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "index": self.index,
            "token": self.token,
            "onset_ms": self.onset_ms,
            "duration_ms": self.duration_ms,
            "sentence_id": self.sentence_id,
            "story_id": self.story_id,
        }
        if self.annotations:
            out["annotations"] = dict(self.annotations)
        return out


@dataclass(frozen=True)
class StimulusSequence:
    words: tuple[WordEvent, ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        validate_stimulus(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def __getitem__(self, i):
        return self.words[i]

    @property
    def sentence_ids(self) -> np.ndarray:
        return np.array([w.sentence_id for w in self.words], dtype=np.int64)

    @property
    def tokens(self) -> list[str]:
        return [w.token for w in self.words]

    def category_mask(self, category: str) -> np.ndarray:
        return np.array([bool(w.annotations.get(category, False)) for w in self.words])

    def categories(self) -> list[str]:
        seen: dict[str, None] = {}
        for w in self.words:
            for key in w.annotations:
                seen.setdefault(key, None)
        return list(seen)


def validate_stimulus(words: Sequence[WordEvent]) -> None:
    """Raise :class:`SequenceError` on any ordering violation."""
    last_by_story: dict[int, tuple[int, int]] = {}
    for pos, w in enumerate(words):
        if w.index != pos:
            if w.index < pos:
                raise SequenceError(f"duplicate or out-of-order index {w.index} at position {pos}")
            raise SequenceError(f"missing index {pos} (found {w.index}); gap in word indices")
        if w.duration_ms <= 0:
            raise SequenceError(f"word {w.index}: duration_ms must be positive")
        prev = last_by_story.get(w.story_id)
        if prev is not None:
            onset, sentence = prev
            if w.onset_ms < onset:
                raise SequenceError(f"word {w.index}: onset_ms decreases within story {w.story_id}")
            if w.sentence_id < sentence:
                raise SequenceError(f"word {w.index}: sentence_id decreases within story {w.story_id}")
        last_by_story[w.story_id] = (w.onset_ms, w.sentence_id)


def _bundle_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def write_tensor(t: Tensor | np.ndarray, path, meta: Mapping | None = None) -> tuple[Path, Path]:
    """Write ``t`` as a header/binary bundle and return both paths."""
    if not isinstance(t, Tensor):
        t = Tensor(np.asarray(t), meta=dict(meta or {}))
    header_path, bin_path = _bundle_paths(path)
    header = {
        "dtype": "f64",
        "order": "row-major",
        "endianness": "little",
        "shape": list(t.shape),
    }
    extra = dict(t.meta)
    if meta:
        extra.update(meta)
    if extra:
        header["meta"] = extra
    header_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(t.data.astype("<f8", copy=False).tobytes(order="C"))
    header_path.write_text(json.dumps(header, sort_keys=True) + "\n")
    return header_path, bin_path


def read_tensor(path) -> Tensor:
    header_path, bin_path = _bundle_paths(path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{header_path}: malformed header ({exc})") from exc
    dtype = header.get("dtype")
    if dtype not in _HEADER_DTYPES:
        raise FormatError(f"{header_path}: unsupported dtype {dtype!r}")
    if header.get("endianness", "little") != "little":
        raise FormatError(f"{header_path}: unsupported endianness {header.get('endianness')!r}")
    if header.get("order", "row-major") != "row-major":
        raise FormatError(f"{header_path}: unsupported order {header.get('order')!r}")
    shape = [int(s) for s in header["shape"]]
    if any(s < 0 for s in shape):
        raise FormatError(f"{header_path}: negative dimension in shape {shape}")
    raw = bin_path.read_bytes()
    width = np.dtype(_HEADER_DTYPES[dtype]).itemsize
    expected = width * math.prod(shape)
    if len(raw) != expected:
        raise FormatError(
            f"{bin_path}: expected {expected} bytes for shape {shape}, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=_HEADER_DTYPES[dtype]).astype(np.float64).reshape(shape)
    return Tensor(data, meta=header.get("meta", {}))


def write_responses(resp: ResponseTensor, path, meta: Mapping | None = None):
    extra = {"window_ms": resp.window_ms, "window_offsets_ms": list(resp.window_offsets_ms)}
    if meta:
        extra.update(meta)
    return write_tensor(Tensor(resp.data), path, meta=extra)


def read_responses(path) -> ResponseTensor:
    t = read_tensor(path)
    return ResponseTensor(
        t.data,
        window_ms=int(t.meta.get("window_ms", DEFAULT_WINDOW_MS)),
        window_offsets_ms=t.meta.get("window_offsets_ms"),
    )


def write_embeddings(emb: EmbeddingMatrix, path, meta: Mapping | None = None):
    extra = dict(emb.meta)
    extra["layer_id"] = emb.layer_id
    if meta:
        extra.update(meta)
    return write_tensor(Tensor(emb.data), path, meta=extra)


def read_embeddings(path, layer_id: int | None = None) -> EmbeddingMatrix:
    t = read_tensor(path)
    lid = layer_id if layer_id is not None else int(t.meta.get("layer_id", 0))
    return EmbeddingMatrix(t.data, layer_id=lid, meta=dict(t.meta))


_REQUIRED_KEYS = ("index", "token", "onset_ms", "duration_ms", "sentence_id", "story_id")


def load_stimulus(
    path,
    categories: Sequence[str] = DEFAULT_CATEGORIES,
    allow_extra_categories: bool = False,
) -> StimulusSequence:
    """Read a newline-delimited JSON stimulus file."""
    words = []
    allowed = set(categories)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            missing = [k for k in _REQUIRED_KEYS if k not in rec]
            if missing:
                raise SchemaError(f"line {lineno}: missing keys {missing}")
            ann = rec.get("annotations") or {}
            unknown = sorted(set(ann) - allowed)
            if unknown and not allow_extra_categories:
                raise SchemaError(f"line {lineno}: unknown annotation categories {unknown}")
            words.append(
                WordEvent(
                    index=int(rec["index"]),
                    token=str(rec["token"]),
                    onset_ms=int(rec["onset_ms"]),
                    duration_ms=int(rec["duration_ms"]),
                    sentence_id=int(rec["sentence_id"]),
                    story_id=int(rec["story_id"]),
                    annotations={k: bool(v) for k, v in ann.items()},
                )
            )
    return StimulusSequence(tuple(words))


def save_stimulus(stim: StimulusSequence, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for w in stim:
            fh.write(json.dumps(w.to_json(), sort_keys=True) + "\n")
    return path


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the planted linear dataset.

    Signal windows receive ``L @ W + b + noise``; every other window is pure
    noise. Each planted weight column is rescaled to norm
    ``signal_scale`` so the population correlation of a signal cell is
    ``signal_scale / sqrt(signal_scale**2 + noise_sigma**2)``.
    """

    n_words: int = 1000
    n_channels: int = 32
    n_windows: int = DEFAULT_N_WINDOWS
    n_dims: int = 16
    noise_sigma: float = 1.0
    signal_windows: tuple[int, ...] = (8, 9, 10, 11)
    seed: int = 0
    signal_scale: float = 2.0
    words_per_sentence: int = 10
    hard_sentences: tuple[int, ...] = ()
    hard_noise_sigma: float = 3.0
    n_subjects: int = 1
    window_ms: int = DEFAULT_WINDOW_MS

    def __post_init__(self):
        object.__setattr__(self, "signal_windows", tuple(int(w) for w in self.signal_windows))
        object.__setattr__(self, "hard_sentences", tuple(int(s) for s in self.hard_sentences))
        for name in ("n_words", "n_channels", "n_windows", "n_dims", "words_per_sentence",
                     "n_subjects", "window_ms"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        for name in ("noise_sigma", "signal_scale", "hard_noise_sigma"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        bad = [w for w in self.signal_windows if not 0 <= w < self.n_windows]
        if bad:
            raise ValidationError(f"signal_windows out of range [0, {self.n_windows}): {bad}")
        n_sent = math.ceil(self.n_words / self.words_per_sentence)
        bad = [s for s in self.hard_sentences if not 0 <= s < n_sent]
        if bad:
            raise ValidationError(f"hard_sentences out of range [0, {n_sent}): {bad}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown synth config field(s): {unknown}")
        return cls(**d)

    def expected_r(self, ground_truth: Tensor) -> np.ndarray:
        """Population correlation per ``(channel, window)`` for planted cells."""
        weights = ground_truth.data[:, 1:, :]  # (n_windows, n_dims, n_channels)
        norm = np.linalg.norm(weights, axis=1).T
        with np.errstate(invalid="ignore", divide="ignore"):
            return norm / np.sqrt(norm**2 + self.noise_sigma**2)


_VOCAB = ("the", "wand", "said", "Harry", "castle", "quickly", "broom", "and",
          "Neville", "looked", "at", "owl", "flew", "over", "a", "lake")


def synth_dataset(cfg: SynthConfig):
    """Generate ``(embeddings, responses, stimulus, ground_truth)``.

    ``ground_truth`` has shape ``(n_windows, n_dims + 1, n_channels)``: row 0
    of each window is the bias, rows ``1..n_dims`` are the planted weights
    (bias and weights are all zero outside ``signal_windows``). With ``n_subjects > 1`` the second
    element is a list of per-subject tensors sharing the same signal.
    """
    rng = np.random.default_rng(cfg.seed)
    n, c, t, d = cfg.n_words, cfg.n_channels, cfg.n_windows, cfg.n_dims
    L = rng.standard_normal((n, d))
    truth = np.zeros((t, d + 1, c))
    for w in cfg.signal_windows:
        truth[w, 0, :] = rng.standard_normal(c)
        W = rng.standard_normal((d, c))
        W *= cfg.signal_scale / np.linalg.norm(W, axis=0, keepdims=True)
        truth[w, 1:, :] = W
    signal = np.einsum("nd,tdc->nct", L, truth[:, 1:, :]) + truth[:, 0, :].T[None]

    sentence_of = np.arange(n) // cfg.words_per_sentence
    hard = np.isin(sentence_of, cfg.hard_sentences)

    subjects = []
    for _ in range(cfg.n_subjects):
        noise = rng.standard_normal((n, c, t)) * cfg.noise_sigma
        if hard.any():
            noise[hard] += rng.standard_normal((int(hard.sum()), c, t)) * cfg.hard_noise_sigma
        subjects.append(ResponseTensor(signal + noise, window_ms=cfg.window_ms))

    words = tuple(
        WordEvent(
            index=i,
            token=_VOCAB[i % len(_VOCAB)],
            onset_ms=i * 500,
            duration_ms=500,
            sentence_id=int(sentence_of[i]),
            story_id=0,
            annotations={},
        )
        for i in range(n)
    )
    emb = EmbeddingMatrix(L, layer_id=0, meta={"context_policy": "synthetic"})
    responses = subjects[0] if cfg.n_subjects == 1 else subjects
    return emb, responses, StimulusSequence(words), Tensor(truth)
