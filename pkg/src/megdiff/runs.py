"""Run configuration, content digests, resumable stages and the run manifest."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import __version__
from .encoding import EncodeConfig
from .exceptions import SchemaError, ValidationError
from .hypothesis.client import LlmEndpointConfig
from .hypothesis.pipeline import HypothesisConfig

logger = logging.getLogger(__name__)

_TOP_LEVEL = {
    "seed", "output_dir", "paths", "synth", "encode", "significance", "window_range", "top_n",
    "n_perm", "fdr_alpha", "hypothesis", "llm", "mock_llm", "denoise_lambda", "categories",
    "allow_extra_categories",
}
SIGNIFICANCE_DEFAULTS = {"alpha": 0.001, "method": "analytic-t", "n_perm": 1000,
                         "collapse_channels": False, "mse_cells": "significant"}


class ConfigError(ValidationError):
    """Configuration problem; the message names the offending field."""


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def bundle_files(stem) -> list[Path]:
    stem = Path(stem)
    return [stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".bin")]


@dataclass
class RunConfig:
    seed: int
    output_dir: Path
    embeddings: list[Path] = field(default_factory=list)
    responses: list[Path] = field(default_factory=list)
    stimulus: Path | None = None
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    significance: dict = field(default_factory=lambda: dict(SIGNIFICANCE_DEFAULTS))
    window_range: tuple[int, int] | None = None
    top_n: int = 100
    n_perm: int = 10000
    fdr_alpha: float = 0.05
    hypothesis_enabled: bool = False
    hypothesis: HypothesisConfig = field(default_factory=HypothesisConfig)
    llm: LlmEndpointConfig | str | None = "mock"
    mock_llm: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    denoise_lambda: float | None = None
    categories: tuple[str, ...] = ("social", "physical")
    allow_extra_categories: bool = False
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None, require_inputs: bool = True) -> "RunConfig":
        base = Path(base_dir or ".")
        unknown = sorted(set(d) - _TOP_LEVEL)
        if unknown:
            raise ConfigError(f"unknown config field(s): {unknown}")
        if "seed" not in d:
            raise ConfigError("config field 'seed' is required")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("config field 'seed' must be an integer")

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        paths = d.get("paths", {})
        if not isinstance(paths, dict):
            raise ConfigError("config field 'paths' must be an object")
        emb = paths.get("embeddings", [])
        emb = [emb] if isinstance(emb, str) else list(emb)
        resp = paths.get("responses", [])
        resp = [resp] if isinstance(resp, str) else list(resp)
        stim = paths.get("stimulus")
        cfg = cls(
            seed=d["seed"],
            output_dir=resolve(d.get("output_dir", "run")),
            embeddings=[resolve(p) for p in emb],
            responses=[resolve(p) for p in resp],
            stimulus=resolve(stim) if stim else None,
            window_range=tuple(d["window_range"]) if d.get("window_range") else None,
            top_n=int(d.get("top_n", 100)),
            n_perm=int(d.get("n_perm", 10000)),
            fdr_alpha=float(d.get("fdr_alpha", 0.05)),
            mock_llm=d.get("mock_llm", {}),
            synth=d.get("synth", {}),
            denoise_lambda=d.get("denoise_lambda"),
            categories=tuple(d.get("categories", ("social", "physical"))),
            allow_extra_categories=bool(d.get("allow_extra_categories", False)),
            raw=d,
        )
        try:
            cfg.encode = EncodeConfig.from_dict(d.get("encode", {}))
        except (ValidationError, TypeError) as exc:
            raise ConfigError(f"config field 'encode': {exc}") from exc
        sig = dict(SIGNIFICANCE_DEFAULTS)
        extra = sorted(set(d.get("significance", {})) - set(sig))
        if extra:
            raise ConfigError(f"config field 'significance': unknown key(s) {extra}")
        sig.update(d.get("significance", {}))
        if sig["mse_cells"] not in ("significant", "all"):
            raise ConfigError("config field 'significance.mse_cells' must be 'significant' or 'all'")
        cfg.significance = sig
        hyp = dict(d.get("hypothesis", {}))
        cfg.hypothesis_enabled = bool(hyp.pop("enabled", False))
        hyp.setdefault("seed", cfg.seed)
        try:
            cfg.hypothesis = HypothesisConfig.from_dict(hyp)
        except (ValidationError, TypeError) as exc:
            raise ConfigError(f"config field 'hypothesis': {exc}") from exc
        llm = d.get("llm", "mock")
        if isinstance(llm, dict):
            try:
                llm = LlmEndpointConfig.from_dict(llm)
            except (ValidationError, TypeError) as exc:
                raise ConfigError(f"config field 'llm': {exc}") from exc
        cfg.llm = llm
        if cfg.top_n < 1:
            raise ConfigError("config field 'top_n' must be >= 1")
        if cfg.n_perm < 1:
            raise ConfigError("config field 'n_perm' must be >= 1")
        if not 0 < cfg.fdr_alpha < 1:
            raise ConfigError("config field 'fdr_alpha' must lie in (0, 1)")
        if require_inputs:
            cfg.check_inputs()
        return cfg

    @classmethod
    def load(cls, path, require_inputs: bool = True) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(d, base_dir=path.parent, require_inputs=require_inputs)

    def check_inputs(self):
        for i, stem in enumerate(self.embeddings):
            for f in bundle_files(stem):
                if not f.exists():
                    raise ConfigError(f"config field 'paths.embeddings[{i}]': missing {f}")
        for i, stem in enumerate(self.responses):
            for f in bundle_files(stem):
                if not f.exists():
                    raise ConfigError(f"config field 'paths.responses[{i}]': missing {f}")
        if self.stimulus is not None and not self.stimulus.exists():
            raise ConfigError(f"config field 'paths.stimulus': missing {self.stimulus}")


class StageRunner:
    """Runs named stages, skipping those whose inputs and outputs are unchanged.

    A stage's key hashes its parameters and input digests. With ``resume`` a
    stage is skipped when its stored key matches and every recorded output
    still hashes to the recorded digest.
    """

    def __init__(self, out_dir: Path, resume: bool = False):
        self.out_dir = Path(out_dir)
        self.resume = resume
        self.records: dict[str, dict] = {}
        self.executed: list[str] = []
        self.skipped: list[str] = []
        (self.out_dir / "stages").mkdir(parents=True, exist_ok=True)

    def _record_path(self, name: str) -> Path:
        return self.out_dir / "stages" / f"{name}.json"

    def run(self, name: str, inputs: Iterable[Path], params: dict,
            fn: Callable[[], tuple[list[Path], dict]]) -> dict:
        inputs = sorted({Path(p) for p in inputs}, key=str)
        input_digests = {str(p): file_digest(p) for p in inputs}
        key = hashlib.sha256(
            json.dumps({"params": params, "inputs": input_digests}, sort_keys=True,
                       default=str).encode()
        ).hexdigest()
        rec_path = self._record_path(name)
        if self.resume and rec_path.exists():
            rec = json.loads(rec_path.read_text())
            if rec.get("key") == key and all(
                Path(p).exists() and file_digest(p) == dg for p, dg in rec["outputs"].items()
            ):
                logger.info("stage %s: inputs unchanged, skipping", name)
                rec["skipped"] = True
                self.records[name] = rec
                self.skipped.append(name)
                return rec
        started = time.time()
        outputs, info = fn()
        rec = {
            "stage": name,
            "key": key,
            "params": params,
            "inputs": input_digests,
            "outputs": {str(p): file_digest(p) for p in sorted(set(map(Path, outputs)), key=str)},
            "info": info,
            "started": started,
            "finished": time.time(),
            "skipped": False,
        }
        rec_path.write_text(json.dumps(rec, indent=2, sort_keys=True, default=str) + "\n")
        self.records[name] = rec
        self.executed.append(name)
        return rec


def write_manifest(out_dir: Path, config: dict, records: dict, status: str = "complete",
                   failed_stage: str | None = None, extra: dict | None = None) -> Path:
    manifest = {
        "tool": "megdiff",
        "version": __version__,
        "status": status,
        "failed_stage": failed_stage,
        "config": config,
        "stages": records,
        "written": time.time(),
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def verify_manifest(path) -> list[str]:
    """Return artifact paths whose current digest differs from the manifest."""
    manifest = json.loads(Path(path).read_text())
    bad = []
    for rec in manifest["stages"].values():
        for p, dg in rec["outputs"].items():
            if not Path(p).exists() or file_digest(p) != dg:
                bad.append(p)
    return bad


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
