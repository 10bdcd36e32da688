"""Parameter files: JSON manifest plus little-endian float64 payload."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .network import DenoiserConfig, Params, flatten, layer_shapes, param_count, unflatten

FORMAT = "implantdiff-denoiser/1"


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def save_params(params: Params, cfg: DenoiserConfig, path, extra: dict | None = None) -> Path:
    header_path, payload_path = _paths(path)
    vec = flatten(params, cfg)
    if not np.all(np.isfinite(vec)):
        raise ValueError("refusing to save non-finite parameters")
    payload = vec.astype("<f8").tobytes()
    manifest = {
        "format": FORMAT,
        "config": cfg.to_dict(),
        "layers": [{"name": n, "shape": list(s)} for n, s in layer_shapes(cfg)],
        "param_count": param_count(cfg),
        "dtype": "float64",
        "byte_order": "little",
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        manifest.update(extra)
    payload_path.write_bytes(payload)
    header_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return header_path


def load_params(path) -> tuple[Params, DenoiserConfig, dict]:
    header_path, payload_path = _paths(path)
    if not header_path.exists() or not payload_path.exists():
        raise FileNotFoundError(f"model files not found for {header_path}")
    manifest = json.loads(header_path.read_text())
    cfg = DenoiserConfig.from_dict(manifest["config"])
    expected = [{"name": n, "shape": list(s)} for n, s in layer_shapes(cfg)]
    if manifest["layers"] != expected:
        raise ValueError("layer manifest does not match the recorded configuration")
    vec = np.frombuffer(payload_path.read_bytes(), dtype="<f8")
    if len(vec) != param_count(cfg):
        raise ValueError(f"payload holds {len(vec)} values, manifest needs {param_count(cfg)}")
    return unflatten(vec, cfg), cfg, manifest
