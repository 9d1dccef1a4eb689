"""Model bundles: one JSON document holding networks, configs, seeds and logs.

Parameter arrays are stored as hex-encoded little-endian float64 blobs, so a
save/load round trip is bit-exact.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError
from .models import LatentPrior, MlpParams, MlpSpec, Net

FORMAT_NAME = "latent-reweighting-bundle"
FORMAT_VERSION = 1
NETWORK_ROLES = ("G", "D", "w", "ratio")


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": a.tobytes().hex()}


def decode_array(blob: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in blob["shape"])
        raw = bytes.fromhex(blob["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed array blob: {exc}") from exc
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise ConfigError(f"array blob has {len(raw)} bytes, shape {shape} needs {8 * int(np.prod(shape))}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def encode_net(net: Net) -> dict:
    return {
        "spec": net.spec.to_dict(),
        "layers": [{"W": encode_array(w), "b": encode_array(b)}
                   for w, b in zip(net.params.weights, net.params.biases)],
    }


def decode_net(d: dict) -> Net:
    try:
        spec = MlpSpec.from_dict(d["spec"])
        layers = d["layers"]
        params = MlpParams([decode_array(l["W"]) for l in layers], [decode_array(l["b"]) for l in layers])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed network entry: missing {exc}") from exc
    params.check(spec)
    return Net(spec, params)


def config_hash(configs: dict) -> str:
    """SHA-256 of the canonical JSON form of ``configs`` (first 16 hex digits)."""
    text = json.dumps(configs, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ModelBundle:
    prior: LatentPrior
    seed: int
    networks: Dict[str, Net] = field(default_factory=dict)
    configs: Dict[str, dict] = field(default_factory=dict)
    logs: Dict[str, list] = field(default_factory=dict)
    provenance: List[dict] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return config_hash({"prior": self.prior.to_dict(), "seed": self.seed, **self.configs})

    def net(self, role: str) -> Net:
        if role not in self.networks:
            raise ConfigError(f"bundle has no {role!r} network (stages so far: "
                              f"{[p['stage'] for p in self.provenance] or 'none'})")
        return self.networks[role]

    def has(self, role: str) -> bool:
        return role in self.networks

    def with_stage(self, stage: str, nets: Dict[str, Net], config: Optional[dict] = None,
                   log: Optional[list] = None, **info) -> "ModelBundle":
        """A new bundle extended by one stage; ``self`` is left untouched."""
        out = ModelBundle(self.prior, self.seed, dict(self.networks), copy.deepcopy(self.configs),
                          copy.deepcopy(self.logs), copy.deepcopy(self.provenance))
        for role, net in nets.items():
            if role not in NETWORK_ROLES:
                raise ConfigError(f"unknown network role {role!r}")
            out.networks[role] = net
        if config is not None:
            out.configs[stage] = config
        if log is not None:
            out.logs[stage] = log
        out.provenance.append({"stage": stage, "networks": sorted(nets), **info})
        return out

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "prior": self.prior.to_dict(),
            "configs": self.configs,
            "provenance": self.provenance,
            "networks": {role: encode_net(net) for role, net in sorted(self.networks.items())},
            "logs": self.logs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != FORMAT_NAME:
            raise ConfigError(f"not a model bundle (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported bundle version {d.get('version')!r}, expected {FORMAT_VERSION}")
        try:
            prior = LatentPrior(**d["prior"])
            nets = {role: decode_net(n) for role, n in d.get("networks", {}).items()}
            seed = int(d["seed"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed bundle: {exc}") from exc
        for role in nets:
            if role not in NETWORK_ROLES:
                raise ConfigError(f"unknown network role {role!r} in bundle")
        return cls(prior, seed, nets, d.get("configs", {}), d.get("logs", {}), d.get("provenance", []))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ModelBundle":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"bundle {path} does not exist") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
        return cls.from_dict(d)
