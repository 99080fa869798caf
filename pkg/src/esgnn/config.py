"""Run configuration: one JSON document per experiment, with shipped presets."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .device import DeviceModel
from .energy import EnergyModel, GraphStats
from .exceptions import ConfigurationError, DataError
from .graphdata import build_features, cora_dataset, parse_tudataset, subsample
from .model import ESGNNEmbedder, EsgnnConfig
from .readout import GraphConvClassifier, LinearReadoutClassifier

CONFIG_VERSION = 1
DATA_ENV = "ESGNN_DATA_DIR"
PRESETS = ("mutag", "collab", "cora")
TOP_LEVEL = {
    "version", "name", "task", "dataset", "device", "esgnn", "noise", "readout",
    "eval", "energy", "grid", "output_dir", "export",
}


def load_preset(name):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("esgnn.presets").joinpath(f"{name}.json").read_text()
    return RunConfig.from_dict(json.loads(text), source=f"preset:{name}")


def load_config(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(d, source=str(path), base_dir=path.resolve().parent)


def data_roots(base_dir=None):
    """Directories searched for relative dataset paths, in order."""
    roots = []
    if base_dir is not None:
        roots.append(Path(base_dir))
    if os.environ.get(DATA_ENV):
        roots.append(Path(os.environ[DATA_ENV]))
    roots.append(Path.cwd() / "data")
    unique = []
    for r in roots:
        if r.resolve() not in [u.resolve() for u in unique]:
            unique.append(r)
    return unique


def resolve_path(p, base_dir=None):
    p = Path(p)
    if p.is_absolute():
        return p if p.exists() else None
    for root in data_roots(base_dir):
        if (root / p).exists():
            return root / p
    return None


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunConfig:
    """Validated experiment description; ``raw`` keeps the resolved JSON form."""

    raw: dict
    source: str = ""
    base_dir: Path | None = None
    overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, source="", base_dir=None):
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        if d.get("version") != CONFIG_VERSION:
            raise ConfigurationError(f"config version must be {CONFIG_VERSION}, got {d.get('version')!r}")
        unknown = set(d) - TOP_LEVEL
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(copy.deepcopy(d), source, base_dir)
        cfg.validate()
        return cfg

    def validate(self):
        if self.task not in ("graph", "node"):
            raise ConfigurationError(f"task must be 'graph' or 'node', got {self.task!r}")
        self.esgnn_config()
        self.device_model()
        self.energy_model()
        kind = self.readout_spec.get("kind")
        if (self.task, kind) not in (("graph", "linear"), ("node", "graphconv")):
            raise ConfigurationError(f"readout kind {kind!r} does not fit task {self.task!r}")
        self.make_readout()
        ev = self.eval_spec
        if not isinstance(ev.get("seed"), int):
            raise ConfigurationError("eval.seed must be an explicit integer seed")
        if self.task == "node" and len(ev.get("seeds", [])) < ev.get("trials", 1):
            raise ConfigurationError("eval.seeds must list one explicit seed per trial")

    # accessors -----------------------------------------------------------
    @property
    def name(self):
        return self.raw.get("name", "run")

    @property
    def task(self):
        return self.raw.get("task", "graph")

    @property
    def dataset_spec(self):
        return self.raw["dataset"]

    @property
    def readout_spec(self):
        return self.raw["readout"]

    @property
    def eval_spec(self):
        return self.raw.get("eval", {})

    @property
    def grid(self):
        return self.raw.get("grid", {})

    @property
    def noise(self):
        return bool(self.raw.get("noise", False))

    def device_model(self):
        return DeviceModel(**self.raw.get("device", {}))

    def esgnn_config(self):
        return EsgnnConfig.from_dict(self.raw["esgnn"])

    def energy_model(self):
        return EnergyModel.from_dict(self.raw.get("energy", {}))

    # overrides -----------------------------------------------------------
    def with_overrides(self, seed=None, trials=None, out=None):
        """Copy with CLI overrides applied; seeds stay explicit in the result."""
        raw = copy.deepcopy(self.raw)
        ev = raw.setdefault("eval", {})
        if seed is not None:
            ev["seed"] = int(seed)
            if "seeds" in ev:
                ev["seeds"] = [int(seed) + i for i in range(len(ev["seeds"]))]
        if trials is not None:
            ev["trials"] = int(trials)
            start = ev.get("seeds", [ev.get("seed", 0)])[0]
            ev["seeds"] = [start + i for i in range(int(trials))]
        if out is not None:
            raw["output_dir"] = str(out)
        cfg = RunConfig.from_dict(raw, self.source, self.base_dir)
        cfg.overrides = {"seed": seed, "trials": trials, "out": None if out is None else str(out)}
        return cfg

    # builders ------------------------------------------------------------
    def dataset_files(self):
        """Resolved input files; raises DataError when any is missing."""
        spec = self.dataset_spec
        fmt = spec.get("format", "tudataset")
        if fmt == "tudataset":
            directory = resolve_path(spec["path"], self.base_dir)
            if directory is None:
                raise DataError(
                    f"dataset directory {spec['path']!r} not found under {[str(r) for r in data_roots(self.base_dir)]}"
                    f"; set {DATA_ENV} to the folder holding it"
                )
            name = spec.get("name", Path(spec["path"]).name)
            return sorted(directory.glob(f"{name}_*.txt"))
        if fmt == "cora":
            files = []
            for key in ("content", "cites"):
                p = resolve_path(spec[key], self.base_dir)
                if p is None:
                    raise DataError(f"dataset file {spec[key]!r} not found; set {DATA_ENV}")
                files.append(p)
            return files
        raise ConfigurationError(f"unknown dataset format {fmt!r}")

    def load_dataset(self):
        spec = self.dataset_spec
        files = self.dataset_files()
        if spec.get("format", "tudataset") == "cora":
            ds = cora_dataset(files[0], files[1], name=spec.get("name", "cora"))
        else:
            directory = resolve_path(spec["path"], self.base_dir)
            ds = parse_tudataset(directory, spec.get("name", Path(spec["path"]).name))
        ds = build_features(ds, spec.get("recipe", "raw"))
        if spec.get("subsample") is not None:
            ds = subsample(ds, int(spec["subsample"]), seed=int(spec.get("subsample_seed", 0)))
        return ds

    def published_stats(self):
        """Size statistics for op counting when the dataset itself is unavailable."""
        p = self.dataset_spec.get("published_stats")
        if p is None:
            return None
        n_graphs = int(self.dataset_spec.get("subsample") or p["num_graphs"])
        return GraphStats(
            num_graphs=n_graphs,
            total_nodes=round(n_graphs * p["mean_nodes"]),
            total_messages=round(2 * n_graphs * p["mean_edges"]),
            feature_dim=int(p["feature_dim"]),
        )

    def make_embedder(self, allow_unstable=False, n_jobs=1, seed=0):
        c = self.esgnn_config()
        return ESGNNEmbedder(
            h=c.h,
            T=c.T,
            a=c.a,
            alpha_i=c.alpha_i,
            alpha_r=c.alpha_r,
            activation=c.activation,
            m_bits=c.quant.m_bits,
            x_max=c.quant.x_max,
            input_x_max=c.input_quant.x_max,
            v_read=c.quant.v_read,
            fused=c.fused,
            device=self.device_model(),
            array_seed=seed,
            noise_seed=seed if self.noise else None,
            allow_unstable=allow_unstable,
            level="graph" if self.task == "graph" else "node",
            n_jobs=n_jobs,
        )

    def make_readout(self):
        spec = dict(self.readout_spec)
        kind = spec.pop("kind")
        try:
            if kind == "linear":
                return LinearReadoutClassifier(**spec)
            return GraphConvClassifier(**spec)
        except TypeError as exc:
            raise ConfigurationError(f"readout: {exc}") from None

    def to_dict(self):
        return copy.deepcopy(self.raw)
