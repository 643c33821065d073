"""Command-line entry point: generate / search / train / eval / report-params.

Configuration is one JSON file plus flag overrides (flags win); the resolved
config is echoed into the output directory so runs are reproducible from
their artifacts alone. All artifacts are written atomically (temp file +
rename) and are byte-identical across reruns with the same config and seed
at a fixed thread count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .circuits import (
    CandidateDescriptor,
    Entangler,
    Init,
    Rotation,
    candidate_index,
)
from .data import (
    FeatureDataset,
    generate_synthetic,
    load_embeddings,
    param_report,
    save_embeddings,
)
from .head import HeadConfig, HeadParams, forward_fixed, init_head_params
from .training import (
    TrainConfig,
    evaluate_splits,
    named_parameter_groups,
    run_fixed,
    run_search,
)

log = logging.getLogger("qdas")

ARCH_SCHEMA_VERSION = 1
PARAMS_SCHEMA_VERSION = 1

_HEAD_KEYS = {"n_qubits", "seq_len", "feat_dim", "n_classes", "qsvt_degree",
              "timestep_layers", "qff_layers", "dropout_rate"}
_TRAIN_KEYS = {"batch_size", "learning_rate", "weight_decay", "epochs",
               "warmup_epochs", "seed", "beta1", "beta2", "eps", "precision"}
_OTHER_KEYS = {"dataset_path", "synthetic", "threads"}
_SYNTH_KEYS = {"seed", "n_per_class", "separation"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated union of head + training configuration and the data source."""

    head: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    dataset_path: str | None = None
    synthetic: dict | None = None
    threads: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - _HEAD_KEYS - _TRAIN_KEYS - _OTHER_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        synthetic = raw.get("synthetic")
        if synthetic is not None:
            bad = set(synthetic) - _SYNTH_KEYS
            if bad:
                raise ConfigError(f"unknown synthetic keys: {sorted(bad)}")
            if synthetic.get("n_per_class", 1) < 1:
                raise ConfigError("synthetic.n_per_class must be >= 1")
            if synthetic.get("separation", 0.0) < 0:
                raise ConfigError("synthetic.separation must be >= 0")
        cfg = cls(
            head={k: raw[k] for k in _HEAD_KEYS if k in raw},
            train={k: raw[k] for k in _TRAIN_KEYS if k in raw},
            dataset_path=raw.get("dataset_path"),
            synthetic=synthetic,
            threads=int(raw.get("threads", 1)),
        )
        if cfg.threads < 1:
            raise ConfigError("threads must be >= 1")
        return cfg

    def head_config(self, dataset: FeatureDataset | None = None) -> HeadConfig:
        head = dict(self.head)
        if dataset is not None:
            for key, val in (("seq_len", dataset.seq_len),
                             ("feat_dim", dataset.feat_dim),
                             ("n_classes", dataset.n_classes)):
                if key in head and head[key] != val:
                    raise ConfigError(
                        f"config {key}={head[key]} contradicts dataset ({val})")
                head[key] = val
        try:
            return HeadConfig(**head)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def resolved(self) -> dict:
        out = {**self.head, **self.train, "threads": self.threads}
        if self.dataset_path is not None:
            out["dataset_path"] = self.dataset_path
        if self.synthetic is not None:
            out["synthetic"] = dict(self.synthetic)
        return out

    def run_id(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def load_run_config(args: argparse.Namespace) -> RunConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    if getattr(args, "dataset", None):
        raw["dataset_path"] = args.dataset
    cfg = RunConfig.from_dict(raw)
    torch.set_num_threads(cfg.threads)
    return cfg


def resolve_dataset(cfg: RunConfig, out_dir: Path | None = None) -> FeatureDataset:
    """Dataset from `dataset_path` if given; otherwise generated from the
    synthetic spec (head keys supply the dimensions)."""
    if cfg.dataset_path:
        return load_embeddings(cfg.dataset_path)
    if cfg.synthetic is None:
        raise ConfigError("config needs either dataset_path or a synthetic block")
    head = cfg.head_config()
    spec = cfg.synthetic
    return generate_synthetic(
        seed=int(spec.get("seed", cfg.train.get("seed", 0))),
        n_per_class=int(spec.get("n_per_class", 100)),
        seq_len=head.seq_len, feat_dim=head.feat_dim, n_classes=head.n_classes,
        separation=float(spec.get("separation", 1.0)),
    )


# ---------------------------------------------------------------------------
# Atomic artifact writers
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def write_trajectory_csv(path: Path, trajectory) -> None:
    lines = ["epoch,block,candidate_index,weight"]
    for epoch, w_ts, w_qff in trajectory:
        for block, weights in (("timestep", w_ts), ("qff", w_qff)):
            for i, w in enumerate(weights):
                lines.append(f"{epoch},{block},{i},{w:.6f}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------------------
# Architecture / parameter serialization
# ---------------------------------------------------------------------------

def architecture_to_dict(arch: tuple[CandidateDescriptor, CandidateDescriptor],
                         weights: tuple[float, float], run_id: str) -> dict:
    blocks = []
    for name, desc, weight in (("timestep", arch[0], weights[0]),
                               ("qff", arch[1], weights[1])):
        blocks.append({
            "block": name,
            "candidate_index": candidate_index(desc),
            "init": desc.init.value,
            "entangler": desc.entangler.value,
            "rotation": desc.rotation.value,
            "layers": desc.layers,
            "weight": weight,
        })
    return {"schema_version": ARCH_SCHEMA_VERSION, "source_run_id": run_id,
            "blocks": blocks}


def _parse_enum(enum_cls, value, field_name: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = [e.value for e in enum_cls]
        raise ConfigError(
            f"architecture field '{field_name}' has invalid value {value!r}; "
            f"expected one of {choices}") from None


def architecture_from_dict(doc: dict) -> tuple[CandidateDescriptor, CandidateDescriptor]:
    if doc.get("schema_version") != ARCH_SCHEMA_VERSION:
        raise ConfigError(f"unsupported architecture schema_version "
                          f"{doc.get('schema_version')!r}")
    blocks = doc.get("blocks")
    if not isinstance(blocks, list) or len(blocks) != 2:
        raise ConfigError("architecture file must carry exactly 2 blocks")
    by_name = {}
    for entry in blocks:
        name = entry.get("block")
        if name not in ("timestep", "qff"):
            raise ConfigError(f"architecture field 'block' has invalid value {name!r}")
        layers = entry.get("layers")
        if not isinstance(layers, int) or layers < 1:
            raise ConfigError(f"architecture field 'layers' must be a positive int, "
                              f"got {layers!r}")
        desc = CandidateDescriptor(
            init=_parse_enum(Init, entry.get("init"), "init"),
            entangler=_parse_enum(Entangler, entry.get("entangler"), "entangler"),
            rotation=_parse_enum(Rotation, entry.get("rotation"), "rotation"),
            layers=layers,
        )
        idx = entry.get("candidate_index")
        if idx is not None and idx != candidate_index(desc):
            raise ConfigError(f"architecture field 'candidate_index' ({idx}) does not "
                              f"match the descriptor (expected {candidate_index(desc)})")
        by_name[name] = desc
    if set(by_name) != {"timestep", "qff"}:
        raise ConfigError("architecture file needs one 'timestep' and one 'qff' block")
    return by_name["timestep"], by_name["qff"]


def params_to_dict(params: HeadParams, head_cfg: HeadConfig) -> dict:
    groups = {g.name: g.tensor.detach().numpy().tolist()
              for g in named_parameter_groups(params)}
    return {
        "schema_version": PARAMS_SCHEMA_VERSION,
        "head_config": asdict(head_cfg),
        "precision": "float32" if params.real_dtype == torch.float32 else "float64",
        "groups": groups,
    }


def params_from_dict(doc: dict, head_cfg: HeadConfig,
                     arch: tuple[CandidateDescriptor, CandidateDescriptor]) -> HeadParams:
    if doc.get("schema_version") != PARAMS_SCHEMA_VERSION:
        raise ConfigError(f"unsupported params schema_version {doc.get('schema_version')!r}")
    dtype = torch.float32 if doc.get("precision") == "float32" else torch.float64
    params = init_head_params(head_cfg, [arch[1]], seed=0, dtype=dtype)
    groups = named_parameter_groups(params)
    stored = doc.get("groups", {})
    for g in groups:
        if g.name not in stored:
            raise ConfigError(f"params file is missing group '{g.name}'")
        tensor = torch.as_tensor(stored[g.name], dtype=dtype)
        if tensor.shape != g.tensor.shape:
            raise ConfigError(f"params group '{g.name}' shaped {tuple(tensor.shape)}, "
                              f"expected {tuple(g.tensor.shape)}")
        with torch.no_grad():
            g.tensor.copy_(tensor)
    return params


def metrics_to_dict(metrics) -> dict:
    return {split: report.as_dict() for split, report in metrics.items()}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_run_config(args)
    if cfg.synthetic is None:
        raise ConfigError("generate needs a synthetic block in the config")
    out_dir = Path(args.out)
    dataset = resolve_dataset(RunConfig(cfg.head, cfg.train, None, cfg.synthetic,
                                        cfg.threads))
    path = Path(cfg.dataset_path) if cfg.dataset_path else out_dir / "dataset.qdvr"
    out_dir.mkdir(parents=True, exist_ok=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        save_embeddings(tmp, dataset)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    write_json(out_dir / "config-echo.json", cfg.resolved())
    counts = np.bincount(dataset.labels, minlength=dataset.n_classes).tolist()
    print(f"wrote {path}: {dataset.n_samples} samples, seq_len={dataset.seq_len}, "
          f"feat_dim={dataset.feat_dim}, classes={dataset.n_classes}, "
          f"per-class counts={counts}")
    return 0


def cmd_search(args) -> int:
    cfg = load_run_config(args)
    out_dir = Path(args.out)
    dataset = resolve_dataset(cfg)
    head_cfg = cfg.head_config(dataset)
    train_cfg = cfg.train_config()
    result = run_search(dataset, train_cfg, head_cfg)

    run_id = cfg.run_id()
    w, v = result.state.sw.block_weights()
    arch = result.architecture
    arch_doc = architecture_to_dict(
        arch, (float(w[candidate_index(arch[0])]), float(v[candidate_index(arch[1])])),
        run_id)
    write_json(out_dir / "architecture.json", arch_doc)
    write_trajectory_csv(out_dir / "trajectory.csv", result.state.trajectory)
    write_json(out_dir / "metrics.json", metrics_to_dict(result.retrained.metrics))
    write_json(out_dir / "params.json",
               params_to_dict(result.retrained.params, head_cfg))
    write_json(out_dir / "config-echo.json", cfg.resolved())
    print(f"search done: timestep={arch[0].entangler.value}/{arch[0].rotation.value} "
          f"qff={arch[1].entangler.value}/{arch[1].rotation.value}; "
          f"retrained test accuracy "
          f"{result.retrained.metrics['test'].accuracy:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    out_dir = Path(args.out)
    with open(args.arch) as fh:
        arch = architecture_from_dict(json.load(fh))
    dataset = resolve_dataset(cfg)
    head_cfg = cfg.head_config(dataset)
    if arch[0].layers != head_cfg.timestep_layers or arch[1].layers != head_cfg.qff_layers:
        head_cfg = HeadConfig(**{**asdict(head_cfg),
                                 "timestep_layers": arch[0].layers,
                                 "qff_layers": arch[1].layers})
    result = run_fixed(dataset, arch, cfg.train_config(), head_cfg)
    write_json(out_dir / "metrics.json", metrics_to_dict(result.metrics))
    write_json(out_dir / "params.json", params_to_dict(result.params, head_cfg))
    write_json(out_dir / "config-echo.json", cfg.resolved())
    print(f"train done: test accuracy {result.metrics['test'].accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args)
    out_dir = Path(args.out)
    with open(args.arch) as fh:
        arch = architecture_from_dict(json.load(fh))
    if not Path(args.params).exists():
        raise FileNotFoundError(f"params artifact {args.params} does not exist")
    dataset = resolve_dataset(cfg)
    head_cfg = cfg.head_config(dataset)
    if arch[0].layers != head_cfg.timestep_layers or arch[1].layers != head_cfg.qff_layers:
        head_cfg = HeadConfig(**{**asdict(head_cfg),
                                 "timestep_layers": arch[0].layers,
                                 "qff_layers": arch[1].layers})
    with open(args.params) as fh:
        params = params_from_dict(json.load(fh), head_cfg, arch)
    forward = lambda xb: forward_fixed(xb, arch, params, head_cfg)
    metrics = evaluate_splits(forward, dataset, params.real_dtype)
    write_json(out_dir / "metrics.json", metrics_to_dict(metrics))
    print(f"eval done: test accuracy {metrics['test'].accuracy:.4f}")
    return 0


def cmd_report_params(args) -> int:
    cfg = load_run_config(args)
    arch = None
    if args.arch:
        with open(args.arch) as fh:
            arch = architecture_from_dict(json.load(fh))
    head_cfg = cfg.head_config()
    report = param_report(head_cfg, arch)
    print(report.format_table())
    if args.out:
        write_json(Path(args.out) / "params_report.json", report.as_dict())
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdas",
        description="Differentiable quantum readout head with factorized "
                    "architecture search")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", required=needs_out, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="torch CPU threads (default 1, for reproducibility)")
        p.add_argument("--dataset", help="QDVR dataset path (overrides config)")

    p = sub.add_parser("generate", help="write a synthetic QDVR dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("search", help="run the architecture search end to end")
    common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train a fixed architecture")
    common(p)
    p.add_argument("--arch", required=True, help="architecture.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained parameters")
    common(p)
    p.add_argument("--arch", required=True, help="architecture.json")
    p.add_argument("--params", required=True, help="params.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report-params", help="print the parameter breakdown")
    common(p, needs_out=False)
    p.add_argument("--arch", help="optional architecture.json (fixed mode)")
    p.set_defaults(func=cmd_report_params)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports all failures
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
