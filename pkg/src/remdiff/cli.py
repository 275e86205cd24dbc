"""Operator entry point: dataset generation, training, sampling, evaluation,
and artifact inspection.

Configuration is a flat ``key = value`` text file validated against a typed
per-subcommand schema (unknown keys are rejected before any work starts);
command-line flags override file values. Every run writes a ``run.json``
capturing the resolved configuration, seed, and content hashes of its inputs.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure,
5 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import errors
from .checkpoints import load_checkpoint, read_checkpoint_manifest
from .datasets import read_manifest
from .evaluation import EvalProtocol, evaluate_checkpoint
from .grids import TxCoordinate
from .network import DenoiserConfig
from .sampling import DDIM, DDPM_FULL, SampleRequest, sample, store_predicted
from .scene import SceneSpec, generate_dataset
from .schedule import build_schedule
from .training import TrainConfig, run_training

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_INCOMPATIBLE = 5

_DIVISIBILITY = 16  # denoiser pyramid depth constraint, surfaced early


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# subcommand -> {key: (type, default)}
SCHEMAS: dict[str, dict[str, tuple]] = {
    "gen-data": {
        "n": (int, 200),
        "size": (int, 64),
        "seed": (int, 0),
        "n_buildings": (int, 6),
        "building_min_side": (int, 4),
        "building_max_side": (int, 12),
        "pathloss_exponent": (float, 2.2),
        "reference_power": (float, 255.0),
        "penetration_loss": (float, 60.0),
        "noise_floor": (float, 10.0),
    },
    "train": {
        "iterations": (int, 2000),
        "batch_size": (int, 16),
        "lr_peak": (float, 1e-4),
        "lr_floor": (float, 1e-6),
        "warmup": (int, 500),
        "grad_clip": (float, 1.0),
        "weight_decay": (float, 1e-4),
        "val_period": (int, 200),
        "ckpt_period": (int, 500),
        "seed": (int, 0),
        "sigma": (float, 5.0),
        "train_fraction": (float, 0.9),
        "base_channels": (int, 64),
        "time_embed_dim": (int, 256),
        "groups": (int, 8),
        "heads": (int, 4),
        "T": (int, 1000),
        "beta_start": (float, 1e-4),
        "beta_end": (float, 0.02),
        "include_predicted": (_bool, False),
        "resume": (str, ""),
    },
    "sample": {
        "x": (float, None),
        "y": (float, None),
        "n": (int, 1),
        "sampler": (str, DDPM_FULL),
        "steps": (int, 50),
        "seed": (int, 0),
    },
    "eval": {
        "seed": (int, 0),
        "train_fraction": (float, 0.9),
        "sampler": (str, DDIM),
        "steps": (int, 50),
        "samples": (int, 1),
        "stability_samples": (int, 0),
    },
    "inspect": {},
}

_PATH_FLAGS = {
    "gen-data": [("--out", True, "dataset output root")],
    "train": [("--data", True, "dataset root"), ("--out", True, "run output dir")],
    "sample": [("--ckpt", True, "checkpoint dir"),
               ("--out", False, "predicted store root (default <ckpt>/predicted)")],
    "eval": [("--ckpt", True, "checkpoint dir"), ("--data", True, "dataset root"),
             ("--report", True, "report output dir"),
             ("--train-log", False, "training log to ingest into loss_curve.csv")],
    "inspect": [("--data", False, "dataset root"), ("--ckpt", False, "checkpoint dir")],
}


def parse_config_file(path: str | Path, schema: dict[str, tuple]) -> dict:
    """Parse a flat key = value document against the schema."""
    resolved = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise errors.ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in schema:
            raise errors.ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        caster = schema[key][0]
        try:
            resolved[key] = caster(value)
        except ValueError as exc:
            raise errors.ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return resolved


def resolve_config(subcommand: str, args: argparse.Namespace) -> dict:
    """defaults <- config file <- command-line flags."""
    schema = SCHEMAS[subcommand]
    resolved = {key: default for key, (_, default) in schema.items()}
    if getattr(args, "config", None):
        resolved.update(parse_config_file(args.config, schema))
    for key in schema:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            resolved[key] = flag_value
    missing = [k for k, v in resolved.items() if v is None]
    if missing:
        raise errors.ConfigError(f"missing required config values: {missing}")
    return resolved


def _hash_file(path: Path, digest: "hashlib._Hash") -> None:
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)


def content_hash(path: str | Path) -> str:
    """sha256 over a file, or over a directory's sorted file names + bytes."""
    path = Path(path)
    digest = hashlib.sha256()
    if path.is_file():
        _hash_file(path, digest)
    else:
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(child.relative_to(path)).encode())
            _hash_file(child, digest)
    return "sha256:" + digest.hexdigest()


def write_run_record(out_dir: Path, subcommand: str, resolved: dict,
                     inputs: dict[str, str], outputs: list[str]) -> None:
    record = {
        "subcommand": subcommand,
        "resolved_config": resolved,
        "seed": resolved.get("seed"),
        "inputs": {name: content_hash(p) for name, p in inputs.items()},
        "outputs": outputs,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(record, indent=2) + "\n")


def cmd_gen_data(args: argparse.Namespace) -> int:
    resolved = resolve_config("gen-data", args)
    size = resolved["size"]
    if size % _DIVISIBILITY:
        raise errors.ConfigError(
            f"size {size} not divisible by {_DIVISIBILITY}; the denoiser pyramid "
            "cannot process it")
    spec = SceneSpec(
        height=size, width=size, n_buildings=resolved["n_buildings"],
        building_min_side=resolved["building_min_side"],
        building_max_side=resolved["building_max_side"],
        pathloss_exponent=resolved["pathloss_exponent"],
        reference_power=resolved["reference_power"],
        penetration_loss=resolved["penetration_loss"],
        noise_floor=resolved["noise_floor"], seed=resolved["seed"])
    root = generate_dataset(spec, resolved["n"], args.out)
    manifest = read_manifest(root)
    write_run_record(Path(args.out), "gen-data", resolved, {}, [str(root)])
    print(json.dumps({"root": str(root), "records": resolved["n"],
                      **manifest.to_dict()}))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    resolved = resolve_config("train", args)
    manifest = read_manifest(args.data)
    config = TrainConfig(
        iterations=resolved["iterations"], batch_size=resolved["batch_size"],
        lr_peak=resolved["lr_peak"], lr_floor=resolved["lr_floor"],
        warmup=resolved["warmup"], grad_clip=resolved["grad_clip"],
        weight_decay=resolved["weight_decay"], val_period=resolved["val_period"],
        ckpt_period=resolved["ckpt_period"], seed=resolved["seed"],
        sigma=resolved["sigma"], train_fraction=resolved["train_fraction"])
    denoiser = DenoiserConfig(
        height=manifest.H, width=manifest.W,
        base_channels=resolved["base_channels"],
        time_embed_dim=resolved["time_embed_dim"], groups=resolved["groups"],
        heads=resolved["heads"], env_dim=manifest.P)
    schedule = build_schedule(resolved["T"], resolved["beta_start"],
                              resolved["beta_end"])
    best, log_path = run_training(
        args.data, config, args.out, denoiser_config=denoiser, schedule=schedule,
        resume_from=resolved["resume"] or None,
        include_predicted=resolved["include_predicted"])
    write_run_record(Path(args.out), "train", resolved,
                     {"data": args.data}, [str(best), str(log_path)])
    print(json.dumps({"best_checkpoint": str(best), "log": str(log_path)}))
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    resolved = resolve_config("sample", args)
    checkpoint = load_checkpoint(args.ckpt)
    req = SampleRequest(
        tx=TxCoordinate(resolved["x"], resolved["y"]), n_samples=resolved["n"],
        sampler_kind=resolved["sampler"], substeps=resolved["steps"],
        seed=resolved["seed"])
    records = sample(checkpoint, req)
    out_root = Path(args.out) if args.out else Path(args.ckpt) / "predicted"
    store_predicted(records, out_root)
    write_run_record(out_root, "sample", resolved, {"ckpt": args.ckpt},
                     [str(out_root / "maps" / f"{r.id}.png") for r in records])
    for rec in records:
        print(out_root / "maps" / f"{rec.id}.png")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    resolved = resolve_config("eval", args)
    checkpoint = load_checkpoint(args.ckpt)
    protocol = EvalProtocol(
        seed=resolved["seed"], train_fraction=resolved["train_fraction"],
        sampler_kind=resolved["sampler"], substeps=resolved["steps"],
        n_samples=resolved["samples"],
        stability_samples=resolved["stability_samples"])
    report, report_path = evaluate_checkpoint(
        checkpoint, args.data, protocol, args.report, train_log=args.train_log)
    write_run_record(Path(args.report), "eval", resolved,
                     {"ckpt": args.ckpt, "data": args.data}, [str(report_path)])
    print(json.dumps({"report": str(report_path),
                      "aggregates": report["aggregates"]}, sort_keys=True))
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    if not args.data and not args.ckpt:
        raise errors.ConfigError("inspect needs --data or --ckpt")
    out = {}
    if args.data:
        out["dataset"] = read_manifest(args.data).to_dict()
        meta = Path(args.data) / "metadata.jsonl"
        out["dataset"]["records"] = sum(
            1 for line in meta.read_text().splitlines() if line.strip())
    if args.ckpt:
        out["checkpoint"] = read_checkpoint_manifest(args.ckpt).to_dict()
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


_COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample,
             "eval": cmd_eval, "inspect": cmd_inspect}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remdiff",
        description="Coordinate-conditioned diffusion for radio environment maps")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        for flag, required, help_text in _PATH_FLAGS[name]:
            p.add_argument(flag, required=required, help=help_text)
        for key, (caster, default) in schema.items():
            # flags default to None so only explicitly-set ones override the file
            p.add_argument(f"--{key.replace('_', '-')}", type=caster, default=None,
                           dest=key.replace("-", "_"),
                           help=f"override {key} (default {default})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except (errors.ConfigError, errors.InvalidRange, errors.TxInsideBuilding,
            errors.DegenerateRange, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except errors.IncompatibleCheckpoint as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except errors.NonFiniteLoss as exc:
        print(f"numeric failure: {exc} (batch ids: {exc.batch_ids})", file=sys.stderr)
        return EXIT_NUMERIC
    except (errors.MissingMetadata, errors.CorruptImage, errors.DimensionMismatch,
            errors.DiskFull, errors.DuplicateId, errors.RemdiffError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
