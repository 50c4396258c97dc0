"""Command line: ``cmcnn {gen,train,ablate,eval,inspect}``.

Every run resolves its settings as dataclass defaults, then the flat YAML
file given by ``--config``, then explicit flags. The resolved settings are
written to ``resolved_config.yaml`` in the output directory before work
starts. Failures print one JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .bundle import MAGIC as BUNDLE_MAGIC
from .bundle import ModelBundle, TrainConfig
from .channel import ChannelParams
from .dataset import MAGIC as DATASET_MAGIC
from .dataset import FormatError, GenConfig, generate_dataset, peek_magic, read_dataset, write_dataset
from .evaluation import FingerprintMismatch, evaluate, export, merge_reports, with_gains
from .trainer import regime_splits, train, train_matrix

GEN_KEYS = [f.name for f in dataclasses.fields(GenConfig) if f.name != "channel"]
CHANNEL_KEYS = [f.name for f in dataclasses.fields(ChannelParams)]
TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig)]

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message, EXIT_USAGE)


def _grid(text) -> list[float]:
    """``"0:18:2"`` (inclusive) or ``"0,2,4"``."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text)
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise CLIError("config", f"SNR grid step must be positive in {text!r}")
        return [float(v) for v in np.arange(start, stop + step / 2, step)]
    return [float(v) for v in text.split(",") if v.strip()]


def _csv_list(text, cast=str) -> list:
    if isinstance(text, (list, tuple)):
        return [cast(v) for v in text]
    return [cast(v.strip()) for v in str(text).split(",") if v.strip()]


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CLIError("not_found", f"config file not found: {p}", path=str(p))
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise CLIError("config", f"{p}: expected a flat key: value document")
    for k, v in data.items():
        if isinstance(v, dict):
            raise CLIError("config", f"{p}: nested value under {k!r}; use dotted keys like channel.k_factor")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def _resolve(args, keys) -> dict:
    """Config-file values overridden by explicitly given flags."""
    out = {k: v for k, v in load_config(args.config).items()}
    for k in keys:
        v = getattr(args, k.replace(".", "__"), None)
        if v is not None:
            out[k] = v
    return out


def _channel(settings: dict) -> ChannelParams:
    ch = {k[len("channel."):]: v for k, v in settings.items() if k.startswith("channel.")}
    unknown = set(ch) - set(CHANNEL_KEYS)
    if unknown:
        raise CLIError("config", f"unknown channel keys: {sorted(unknown)}")
    return ChannelParams(**ch)


# "command" appears in resolved configs so they can be passed back through --config
ALL_KEYS = set(GEN_KEYS + TRAIN_KEYS + ["dataset", "out", "bundle", "format", "force", "seeds", "regimes", "command"])


def _check_keys(settings: dict):
    # one config file may serve several commands, so only keys no command knows are rejected
    unknown = sorted(k for k in settings if k not in ALL_KEYS and not k.startswith("channel."))
    if unknown:
        raise CLIError("config", f"unknown config keys: {unknown}")


def _gen_config(settings: dict) -> GenConfig:
    kw = {k: settings[k] for k in GEN_KEYS if k in settings}
    if "snr_grid" in kw:
        kw["snr_grid"] = _grid(kw["snr_grid"])
    if "schemes" in kw:
        kw["schemes"] = _csv_list(kw["schemes"])
    return GenConfig(channel=_channel(settings), **kw)


def _train_config(settings: dict) -> TrainConfig:
    kw = {k: settings[k] for k in TRAIN_KEYS if k in settings}
    if "fractions" in kw:
        kw["fractions"] = _csv_list(kw["fractions"], float)
    return TrainConfig(**kw)


def _out_dir(settings: dict) -> Path:
    if not settings.get("out"):
        raise CLIError("usage", "an output directory is required (--out)", EXIT_USAGE)
    out = Path(settings["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CLIError("io", f"cannot create output directory {out}: {e.strerror}", path=str(out)) from None
    return out


def _write_resolved(out: Path, command: str, resolved: dict):
    doc = {"command": command, **resolved}
    (out / "resolved_config.yaml").write_text(yaml.safe_dump(doc, sort_keys=True, default_flow_style=None))


def _log_to(out: Path):
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("cmcnn")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    return handler


def _require_file(path, what: str) -> Path:
    if not path:
        raise CLIError("usage", f"a {what} path is required", EXIT_USAGE)
    p = Path(path)
    if not p.is_file():
        raise CLIError("not_found", f"{what} not found: {p}", path=str(p))
    return p


def _load_dataset(path):
    p = _require_file(path, "dataset")
    try:
        return read_dataset(p)
    except FormatError as e:
        raise CLIError("integrity" if "hash" in str(e) or "footer" in str(e) else "format", str(e),
                       path=str(p)) from None


def _load_bundle(path) -> ModelBundle:
    p = _require_file(path, "bundle")
    try:
        return ModelBundle.load(p)
    except FormatError as e:
        raise CLIError("integrity" if "hash" in str(e) or "footer" in str(e) else "format", str(e),
                       path=str(p)) from None


def cmd_gen(args) -> int:
    settings = _resolve(args, GEN_KEYS + ["out"] + [f"channel.{k}" for k in CHANNEL_KEYS])
    if args.no_truth:
        settings["with_truth"] = False
    _check_keys(settings)
    cfg = _gen_config(settings)
    out = _out_dir(settings)
    gen = cfg.to_dict()
    flat = {f"channel.{k}": v for k, v in gen.pop("channel").items() if v is not None}
    _write_resolved(out, "gen", {"out": str(out), **gen, **flat})
    ds = generate_dataset(cfg)
    path = out / "dataset.cmds"
    fp = write_dataset(ds, path)
    print(json.dumps({"status": "ok", "dataset": str(path), "records": len(ds), "fingerprint": fp}))
    return 0


def cmd_train(args) -> int:
    settings = _resolve(args, TRAIN_KEYS + ["dataset", "out"])
    _check_keys(settings)
    cfg = _train_config(settings)
    ds = _load_dataset(settings.get("dataset"))
    out = _out_dir(settings)
    _write_resolved(out, "train", {"dataset": str(settings["dataset"]), "out": str(out), **cfg.to_dict()})
    handler = _log_to(out)
    try:
        bundle = train(cfg, ds.examples())
    finally:
        logging.getLogger("cmcnn").removeHandler(handler)
        handler.close()
    path = out / "bundle.cmmb"
    bundle.save(path)
    (out / "curves.json").write_text(json.dumps(bundle.curves, indent=1) + "\n")
    print(json.dumps({"status": "ok", "bundle": str(path), "val_accuracy": bundle.val_accuracy}))
    return 0


def cmd_ablate(args) -> int:
    keys = TRAIN_KEYS + ["dataset", "out", "seeds", "regimes"]
    settings = _resolve(args, keys)
    _check_keys(settings)
    seeds = _csv_list(settings.pop("seeds", "0,1,2"), int)
    regimes = _csv_list(settings.pop("regimes", None) or settings.get("regime", "non_negative"))
    cfg = _train_config(settings)
    ds = _load_dataset(settings.get("dataset"))
    out = _out_dir(settings)
    _write_resolved(out, "ablate", {"dataset": str(settings["dataset"]), "out": str(out), "seeds": seeds,
                                    "regimes": regimes, **cfg.to_dict()})
    handler = _log_to(out)
    try:
        res = train_matrix(cfg, ds.examples(), regimes=regimes, seeds=seeds)
    finally:
        logging.getLogger("cmcnn").removeHandler(handler)
        handler.close()
    for (abl, regime, seed), b in sorted(res.bundles.items()):
        b.save(out / f"bundle_{abl}_{regime}_s{seed}.cmmb")
    rows = [["ablation", "regime", "snr_db", "gain_mean", "gain_std"] + [f"gain_seed{s}" for s in seeds]]
    for (abl, regime), g in sorted(res.gains.items()):
        for i, snr in enumerate(g.snr_db):
            rows.append([abl, regime, repr(snr), repr(g.mean[i]), repr(g.std[i])]
                        + [repr(per[i]) for per in g.per_seed])
    (out / "gain_table.csv").write_text("\n".join(",".join(map(str, r)) for r in rows) + "\n")
    for regime in regimes:
        rep = res.reports[("both", regime, seeds[0])] if ("both", regime, seeds[0]) in res.reports else \
            res.reports[("none", regime, seeds[0])]
        for abl in ("freq_only", "phase_only", "both"):
            if (abl, regime) in res.gains:
                with_gains(rep, abl, res.gains[(abl, regime)])
        export(rep, out / f"report_{regime}", "csv")
        export(rep, out / f"report_{regime}", "json")
    print(json.dumps({"status": "ok", "bundles": len(res.bundles), "gain_table": str(out / "gain_table.csv")}))
    return 0


def cmd_eval(args) -> int:
    keys = ["dataset", "out", "bundle", "format", "force"]
    settings = _resolve(args, keys)
    _check_keys(settings)
    bundles = [_load_bundle(p) for p in _csv_list(settings.get("bundle", ""))] or [_load_bundle(None)]
    ds = _load_dataset(settings.get("dataset"))
    force = bool(settings.get("force", False))
    out = _out_dir(settings)
    fmt = settings.get("format", "both")
    _write_resolved(out, "eval", {"dataset": str(settings["dataset"]), "out": str(out), "force": force,
                                  "format": fmt, "bundle": _csv_list(settings["bundle"])})
    reports = []
    ex = ds.examples()
    for b in bundles:
        if not force and b.dataset_fingerprint != ds.fingerprint:
            raise CLIError("fingerprint_mismatch",
                           f"bundle was trained on dataset {b.dataset_fingerprint[:16]}, "
                           f"not {ds.fingerprint[:16]}; pass --force to evaluate anyway")
        _, _, test = regime_splits(b.config, ex)
        try:
            reports.append(evaluate(b, test, force=force))
        except FingerprintMismatch as e:
            raise CLIError("fingerprint_mismatch", str(e)) from None
    report = reports[0] if len(reports) == 1 else merge_reports(reports)
    formats = ["csv", "json"] if fmt == "both" else [fmt]
    for f in formats:
        export(report, out, f)
    print(json.dumps({"status": "ok", "overall_accuracy": report.overall_accuracy, "out": str(out)}))
    return 0


def _inspect_dataset(path: Path) -> list[str]:
    ds = _load_dataset(path)
    gen = ds.header["generation"]
    lines = [f"dataset {path}", f"  fingerprint {ds.fingerprint}",
             f"  records {len(ds)}  truth {'yes' if ds.truth is not None else 'no'}",
             f"  schemes {', '.join(gen['schemes'])}",
             f"  snr grid {gen['snr_grid']}",
             f"  master seed {gen['master_seed']}  distortion {gen['distortion']}",
             "  generation config " + json.dumps(gen, sort_keys=True),
             "  per-cell counts and mean power:"]
    power = np.mean(np.abs(ds.iq) ** 2, axis=1)
    for name in ds.class_names:
        lab = ds.class_names.index(name)
        for snr in sorted(set(ds.snr_db.tolist())):
            m = (ds.labels == lab) & (ds.snr_db == snr)
            if m.any():
                lines.append(f"    {name:6s} {snr:+6.1f} dB  n={int(m.sum()):5d}  power={power[m].mean():.4f}")
    return lines


def _inspect_bundle(path: Path) -> list[str]:
    b = _load_bundle(path)
    lines = [f"bundle {path}", f"  format {b.format_version}",
             f"  config {json.dumps(b.config.to_dict(), sort_keys=True)}",
             f"  dataset fingerprint {b.dataset_fingerprint}",
             f"  val accuracy {b.val_accuracy}",
             "  shape trace (input " + f"{b.cnn_config.in_channels} x {b.cnn_config.length}): "
             + " -> ".join(f"{name} {n}" for name, n in b.cnn_config.shape_trace()),
             f"  correction module: {'yes' if b.fcn_params else 'no'}",
             "  parameters:"]
    for name, v in b.params.items():
        lines.append(f"    {name:16s} {str(list(v.shape)):16s} rms={np.sqrt(np.mean(v ** 2)):.4g}")
    return lines


def cmd_inspect(args) -> int:
    p = _require_file(args.path, "file")
    magic = peek_magic(p)
    if magic == DATASET_MAGIC:
        lines = _inspect_dataset(p)
    elif magic == BUNDLE_MAGIC:
        lines = _inspect_bundle(p)
    else:
        raise CLIError("format", f"{p}: unknown magic {magic!r}", path=str(p))
    print("\n".join(lines))
    return 0


def _flag(parser, key: str, type_=None, help_=None):
    parser.add_argument("--" + key.replace("_", "-"), dest=key.replace(".", "__"), type=type_, default=None,
                        help=help_)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cmcnn", description="Correction-module CNN modulation recognition workbench")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="synthesize a labeled dataset")
    g.add_argument("--config")
    _flag(g, "out", help_="output directory")
    _flag(g, "schemes", help_="comma list, e.g. BPSK,QPSK")
    _flag(g, "snr_grid", help_="start:stop:step (inclusive) or a comma list; use --snr-grid=-20:18:2")
    _flag(g, "frames_per_cell", int)
    _flag(g, "master_seed", int)
    _flag(g, "sps", int)
    _flag(g, "rolloff", float)
    _flag(g, "span", int)
    _flag(g, "distortion", help_="channel or constant_offset")
    _flag(g, "omega_max", float)
    g.add_argument("--no-truth", action="store_true", help="omit impairment truth records")
    g.add_argument("--channel", action="append", default=[], metavar="KEY=VALUE",
                   help="override a channel parameter, e.g. --channel k_factor=2")
    g.set_defaults(func=cmd_gen)

    def train_flags(sp):
        sp.add_argument("--config")
        _flag(sp, "dataset")
        _flag(sp, "out")
        _flag(sp, "regime")
        _flag(sp, "ablation")
        sp.add_argument("--K", dest="K", type=int, default=None)
        _flag(sp, "epochs", int)
        _flag(sp, "batch_size", int)
        _flag(sp, "lr", float)
        _flag(sp, "seed", int)
        _flag(sp, "patience", int)
        _flag(sp, "fractions", help_="train,val,test")
        _flag(sp, "split_seed", int)
        _flag(sp, "baseline_arch", help_="published or regime")
        _flag(sp, "n_classes", int)
        _flag(sp, "hidden", int)

    t = sub.add_parser("train", help="train one model")
    train_flags(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train baseline and the three correction ablations")
    train_flags(a)
    _flag(a, "seeds", help_="comma list of paired seeds (default 0,1,2)")
    _flag(a, "regimes", help_="comma list of regimes (default: --regime)")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="score bundles on their held-out split")
    e.add_argument("--config")
    _flag(e, "bundle", help_="bundle path, or a comma list to merge regimes")
    _flag(e, "dataset")
    _flag(e, "out")
    _flag(e, "format", help_="csv, json or both (default)")
    e.add_argument("--force", action="store_true", default=None, help="evaluate despite fingerprint mismatch")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="summarize a dataset or bundle file")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def _parse_channel_overrides(args):
    for item in getattr(args, "channel", []) or []:
        if "=" not in item:
            raise CLIError("usage", f"--channel expects KEY=VALUE, got {item!r}", EXIT_USAGE)
        k, v = item.split("=", 1)
        setattr(args, f"channel__{k.strip()}", yaml.safe_load(v))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _parse_channel_overrides(args)
        return args.func(args)
    except CLIError as e:
        err = {"status": "error", "kind": e.kind, "message": str(e), **e.extra}
        code = e.code
    except (ValueError, TypeError, OSError) as e:
        err = {"status": "error", "kind": type(e).__name__, "message": str(e)}
        code = EXIT_FAILURE
    print(json.dumps(err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
