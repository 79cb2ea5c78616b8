"""Command-line entry point: ``eventsets <command> [options]``.

Commands: gen, train, detect, eval, baseline, sweep, plot. Every command
accepts ``--config FILE`` (JSON with optional ``seed``, ``gen``, ``run`` and
``sweep`` sections), repeatable ``--set key=value`` overrides, ``--out DIR``
and ``--seed N``. Each run directory receives ``config.json`` (the resolved
settings) and ``run.json`` (tool version, seed, timing).

Exit status: 0 on success, 2 on configuration errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .core import ConfigError, RunConfig, load_dataset
from .synthgen import GeneratorConfig, generate_dataset, load_manifest

log = logging.getLogger("eventsets")

SWEEP_DEFAULTS = {"N0": [10, 50, 100, 200], "d_m": [32, 64, 128, 256], "L": [1, 2, 3, 4]}
SECTIONS = ("gen", "run", "sweep")


# -- configuration -------------------------------------------------------------------


@dataclasses.dataclass
class Settings:
    seed: int = 0
    gen: GeneratorConfig = dataclasses.field(default_factory=GeneratorConfig)
    run: RunConfig = dataclasses.field(default_factory=RunConfig)
    sweep: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "gen": self.gen.to_dict(), "run": self.run.to_dict(), "sweep": self.sweep}


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(cls, key: str, value: Any) -> Any:
    default = next((f for f in dataclasses.fields(cls) if f.name == key), None)
    if default is None:
        raise ConfigError(f"unknown {cls.__name__} field {key!r}")
    ref = default.default if default.default is not dataclasses.MISSING else None
    try:
        if isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            return value
        if isinstance(ref, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError("expected an integer")
            return int(value)
        if isinstance(ref, float):
            if isinstance(value, bool):
                raise ValueError("expected a number")
            return float(value)
        if isinstance(ref, str):
            return str(value)
        if ref is None and str(default.type).startswith("int") and value is not None:
            if isinstance(value, bool) or int(value) != value:
                raise ValueError("expected an integer or null")
            return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}.{key}: bad value {value!r} ({exc})") from None
    return value


def _section(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    return cls.from_dict({k: _coerce(cls, k, v) for k, v in data.items()})


def load_settings(path: str | None, overrides: list[str], seed: int | None) -> Settings:
    raw: dict = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
        unknown = sorted(set(raw) - {"seed", *SECTIONS})
        if unknown:
            raise ConfigError(f"{p}: unknown top-level keys {unknown}")
    gen = dict(raw.get("gen", {}))
    run = dict(raw.get("run", {}))
    sweep = dict(raw.get("sweep", {}))
    top_seed = raw.get("seed", 0)
    gen_fields = {f.name for f in dataclasses.fields(GeneratorConfig)}
    run_fields = {f.name for f in dataclasses.fields(RunConfig)}
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        value = _parse_value(text)
        section, dot, name = key.partition(".")
        if dot:
            if section not in SECTIONS:
                raise ConfigError(f"override {item!r}: unknown section {section!r}")
            {"gen": gen, "run": run, "sweep": sweep}[section][name] = value
        elif key == "seed":
            top_seed = value
        else:
            targets = [d for d, names in ((gen, gen_fields), (run, run_fields)) if key in names]
            if not targets:
                raise ConfigError(f"override {item!r}: unknown key {key!r}")
            for d in targets:
                d[key] = value
    if seed is not None:
        top_seed = seed
    try:
        top_seed = int(top_seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {top_seed!r}") from None
    run.setdefault("seed", top_seed)
    gen_cfg = _section(GeneratorConfig, gen, "gen")
    run.setdefault("C", gen_cfg.C)
    run_cfg = _section(RunConfig, run, "run")
    if run_cfg.C != gen_cfg.C:
        raise ConfigError(f"run.C={run_cfg.C} disagrees with gen.C={gen_cfg.C}")
    return Settings(top_seed, gen_cfg, run_cfg, sweep)


def _write_echo(out: Path, settings: Settings, args: argparse.Namespace) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cmd = {k: v for k, v in vars(args).items() if k not in ("func", "config", "set", "seed")}
    echo = {"command": cmd, **settings.to_dict()}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")


def _write_run_info(out: Path, settings: Settings, command: str, elapsed: float) -> None:
    info = {"tool_version": __version__, "command": command, "seed": settings.seed, "elapsed_s": round(elapsed, 3)}
    (out / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


# -- data helpers --------------------------------------------------------------------


def _dataset_C(data: Path) -> int:
    if (data / "manifest.json").exists():
        return load_manifest(data)[0].C
    raise ConfigError(f"{data}: no manifest.json (run `eventsets gen` first)")


def _load_split(data: Path, split: str, C: int):
    path = data / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"dataset split not found: {path}")
    return load_dataset(path, C)


def _check_C(settings: Settings, data: Path) -> int:
    C = _dataset_C(data)
    if C != settings.run.C:
        raise ConfigError(f"dataset {data} has C={C} but run.C={settings.run.C}")
    return C


def _load_model(path: str):
    from .model import CheckpointError, EventTransformer

    if not Path(path).exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return EventTransformer.load(path)[0]


# -- commands ----------------------------------------------------------------------


def cmd_gen(args, settings: Settings, out: Path) -> None:
    files = generate_dataset(settings.gen, settings.seed, out)
    for name, path in files.items():
        print(f"{name}: {path}")


def cmd_train(args, settings: Settings, out: Path) -> None:
    from .train import train

    data = Path(args.data)
    C = _check_C(settings, data)
    tr = _load_split(data, "train", C)
    va = _load_split(data, "val", C) if (data / "val.jsonl").exists() else []
    _, hist = train(tr, settings.run, out_dir=out, val_samples=va, resume=args.resume, max_epochs=args.max_epochs)
    if hist:
        print(json.dumps(hist[-1], sort_keys=True))
    print(f"checkpoint: {out / 'final.bin'}")


def cmd_detect(args, settings: Settings, out: Path) -> None:
    from .decode import detect_dataset, write_detections

    model = _load_model(args.checkpoint)
    data = Path(args.data)
    samples = _load_split(data, args.split, model.cfg.C)
    dets = detect_dataset(model, samples, tau=args.tau)
    target = out / "detections.jsonl"
    write_detections(target, dets, [s.id for s in samples])
    print(f"detections: {target} ({sum(len(v) for v in dets.values())} events)")


def _evaluate_and_write(samples, dets, C: int, out: Path, label: str):
    from .metrics import evaluate

    report = evaluate(samples, dets, C)
    (out / "report.json").write_text(report.to_json() + "\n")
    print(report.table(label), end="")
    return report


def cmd_eval(args, settings: Settings, out: Path) -> None:
    from .decode import read_detections

    data = Path(args.data)
    C = _dataset_C(data)
    samples = _load_split(data, args.split, C)
    if not Path(args.detections).exists():
        raise FileNotFoundError(f"detections file not found: {args.detections}")
    _evaluate_and_write(samples, read_detections(args.detections), C, out, args.label)


def cmd_baseline(args, settings: Settings, out: Path) -> None:
    from .decode import run_baseline, write_detections

    data = Path(args.data)
    C = _check_C(settings, data)
    tr = _load_split(data, "train", C)
    te = _load_split(data, args.split, C)
    embed = _load_model(args.checkpoint).frame_features if args.checkpoint else None
    cfg = settings.run
    dets, _ = run_baseline(args.scheme, tr, te, C, cfg.N0, cfg.soft_nms_sigma, seed=cfg.seed, embed=embed,
                           epochs=args.epochs)
    write_detections(out / "detections.jsonl", dets, [s.id for s in te])
    _evaluate_and_write(te, dets, C, out, args.scheme)


def sweep_values(settings: Settings, param: str | None, values: str | None) -> tuple[str, list]:
    param = param or settings.sweep.get("param", "N0")
    if param not in SWEEP_DEFAULTS:
        raise ConfigError(f"sweep parameter must be one of {sorted(SWEEP_DEFAULTS)}, got {param!r}")
    if values:
        try:
            vals = [int(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"sweep values must be integers, got {values!r}") from None
    else:
        vals = list(settings.sweep.get("values", SWEEP_DEFAULTS[param]))
    if not vals:
        raise ConfigError("empty sweep")
    return param, vals


def cmd_sweep(args, settings: Settings, out: Path) -> None:
    from .decode import detect_dataset, write_detections
    from .metrics import evaluate
    from .train import train

    data = Path(args.data)
    C = _check_C(settings, data)
    param, vals = sweep_values(settings, args.param, args.values)
    tr = _load_split(data, "train", C)
    te = _load_split(data, "test", C)
    rows = []
    for v in vals:
        cfg = dataclasses.replace(settings.run, **{param: v})
        cfg.validate()
        sub = out / f"{param}={v}"
        model, _ = train(tr, cfg, out_dir=sub, max_epochs=args.max_epochs)
        dets = detect_dataset(model, te)
        write_detections(sub / "detections.jsonl", dets, [s.id for s in te])
        rep = evaluate(te, dets, C)
        (sub / "report.json").write_text(rep.to_json() + "\n")
        rows.append({"param": param, "value": v, "map50": rep.map[0.5], "auc": rep.auc})
    (out / "sweep.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    lines = [f"{param:>6} | {'mAP@0.5':>8} | {'AUC':>8}"]
    for r in rows:
        m = "-" if r["map50"] is None else f"{r['map50']:.2f}"
        lines.append(f"{r['value']:>6} | {m:>8} | {r['auc']:>8.2f}")
    text = "\n".join(lines) + "\n"
    (out / "sweep.txt").write_text(text)
    print(text, end="")


def attention_rows(model, sample, tau: float | None = None):
    """Final-layer cross-attention (head average) for queries whose events are kept.

    Returns ``(weights (rows, T), labels, query indices)``.
    """
    from . import diffcore as dc

    cfg = model.cfg
    tau = cfg.tau_infer if tau is None else tau
    with dc.no_grad():
        out = model.forward(sample.features)
    att = out.cross_attention[0].mean(axis=0)
    probs = out.probs.data[0]
    if cfg.matching_mode == "class_agnostic":
        score = probs[:, 1:].max(axis=1)
        cls = probs[:, 1:].argmax(axis=1) + 1
    else:
        score = probs[:, 1]
        cls = np.arange(cfg.n_queries) // cfg.N0 + 1
    keep = np.flatnonzero((score >= tau) & (out.end.data[0] > out.start.data[0]))
    labels = [
        f"c{cls[q]} q{q % cfg.N0} [{out.start.data[0, q]:.1f},{out.end.data[0, q]:.1f}]" for q in keep
    ]
    return att[keep], labels, keep


def cmd_plot(args, settings: Settings, out: Path) -> None:
    from .decode import read_detections
    from .plots import ar_curve_svg, attention_svg, timeline_svg

    if args.kind == "ar":
        if not args.report:
            raise ConfigError("plot ar needs at least one --report LABEL=PATH")
        curves, an = {}, None
        for item in args.report:
            label, sep, path = item.partition("=")
            if not sep:
                label, path = Path(item).parent.name or item, item
            rep = json.loads(Path(path).read_text())
            curves[label] = rep["ar"]
            an = rep["an"]
        target = out / "ar_curve.svg"
        target.write_text(ar_curve_svg(curves, an))
        print(f"figure: {target}")
        return
    if not (args.data and args.id):
        raise ConfigError(f"plot {args.kind} needs --data and --id")
    data = Path(args.data)
    C = _dataset_C(data)
    samples = {s.id: s for s in _load_split(data, args.split, C)}
    if args.id not in samples:
        raise ValueError(f"unknown sequence id {args.id!r} in {args.split} split")
    sample = samples[args.id]
    if args.kind == "timeline":
        dets = read_detections(args.detections).get(args.id, []) if args.detections else []
        target = out / f"timeline_{args.id}.svg"
        target.write_text(timeline_svg(sample, dets, C))
    else:
        if not args.checkpoint:
            raise ConfigError("plot attention needs --checkpoint")
        model = _load_model(args.checkpoint)
        w, labels, _ = attention_rows(model, sample, args.tau)
        if len(w) and not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
            raise RuntimeError("attention rows do not sum to one")
        target = out / f"attention_{args.id}.svg"
        target.write_text(attention_svg(w, sample, labels))
    print(f"figure: {target}")


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings file with seed/gen/run/sweep sections")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a setting; KEY may be section-qualified (run.N0=10)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="seed for data generation and training")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="eventsets", description="Temporal event detection with per-class query sets.")
    p.add_argument("--version", action="version", version=f"eventsets {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("train", parents=[common], help="train the detector")
    s.add_argument("--data", required=True)
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--max-epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", parents=[common], help="write detections for a split")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--tau", type=float)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", parents=[common], help="score a detections file")
    s.add_argument("--data", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--label", default="run")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", parents=[common], help="run a frame-classifier baseline")
    s.add_argument("--data", required=True)
    s.add_argument("--scheme", choices=("frame2event", "unit2event"), default="frame2event")
    s.add_argument("--checkpoint", help="use this detector's frame embedding as input features")
    s.add_argument("--split", default="test")
    s.add_argument("--epochs", type=int, default=5)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("sweep", parents=[common], help="vary N0, d_m or L one at a time")
    s.add_argument("--data", required=True)
    s.add_argument("--param", choices=sorted(SWEEP_DEFAULTS))
    s.add_argument("--values", help="comma-separated integers")
    s.add_argument("--max-epochs", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("plot", parents=[common], help="write SVG figures")
    s.add_argument("--kind", choices=("timeline", "attention", "ar"), required=True)
    s.add_argument("--data")
    s.add_argument("--split", default="test")
    s.add_argument("--id", help="sequence id")
    s.add_argument("--detections")
    s.add_argument("--checkpoint")
    s.add_argument("--tau", type=float)
    s.add_argument("--report", action="append", default=[], metavar="LABEL=PATH")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(args.config, args.set, args.seed)
        out = Path(args.out)
        _write_echo(out, settings, args)
        t0 = time.perf_counter()
        args.func(args, settings, out)
        _write_run_info(out, settings, args.command, time.perf_counter() - t0)
    except ConfigError as exc:
        print(f"eventsets: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero
        log.debug("failure", exc_info=True)
        print(f"eventsets: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
