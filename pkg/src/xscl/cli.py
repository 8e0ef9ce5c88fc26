"""``xscl`` command-line entry point: synth, train, analyze, report.

Configs are JSON. A run config looks like::

    {
      "seed": 7,
      "variant": "both",
      "out_dir": "runs/desk",
      "n_folds": 5,
      "corpora": [{"manifest": "data/casia.jsonl"}, {"synthetic": {...}}],
      "model": {}, "stage1": {}, "stage2": {}, "ft": {}
    }

Sections override the defaults of the matching config type; unknown keys are
errors. Stage and model seeds default to values derived from the master seed.
Every command writes ``config_resolved.json`` with all values actually used.

Exit codes: 0 success, 1 internal error, 2 invalid input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import emit_report, format_table, layer_similarity_profile, read_ua_csv, write_similarity_csv
from .corpus import SyntheticSpec, assign_folds, desk_scenario, generate_synthetic, load_manifest, write_manifest
from .encoder import EncoderStack, ModelConfig, load_checkpoint
from .errors import ConfigError, ManifestError, SamplingError, ValidationError, XsclError
from .sampler import sample_batch
from .trainer import FTBaselineConfig, Stage1Config, Stage2Config, cross_validate, derive_seed

log = logging.getLogger("xscl")

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID = 0, 1, 2
VARIANTS = ("two-stage", "ft-baseline", "both")
RUN_KEYS = {"seed", "variant", "out_dir", "n_folds", "parallel_folds", "corpora", "model", "stage1", "stage2", "ft"}
SYNTH_KEYS = {"seed", "n_folds", "corpora"}

# seed-derivation slots under the master seed
_SLOT_MODEL, _SLOT_STAGE1, _SLOT_STAGE2, _SLOT_FT, _SLOT_CORPUS, _SLOT_FOLDS = range(6)


class InvalidInput(XsclError):
    pass


def _read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise InvalidInput(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidInput(f"{path}: top level must be an object")
    return data


def _check_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {sorted(unknown)}")


def _seed(value, where="seed") -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2**64:
        raise ConfigError(f"{where} must be an unsigned 64-bit integer, got {value!r}")
    return value


def _section(cls, d, master, slot):
    if d is not None and not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    d = dict(d or {})
    d.setdefault("seed", derive_seed(master, slot))
    try:
        return cls.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def _spec_from(d, master, index) -> SyntheticSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"synthetic corpus {index}: spec must be an object")
    d = dict(d)
    d.setdefault("seed", derive_seed(master, _SLOT_CORPUS, index))
    try:
        return SyntheticSpec.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"synthetic corpus {index}: {exc}") from None


# -- RunConfig -----------------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    seed: int
    variant: str
    out_dir: Path
    n_folds: int
    parallel_folds: bool
    corpora: list  # [("manifest", Path) | ("synthetic", SyntheticSpec)]
    model: ModelConfig
    stage1: Stage1Config
    stage2: Stage2Config
    ft: FTBaselineConfig

    @classmethod
    def from_dict(cls, d: dict, base_dir=".", overrides=None) -> RunConfig:
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        d = {**d, **overrides}
        _check_keys(d, RUN_KEYS, "run config")
        if "seed" not in d:
            raise ConfigError("run config: seed is mandatory")
        seed = _seed(d["seed"])
        variant = d.get("variant", "two-stage")
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if "out_dir" not in d:
            raise ConfigError("run config: out_dir missing (or pass --out)")
        n_folds = d.get("n_folds", 5)
        if not isinstance(n_folds, int) or n_folds < 2:
            raise ConfigError("n_folds must be an integer >= 2")
        base = Path(base_dir)
        sources = d.get("corpora")
        if not isinstance(sources, list) or len(sources) != 2:
            raise ConfigError("run config: corpora must list exactly two sources")
        corpora = []
        for i, src in enumerate(sources):
            if not isinstance(src, dict) or len(src) != 1 or not set(src) <= {"manifest", "synthetic"}:
                raise ConfigError(f"corpus {i}: expected {{'manifest': path}} or {{'synthetic': spec}}")
            if "manifest" in src:
                path = (base / src["manifest"]).resolve()
                if not path.is_file():
                    raise InvalidInput(f"corpus {i}: manifest not found: {path}")
                corpora.append(("manifest", path))
            else:
                corpora.append(("synthetic", _spec_from(src["synthetic"], seed, i)))
        model = dict(d.get("model") or {})
        model.setdefault("seed", derive_seed(seed, _SLOT_MODEL))
        return cls(
            seed=seed,
            variant=variant,
            out_dir=Path(d["out_dir"]).resolve() if "out_dir" in overrides else (base / d["out_dir"]).resolve(),
            n_folds=n_folds,
            parallel_folds=bool(d.get("parallel_folds", False)),
            corpora=corpora,
            model=ModelConfig.from_dict(model),
            stage1=_section(Stage1Config, d.get("stage1"), seed, _SLOT_STAGE1),
            stage2=_section(Stage2Config, d.get("stage2"), seed, _SLOT_STAGE2),
            ft=_section(FTBaselineConfig, d.get("ft"), seed, _SLOT_FT),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "variant": self.variant,
            "out_dir": str(self.out_dir),
            "n_folds": self.n_folds,
            "parallel_folds": self.parallel_folds,
            "corpora": [
                {"manifest": str(v)} if kind == "manifest" else {"synthetic": v.to_dict()} for kind, v in self.corpora
            ],
            "model": self.model.to_dict(),
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "ft": self.ft.to_dict(),
        }

    def load_corpora(self):
        """Materialize both corpora and make sure each has ``n_folds`` folds."""
        out = []
        for i, (kind, value) in enumerate(self.corpora):
            manifest = load_manifest(value) if kind == "manifest" else generate_synthetic(value)
            if manifest.n_folds is None:
                manifest = assign_folds(manifest, self.n_folds, derive_seed(self.seed, _SLOT_FOLDS, i))
            elif manifest.n_folds != self.n_folds:
                raise ConfigError(
                    f"corpus {manifest.corpus_id!r} carries {manifest.n_folds} folds, config asks for {self.n_folds}"
                )
            out.append(manifest)
        if out[0].corpus_id == out[1].corpus_id:
            raise ConfigError(f"both corpora are named {out[0].corpus_id!r}")
        return out


def _write_resolved(out_dir: Path, resolved: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_resolved.json"
    path.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- commands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.config:
        d = _read_json(args.config)
        _check_keys(d, SYNTH_KEYS, "synth config")
        if args.seed is not None:
            d["seed"] = args.seed
        if "seed" not in d:
            raise ConfigError("synth config: seed is mandatory")
        seed = _seed(d["seed"])
        sources = d.get("corpora")
        if not isinstance(sources, list) or not sources:
            raise ConfigError("synth config: corpora must be a non-empty list of synthetic specs")
        specs = [_spec_from(s, seed, i) for i, s in enumerate(sources)]
        n_folds = d.get("n_folds", 5)
    else:
        seed = _seed(args.seed if args.seed is not None else 0)
        specs = list(desk_scenario(seed))
        n_folds = 5
    if len({s.corpus_id for s in specs}) != len(specs):
        raise ConfigError("synthetic corpus ids must be unique")
    out = Path(args.out)
    written = []
    for i, spec in enumerate(specs):
        manifest = generate_synthetic(spec)
        if n_folds:
            manifest = assign_folds(manifest, n_folds, derive_seed(seed, _SLOT_FOLDS, i))
        written.append(write_manifest(manifest, out / f"{spec.corpus_id}.jsonl"))
    _write_resolved(out, {"seed": seed, "n_folds": n_folds, "corpora": [s.to_dict() for s in specs]})
    for path in written:
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.config:
        raise InvalidInput("train needs --config")
    raw = _read_json(args.config)
    overrides = {"seed": args.seed, "variant": args.variant, "out_dir": args.out}
    if args.parallel_folds:
        overrides["parallel_folds"] = True
    cfg = RunConfig.from_dict(raw, base_dir=Path(args.config).parent, overrides=overrides)
    # all input validation happens before anything is written
    corpora = cfg.load_corpora()
    out = cfg.out_dir
    _write_resolved(out, cfg.to_dict())
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    start = time.perf_counter()
    try:
        reports = cross_validate(
            corpora, cfg.model, cfg.stage1, cfg.stage2, cfg.ft, cfg.variant, out, cfg.parallel_folds
        )
    except BaseException as exc:
        failed.write_text(f"run aborted: {type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    emit_report(reports.values(), out)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump({k: r.to_dict() for k, r in reports.items()}, fh, indent=1, sort_keys=True)
    summary = [format_table(reports.values())]
    if "two-stage" in reports and "ft-baseline" in reports:
        for c in reports["two-stage"].corpora():
            diff = reports["two-stage"].mean_ua(c) - reports["ft-baseline"].mean_ua(c)
            summary.append(f"{c}: two-stage minus ft-baseline UA = {100 * diff:+.2f} points")
    summary.append(f"elapsed {time.perf_counter() - start:.1f} s")
    text = "\n".join(summary)
    (out / "summary.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _profile_batches(corpora, fold, batch_size, n_batches, seed):
    pools = []
    for c in corpora:
        if fold is not None and c.n_folds is not None:
            pools.append([u for u in c.utterances if u.fold == fold])
        else:
            pools.append(list(c.utterances))
    rng = np.random.default_rng(seed)
    return [sample_batch(pools[0], pools[1], batch_size, rng) for _ in range(n_batches)]


def cmd_analyze(args) -> int:
    if not args.checkpoint or not args.manifests:
        raise InvalidInput("analyze needs --checkpoint and --manifests")
    if len(args.manifests) != 2:
        raise InvalidInput("analyze needs exactly two manifests")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.stage not in ("stage1", "stage2", "ft"):
        log.warning("checkpoint stage is %r; profiling it anyway", ckpt.stage)
    corpora = [load_manifest(p) for p in args.manifests]
    fold = args.fold if args.fold is not None else ckpt.meta.get("test_fold")
    seed = _seed(args.seed if args.seed is not None else 0)
    batches = _profile_batches(corpora, fold, args.batch_size, args.batches, seed)
    random_stack = EncoderStack(ckpt.stack.config)
    profiles = [
        ("analyze", "finetuned", layer_similarity_profile(ckpt.stack, batches)),
        ("analyze", "pretrained", layer_similarity_profile(random_stack, batches)),
    ]
    out = Path(args.out)
    _write_resolved(
        out,
        {
            "checkpoint": str(Path(args.checkpoint).resolve()),
            "stage": ckpt.stage,
            "manifests": [str(Path(p).resolve()) for p in args.manifests],
            "fold": fold,
            "seed": seed,
            "batches": args.batches,
            "batch_size": args.batch_size,
        },
    )
    path = write_similarity_csv(out / "similarity_profile.csv", profiles)
    for _, tag, prof in profiles:
        print(f"{tag:>10}: final layer pos {prof.pos_mean[-1]:.4f} neg {prof.neg_mean[-1]:.4f} gap {prof.gap():.4f}")
    print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.out:
        raise InvalidInput("report needs --out <run dir>")
    run = Path(args.out)
    files = sorted(run.glob("*_ua.csv"))
    if not files:
        raise InvalidInput(f"no *_ua.csv files in {run}")
    table = {}
    for f in files:
        for variant, v in read_ua_csv(f).items():
            table.setdefault(variant, {})[f.name[: -len("_ua.csv")]] = v["mean"]
    corpora = [f.name[: -len("_ua.csv")] for f in files]
    width = max(len("variant"), *(len(v) for v in table))
    lines = ["variant".ljust(width) + "".join(f"  {c:>10}" for c in corpora)]
    for variant, row in table.items():
        cells = "".join(f"  {100 * row[c]:10.2f}" if c in row else f"  {'-':>10}" for c in corpora)
        lines.append(variant.ljust(width) + cells)
    if (run / "FAILED").exists():
        lines.append("warning: run did not complete; results are partial")
    print("\n".join(lines))
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xscl", description="Cross-corpus supervised contrastive SER at desk scale.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic corpora as manifests + raw audio")
    s.add_argument("--config", help="JSON synth spec; omitted = built-in two-corpus scenario")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="cross-validated training run")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--parallel-folds", action="store_true")

    a = sub.add_parser("analyze", help="layer-wise similarity profile of a checkpoint vs a random stack")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--manifests", nargs=2, required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--fold", type=int, help="sample from this fold only (default: checkpoint's test fold)")
    a.add_argument("--batches", type=int, default=16)
    a.add_argument("--batch-size", type=int, default=32)

    r = sub.add_parser("report", help="print the UA table of a finished run")
    r.add_argument("--out", required=True)
    return p


def _setup_logging():
    level = os.environ.get("XSCL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, None) if not level.isdigit() else int(level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "analyze": cmd_analyze, "report": cmd_report}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (InvalidInput, ConfigError, ManifestError, ValidationError, SamplingError) as exc:
        print(f"xscl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"xscl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        log.debug("internal error", exc_info=True)
        print(f"xscl {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
