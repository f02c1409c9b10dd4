"""Command-line front end.

Subcommands wire the library end to end:

    chdkit gen-phantom  --preset normal --seed 7 --out case_dir
    chdkit build-templates --out lib_dir CASE_OR_SKEL [...]
    chdkit classify --library lib_dir --out diag_dir CASE_DIR [...]
    chdkit evaluate --diagnoses diag_dir --cases corpus_dir --out report_dir

`--config` points at a key=value file (`--print-config` emits the full
default set); the CHD_PIPELINE_CONFIG environment variable is the
fallback when the flag is absent.  Uncertain is a normal outcome (exit
0); errors exit non-zero.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import json
import os
import sys
import tempfile
from pathlib import Path

from .config import ENV_CONFIG_VAR, PipelineConfig, load_config
from .errors import ChdkitError
from .evaluation import accumulate, bundled_replay_matrix, replay_cases, write_report
from .phantoms import PhantomSpec, preset_spec, generate, write_case, read_case, PRESETS
from .pipeline import case_skeleton, diagnosis_record, run_case
from .rules import CHDType, Diagnosis
from .skeleton import load_skeleton, save_skeleton
from .templates import CATEGORIES, build_library, load_library, save_library


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_gen_phantom(args) -> int:
    if args.spec:
        spec = PhantomSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    else:
        spec = preset_spec(args.preset, args.seed)
    case, truth = generate(spec)
    out = Path(args.out)
    write_case(case, truth, out)
    (out / "phantom_spec.json").write_text(spec.to_json(), encoding="utf-8")
    print(f"wrote {case.case_id} -> {out} (truth: {', '.join(sorted(t.value for t in truth))})")
    return 0


def _case_dirs(paths: list[str]) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        if not (p / "blood_pool.cvol").exists():
            raise ChdkitError(f"{p} is not a case directory (no blood_pool.cvol)")
        out.append(p)
    return out


def cmd_build_templates(args) -> int:
    cfg = load_config(args.config)
    pairs = []
    for raw in args.inputs:
        p = Path(raw)
        if p.is_file() and p.suffix == ".skel":
            skel, category = load_skeleton(p)
            if category is None:
                raise ChdkitError(f"{p} carries no category tag")
            pairs.append((skel, category))
        elif p.is_dir():
            case, truth = read_case(p)
            if truth is None:
                raise ChdkitError(f"{p}: case has no truth.json to derive a category from")
            cats = sorted(t.value for t in truth if t.value in CATEGORIES)
            if len(cats) != 1:
                raise ChdkitError(
                    f"{p}: truth {sorted(t.value for t in truth)} does not name exactly "
                    f"one shape category ({', '.join(CATEGORIES)})"
                )
            skel = case_skeleton(case, cfg)
            if skel is None:
                raise ChdkitError(f"{p}: no vessel skeleton could be extracted")
            pairs.append((skel, cats[0]))
        else:
            raise ChdkitError(f"{raw}: neither a .skel record nor a case directory")
    lib = build_library(pairs)
    save_library(lib, args.out)
    print(f"library with {len(lib.templates)} templates -> {args.out}")
    return 0


def _classify_one(case_dir: str, library_dir: str, cfg: PipelineConfig, out_dir: str) -> str:
    lib = load_library(library_dir)
    case, _ = read_case(Path(case_dir))
    result = run_case(case, lib, cfg)
    rec = diagnosis_record(result, cfg)
    out = Path(out_dir) / f"{case.case_id}.json"
    _write_atomic(out, json.dumps(rec, indent=2))
    return f"{case.case_id}: " + ("Uncertain" if result.diagnosis.uncertain else ",".join(result.diagnosis.label_names))


def cmd_classify(args) -> int:
    cfg = load_config(args.config)
    lib = load_library(args.library)  # fail fast on a bad library
    if lib.cfg_fingerprint != cfg.fingerprint():
        raise ChdkitError(
            f"config fingerprint {cfg.fingerprint()} does not match library "
            f"{lib.cfg_fingerprint}; rebuild templates or fix the config"
        )
    case_dirs = _case_dirs(args.cases)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.emit_skeleton:
        Path(args.emit_skeleton).mkdir(parents=True, exist_ok=True)
    jobs = max(1, args.jobs)
    if jobs == 1:
        for d in case_dirs:
            print(_classify_one(str(d), args.library, cfg, str(out)))
            if args.emit_skeleton:
                case, _ = read_case(d)
                skel = case_skeleton(case, cfg)
                if skel is not None:
                    save_skeleton(skel, Path(args.emit_skeleton) / f"{case.case_id}.skel")
    else:
        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_classify_one, str(d), args.library, cfg, str(out)) for d in case_dirs
            ]
            for f in futures:
                print(f.result())
    return 0


def cmd_evaluate(args) -> int:
    if args.bundled_replay:
        cm = accumulate(replay_cases(bundled_replay_matrix()))
    else:
        diag_dir = Path(args.diagnoses)
        records = sorted(diag_dir.glob("*.json"))
        if not records:
            raise ChdkitError(f"no diagnosis records under {diag_dir}")
        truths = {}
        for case_dir in Path(args.cases).iterdir():
            tpath = case_dir / "truth.json"
            if tpath.exists():
                raw = json.loads(tpath.read_text(encoding="utf-8"))
                truths[raw["case_id"]] = frozenset(CHDType.from_name(n) for n in raw["labels"])
        preds = []
        for rec_path in records:
            rec = json.loads(rec_path.read_text(encoding="utf-8"))
            cid = rec["case_id"]
            if cid not in truths:
                raise ChdkitError(f"no truth sidecar found for case {cid!r}")
            if rec["outcome"] == "Uncertain":
                diag = Diagnosis(uncertain=True, labels=frozenset(), reasons=tuple(rec["reasons"]))
            else:
                diag = Diagnosis(
                    uncertain=False,
                    labels=frozenset(CHDType.from_name(n) for n in rec["labels"]),
                    reasons=tuple(rec["reasons"]),
                )
            preds.append((truths[cid], diag))
        cm = accumulate(preds)
    m = write_report(cm, args.out)
    print(
        f"cases={cm.total} uncertain={cm.n_uncertain} correct={cm.n_correct} "
        f"coverage={m['coverage']:.1%} selective={m['selective_accuracy']:.1%} "
        f"full={m['full_accuracy']:.1%}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chdkit", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--print-config", action="store_true", help="emit the default config and exit")
    sub = ap.add_subparsers(dest="command")

    g = sub.add_parser("gen-phantom", help="rasterize a synthetic case with known truth")
    g.add_argument("--preset", choices=sorted(PRESETS), default="normal")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spec", help="phantom spec JSON (overrides --preset/--seed)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_phantom)

    b = sub.add_parser("build-templates", help="assemble a template library")
    b.add_argument("inputs", nargs="+", metavar="CASE_DIR_OR_SKEL")
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_templates)

    c = sub.add_parser("classify", help="diagnose cases against a template library")
    c.add_argument("cases", nargs="+", metavar="CASE_DIR")
    c.add_argument("--library", required=True)
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--emit-skeleton", help="also write each case's sampled skeleton here")
    c.set_defaults(func=cmd_classify)

    e = sub.add_parser("evaluate", help="confusion matrix + metrics from diagnoses")
    e.add_argument("--diagnoses")
    e.add_argument("--cases", help="corpus root containing case dirs with truth.json")
    e.add_argument("--bundled-replay", action="store_true",
                   help="evaluate the bundled reference tally instead of real diagnoses")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.print_config:
        sys.stdout.write(PipelineConfig().to_text())
        return 0
    if not getattr(args, "command", None):
        ap.print_help()
        return 2
    if args.command == "evaluate" and not args.bundled_replay:
        if not (args.diagnoses and args.cases):
            ap.error("evaluate needs --diagnoses and --cases (or --bundled-replay)")
    try:
        return args.func(args)
    except ChdkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
