"""Operator-facing command surface.

Subcommands: synth, train, classify, evaluate, audit, attack.  Every
command writes a RunManifest next to its outputs recording the exact
inputs, flags and seed that produced them.  Errors go to stderr with a
distinct exit code per error class; data goes to output files only.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import adversarial, evaluation, forest, ingest, sideinfo
from .core import FeatureVector, Label, SuffixDb, parse_domain
from .errors import DgaDetectError, SchemaMismatchError
from .lexical import extract_lexical
from .sideinfo import CountryCodes, GeoDb, extract_sideinfo

_EXIT_IO = 3

CONFIG_DIR_ENV = "DGADETECT_CONFIG_DIR"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        while True:
            chunk = fp.read(1 << 20)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path: Path, command: str, args: argparse.Namespace,
                    inputs: list[Path], outputs: list[Path], started: float,
                    stats: dict | None = None) -> Path:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
        "seed": flags.get("seed"),
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None and Path(p).exists()},
        "outputs": {str(p): _sha256(p) for p in outputs if Path(p).exists()},
        "stats": stats or {},
        "elapsed_s": round(time.time() - started, 3),
    }
    path = Path(str(out_path) + ".manifest.json")
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def _config_dir_default(filename: str) -> Path | None:
    base = os.environ.get(CONFIG_DIR_ENV)
    if base:
        candidate = Path(base) / filename
        if candidate.exists():
            return candidate
    return None


def _load_suffixes(args) -> SuffixDb:
    if args.suffixes:
        return SuffixDb.from_file(args.suffixes)
    fallback = _config_dir_default("public_suffixes.txt")
    return SuffixDb.from_file(fallback) if fallback else SuffixDb.bundled()


def _load_geo(args) -> GeoDb:
    if args.geoip:
        return GeoDb.from_csv(args.geoip)
    fallback = _config_dir_default("geoip.csv")
    return GeoDb.from_csv(fallback) if fallback else GeoDb.bundled()


def _load_labeled_examples(args, suffixes: SuffixDb) -> tuple[list[ingest.LabeledExample], dict]:
    labels_path = Path(args.labels) if args.labels else Path(args.data).with_suffix(".labels.csv")
    with open(labels_path, encoding="utf-8") as fp:
        labels = ingest.load_labeled_rows(fp)
    examples = []
    stats = ingest.ParseStats()
    unparseable = unlabeled = 0
    with open(args.data, encoding="utf-8") as fp:
        for record in ingest.read_pdns(fp, stats):
            try:
                parsed = parse_domain(record.name, suffixes)
            except DgaDetectError:
                unparseable += 1
                continue
            row = labels.get(parsed.fqdn)
            if row is None:
                unlabeled += 1
                continue
            examples.append(
                ingest.LabeledExample(record=record, parsed=parsed, label=row[0], source=row[1])
            )
    return examples, stats.as_dict() | {"unparseable_names": unparseable, "unlabeled": unlabeled}


def _load_ext_scores(args) -> dict[str, float] | None:
    if not args.scores:
        return None
    with open(args.scores, encoding="utf-8") as fp:
        return ingest.load_scores_csv(fp)


def _vectorize_for(args, examples, feature_set, geo, codes=None):
    ext = _load_ext_scores(args)
    if feature_set.ext and ext is None:
        raise SchemaMismatchError("this feature set needs --scores with external scores")
    if codes is None:
        codes = sideinfo.build_country_codes(
            sideinfo.observed_countries((ex.record for ex in examples), geo)
        )
    return ingest.vectorize(examples, geo, codes, ext), codes


def cmd_synth(args) -> int:
    started = time.time()
    examples = ingest.synth_dataset(args.n_benign, args.n_dga, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_path = out.with_suffix(".jsonl")
    labels_path = out.with_suffix(".labels.csv")
    with open(data_path, "w", encoding="utf-8") as fp:
        ingest.write_pdns((ex.record for ex in examples), fp)
    with open(labels_path, "w", newline="", encoding="utf-8") as fp:
        ingest.write_labels_csv(examples, fp)
    _write_manifest(out, "synth", args, [], [data_path, labels_path], started)
    print(f"wrote {len(examples)} records to {data_path}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    started = time.time()
    suffixes = _load_suffixes(args)
    feature_set = forest.FeatureSet.parse(args.features)
    examples, parse_stats = _load_labeled_examples(args, suffixes)
    geo = _load_geo(args)
    vectors, codes = _vectorize_for(args, examples, feature_set, geo)
    cfg = forest.TrainConfig(seed=args.seed, target_fpr=args.target_fpr)
    model = forest.train(vectors, feature_set, cfg, country_codes=codes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_manifest(out, "train", args,
                    [Path(args.data), Path(args.labels) if args.labels else Path(args.data).with_suffix(".labels.csv")],
                    [out], started, stats=parse_stats)
    print(f"trained {feature_set.id} model ({cfg.n_trees} trees), threshold "
          f"{model.threshold:.6f}, saved to {out}", file=sys.stderr)
    return 0


def cmd_classify(args) -> int:
    started = time.time()
    model = forest.ForestModel.load(args.model)
    suffixes = _load_suffixes(args)
    geo = _load_geo(args) if model.feature_set.dns else None
    ext = _load_ext_scores(args)
    if model.feature_set.ext and ext is None:
        raise SchemaMismatchError("hybrid model needs --scores with external scores")
    codes = model.country_codes or CountryCodes.from_dict({sideinfo.UNKNOWN: 0, sideinfo.MULTI_VALUED: 1})

    src = open(args.data, encoding="utf-8") if args.data else sys.stdin
    dst = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    stats = ingest.ParseStats()
    skipped_domains = 0
    try:
        for record in ingest.read_pdns(src, stats):
            try:
                parsed = parse_domain(record.name, suffixes)
            except DgaDetectError:
                skipped_domains += 1
                continue
            lex = extract_lexical(parsed)
            side = extract_sideinfo(record, geo, codes) if model.feature_set.dns else None
            ext_score = None
            if model.feature_set.ext:
                if parsed.fqdn not in ext:
                    raise SchemaMismatchError(f"no external score for {parsed.fqdn}")
                ext_score = ext[parsed.fqdn]
            score = model.score(FeatureVector(lexical=lex, sideinfo=side, ext_score=ext_score))
            dst.write(json.dumps({
                "domain": parsed.fqdn,
                "score": score,
                "verdict": "dga" if score >= model.threshold else "benign",
            }, separators=(",", ":")) + "\n")
    finally:
        if args.data:
            src.close()
        if args.out:
            dst.close()
    if args.out:
        _write_manifest(Path(args.out), "classify", args,
                        [Path(args.model)] + ([Path(args.data)] if args.data else []),
                        [Path(args.out)], started,
                        stats=stats.as_dict() | {"unparseable_names": skipped_domains})
    print(f"classified {stats.parsed - skipped_domains} domains "
          f"({stats.skipped} malformed lines, {skipped_domains} unparseable names)",
          file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    suffixes = _load_suffixes(args)
    feature_set = forest.FeatureSet.parse(args.features)
    examples, parse_stats = _load_labeled_examples(args, suffixes)
    geo = _load_geo(args)
    vectors, _ = _vectorize_for(args, examples, feature_set, geo)
    cfg = forest.TrainConfig(seed=args.seed, target_fpr=args.target_fpr)
    report = evaluation.cross_validate(vectors, feature_set, cfg, k=args.folds, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report_path = out.with_suffix(".json")
    roc_path = out.with_suffix(".roc.csv")
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    with open(roc_path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["fold", "fpr", "tpr"])
        for fold in report.folds:
            for fpr, tpr in fold.roc.points:
                writer.writerow([fold.fold, repr(fpr), repr(tpr)])
    _write_manifest(out, "evaluate", args, [Path(args.data)], [report_path, roc_path], started,
                    stats=parse_stats)
    print(f"{feature_set.id}: auc={report.auc:.4f} auc@fpr={report.auc_at_fpr:.4f} "
          f"tpr@fpr={report.tpr_at_fpr:.4f}", file=sys.stderr)
    return 0


def cmd_audit(args) -> int:
    started = time.time()
    model = forest.ForestModel.load(args.model)
    suffixes = _load_suffixes(args)
    geo = _load_geo(args)
    blacklist = ingest.Blacklist.from_file(args.blacklist).domains if args.blacklist else frozenset()
    whitelist = ingest.load_whitelist(args.whitelist) if args.whitelist else frozenset()
    ext = _load_ext_scores(args)
    codes = model.country_codes or CountryCodes.from_dict({sideinfo.UNKNOWN: 0, sideinfo.MULTI_VALUED: 1})

    items = []
    stats = ingest.ParseStats()
    with open(args.data, encoding="utf-8") as fp:
        for record in ingest.read_pdns(fp, stats):
            try:
                parsed = parse_domain(record.name, suffixes)
            except DgaDetectError:
                continue
            ext_score = None
            if model.feature_set.ext:
                if ext is None or parsed.fqdn not in ext:
                    raise SchemaMismatchError(f"no external score for {parsed.fqdn}")
                ext_score = ext[parsed.fqdn]
            items.append((parsed, FeatureVector(
                lexical=extract_lexical(parsed),
                sideinfo=extract_sideinfo(record, geo, codes) if model.feature_set.dns else None,
                ext_score=ext_score,
            )))
    report = evaluation.audit(items, model, blacklist, whitelist)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    _write_manifest(out, "audit", args, [Path(args.model), Path(args.data)], [out], started,
                    stats=stats.as_dict())
    print(report.to_json(), file=sys.stderr)
    return 0


def cmd_attack(args) -> int:
    started = time.time()
    model = forest.ForestModel.load(args.model)
    suffixes = _load_suffixes(args)
    examples, parse_stats = _load_labeled_examples(args, suffixes)
    geo = _load_geo(args)
    codes = model.country_codes or sideinfo.build_country_codes(
        sideinfo.observed_countries((ex.record for ex in examples), geo)
    )
    cfg = adversarial.AttackConfig(
        n_domains=args.n_domains, n_trials=args.trials, seed=args.seed,
        mutation_count=args.mutations,
    )
    seeds = [ex.parsed for ex in examples
             if ex.label is Label.BENIGN and len(ex.parsed.sld) > cfg.mutation_count]
    dga_examples = [ex for ex in examples if ex.label is Label.DGA]
    dga_pool = ingest.vectorize(dga_examples, geo, codes)
    report = adversarial.robustness_eval(
        model, seeds, dga_pool, cfg, collect_flagged=bool(args.flagged_out)
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    outputs = [out]
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    if args.flagged_out:
        with open(args.flagged_out, "w", encoding="utf-8") as fp:
            report.write_flagged_csv(fp)
        outputs.append(Path(args.flagged_out))
    _write_manifest(out, "attack", args, [Path(args.model), Path(args.data)], outputs, started,
                    stats=parse_stats)
    print(f"detection rate: {report.mean:.2%} +/- {report.stddev:.2%}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgadetect",
        description="Inline DGA detection: synth, train, classify, evaluate, audit, attack.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, geoip=True, suffixes=True):
        if suffixes:
            p.add_argument("--suffixes", help="public suffix list file (default: bundled)")
        if geoip:
            p.add_argument("--geoip", help="GeoIP fixture CSV (default: bundled)")

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--n-benign", type=int, default=1000)
    p.add_argument("--n-dga", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path stem")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a forest on labeled pDNS data")
    p.add_argument("--data", required=True, help="pDNS JSONL file")
    p.add_argument("--labels", help="labels CSV (default: <data>.labels.csv)")
    p.add_argument("--features", default="dns+lexical",
                   help="dns | lexical | dns+lexical, optionally +ext-score")
    p.add_argument("--scores", help="external score sidecar CSV (domain,score)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-fpr", type=float, default=0.001)
    p.add_argument("--out", required=True, help="model file")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="stream verdicts for pDNS records")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="pDNS JSONL file (default: stdin)")
    p.add_argument("--scores", help="external score sidecar CSV for hybrid models")
    p.add_argument("--out", help="verdict JSONL file (default: stdout)")
    add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="stratified cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--labels")
    p.add_argument("--features", default="dns+lexical")
    p.add_argument("--scores")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-fpr", type=float, default=0.001)
    p.add_argument("--out", required=True, help="report path stem")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit", help="score traffic against blacklist/whitelist")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--blacklist")
    p.add_argument("--whitelist")
    p.add_argument("--scores")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("attack", help="adversarial robustness protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="labeled pDNS data for seed + donor pools")
    p.add_argument("--labels")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--n-domains", type=int, default=1000)
    p.add_argument("--mutations", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--flagged-out", help="optional CSV of per-trial flagged domains")
    add_common(p)
    p.set_defaults(func=cmd_attack)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DgaDetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return _EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
