"""Command-line entry point: preprocess, train, generate, evaluate, analyze.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Every subcommand writes a ``*.manifest.json`` next to its artifact.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("graphtransformer")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- manifest --------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, args: dict, inputs: list, artifacts: list, seeds: dict | None = None,
                   config_text: str | None = None) -> Path:
    args = {k: v for k, v in args.items() if not callable(v)}
    cfg = config_text if config_text is not None else json.dumps(args, sort_keys=True, default=str)
    manifest = {
        "tool": "graphtransformer",
        "version": __version__,
        "command": command,
        "args": args,
        "config_hash": hashlib.sha256(cfg.encode("utf-8")).hexdigest(),
        "seeds": seeds or {},
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "artifacts": [str(p) for p in artifacts],
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    if artifact.is_dir():
        return artifact / "manifest.json"
    return artifact.with_name(artifact.name + ".manifest.json")


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _read_examples(path):
    from .model import example_from_json

    out = []
    with open(_need_file(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(example_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad record ({exc})") from exc
    if not out:
        raise DataError(f"{path}: no records")
    return out


def _load_model(path):
    from .checkpoint import CheckpointError
    from .training import load_model

    try:
        return load_model(_need_file(path))
    except CheckpointError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _read_lines(path) -> list[str]:
    return _need_file(path).read_text(encoding="utf-8").splitlines()


# -- subcommands -----------------------------------------------------------

def cmd_preprocess(a) -> int:
    from .graph import read_conllu_blocks, read_penman_blocks
    from .model import example_to_json, make_example

    src = _need_file(a.inp)
    text = src.read_text(encoding="utf-8")
    reader = read_penman_blocks if a.format == "penman" else read_conllu_blocks
    targets = _read_lines(a.targets) if a.targets else None
    records, n_bad = [], 0
    for k, (g, snt, line) in enumerate(reader(text)):
        if isinstance(g, Exception):
            msg = f"{src}:{line}: {g}"
            if not a.skip_bad:
                raise DataError(msg)
            log.warning("skipping graph: %s", msg)
            n_bad += 1
            continue
        if targets is not None:
            if k >= len(targets):
                raise DataError(f"{a.targets}: fewer target lines than graphs")
            snt = targets[k]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                ex = make_example(g, snt, cap=a.path_cap, max_len=a.max_path_len)
            except ValueError as exc:
                msg = f"{src}:{line}: {exc}"
                if not a.skip_bad:
                    raise DataError(msg) from exc
                log.warning("skipping graph: %s", msg)
                n_bad += 1
                continue
        for w in caught:
            log.warning("%s:%d: %s", src, line, w.message)
        records.append(ex)
    if not records:
        raise DataError(f"{src}: no graphs found")
    out = Path(a.out)
    with open(out, "w", encoding="utf-8") as fh:
        for ex in records:
            fh.write(json.dumps(example_to_json(ex), sort_keys=True) + "\n")
    k = len(records)
    avg = lambda f: sum(f(ex) for ex in records) / k
    print(f"graphs={k} skipped={n_bad} "
          f"n={avg(lambda e: e.stats.size):.2f} "
          f"m={avg(lambda e: len(e.graph.original_edges())):.2f} "
          f"diameter={avg(lambda e: e.stats.diameter):.2f} "
          f"reentrancies={avg(lambda e: e.stats.reentrancies):.2f}")
    write_manifest(_manifest_path(out), "preprocess", vars(a), [src] + ([a.targets] if a.targets else []), [out])
    return EXIT_OK


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_train(a) -> int:
    from .training import TrainConfig, TrainingDiverged, train

    overrides = _parse_overrides(a.set)
    if a.seed is not None:
        overrides["seed"] = str(a.seed)
    text = _need_file(a.config).read_text(encoding="utf-8") if a.config else ""
    try:
        config = TrainConfig.from_text(text, overrides)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    examples = _read_examples(a.data)
    dev = _read_examples(a.dev) if a.dev else None
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    try:
        result = train(config, examples, dev, out_dir=out, resume=a.resume)
    except TrainingDiverged as exc:
        raise DataError(f"training diverged: {exc}") from exc
    artifacts = sorted(str(p) for p in out.iterdir() if p.suffix in (".ckpt", ".csv", ".txt"))
    inputs = [a.data] + ([a.dev] if a.dev else []) + ([a.config] if a.config else [])
    write_manifest(_manifest_path(out), "train", vars(a), inputs, artifacts,
                   seeds={"seed": config.seed}, config_text=config.to_text())
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"step={last.step} loss={last.loss:.4f} accuracy={last.accuracy:.4f}")
    return EXIT_OK


def cmd_generate(a) -> int:
    if a.beam < 1:
        raise UsageError("--beam must be >= 1")
    model, _, meta = _load_model(a.ckpt)
    examples = _read_examples(a.inp)
    lines = [" ".join(model.generate(ex, beam=a.beam, max_len=a.max_len).words) for ex in examples]
    out = Path(a.out)
    out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    write_manifest(_manifest_path(out), "generate", vars(a), [a.ckpt, a.inp], [out],
                   seeds={"seed": meta["config"]["seed"]})
    return EXIT_OK


def cmd_evaluate(a) -> int:
    from .metrics import bleu, chrf_pp

    hyps, refs = _read_lines(a.hyp), _read_lines(a.ref)
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise DataError("empty corpus")
    cs = a.case == "sensitive"
    score = bleu(hyps, refs, case_sensitive=cs) if a.metric == "bleu" else chrf_pp(hyps, refs, case_sensitive=cs)
    print(f"{score:.1f}")
    if a.out:
        out = Path(a.out)
        out.write_text(json.dumps({"metric": a.metric, "case": a.case, "score": score}) + "\n")
        write_manifest(_manifest_path(out), "evaluate", vars(a), [a.hyp, a.ref], [out])
    return EXIT_OK


def cmd_analyze(a) -> int:
    from .analysis import attention_distance_csv, binned_report, model_attention_distance
    from .metrics import sentence_chrf_pp

    examples = _read_examples(a.data)
    inputs = [a.data]
    out = Path(a.out)
    if a.report == "attn-distance":
        if not a.ckpt:
            raise UsageError("--report attn-distance needs --ckpt")
        model, _, _ = _load_model(a.ckpt)
        inputs.append(a.ckpt)
        out.write_text(attention_distance_csv(model_attention_distance(model, examples)))
    else:
        if any(ex.target is None for ex in examples):
            raise DataError("binned reports need reference sentences in the data")
        if a.hyp:
            hyps = _read_lines(a.hyp)
            inputs.append(a.hyp)
            if len(hyps) != len(examples):
                raise DataError(f"{len(hyps)} hypotheses vs {len(examples)} graphs")
        elif a.ckpt:
            model, _, _ = _load_model(a.ckpt)
            inputs.append(a.ckpt)
            hyps = [" ".join(model.generate(ex, beam=a.beam).words) for ex in examples]
        else:
            raise UsageError("binned reports need --hyp or --ckpt")
        scores = [sentence_chrf_pp(h, " ".join(ex.target)) for h, ex in zip(hyps, examples)]
        edges = [float(x) for x in a.edges.split(",")] if a.edges else None
        try:
            rep = binned_report(scores, [ex.stats for ex in examples], a.report, edges)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        out.write_text(rep.to_json() + "\n" if out.suffix == ".json" else rep.to_csv())
    print(out.read_text(), end="")
    write_manifest(_manifest_path(out), "analyze", vars(a), inputs, [out])
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graphtransformer", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps runs bit-reproducible)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("preprocess", help="parse graphs and precompute relation paths")
    s.add_argument("--format", choices=["penman", "conllu"], required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--targets", help="optional file of target sentences, one per graph")
    s.add_argument("--max-path-len", type=int, default=8)
    s.add_argument("--path-cap", type=int, default=4)
    s.add_argument("--skip-bad", action="store_true", help="warn and skip graphs that fail to parse")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", help="flat key=value config file")
    s.add_argument("--data", required=True, help="preprocessed training JSONL")
    s.add_argument("--dev", help="preprocessed dev JSONL for BLEU-based model selection")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="decode sentences from graphs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True, help="preprocessed JSONL")
    s.add_argument("--out", required=True)
    s.add_argument("--beam", type=int, default=8)
    s.add_argument("--max-len", type=int, default=50)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="score hypotheses against references")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--metric", choices=["bleu", "chrfpp"], default="bleu")
    s.add_argument("--case", choices=["sensitive", "insensitive"], default="sensitive")
    s.add_argument("--out", help="write the score as JSON here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze", help="binned chrF++ reports and attention distances")
    s.add_argument("--ckpt")
    s.add_argument("--data", required=True)
    s.add_argument("--report", choices=["size", "diameter", "reentrancy", "attn-distance"], required=True)
    s.add_argument("--hyp", help="hypotheses to score instead of decoding with --ckpt")
    s.add_argument("--edges", help="three comma-separated inner bin edges (default: quartiles)")
    s.add_argument("--beam", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)
    return p


def _limit_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        if a.command is None:
            raise UsageError(parser.format_usage().strip())
        _limit_threads(a.threads)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return a.func(a)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
