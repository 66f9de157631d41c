"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error,
3 training divergence, 4 evaluation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from vpgan import experiment as ex
from vpgan.anonymizer import MappingExistsError, TargetSelectionError
from vpgan.checkpoint import CheckpointError
from vpgan.corpus import CorpusError
from vpgan.nn import ConfigurationError
from vpgan.trainer import TrainingDivergedError

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_EVAL = 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpgan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="experiment manifest (JSON)")
        return s

    s = with_config("train", "train generator and critic")
    s.add_argument("--resume", action="store_true", help="continue from the newest checkpoint")

    s = with_config("anonymize", "anonymize enrollment and trial corpora")
    s.add_argument("--corpus", help="anonymize this corpus file instead of the manifest's")
    s.add_argument("--strategy", choices=["gan", "pool", "random", "identity"])
    s.add_argument("--checkpoint")
    s.add_argument("--seed", type=int)
    s.add_argument("--force", action="store_true", help="overwrite existing mappings")

    s = with_config("evaluate", "score anonymized corpora and write an evaluation report")
    s.add_argument("--strategy", choices=["gan", "pool", "random", "identity"])

    s = with_config("ablate", "train and evaluate every cell of a parameter grid")
    s.add_argument("--grid", required=True, help="grid JSON, e.g. {\"gamma\": [0.1, 1.0]}")

    s = with_config("visualize", "t-SNE overlap plots for checkpoints")
    s.add_argument("--checkpoints", nargs="+")

    s = with_config("corpus-gen", "write the manifest's corpora to disk")
    s.add_argument("--format", choices=["vpemb", "jsonl"], default="vpemb")

    s = sub.add_parser("corpus-convert", help="convert between binary and JSONL corpus formats")
    s.add_argument("src")
    s.add_argument("dst")
    return p


def _run(args) -> object:
    if args.command == "corpus-convert":
        return {"written": str(ex.corpus_convert(args.src, args.dst))}
    m = ex.load_manifest(args.config)
    if args.command == "train":
        result = ex.run_train(m, resume=args.resume)
        return {"iterations": result.state.iteration, "checkpoints": [str(p) for p in result.checkpoints.values()]}
    if args.command == "anonymize":
        return ex.run_anonymize(m, args.corpus, args.strategy, args.checkpoint, args.seed, args.force)
    if args.command == "evaluate":
        return ex.run_evaluate(m, strategy=args.strategy)
    if args.command == "ablate":
        try:
            with open(args.grid) as fh:
                grid = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ex.ConfigError(f"cannot read grid {args.grid}: {exc}") from None
        rows = ex.run_ablation(m, grid)
        return [{k: v for k, v in r.items() if k != "report"} | {"mmd": r["report"].get("generator_mmd")} for r in rows]
    if args.command == "visualize":
        return ex.run_visualize(m, args.checkpoints)
    if args.command == "corpus-gen":
        return {k: str(v) for k, v in ex.corpus_gen(m, args.format).items()}
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        out = _run(args)
    except (ex.ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ex.DataError, CorpusError, CheckpointError, MappingExistsError, FileExistsError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ex.EvaluationError, TargetSelectionError) as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    print(json.dumps(out, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
