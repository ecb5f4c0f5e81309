"""
Script principal do laboratorio de inversao de gradientes DiffULA.

Subcomandos: corpus, train-prior, train-adapter, capture, attack, report, sample.
Codigos de saida: 0 sucesso, 2 erro de configuracao, 3 falha de execucao.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Ajuste de encoding para evitar problemas com caracteres especiais no Windows
if sys.stdout.encoding != "utf-8":
    try:
        sys.stdout.reconfigure(encoding="utf-8")
    except AttributeError:
        import codecs
        sys.stdout = codecs.getwriter("utf-8")(sys.stdout.buffer, "strict")

from src.diffula.config import ATTACK_MODES, DEFAULT_CONFIG_PATH, TRACE_LEVELS, with_overrides
from src.diffula.data_loader import load_run_config
from src.diffula.errors import ConfigError, DiffulaError
from src.diffula.runner import (
    cmd_attack,
    cmd_capture,
    cmd_corpus,
    cmd_report,
    cmd_sample,
    cmd_train_adapter,
    cmd_train_prior,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffula_lab",
        description="User-level gradient inversion with a diffusion prior (desk-scale laboratory).",
    )
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG_PATH, help="run config (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override the top-level seed")
    parser.add_argument("--workers", type=int, default=None, help="parallel attack workers")
    parser.add_argument("--trace-level", choices=TRACE_LEVELS, default=None, help="log level")

    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="generate the synthetic user corpus")
    corpus.add_argument("--force", action="store_true", help="overwrite an existing corpus")

    sub.add_parser("train-prior", help="train the toy diffusion prior")
    sub.add_parser("train-adapter", help="train the toy attribute adapter")
    sub.add_parser("capture", help="simulate federated rounds and store gradient captures")

    attack = sub.add_parser("attack", help="run attacks and score them")
    attack.add_argument("--mode", choices=ATTACK_MODES, default=None)

    report = sub.add_parser("report", help="aggregate table and plots from run directories")
    report.add_argument("runs", nargs="+", type=Path)

    sample = sub.add_parser("sample", help="draw an image grid from the trained prior")
    sample.add_argument("--count", type=int, default=16)
    return parser


def run(args: argparse.Namespace) -> None:
    config = load_run_config(args.config)
    config = with_overrides(
        config,
        seed=args.seed,
        workers=args.workers,
        trace_level=args.trace_level,
        mode=getattr(args, "mode", None),
    )
    logging.getLogger().setLevel(config.trace_level.upper())

    if args.command == "corpus":
        print(f"Corpus: {cmd_corpus(config, force=args.force)}")
    elif args.command == "train-prior":
        print(f"Prior checkpoint: {cmd_train_prior(config)}")
    elif args.command == "train-adapter":
        print(f"Adapter checkpoint: {cmd_train_adapter(config)}")
    elif args.command == "capture":
        print(f"Captures: {cmd_capture(config)}")
    elif args.command == "attack":
        print(f"Run directory: {cmd_attack(config)}")
    elif args.command == "report":
        print(f"Report: {cmd_report(config, args.runs)['directory']}")
    elif args.command == "sample":
        print(f"Samples: {cmd_sample(config, args.count)}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=(args.trace_level or "info").upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        run(args)
        return EXIT_OK

    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"\nErro de configuracao: {e}\n")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error(f"Error: {e}")
        print(f"\nErro: Arquivo nao encontrado: {e}\n")
        return EXIT_CONFIG
    except json.JSONDecodeError as e:
        logger.error(f"Error parsing JSON file: {e}")
        print(f"\nErro: Arquivo JSON invalido: {e}\n")
        return EXIT_CONFIG
    except DiffulaError as e:
        logger.error(f"Run failed: {e}")
        print(f"\nErro de execucao: {e}\n")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print(f"\nErro inesperado: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
