"""``fairgen`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigError, DataError, FairGenError, NumericError
from .pipeline import Run

log = logging.getLogger("fairgen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

STAGES = {
    "synth": ("generate the synthetic gender-biased corpus", lambda run, a: run.synth()),
    "prepare": ("ingest, clean, normalize and segment the corpus", lambda run, a: run.prepare()),
    "train-facegen": ("train the adversarial behavior generator", lambda run, a: run.train_facegen()),
    "train-fairgen": ("fine-tune the generator with the gender adversary",
                      lambda run, a: run.train_fairgen()),
    "train-probe": ("train the gender probe on SetClassif", lambda run, a: run.train_probe()),
    "evaluate": ("probe leakage and DTW metrics on TestSet", lambda run, a: run.evaluate()),
    "report": ("assemble the evaluation tables", lambda run, a: _report(run, a)),
}


def _report(run: Run, args):
    _, text = run.report(force=args.force)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config (// and # comment lines allowed)")
    common.add_argument("--out", metavar="DIR", default="runs/default", help="artifact directory")
    common.add_argument("--seed", type=int, help="run seed, shared by every stage")
    common.add_argument("--scale", type=float, help="corpus size multiplier")
    common.add_argument("--select", choices=("median", "random"), help="probe selection rule")
    common.add_argument("--force", action="store_true", help="let report mix config fingerprints")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fairgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, _) in STAGES.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def setup_logging(verbose=False):
    """One stderr handler on the package logger, replaced on every call."""
    for h in [h for h in log.handlers if getattr(h, "_fairgen", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    handler._fairgen = True
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbose else logging.INFO)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        cfg = load_config(args.config, seed=args.seed, scale=args.scale, select=args.select)
        log.info("resolved config %s: %s", cfg.fingerprint(), json.dumps(cfg.to_dict(), sort_keys=True))
        STAGES[args.command][1](Run(cfg, args.out), args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except FairGenError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
