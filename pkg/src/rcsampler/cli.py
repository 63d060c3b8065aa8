"""``rcsampler`` command line: run, plan, scaling, energy, reproduce, oracle-check.

Exit codes: 0 success, 2 configuration error, 3 numeric fault, 4 capacity error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import RCSError
from .harness import EnergyModel, ExperimentConfig, cmd_energy, cmd_plan, cmd_run, cmd_scaling, oracle_check
from .reproduce import FIGURES, cmd_reproduce

log = logging.getLogger("rcsampler")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    # flags win over the file
    for name in ("seed", "workers", "out", "precision"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    return cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=str)
    p.add_argument("--precision", choices=("f64", "f32"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcsampler", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="full pipeline with oracle-backed metrics"))
    _common(sub.add_parser("plan", help="write the contraction plan only"))
    _common(sub.add_parser("oracle-check", help="exact contraction vs statevector"))

    sc = sub.add_parser("scaling", help="wall time against worker count")
    _common(sc)
    sc.add_argument("--worker-counts", type=int, nargs="+", default=[1, 2, 4, 8])
    sc.add_argument("--extrapolate", type=int)
    sc.add_argument("--repeats", type=int, default=1)

    en = sub.add_parser("energy", help="declared-power energy model")
    en.add_argument("--power", type=float, required=True, help="watts per device")
    en.add_argument("--count", type=int, default=1)
    en.add_argument("--seconds", type=float, required=True)
    en.add_argument("--out", type=str)

    rp = sub.add_parser("reproduce", help="emit a figure dataset as CSV")
    rp.add_argument("figure", choices=FIGURES)
    rp.add_argument("--out", type=str, default="out")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = _config(args)
            rep = cmd_run(cfg)
            print(f"xeb_topk={rep.xeb:.6g} fidelity={rep.fidelity:.6g} predicted={rep.predicted_xeb:.6g} "
                  f"direct_xeb={rep.direct_xeb:.6g} -> {cfg.out}")
        elif args.command == "plan":
            cfg = _config(args)
            plan = cmd_plan(cfg, cfg.out)
            print(f"steps={len(plan.steps)} sliced={len(plan.sliced)} broken={len(plan.broken)} "
                  f"flops={plan.time_flops} peak_bytes={plan.peak_bytes} -> {cfg.out}/plan.json")
        elif args.command == "oracle-check":
            err = oracle_check(_config(args))
            print(f"max relative amplitude error {err:.3e}")
        elif args.command == "scaling":
            cfg = _config(args)
            rep = cmd_scaling(cfg, args.worker_counts, args.extrapolate, args.repeats, cfg.out)
            print(json.dumps(rep.to_dict(), indent=2))
        elif args.command == "energy":
            rep = cmd_energy(EnergyModel(args.power, args.count, args.seconds))
            text = json.dumps(rep.to_dict(), indent=2)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "energy.json").write_text(text, encoding="utf-8")
            print(text)
        elif args.command == "reproduce":
            _, path = cmd_reproduce(args.figure, args.out)
            print(path)
    except RCSError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
