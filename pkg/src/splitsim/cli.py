"""Command-line entry point: run one experiment or a named preset.

Usage:
    splitsim --config experiment.json [--out DIR] [--seed N]
    splitsim --preset naive_attack [--out DIR] [--seed N]

A config file is a JSON object of ExperimentConfig fields; it may name a
``preset`` to start from, with remaining keys overriding the preset's
defaults. Presets that compare several settings write one subdirectory per
point; single runs write scores.csv, eval.csv and summary.json directly
into the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig, config_from_dict
from .errors import ConfigError
from .metrics import emit_logs
from .protocol import run_experiment


def _attack_base(**overrides) -> ExperimentConfig:
    """Canonical poisoning scenario: 2 of 10 clients stamp a pixel trigger."""
    cfg = ExperimentConfig(pmr=0.2, attack="naive_poison")
    return cfg.replace(**overrides) if overrides else cfg


def preset_points(name: str) -> list[tuple[str, ExperimentConfig]]:
    """Expand a preset into named experiment points."""
    if name == "no_attack":
        return [("defense_on", ExperimentConfig()),
                ("defense_off", ExperimentConfig(defense_enabled=False))]
    if name == "naive_attack":
        return [("defense_off", _attack_base(defense_enabled=False)),
                ("defense_on", _attack_base())]
    if name in ("adaptive_rotation", "adaptive_frequency", "adaptive_both",
                "adaptive_euclidean"):
        return [
            ("base_reference", _attack_base(attack=name)),
            ("shadow_reference", _attack_base(attack=name,
                                              reference_mode="shadow_backbone")),
        ]
    if name == "tail_only":
        return [("defense_off", _attack_base(attack="tail_only",
                                             defense_enabled=False)),
                ("defense_on", _attack_base(attack="tail_only"))]
    if name == "label_swap":
        return [("defense_off", _attack_base(attack="label_swap",
                                             defense_enabled=False)),
                ("defense_on", _attack_base(attack="label_swap"))]
    if name == "krum_baseline":
        return [("krum", _attack_base(iid_rate=0.6, baseline="krum"))]
    if name == "dp_baseline":
        return [("dp", _attack_base(iid_rate=0.6, baseline="dp"))]
    if name == "pmr_sweep":
        return [(f"pmr_{pmr}", _attack_base(pmr=pmr)) for pmr in (0.1, 0.2, 0.4)]
    if name == "pdr_sweep":
        return [(f"pdr_{pdr}", _attack_base(pdr=pdr))
                for pdr in (0.25, 0.5, 0.75, 1.0)]
    if name == "iid_sweep":
        return [(f"iid_{rate}", _attack_base(iid_rate=rate))
                for rate in (0.6, 0.8, 1.0)]
    if name == "clients_sweep":
        return [(f"clients_{n}", _attack_base(n_clients=n)) for n in (5, 10, 20)]
    raise ConfigError(f"unknown preset {name!r}")


PRESET_NAMES = (
    "no_attack", "naive_attack", "adaptive_rotation", "adaptive_frequency",
    "adaptive_both", "adaptive_euclidean", "tail_only", "label_swap",
    "krum_baseline", "dp_baseline", "pmr_sweep", "pdr_sweep", "iid_sweep",
    "clients_sweep",
)


def parse_config(path) -> ExperimentConfig:
    """Load a JSON config file, expanding an optional ``preset`` base."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    base = doc.pop("preset", None)
    if base is None:
        return config_from_dict(doc)
    defaults = preset_points(base)[0][1].to_dict()
    defaults.update(doc)
    return config_from_dict(defaults)


@dataclass
class RunSpec:
    """One CLI invocation: exactly one of config path or preset name."""

    config_path: str | None = None
    preset: str | None = None
    out_dir: str = "runs/out"
    seed: int | None = None

    def points(self) -> list[tuple[str, ExperimentConfig]]:
        if (self.config_path is None) == (self.preset is None):
            raise ConfigError("provide exactly one of --config or --preset")
        if self.config_path is not None:
            points = [("run", parse_config(self.config_path))]
        else:
            points = preset_points(self.preset)
        if self.seed is not None:
            points = [(name, cfg.replace(seed=self.seed)) for name, cfg in points]
        return [(name, cfg.validate()) for name, cfg in points]


def run(spec: RunSpec) -> int:
    """Execute a run spec; returns the process exit status."""
    try:
        points = spec.points()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_root = Path(spec.out_dir)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
        probe = out_root / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out_root}: {exc}", file=sys.stderr)
        return 2

    for name, cfg in points:
        target = out_root if len(points) == 1 else out_root / name
        log = run_experiment(cfg)
        summary = emit_logs(log, target)
        final = summary["final"]
        print(
            f"[{name}] rounds={summary['rounds_completed']} "
            f"ma={final['ma']:.4f} ba_strict={final['ba_strict']:.4f} "
            f"ba_raw={final['ba_raw']:.4f} "
            f"attacker_selections={summary['attacker_selections']} "
            f"defense_time_s={summary['defense']['total_analysis_time_s']:.3f}"
        )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="splitsim",
        description="Sequential split-learning simulator with checkpoint screening",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="path to a JSON experiment config")
    source.add_argument("--preset", choices=PRESET_NAMES,
                        help="named experiment preset")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    args = parser.parse_args(argv)

    default_out = f"runs/{args.preset or Path(args.config).stem}"
    return run(RunSpec(
        config_path=args.config,
        preset=args.preset,
        out_dir=args.out or default_out,
        seed=args.seed,
    ))


if __name__ == "__main__":
    sys.exit(main())
