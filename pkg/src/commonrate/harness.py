"""Seeded Monte Carlo experiment driver, aggregation, CSV emission, and CLI.

One drop realizes user positions and shadowing once and shares them across
every scenario and load (paired comparison), so per-drop rate orderings are
meaningful.  Drops run independently and merge in drop order, which keeps the
output byte-identical regardless of worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import geometry, lp, spectral
from .channel import ChannelModel, build_drop, build_gain_system, GainSystem
from .geometry import build_layout, layout_to_dict, place_lowpower
from .ratemax import (ScenarioKind, maximize_single, maximize_two_layer,
                      relay_decode_rates, removal_order, uncoordinated_rate)

DEFAULT_LOADS = (0.80, 0.85, 0.90, 0.95, 1.00)
ALL_SCENARIOS = tuple(kind.value for kind in ScenarioKind)
PRESETS = ("cost231", "raman")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


class ExperimentError(RuntimeError):
    """Too many drops failed or the run aborted."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1
    drops: int = 100
    loads: tuple[float, ...] = DEFAULT_LOADS
    scenarios: tuple[str, ...] = ALL_SCENARIOS
    preset: str = "cost231"
    p_max_dbm: float = 43.0
    q_max_micro_dbm: float = 33.0
    q_max_relay_dbm: float = 30.0
    rate_init: float = 0.1
    rate_step: float = 0.1
    noise_power_dbm: float = -95.0
    cell_radius_m: float = 1000.0
    rings: int = 2
    lowpower_per_cell: int = 3
    workers: int = 1
    max_place_retries: int = 1000
    discard_mode: str = "per_scenario"      # or "single_layer"
    decode_set_mode: str = "per_rate"       # or "at_init"
    association_shadowing: bool = True
    association_margin_db: float = 0.0
    boresight0_deg: float = 90.0
    shadow_sigma_macro: float | None = None      # None: preset default
    shadow_sigma_lowpower: float | None = None
    d_min_macro_m: float = 35.0
    d_min_lowpower_m: float = 20.0
    max_failure_fraction: float = 0.05

    def validate(self) -> list[str]:
        errors = []
        if self.seed < 0:
            errors.append(f"seed: must be >= 0, got {self.seed}")
        if self.drops < 1:
            errors.append(f"drops: must be >= 1, got {self.drops}")
        if not self.loads:
            errors.append("loads: must not be empty")
        for load in self.loads:
            if not 0.0 < load <= 1.0:
                errors.append(f"loads: entry {load} outside (0, 1]")
        known = set(ALL_SCENARIOS)
        for sc in self.scenarios:
            if sc not in known:
                errors.append(f"scenarios: unknown entry {sc!r}")
        if self.preset not in PRESETS:
            errors.append(f"preset: must be one of {PRESETS}, got {self.preset!r}")
        if self.rate_init <= 0:
            errors.append(f"rate_init: must be positive, got {self.rate_init}")
        if self.rate_step <= 0:
            errors.append(f"rate_step: must be positive, got {self.rate_step}")
        if self.cell_radius_m <= 0:
            errors.append(f"cell_radius_m: must be positive, got {self.cell_radius_m}")
        if self.rings < 0:
            errors.append(f"rings: must be >= 0, got {self.rings}")
        if self.lowpower_per_cell not in (1, 3):
            errors.append(f"lowpower_per_cell: must be 1 or 3, got {self.lowpower_per_cell}")
        two_layer = {"macro_micro", "macro_relay", "uncoordinated_micro",
                     "uncoordinated_relay"}
        if self.lowpower_per_cell != 3 and two_layer & set(self.scenarios):
            errors.append("lowpower_per_cell: two-layer scenarios need one "
                          "low-power station per sector (3 per cell)")
        if self.workers < 1:
            errors.append(f"workers: must be >= 1, got {self.workers}")
        if self.max_place_retries < 1:
            errors.append(f"max_place_retries: must be >= 1, got {self.max_place_retries}")
        if self.discard_mode not in ("per_scenario", "single_layer"):
            errors.append(f"discard_mode: unknown {self.discard_mode!r}")
        if self.decode_set_mode not in ("per_rate", "at_init"):
            errors.append(f"decode_set_mode: unknown {self.decode_set_mode!r}")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            errors.append(f"max_failure_fraction: outside [0, 1], "
                          f"got {self.max_failure_fraction}")
        return errors

    def channel_model(self) -> ChannelModel:
        overrides = {"noise_power_dbm": self.noise_power_dbm,
                     "d_min_macro": self.d_min_macro_m,
                     "d_min_lowpower": self.d_min_lowpower_m}
        if self.shadow_sigma_macro is not None:
            overrides["shadow_sigma_macro"] = self.shadow_sigma_macro
        if self.shadow_sigma_lowpower is not None:
            overrides["shadow_sigma_lowpower"] = self.shadow_sigma_lowpower
        if self.preset == "raman":
            return ChannelModel.shared_raman(**overrides)
        return ChannelModel.cost231(**overrides)

    @property
    def p_max_w(self) -> float:
        return dbm_to_watt(self.p_max_dbm)

    @property
    def q_max_micro_w(self) -> float:
        return dbm_to_watt(self.q_max_micro_dbm)

    @property
    def q_max_relay_w(self) -> float:
        return dbm_to_watt(self.q_max_relay_dbm)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f: None for f in cls.__dataclass_fields__}
        unknown = [k for k in data if k not in known]
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for key in ("loads", "scenarios"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_toml(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data)


@dataclass(frozen=True)
class ExperimentRow:
    scenario: str
    load: float
    drop_id: int
    common_rate: float
    total_power_w: float
    active_relays: int
    iterations: int
    wall_time_s: float = 0.0


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    load: float
    mean_rate: float
    stderr: float
    drops: int


@dataclass(frozen=True)
class ExperimentResult:
    rows: list[ExperimentRow]
    summary: list[SummaryRow]
    failures: list[tuple[int, str]]


_FAMILY = {
    ScenarioKind.SINGLE_LAYER: "single",
    ScenarioKind.UNCOORDINATED_SINGLE: "single",
    ScenarioKind.MACRO_MICRO: "micro",
    ScenarioKind.UNCOORDINATED_MICRO: "micro",
    ScenarioKind.MACRO_RELAY: "relay",
    ScenarioKind.UNCOORDINATED_RELAY: "relay",
}


def run_drop(config: ExperimentConfig, drop_id: int) -> list[ExperimentRow]:
    """Simulate one drop across every configured scenario and load."""
    model = config.channel_model()
    layout = build_layout(config.cell_radius_m, config.rings, config.boresight0_deg)
    lowpower = place_lowpower(layout, config.lowpower_per_cell)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, drop_id]))
    drop = build_drop(layout, model, rng, lowpower, config.max_place_retries,
                      association_shadowing=config.association_shadowing,
                      association_margin_db=config.association_margin_db)

    n = layout.n_sectors
    gains_all = build_gain_system(drop, np.arange(n), model)
    family_q = {"single": 0.0, "micro": config.q_max_micro_w,
                "relay": config.q_max_relay_w}

    orders: dict[str, list[int]] = {}
    subsets: dict[tuple[str, float], tuple[np.ndarray, GainSystem]] = {}
    decode: dict[tuple[str, float], np.ndarray] = {}

    def active_subset(family: str, load: float):
        if config.discard_mode == "single_layer":
            family = "single"
        key = (family, load)
        if key not in subsets:
            if family not in orders:
                orders[family] = removal_order(gains_all, config.p_max_w,
                                               family_q[family])
            keep = math.ceil(load * n)
            removed = set(orders[family][:n - keep])
            active = np.array(sorted(set(range(n)) - removed), dtype=int)
            subsets[key] = (active, build_gain_system(drop, active, model))
        return key, subsets[key]

    def decode_for(key, active):
        if key not in decode:
            decode[key] = relay_decode_rates(drop, active, model, config.p_max_w)
        return decode[key]

    rows = []
    for name in config.scenarios:
        kind = ScenarioKind(name)
        for load in config.loads:
            started = time.perf_counter()
            key, (active, gs) = active_subset(_FAMILY[kind], load)
            if kind is ScenarioKind.SINGLE_LAYER:
                result = maximize_single(gs, config.p_max_w, config.rate_init,
                                         config.rate_step, user_ids=active)
            elif kind is ScenarioKind.MACRO_MICRO:
                result = maximize_two_layer(gs, config.p_max_w, config.q_max_micro_w,
                                            kind, rate_init=config.rate_init,
                                            rate_step=config.rate_step,
                                            user_ids=active)
            elif kind is ScenarioKind.MACRO_RELAY:
                result = maximize_two_layer(gs, config.p_max_w, config.q_max_relay_w,
                                            kind, decode_rates=decode_for(key, active),
                                            rate_init=config.rate_init,
                                            rate_step=config.rate_step,
                                            decode_mode=config.decode_set_mode,
                                            user_ids=active)
            elif kind is ScenarioKind.UNCOORDINATED_SINGLE:
                result = uncoordinated_rate(gs, kind, config.p_max_w, user_ids=active)
            elif kind is ScenarioKind.UNCOORDINATED_MICRO:
                result = uncoordinated_rate(gs, kind, config.p_max_w,
                                            config.q_max_micro_w, user_ids=active)
            else:
                result = uncoordinated_rate(gs, kind, config.p_max_w,
                                            config.q_max_relay_w,
                                            decode_rates=decode_for(key, active),
                                            user_ids=active)
            total = float(np.sum(result.powers.macro_power))
            if result.powers.low_power is not None:
                total += float(np.sum(result.powers.low_power))
            rows.append(ExperimentRow(
                scenario=name, load=load, drop_id=drop_id,
                common_rate=result.common_rate, total_power_w=total,
                active_relays=len(result.active_relays),
                iterations=result.iterations,
                wall_time_s=time.perf_counter() - started))
    return rows


def summarize(rows: list[ExperimentRow]) -> list[SummaryRow]:
    """Arithmetic mean and standard error of the common rate per (scenario, load)."""
    groups: dict[tuple[str, float], list[float]] = {}
    for row in rows:
        groups.setdefault((row.scenario, row.load), []).append(row.common_rate)
    out = []
    for (scenario, load), rates in groups.items():
        arr = np.array(rates)
        stderr = float(np.std(arr, ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        out.append(SummaryRow(scenario=scenario, load=load,
                              mean_rate=float(np.mean(arr)), stderr=stderr,
                              drops=len(arr)))
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run all drops, aggregate, and fail loudly if too many drops abort."""
    errors = config.validate()
    if errors:
        raise ConfigError("; ".join(errors))

    per_drop: dict[int, list[ExperimentRow]] = {}
    failures: list[tuple[int, str]] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(run_drop, config, d): d for d in range(config.drops)}
            for fut in as_completed(futures):
                drop_id = futures[fut]
                try:
                    per_drop[drop_id] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded, bounded below
                    failures.append((drop_id, str(exc)))
    else:
        for drop_id in range(config.drops):
            try:
                per_drop[drop_id] = run_drop(config, drop_id)
            except Exception as exc:  # noqa: BLE001
                failures.append((drop_id, str(exc)))

    failures.sort()
    if len(failures) > config.max_failure_fraction * config.drops:
        detail = "; ".join(f"drop {d}: {msg}" for d, msg in failures[:5])
        raise ExperimentError(
            f"{len(failures)}/{config.drops} drops failed (limit "
            f"{config.max_failure_fraction:.0%}): {detail}")

    rows = [row for drop_id in sorted(per_drop) for row in per_drop[drop_id]]
    return ExperimentResult(rows=rows, summary=summarize(rows), failures=failures)


ROWS_HEADER = "scenario,load,drop_id,common_rate,total_power_w,active_relays,iterations"
SUMMARY_HEADER = "scenario,load,mean_rate,stderr,drops"


def emit_csv(rows: list[ExperimentRow], path: str | Path) -> None:
    """Write one CSV line per row; rates carry 4 decimals, '.' decimal point.

    Wall times stay in memory only: they vary between runs and would break
    the byte-identical reproducibility guarantee of the output files.
    """
    with open(Path(path), "w") as fh:
        fh.write(ROWS_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.scenario},{r.load:.4f},{r.drop_id},{r.common_rate:.4f},"
                     f"{r.total_power_w:.6e},{r.active_relays},{r.iterations}\n")


def read_rows(path: str | Path) -> list[ExperimentRow]:
    rows = []
    with open(Path(path)) as fh:
        header = fh.readline().strip()
        if header != ROWS_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for line in fh:
            sc, load, drop_id, rate, power, relays, iters = line.strip().split(",")
            rows.append(ExperimentRow(scenario=sc, load=float(load),
                                      drop_id=int(drop_id), common_rate=float(rate),
                                      total_power_w=float(power),
                                      active_relays=int(relays),
                                      iterations=int(iters)))
    return rows


def emit_summary_csv(summary: list[SummaryRow], path: str | Path) -> None:
    with open(Path(path), "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for s in summary:
            fh.write(f"{s.scenario},{s.load:.4f},{s.mean_rate:.4f},"
                     f"{s.stderr:.6f},{s.drops}\n")


# --- oracle suites -----------------------------------------------------------

def random_single_layer_gains(rng: np.random.Generator, n: int,
                              target_margin: float = 0.9) -> tuple[GainSystem, float]:
    """Random feasible single-layer instance: gains plus a target below 1/rho."""
    cross = rng.uniform(0.05, 1.0, size=(n, n))
    np.fill_diagonal(cross, 0.0)
    rho = spectral.spectral_radius(cross) if n > 1 else 1.0
    cross = cross / rho  # unit spectral radius
    macro = cross + np.eye(n)
    noise = rng.uniform(0.1, 1.0, size=n)
    target = rng.uniform(0.1, target_margin)
    return GainSystem.from_raw(macro, np.zeros((n, n)), noise), target


def oracle_spectral(seed: int = 0, trials: int = 100, tol: float = 1e-8) -> tuple[bool, str]:
    """Power iteration against the dense eigensolver on random nonneg matrices."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        m = rng.uniform(0.0, 1.0, size=(n, n))
        expected = float(np.max(np.abs(np.linalg.eigvals(m))))
        got = spectral.spectral_radius(m)
        worst = max(worst, abs(got - expected) / expected)
    return worst <= tol, f"worst relative error {worst:.3e} over {trials} matrices"


def oracle_lp_vs_analytic(seed: int = 0, trials: int = 100,
                          tol: float = 1e-6) -> tuple[bool, str]:
    """Uncapped LP minimum power must match the analytic fixed point."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 11))
        gains, target = random_single_layer_gains(rng, n)
        analytic = spectral.solve_single_analytic(gains.norm_macro,
                                                  gains.norm_noise, target)
        problem = lp.MinPowerProblem(gains=gains, sinr_target=target,
                                     macro_cap_w=np.inf, low_cap_w=0.0,
                                     relay_active=np.zeros(n, dtype=bool))
        solved = lp.solve_min_power(problem)
        if solved.status is not lp.LPStatus.OPTIMAL:
            return False, f"LP unexpectedly infeasible at target {target:.4f}"
        diff = np.linalg.norm(solved.macro_power - analytic.macro_power)
        worst = max(worst, diff / np.linalg.norm(analytic.macro_power))
    return worst <= tol, f"worst relative gap {worst:.3e} over {trials} instances"


def oracle_coupling_identity(seed: int = 0, trials: int = 100,
                             tol: float = 1e-12) -> tuple[bool, str]:
    """mix @ coupling must reproduce the stacked cross-gain matrix."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        ratio = rng.uniform(0.0, 5.0, size=n)
        macro = rng.uniform(0.0, 1.0, size=(n, n))
        low = rng.uniform(0.0, 1.0, size=(n, n))
        np.fill_diagonal(macro, 0.0)
        np.fill_diagonal(low, 0.0)
        sys_ = spectral.build_two_layer_coupling(ratio, macro, low)
        mix = np.hstack([np.eye(n), np.diag(ratio)])
        err = np.max(np.abs(mix @ sys_.coupling - np.hstack([macro, low])))
        worst = max(worst, err)
    return worst <= tol, f"worst identity residual {worst:.3e} over {trials} systems"


def run_oracles(seed: int = 0, stream=None) -> bool:
    stream = stream or sys.stdout
    suites = [("spectral-radius vs dense eigensolver", oracle_spectral),
              ("uncapped LP vs analytic fixed point", oracle_lp_vs_analytic),
              ("two-layer coupling right-inverse identity", oracle_coupling_identity)]
    all_ok = True
    for label, fn in suites:
        ok, detail = fn(seed=seed)
        all_ok &= ok
        stream.write(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}\n")
    return all_ok


# --- CLI ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="commonrate",
                     description="Common-rate maximization experiments for "
                                 "single- and two-layer cellular downlinks")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a Monte Carlo sweep")
    run_p.add_argument("config", nargs="?", help="TOML config file (optional)")
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--drops", type=int)
    run_p.add_argument("--workers", type=int)
    run_p.add_argument("--preset", choices=PRESETS)
    run_p.add_argument("--out", default="results", help="output directory")

    val_p = sub.add_parser("validate-config", help="check a TOML config file")
    val_p.add_argument("config")

    dump_p = sub.add_parser("dump-layout", help="write the layout as JSON")
    dump_p.add_argument("--cell-radius", type=float, default=1000.0)
    dump_p.add_argument("--rings", type=int, default=2)
    dump_p.add_argument("--lowpower-per-cell", type=int, default=3)
    dump_p.add_argument("--out", help="output file (default: stdout)")

    orc_p = sub.add_parser("oracle", help="run the analytic/LP oracle suites")
    orc_p.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_toml(path)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "validate-config":
        try:
            config = ExperimentConfig.from_toml(args.config)
        except (ConfigError, OSError, tomllib.TOMLDecodeError, TypeError) as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 1
        errors = config.validate()
        if errors:
            for err in errors:
                print(f"invalid config: {err}", file=sys.stderr)
            return 1
        print("config ok")
        return 0

    if args.command == "dump-layout":
        layout = build_layout(args.cell_radius, args.rings)
        lowpower = place_lowpower(layout, args.lowpower_per_cell)
        text = json.dumps(layout_to_dict(layout, lowpower), indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
        return 0

    if args.command == "oracle":
        return 0 if run_oracles(seed=args.seed) else 2

    # run
    try:
        config = _load_config(args.config)
    except (ConfigError, OSError, tomllib.TOMLDecodeError, TypeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    overrides = {}
    for key in ("seed", "drops", "workers", "preset"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if overrides:
        config = replace(config, **overrides)
    errors = config.validate()
    if errors:
        for err in errors:
            print(f"invalid config: {err}", file=sys.stderr)
        return 1

    try:
        result = run_experiment(config)
    except (ExperimentError, geometry.PlacementError, lp.LPSolverError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 2

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    emit_csv(result.rows, outdir / "rows.csv")
    emit_summary_csv(result.summary, outdir / "summary.csv")
    if result.failures:
        print(f"warning: {len(result.failures)} drops failed and were excluded",
              file=sys.stderr)
    for s in result.summary:
        print(f"{s.scenario:<22} load {s.load:.2f}  "
              f"rate {s.mean_rate:.4f} +/- {s.stderr:.4f} ({s.drops} drops)")
    print(f"wrote {outdir / 'rows.csv'} and {outdir / 'summary.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
