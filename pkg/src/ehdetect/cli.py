"""Command-line front end: powermap, sweep, simulate, validate.

All CSV output is byte-deterministic for fixed inputs: floats are written
with repr (round-trip exact), rows have a documented order, and the header
comments carry parameters rather than timestamps.

Exit codes: 0 success, 2 scenario or validation failure, 3 a fixed point or
price search did not converge, 4 file-system errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .battery import ConvergenceError, arrival_unit_pmf, gain_level_probs
from .config import (
    FC_KNOWLEDGE_MODES,
    TRANSMIT_PROB_MODELS,
    Scenario,
    ScenarioError,
    load_scenario,
    validate_convex_region,
)
from .detection import (
    gaussian_j_divergence,
    mixture_j_quadrature,
    moment_match,
    roc_coefficients,
    sensor_j_divergence,
)
from .optimizer import (
    OptimizationOutcome,
    evaluate_unit_map,
    exhaustive_best_map,
    optimize_power_map,
)
from .simulator import calibrate_threshold, run_monte_carlo

__all__ = ["main", "build_parser", "read_table", "SweepSpec"]

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

CALIBRATION_SEED_OFFSET = 10 ** 6

SWEEP_VARIABLES = ("power_budget", "mean_harvest", "capacity")


@dataclass(frozen=True)
class SweepSpec:
    """One scenario knob and the ascending positive values to sweep it over."""

    variable: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.variable not in SWEEP_VARIABLES:
            raise ScenarioError(
                f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.variable!r}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) == 0:
            raise ScenarioError("sweep needs at least one value")
        if any(not math.isfinite(v) or v <= 0.0 for v in vals):
            raise ScenarioError("sweep values must be finite and > 0")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ScenarioError("sweep values must be strictly ascending")
        if self.variable == "capacity" and any(v != int(v) for v in vals):
            raise ScenarioError("capacity sweep values must be whole numbers")
        object.__setattr__(self, "values", vals)

    def apply(self, scenario: Scenario, value: float) -> Scenario:
        if self.variable == "capacity":
            net = replace(scenario.network, capacity=int(value))
        else:
            net = replace(scenario.network, **{self.variable: value})
        return replace(scenario, network=net)


# ---------------------------------------------------------------------------
# deterministic CSV helpers


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path, comments: dict, columns, rows) -> None:
    buf = io.StringIO()
    for key, value in comments.items():
        buf.write(f"# {key}={_cell(value)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_table(path) -> tuple[dict, list[dict]]:
    """Read a CSV written by write_table: (header comments, row dicts)."""
    meta: dict[str, str] = {}
    lines = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            lines.append(line)
    rows = list(csv.DictReader(lines))
    return meta, rows


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _load(path) -> Scenario:
    return load_scenario(path)


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    net = scenario.network
    changes = {}
    if getattr(args, "transmit_prob_model", None):
        changes["transmit_prob_model"] = args.transmit_prob_model
    if getattr(args, "fc_knowledge", None):
        changes["fc_knowledge"] = args.fc_knowledge
    if changes:
        scenario = replace(scenario, network=replace(net, **changes))
    return scenario


def _power_map_rows(outcome: OptimizationOutcome):
    for n, (p, u) in enumerate(zip(outcome.power_map.powers, outcome.power_map.units)):
        for l in range(p.shape[0]):
            for k in range(p.shape[1]):
                yield (n, l, k, float(p[l, k]), int(u[l, k]))


def _write_outcome(outdir, scenario: Scenario, outcome: OptimizationOutcome) -> None:
    os.makedirs(outdir, exist_ok=True)
    net = scenario.network
    common = {
        "format": "power_map",
        "sensors": scenario.num_sensors,
        "capacity": net.capacity,
        "unit_energy": net.unit_energy,
        "slot_seconds": net.slot_seconds,
        "power_budget": net.power_budget,
        "lambda_star": outcome.lambda_star,
        "expected_power": outcome.expected_power,
        "objective_j": outcome.objective_j,
        "converged": outcome.converged,
    }
    write_table(
        os.path.join(outdir, "power_map.csv"), common,
        ("sensor", "level", "battery_state", "power_watts", "alpha_units"),
        _power_map_rows(outcome),
    )
    write_table(
        os.path.join(outdir, "battery_psi.csv"),
        {"format": "battery_psi", "sensors": scenario.num_sensors,
         "capacity": net.capacity},
        ("sensor", "state", "probability"),
        ((n, k, float(psi.psi[k]))
         for n, psi in enumerate(outcome.psi_star)
         for k in range(psi.psi.size)),
    )
    summary = [
        ("lambda_star", outcome.lambda_star),
        ("objective_j", outcome.objective_j),
        ("expected_power", outcome.expected_power),
        ("outer_iterations", outcome.outer_iterations),
        ("converged", outcome.converged),
        ("max_interior_residual", outcome.kkt.max_interior_residual),
        ("slackness", outcome.kkt.slackness),
        ("warning_count", len(outcome.warnings)),
    ]
    write_table(os.path.join(outdir, "summary.csv"), {"format": "summary"},
                ("metric", "value"), summary)


def cmd_powermap(args) -> int:
    scenario = _apply_overrides(_load(args.scenario), args)
    outcome = optimize_power_map(scenario)
    _write_outcome(args.out, scenario, outcome)
    for note in outcome.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(f"power map for {scenario.num_sensors} sensor(s) written to {args.out} "
          f"(lambda_star={outcome.lambda_star:.6g}, "
          f"expected_power={outcome.expected_power:.6g} W, "
          f"objective_j={outcome.objective_j:.6g})")
    return EXIT_OK if outcome.converged else EXIT_CONVERGENCE


def _simulate_point(scenario: Scenario, outcome: OptimizationOutcome, args,
                    measure_seed: int, calibrate_seed: int):
    calibration_samples = args.calibration_samples or args.samples
    psis = outcome.psi_star
    threshold, _ = calibrate_threshold(
        scenario, outcome.power_map, args.target_pf, calibration_samples,
        calibrate_seed, warmup=args.warmup, psis=psis,
    )
    report = run_monte_carlo(
        scenario, outcome.power_map, threshold, args.samples, measure_seed,
        warmup=args.warmup, psis=psis,
    )
    return threshold, report


def cmd_simulate(args) -> int:
    scenario = _apply_overrides(_load(args.scenario), args)
    outcome = optimize_power_map(scenario)
    if not outcome.converged:
        for note in outcome.warnings:
            print(f"warning: {note}", file=sys.stderr)
        print("power map did not converge; not simulating", file=sys.stderr)
        return EXIT_CONVERGENCE
    threshold, report = _simulate_point(
        scenario, outcome, args, args.seed, args.seed + CALIBRATION_SEED_OFFSET)
    os.makedirs(args.out, exist_ok=True)
    rows = [
        ("pd_fc", report.pd_fc, report.pd_fc - report.ci_pd, report.pd_fc + report.ci_pd),
        ("pf_fc", report.pf_fc, report.pf_fc - report.ci_pf, report.pf_fc + report.ci_pf),
        ("threshold", threshold, "", ""),
        ("target_pf", args.target_pf, "", ""),
        ("samples", report.samples, "", ""),
        ("seed", args.seed, "", ""),
        ("lambda_star", outcome.lambda_star, "", ""),
        ("expected_power", outcome.expected_power, "", ""),
        ("objective_j", outcome.objective_j, "", ""),
    ]
    write_table(os.path.join(args.out, "report.csv"),
                {"format": "mc_report", "sensors": scenario.num_sensors},
                ("metric", "value", "ci_low", "ci_high"), rows)
    write_table(
        os.path.join(args.out, "occupancy.csv"),
        {"format": "occupancy", "sensors": scenario.num_sensors,
         "capacity": scenario.network.capacity},
        ("sensor", "state", "empirical", "analytic"),
        ((n, k, float(report.empirical_psi[n][k]), float(outcome.psi_star[n].psi[k]))
         for n in range(scenario.num_sensors)
         for k in range(scenario.network.capacity + 1)),
    )
    print(f"simulated {report.samples} slots: pd_fc={report.pd_fc:.4f} "
          f"(+-{report.ci_pd:.4f}), pf_fc={report.pf_fc:.4f} "
          f"(+-{report.ci_pf:.4f}), threshold={threshold:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _apply_overrides(_load(args.scenario), args)
    spec = SweepSpec(variable=args.variable,
                     values=tuple(float(v) for v in args.values.split(",")))
    columns = ("variable", "value", "lambda_star", "objective_j",
               "expected_power", "pd_fc", "pf_fc", "ci_pd", "ci_pf")
    rows = []
    failure: int | None = None
    for rank, value in enumerate(spec.values):
        point = spec.apply(scenario, value)
        try:
            outcome = optimize_power_map(point)
            if not outcome.converged:
                raise ConvergenceError("power map did not converge", 0, math.nan)
            if args.skip_simulation:
                pd = pf = ci_pd = ci_pf = math.nan
            else:
                _, report = _simulate_point(
                    point, outcome, args,
                    args.seed + rank,
                    args.seed + rank + CALIBRATION_SEED_OFFSET)
                pd, pf = report.pd_fc, report.pf_fc
                ci_pd, ci_pf = report.ci_pd, report.ci_pf
        except ConvergenceError as exc:
            print(f"sweep point {spec.variable}={value} failed: {exc}",
                  file=sys.stderr)
            failure = EXIT_CONVERGENCE
            break
        except ScenarioError as exc:
            print(f"sweep point {spec.variable}={value} rejected: {exc}",
                  file=sys.stderr)
            failure = EXIT_INPUT
            break
        rows.append((spec.variable, value, outcome.lambda_star,
                     outcome.objective_j, outcome.expected_power,
                     pd, pf, ci_pd, ci_pf))
        print(f"{spec.variable}={value:g}: lambda_star={outcome.lambda_star:.6g}, "
              f"objective_j={outcome.objective_j:.6g}, "
              f"expected_power={outcome.expected_power:.6g}")
    comments = {
        "format": "sweep",
        "variable": spec.variable,
        "seed": args.seed,
        "samples": args.samples,
        "target_pf": args.target_pf,
    }
    if failure is not None:
        comments["incomplete"] = True
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    write_table(args.out, comments, columns, rows)
    print(f"wrote {len(rows)} sweep row(s) to {args.out}")
    return failure if failure is not None else EXIT_OK


# ---------------------------------------------------------------------------
# validate: self-consistency checks on one scenario


def _check(name: str, ok: bool, detail: str) -> tuple[str, bool]:
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return name, ok


def cmd_validate(args) -> int:
    scenario = _apply_overrides(_load(args.scenario), args)
    net = scenario.network
    results: list[tuple[str, bool]] = []
    rng = np.random.default_rng(args.seed)

    # closed-form divergence against the two-Gaussian construction
    worst = 0.0
    for sensor in scenario.sensors:
        coeffs = roc_coefficients(sensor.p_f, sensor.p_d)
        for _ in range(200):
            g = float(rng.uniform(0.0, 10.0))
            p = float(rng.uniform(0.0, 50.0))
            direct = sensor_j_divergence(g, p, coeffs, sensor.noise_var)
            built = gaussian_j_divergence(
                moment_match(sensor.p_f, sensor.p_d, p, g, sensor.noise_var))
            worst = max(worst, abs(direct - built) / max(1.0, abs(direct)))
    results.append(_check("divergence-identity", worst <= 1e-12,
                          f"max relative gap {worst:.3e} (tol 1e-12)"))

    # quantizer cell probabilities telescope to one
    worst = 0.0
    for sensor in scenario.sensors:
        pi = gain_level_probs(sensor.mean_gain, sensor.thresholds).pi
        worst = max(worst, abs(float(pi.sum()) - 1.0))
    results.append(_check("gain-cells", worst <= 1e-12,
                          f"max |sum - 1| = {worst:.3e} (tol 1e-12)"))

    # banked-unit pmf: geometric ratio between interior entries, folded tail
    worst = 0.0
    r = net.unit_energy / net.mean_harvest
    pmf = arrival_unit_pmf(net.mean_harvest, net.unit_energy, net.capacity).pmf
    if net.capacity >= 3:
        ratios = pmf[2:-1] / pmf[1:-2]
        if ratios.size:
            worst = float(np.max(np.abs(ratios - math.exp(-r))))
    worst = max(worst, abs(float(pmf.sum()) - 1.0), float(pmf[0]))
    results.append(_check("arrival-pmf", worst <= 1e-12,
                          f"max defect {worst:.3e} (tol 1e-12)"))

    # mixture quadrature against the matched-moment surrogate (loose: the
    # surrogate is an approximation, so only sanity-bound the ratio)
    sensor = scenario.sensors[0]
    exact = mixture_j_quadrature(sensor.p_f, sensor.p_d, 1.0, sensor.mean_gain,
                                 sensor.noise_var)
    surrogate = sensor_j_divergence(
        sensor.mean_gain, 1.0, roc_coefficients(sensor.p_f, sensor.p_d),
        sensor.noise_var)
    ratio_ok = surrogate >= 2.0 and exact >= 0.0
    results.append(_check("divergence-floor", ratio_ok,
                          f"surrogate {surrogate:.4f} >= 2, mixture KL sum {exact:.4f} >= 0"))

    # full optimization with certificate
    convergence_failed = False
    outcome = optimize_power_map(scenario)
    if not outcome.converged:
        convergence_failed = True
        results.append(_check("fixed-point", False,
                              "battery/price alternation did not converge"))
    else:
        solved = evaluate_unit_map(scenario, outcome.power_map.units)[2]
        worst = max(
            0.5 * float(np.abs(psi.psi - exact_psi.psi).sum())
            for psi, exact_psi in zip(outcome.psi_star, solved)
        )
        results.append(_check("fixed-point", worst <= 1e-3,
                              f"max TV(iterated, solved) = {worst:.3e} (tol 1e-3)"))
        lam = outcome.lambda_star
        res_ok = outcome.kkt.max_interior_residual <= 1e-6 * max(lam, 1e-12)
        slack_ok = abs(outcome.kkt.slackness) <= 1e-6 * net.power_budget
        results.append(_check(
            "certificate", res_ok and slack_ok,
            f"interior residual {outcome.kkt.max_interior_residual:.3e}, "
            f"slackness {outcome.kkt.slackness:.3e}"))

    # exhaustive cross-check only on deliberately tiny scenarios
    tiny = (scenario.num_sensors == 1 and net.capacity <= 8
            and scenario.sensors[0].level_count - 1 <= 3)
    if tiny and outcome.converged:
        best = exhaustive_best_map(scenario)
        mine = evaluate_unit_map(scenario, outcome.power_map.units)[0]
        gap = (best.objective_j - mine) / max(1.0, abs(best.objective_j))
        results.append(_check("exhaustive", gap <= 1e-3,
                              f"relative gap to enumerated best {gap:.3e} (tol 1e-3)"))
    else:
        print("SKIP exhaustive: scenario exceeds the enumeration guard "
              "(needs 1 sensor, capacity <= 8, <= 3 live levels)")

    for i, ok in enumerate(validate_convex_region(scenario.sensors)):
        if not ok:
            print(f"SKIP concavity-band sensor {i}: operating point outside the band; "
                  "optimizer falls back to scanned roots")

    failed = [name for name, ok in results if not ok]
    if convergence_failed:
        return EXIT_CONVERGENCE
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_INPUT
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehdetect",
        description="Transmit-power maps and Monte Carlo for energy-harvesting "
                    "distributed detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True, out_is_dir=True):
        p.add_argument("--scenario", required=True, help="scenario file path")
        if out_required:
            p.add_argument("--out", required=True,
                           help="output directory" if out_is_dir else "output CSV file")
        p.add_argument("--transmit-prob-model", choices=TRANSMIT_PROB_MODELS,
                       default=None, help="override the scenario's spend model")
        p.add_argument("--fc-knowledge", choices=FC_KNOWLEDGE_MODES, default=None,
                       help="override the fusion side information model")

    def sim_flags(p):
        p.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
        p.add_argument("--samples", type=int, default=100_000,
                       help="measured slots (default 100000)")
        p.add_argument("--calibration-samples", type=int, default=None,
                       help="null samples for threshold calibration (default: --samples)")
        p.add_argument("--warmup", type=int, default=None,
                       help="burn-in slots (default: 10x capacity)")
        p.add_argument("--target-pf", type=float, default=0.1,
                       help="fusion false-alarm target (default 0.1)")

    p = sub.add_parser("powermap", help="optimize and write the power map")
    common(p)
    p.set_defaults(func=cmd_powermap)

    p = sub.add_parser("simulate", help="optimize, calibrate, and measure by Monte Carlo")
    common(p)
    sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="re-optimize and measure across one variable")
    common(p, out_is_dir=False)
    sim_flags(p)
    p.add_argument("--variable", required=True, choices=SWEEP_VARIABLES)
    p.add_argument("--values", required=True,
                   help="comma-separated ascending values, e.g. 2,6,10")
    p.add_argument("--skip-simulation", action="store_true",
                   help="record only the analytic columns")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="run self-consistency checks on a scenario")
    common(p, out_required=False)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
