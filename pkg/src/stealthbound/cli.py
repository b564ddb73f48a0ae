"""Command-line front end: ``stealthbound {synthesize,bound,simulate,sweep}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from . import lmi, plant, safety, sim, stealth
from .config import RunConfig, load_config
from .errors import ConfigError, InfeasibleCertificateError, StealthBoundError

REPORT_VERSION = 1
AXES = ("Ta", "k", "percentage", "p")


@dataclass
class Pipeline:
    cfg: RunConfig
    model: plant.PlantModel
    design: plant.LqgDesign
    aug: plant.AugmentedSystem
    detector: stealth.DetectorConfig
    budget: stealth.StealthBudget
    rate: lmi.RateCertificate
    inv: lmi.InvarianceCertificate
    report: lmi.CertificateReport
    spec: safety.SafetySpec


def build_model(cfg: RunConfig):
    if cfg.model == "quadruple_tank":
        return plant.quadruple_tank(cfg.model_seed)
    M = cfg.matrices
    model = plant.PlantModel(A=M["A"], B=M["B"], C=M["C"], Q=M["Q"], R=M["R"], U=M["U"],
                             sample_period=cfg.sample_period)
    W = M.get("W", np.eye(model.n))
    V = M.get("V", 100.0 * np.eye(model.ell))
    return model, W, V


def build_spec(cfg: RunConfig, n: int) -> safety.SafetySpec:
    if max(cfg.safety_states) > n:
        raise ConfigError(f"safety_states refer to state {max(cfg.safety_states)} but the model has {n}")
    return safety.SafetySpec.box(2 * n, [i - 1 for i in cfg.safety_states], cfg.safety_bound)


def run_pipeline(cfg: RunConfig) -> Pipeline:
    model, W, V = build_model(cfg)
    design = plant.synthesize_lqg(model, W, V)
    aug = plant.build_augmented(model, design)
    detector = stealth.DetectorConfig(T=cfg.T, m=model.m, false_alarm=cfg.false_alarm)
    budget = stealth.solve_lambda_bar(detector, cfg.p_d, horizon=cfg.horizon)
    if budget.lambda_bar <= 0.0:
        raise InfeasibleCertificateError("bias budget is zero; there is no stealthy attack to certify against")
    settings = lmi.SynthesisSettings(p1_scale=cfg.p1_scale)
    P1, gamma = lmi.synthesize_p1_gamma(aug, cfg.p1_scale)
    rate = lmi.synthesize_gamma_a(aug, P1, model.U, design.Sigma, budget.lambda_bar, gamma, settings)
    inv = lmi.synthesize_p2(aug, cfg.p, settings)
    report = lmi.check_certificates(aug, rate, inv, model.U, design.Sigma, budget.lambda_bar)
    if not report.accepted:
        worst = min(report.margins, key=report.margins.get)
        raise InfeasibleCertificateError(
            f"certificate check failed: {worst} margin {report.margins[worst]:.3g}",
            best_margin=report.margins[worst],
        )
    return Pipeline(cfg, model, design, aug, detector, budget, rate, inv, report, build_spec(cfg, model.n))


def header(cfg: RunConfig) -> str:
    return f"stealthbound {__version__} config={cfg.digest()} seed={cfg.seed}"


def _write(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _csv(cfg: RunConfig, head: list, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header(cfg)}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(head)
    for row in rows:
        wr.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def _json(cfg: RunConfig, body: dict) -> str:
    doc = {"header": header(cfg), "report_version": REPORT_VERSION}
    doc.update(body)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _mat(M) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(M)]


def cmd_synthesize(pipe: Pipeline, out_dir: str) -> dict:
    r, i = pipe.rate, pipe.inv
    body = {
        "eta": pipe.detector.eta,
        "lambda_bar": pipe.budget.lambda_bar,
        "alternate_budget": stealth.alternate_budget(pipe.detector, pipe.cfg.p_d),
        "p_d": pipe.cfg.p_d,
        "p": pipe.cfg.p,
        "gamma": r.gamma,
        "gamma_a": r.gamma_a,
        "alpha1": r.alpha1,
        "alpha2": i.alpha2,
        "P1": _mat(r.P1),
        "P2": _mat(i.P2),
        "K": _mat(pipe.design.K),
        "L": _mat(pipe.design.L),
        "Sigma": _mat(pipe.design.Sigma),
        "margins": {k: float(v) for k, v in pipe.report.margins.items()},
        "info": {k: float(v) for k, v in pipe.report.info.items()},
        "accepted": pipe.report.accepted,
    }
    _write(out_dir, "synthesize.json", _json(pipe.cfg, body))
    return body


def cmd_bound(pipe: Pipeline, out_dir: str, horizon: int) -> dict:
    bounds = safety.bound_curve(pipe.rate, pipe.inv, pipe.spec, horizon)
    names = sorted(pipe.cfg.schedules)
    verdicts = {nm: safety.schedule_verdict(pipe.cfg.schedules[nm], pipe.rate, pipe.inv, pipe.spec, horizon, bounds)
                for nm in names}
    head = ["k", "max_ta", "percentage"]
    for nm in names:
        head += [f"tau_{nm}", f"safe_{nm}"]
    rows = []
    for k in range(horizon + 1):
        row = [k, bounds[k], 100.0 * bounds[k] / k if k > 0 else None]
        for nm in names:
            row += [verdicts[nm].tau[k], int(verdicts[nm].safe[k])]
        rows.append(row)
    _write(out_dir, "bound.csv", _csv(pipe.cfg, head, rows))
    return {"bounds": bounds, "verdicts": {nm: v.overall for nm, v in verdicts.items()}}


def _strategy(pipe: Pipeline) -> sim.AttackStrategy:
    if pipe.cfg.attack == "budget":
        return sim.AttackStrategy.residue_budget(pipe.rate.P1, pipe.budget.lambda_bar)
    if pipe.cfg.attack == "covert":
        # constant input at half the saturation radius along the first input axis
        ua = np.zeros(pipe.model.ell)
        ua[0] = 0.5 / math.sqrt(pipe.model.U[0, 0])
        return sim.AttackStrategy.covert(ua)
    return sim.AttackStrategy.none()


def cmd_simulate(pipe: Pipeline, out_dir: str, horizon: int, trials: int, seed: int,
                 dump_trajectories: bool = False) -> sim.MonteCarloReport:
    bounds = safety.bound_curve(pipe.rate, pipe.inv, pipe.spec, horizon)
    schedule = safety.saturating_schedule(bounds)
    ctx = sim.SimContext(pipe.model, pipe.design, pipe.aug, pipe.detector, pipe.spec, pipe.inv.P2, pipe.cfg.p)
    strategy = _strategy(pipe)
    report, batch = sim.run_monte_carlo(ctx, strategy, schedule, horizon, trials, seed)
    report.extra["bound_at_horizon"] = bounds[-1]
    report.extra["lambda_bar"] = pipe.budget.lambda_bar
    _write(out_dir, "simulate.json", _json(pipe.cfg, report.to_dict()))
    _write(out_dir, "simulate.csv", f"# {header(pipe.cfg)}\n" + report.to_csv())
    if dump_trajectories:
        rec = sim.simulate_batch(ctx, strategy, schedule, horizon, [seed + i for i in range(trials)], record=True)
        _write(out_dir, "trajectories.csv", f"# {header(pipe.cfg)}\n" + sim.trajectories_csv(rec))
    return report


def sweep_rows(pipe: Pipeline, axis: str, horizon: int):
    n = pipe.model.n
    r = pipe.rate
    if axis == "Ta":
        k = horizon
        head = ["Ta", "k", "log_level", "log_volume", "clipped"]
        rows = []
        for Ta in range(k + 1):
            ll = safety.log_e1_level(r.gamma, r.gamma_a, k, Ta)
            rows.append([Ta, k, ll, safety.log_volume_e1_from_log_level(r.P1, ll, n), int(ll == 0.0)])
        return head, rows
    if axis == "k":
        Ta = pipe.cfg.sweep_ta
        head = ["k", "Ta", "log_level", "log_volume", "clipped"]
        rows = []
        for k in range(Ta, Ta + horizon + 1):
            ll = safety.log_e1_level(r.gamma, r.gamma_a, k, Ta)
            rows.append([k, Ta, ll, safety.log_volume_e1_from_log_level(r.P1, ll, n), int(ll == 0.0)])
        return head, rows
    if axis == "percentage":
        head = ["percentage", "k", "Ta", "log_level", "log_volume", "clipped"]
        rows = []
        for pct in pipe.cfg.sweep_percentages:
            for k in range(1, horizon + 1):  # the ratio is undefined at k = 0
                Ta = int(math.floor(pct / 100.0 * k + 1e-12))
                ll = safety.log_e1_level(r.gamma, r.gamma_a, k, Ta)
                rows.append([pct, k, Ta, ll, safety.log_volume_e1_from_log_level(r.P1, ll, n), int(ll == 0.0)])
        return head, rows
    if axis == "p":
        head = ["p", "log_volume"]
        return head, [[p, safety.log_volume_e2(pipe.inv.P2, p, n)] for p in pipe.cfg.sweep_p]
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")


def cmd_sweep(pipe: Pipeline, out_dir: str, axis: str, horizon: int):
    head, rows = sweep_rows(pipe, axis, horizon)
    _write(out_dir, f"sweep_{axis}.csv", _csv(pipe.cfg, head, rows))
    return head, rows


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stealthbound", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stealthbound {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("synthesize", "bound", "simulate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration file (default: built-in tank settings)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--horizon", type=int)
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=AXES)
        if name == "simulate":
            p.add_argument("--dump-trajectories", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.horizon is not None:
        cfg.horizon = args.horizon
    if args.out is not None:
        cfg.out = args.out
    return cfg.validate()


def main(argv: Optional[list] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        pipe = run_pipeline(cfg)
        out = cfg.out
        print(header(cfg))
        if args.command == "synthesize":
            body = cmd_synthesize(pipe, out)
            print(f"eta={body['eta']:.10g} lambda_bar={body['lambda_bar']:.10g} gamma={body['gamma']:.6g} "
                  f"gamma_a={body['gamma_a']:.6g} alpha1={body['alpha1']:.4g} alpha2={body['alpha2']:.4g}")
        elif args.command == "bound":
            res = cmd_bound(pipe, out, cfg.horizon)
            print(f"max_ta at k={cfg.horizon}: {res['bounds'][-1]}")
            for nm, ok in res["verdicts"].items():
                print(f"schedule {nm}: {'safe' if ok else 'UNSAFE'}")
        elif args.command == "simulate":
            rep = cmd_simulate(pipe, out, cfg.horizon, cfg.trials, cfg.seed, args.dump_trajectories)
            print(f"trials={rep.trials} violations={rep.violation_count} alarm_frequency={rep.alarm_frequency:.4f} "
                  f"diverged={rep.diverged_trials}")
        elif args.command == "sweep":
            _, rows = cmd_sweep(pipe, out, args.axis, cfg.horizon)
            print(f"sweep {args.axis}: {len(rows)} rows")
    except StealthBoundError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"error [numerical]: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
