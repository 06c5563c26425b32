"""Command-line interface: solve, compare, and study subcommands.

Outputs are reproducible: identical inputs and seeds produce byte-identical
primary artifacts (solutions, reports, frontiers). Wall-clock measurements go
to a separate ``runtimes.csv`` so the primary files stay deterministic. Every
artifact carries a provenance header with the artifact version and SHA-256
hashes of the case text and effective configuration.

Exit codes: 0 success, 1 solver non-convergence, 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .acmodel import BasePoint, newton_power_flow, objective, residual_report, state_from_json, state_to_json
from .dcc import build_qcac, build_soc, build_ts, state_from_primal, suggested_rho
from .metrics import EvalReport, distance_to_feasibility, optimality_gap, sample_scenarios
from .netparse import load_shunt_sidecar, network_to_json, parse_case, to_network
from .solver import (
    SeqConfig,
    interior_start,
    project_dispatch,
    sequential_qcac,
    solve_convex,
    trace_to_csv,
)
from .studies import HostingSetup, penalty_sweep, solve_hosting, solve_orpd

MODELS = ("qcac", "ts", "soc", "ac-seq")


class InputError(Exception):
    pass


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _provenance(case_text: str, config: dict) -> dict:
    return {
        "artifact": f"qcacopf {__version__}",
        "case_sha256": _sha(case_text),
        "config_sha256": _sha(json.dumps(config, sort_keys=True)),
    }


def _prov_comment(prov: dict) -> str:
    return (
        f"# artifact={prov['artifact'].replace(' ', '-')}"
        f" case_sha256={prov['case_sha256']} config_sha256={prov['config_sha256']}\n"
    )


def _load_network(path: str, rotate_shift: bool):
    p = Path(path)
    if not p.exists():
        raise InputError(f"case file not found: {path}")
    text = p.read_text()
    try:
        net = to_network(parse_case(text), rotate_shift=rotate_shift)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return net, text


def _base_point(net, source: str) -> BasePoint:
    if source == "flat":
        return BasePoint.flat(net)
    if source == "newton":
        st = newton_power_flow(net)
        return BasePoint(st.v_re, st.v_im)
    if source.startswith("file:"):
        path = Path(source[5:])
        if not path.exists():
            raise InputError(f"base-point file not found: {path}")
        st = state_from_json(path.read_text())
        return BasePoint(st.v_re, st.v_im)
    raise InputError(f"unknown base-point source {source}")


def _resolve_rho(rho: str, net) -> float:
    if rho == "auto":
        return suggested_rho(net)
    try:
        val = float(rho)
    except ValueError:
        raise InputError(f"rho must be a number or 'auto', got {rho}") from None
    if val <= 0:
        raise InputError("rho must be positive")
    return val


def cmd_solve(args) -> int:
    net, case_text = _load_network(args.case, args.rotate_shift)
    if args.model not in MODELS:
        raise InputError(f"unknown model {args.model}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "command": "solve", "model": args.model, "base": args.base, "rho": args.rho,
        "rotate_shift": args.rotate_shift,
    }
    prov = _provenance(case_text, config)

    base = _base_point(net, args.base)
    hint = newton_power_flow(net)
    converged = True
    if args.model == "ac-seq":
        res = sequential_qcac(net, base)
        state = res.state
        trace = res.trace
        converged = res.converged
        solver_status = "converged" if res.converged else res.message
    else:
        rho = _resolve_rho(args.rho, net)
        if args.model == "qcac":
            prog = build_qcac(net, base, rho=rho)
        elif args.model == "ts":
            prog = build_ts(net, base)
        else:
            prog = build_soc(net)
        sol = solve_convex(prog, interior_start(prog, net, hint))
        if sol.primal is None:
            _emit_error(out, prov, f"solve failed: {sol.status} {sol.message}")
            return 1
        state = state_from_primal(net, sol.primal)
        trace = []
        converged = sol.status in ("optimal", "iteration-limit")
        solver_status = sol.status

    doc = json.loads(state_to_json(net, state))
    doc["provenance"] = prov
    doc["status"] = solver_status
    doc["cost"] = objective(net, state)
    (out / "solution.json").write_text(json.dumps(doc, indent=1))
    rep = residual_report(net, state)
    rep_doc = json.loads(rep.to_json())
    (out / "residuals.json").write_text(
        json.dumps({"provenance": prov, "families": rep_doc}, indent=1)
    )
    (out / "trace.csv").write_text(_prov_comment(prov) + trace_to_csv(trace))
    return 0 if converged else 1


def cmd_compare(args) -> int:
    net, case_text = _load_network(args.case, args.rotate_shift)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    for m in models:
        if m not in ("qcac", "ts", "soc"):
            raise InputError(f"compare supports qcac, ts, soc; got {m}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "command": "compare", "models": models, "scenarios": args.scenarios,
        "seed": args.seed, "rho": args.rho,
    }
    prov = _provenance(case_text, config)
    rho = _resolve_rho(args.rho, net)

    # Base-case local reference; its voltages anchor every approximation.
    base_newton = newton_power_flow(net)
    ref0 = sequential_qcac(net, BasePoint(base_newton.v_re, base_newton.v_im))
    anchor = BasePoint(ref0.state.v_re, ref0.state.v_im)

    if args.scenarios == 0:
        nets = [net]
    else:
        nets = [s.apply(net) for s in sample_scenarios(net, args.scenarios, args.seed)]

    report = EvalReport(models=models)
    failures = []
    for i, snet in enumerate(nets):
        try:
            if i == 0 and args.scenarios == 0:
                ref = ref0
            else:
                ref = sequential_qcac(snet, anchor)
            cost_ref = objective(snet, ref.state)
            for model in models:
                if model == "qcac":
                    prog = build_qcac(snet, anchor, rho=rho)
                elif model == "ts":
                    prog = build_ts(snet, anchor)
                else:
                    prog = build_soc(snet)
                sol = solve_convex(prog, interior_start(prog, snet, ref.state))
                if sol.primal is None:
                    failures.append({"scenario": i, "model": model, "status": sol.status})
                    continue
                dispatch = sol.primal["p_g"].copy()
                projected, _rep, seq = project_dispatch(snet, dispatch, anchor)
                st = seq.state
                report.add(
                    scenario=i, model=model,
                    gap_pct=optimality_gap(objective(snet, st), cost_ref),
                    distance_pu=distance_to_feasibility(dispatch, projected),
                    cost_projected=objective(snet, st), cost_ref=cost_ref,
                    solve_s=sol.solve_time, project_s=sum(t.solve_time for t in seq.trace),
                )
        except Exception as exc:
            failures.append({"scenario": i, "model": "*", "status": str(exc)})
    (out / "compare.csv").write_text(_prov_comment(prov) + report.to_csv())
    (out / "runtimes.csv").write_text(_prov_comment(prov) + report.runtimes_csv())
    summary = json.loads(report.summary_json())
    summary["provenance"] = prov
    summary["failures"] = failures
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return 0 if not failures else 1


def cmd_study(args) -> int:
    net, case_text = _load_network(args.case, args.rotate_shift)
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise InputError(f"study config not found: {args.config}")
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"bad study config: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(case_text, {"command": "study", **cfg})
    kind = cfg.get("type")
    if kind == "orpd":
        sidecar = cfg.get("sidecar")
        if sidecar is None:
            raise InputError("orpd study needs a 'sidecar' path")
        sidecar_path = Path(sidecar)
        if not sidecar_path.is_absolute():
            sidecar_path = cfg_path.parent / sidecar_path
        if not sidecar_path.exists():
            raise InputError(f"sidecar not found: {sidecar_path}")
        net_sh = load_shunt_sidecar(net, sidecar_path.read_text())
        rows = {}
        for mode in cfg.get("modes", ["qcac", "soc"]):
            res = solve_orpd(net, net_sh.shunts, mode=mode)
            rows[mode] = res.summary()
        doc = {"provenance": prov, "results": rows}
        (out / "orpd.json").write_text(json.dumps(doc, indent=1))
        return 0
    if kind in ("hosting", "hosting-sweep"):
        setup = HostingSetup(tuple(int(b) for b in cfg["pv_buses"]), float(cfg["pv_max_mw"]))
        grid = [float(r) for r in cfg.get("rho_grid", [1, 10, 100, 1000])]
        if kind == "hosting-sweep" and not grid:
            raise InputError("hosting sweep needs a nonempty rho grid")
        results = penalty_sweep(net, setup, grid)
        ref = solve_hosting(net, setup, "nonconvex-seq")
        soc = solve_hosting(net, setup, "soc",
                            reference_mw=ref.total_pv_mw, reference_s=ref.runtime_s)
        lines = ["rho,total_pv_mw,max_slack,cost_error_pct,status"]
        for r in results:
            lines.append(
                f"{r.rho!r},{r.total_pv_mw!r},{r.max_slack!r},"
                f"{'' if r.cost_error_pct is None else repr(r.cost_error_pct)},{r.status}"
            )
        (out / "frontier.csv").write_text(_prov_comment(prov) + "\n".join(lines) + "\n")
        doc = {
            "provenance": prov,
            "reference": ref.summary(),
            "soc": soc.summary(),
            "qcac": [r.summary() for r in results],
        }
        (out / "hosting.json").write_text(json.dumps(doc, indent=1))
        return 0
    raise InputError(f"unknown study type {kind!r}")


def cmd_dump_network(args) -> int:
    net, case_text = _load_network(args.case, args.rotate_shift)
    text = network_to_json(net)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def _emit_error(out: Path | None, prov: dict | None, message: str) -> None:
    doc = {"error": message}
    if prov:
        doc["provenance"] = prov
    sys.stderr.write(json.dumps(doc) + "\n")
    if out is not None:
        try:
            (out / "error.json").write_text(json.dumps(doc, indent=1))
        except OSError:
            pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qcacopf",
        description="Convex approximations of AC optimal power flow",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve one model on one case")
    solve.add_argument("--case", required=True)
    solve.add_argument("--model", required=True, choices=MODELS)
    solve.add_argument("--base", default="newton",
                       help="flat | newton | file:PATH (default newton)")
    solve.add_argument("--rho", default="auto", help="penalty coefficient or 'auto'")
    solve.add_argument("--rotate-shift", action="store_true",
                       help="accept phase-shifting branches via rotation")
    solve.add_argument("--out", required=True)
    solve.set_defaults(func=cmd_solve)

    comp = sub.add_parser("compare", help="gap/distance table over demand scenarios")
    comp.add_argument("--case", required=True)
    comp.add_argument("--models", default="qcac,ts,soc")
    comp.add_argument("--scenarios", type=int, default=0,
                      help="number of sampled scenarios; 0 = base case only")
    comp.add_argument("--seed", type=int, default=1)
    comp.add_argument("--rho", default="auto")
    comp.add_argument("--rotate-shift", action="store_true")
    comp.add_argument("--out", required=True)
    comp.set_defaults(func=cmd_compare)

    study = sub.add_parser("study", help="run a case study from a JSON config")
    study.add_argument("--case", required=True)
    study.add_argument("--config", required=True)
    study.add_argument("--rotate-shift", action="store_true")
    study.add_argument("--out", required=True)
    study.set_defaults(func=cmd_study)

    dump = sub.add_parser("dump-network", help="canonical network JSON")
    dump.add_argument("--case", required=True)
    dump.add_argument("--rotate-shift", action="store_true")
    dump.add_argument("--out", default="-")
    dump.set_defaults(func=cmd_dump_network)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _emit_error(Path(args.out) if getattr(args, "out", "-") not in (None, "-") else None,
                    None, str(exc))
        return 2
    except Exception as exc:  # unexpected: still machine-readable
        _emit_error(None, None, f"internal error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
