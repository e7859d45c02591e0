"""Command line entry point.

    bcml forward      --config C --out D     synthesize the response blob and metadata
    bcml reconstruct  --config C --out D     reconstruct from D/response.blob, then score against the config's manifold
    bcml solenoidal   --config C --out D     curl-space probes over a refinement series
    bcml report       --out D                regenerate plots from the artifacts in D
    bcml verify       [--stage N[,N...]]     run the acceptance suite

``--verify`` on forward/reconstruct/solenoidal makes the exit status follow
the acceptance rows of that run.  Exit codes: 0 pass, 1 acceptance failure,
2 usage or configuration error.  BCML_THREADS caps BLAS worker threads.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance, geometry, io, pipeline, report, solenoidal
from .config import ConfigError, ExperimentConfig, load

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _limit_threads() -> None:
    raw = os.environ.get("BCML_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BCML_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"BCML_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)


def _out(args, cfg: ExperimentConfig | None) -> Path:
    out = args.out or (cfg.out if cfg else None)
    if not out:
        raise ConfigError("--out: an output directory is required (or [run] out in the config)")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _scalar_config(args) -> ExperimentConfig:
    cfg = load(args.config)
    if cfg.pipeline != "scalar":
        raise ConfigError(f"[run] pipeline: {args.command} needs a scalar config, got {cfg.pipeline!r}")
    return cfg


def cmd_forward(args) -> list:
    cfg = _scalar_config(args)
    out = _out(args, cfg)
    M = cfg.build_manifold()
    data = pipeline.synthesize(M, cfg.forward)
    io.save(out / "response.blob", data.response_blob_matrix())
    io.write_json(out / "response.json", data.meta())
    taus = {p.id: geometry.eikonal(M, p).values for p in geometry.patch_catalog(M)}
    report.eikonal_csv(out / "eikonals.csv", M.coords, taus)
    man = report.manifest(cfg.text, {"response.blob": (out / "response.blob").read_bytes()},
                          {"stage": "forward", "diameter": cfg.diameter})
    diag = {"T": data.T, "dt": data.dt, "n_steps": data.n_steps, "n_boundary": len(data.boundary_ids),
            "control_dim": data.control_space().size}
    rows = []
    if M.kind == "interval":
        oc = pipeline.oracle_comparison(M, data, cfg.forward, cfg.recon.quadrature)
        rows.append(acceptance.Row(1, "connecting operator from response vs Gram oracle", oc["relative_error"],
                                   "< 5e-2", oc["relative_error"] < 5e-2))
        diag["asymmetry"] = oc["asymmetry"]
    report.write_bundle(out, man, diag, rows)
    return rows


def cmd_reconstruct(args) -> list:
    cfg = _scalar_config(args)
    out = _out(args, cfg)
    src = Path(args.data) if args.data else out
    if not (src / "response.blob").exists():
        raise ConfigError(f"--data: no response.blob in {src}; run `bcml forward` first")
    blob = (src / "response.blob").read_bytes()
    data = pipeline.BoundaryData.from_parts(io.decode(blob), io.read_json(src / "response.json"))
    rec = pipeline.reconstruct(data, cfg.recon, log=lambda m: print(m, file=sys.stderr))
    io.save(out / "connecting.blob", rec.connecting.matrix)
    for pid, E in rec.eikonals.items():
        io.save(out / f"eikonal_{pid}.blob", E)
    pts = rec.cloud.points
    report.cloud_csv(out / "cloud.csv", pts, rec.boundary_flags, rec.cloud.multiplicity, rec.patch_ids)
    report.copy_csv(out / "copy.csv", pts, rec.field.accepted, rec.field.inverse, rec.field.residual,
                    rec.patch_ids)

    # scoring against the known manifold happens after reconstruction is complete
    M = cfg.build_manifold()
    ev = pipeline.evaluate(M, rec)
    ok = np.flatnonzero(rec.field.accepted)
    D_true = geometry.reference_distances(M, ev.match)[:, ev.match]
    err = np.abs(rec.copy.distances - D_true)[np.ix_(ok, ok)]
    report.histogram_csv(out / "distance_errors.csv", err[np.triu_indices(len(ok), 1)])
    taus = {p.id: geometry.eikonal(M, p).values for p in geometry.patch_catalog(M)}
    report.eikonal_csv(out / "eikonals.csv", M.coords, taus)
    rows = [acceptance.Row(3, "copy distances, relative error", ev.distances.relative_error, "< 0.1",
                           ev.distances.relative_error < 0.1)]
    if M.kind == "interval":
        oc = pipeline.oracle_comparison(M, data, cfg.forward, cfg.recon.quadrature)
        rows.insert(0, acceptance.Row(1, "connecting operator from response vs Gram oracle",
                                      oc["relative_error"], "< 5e-2", oc["relative_error"] < 5e-2))
        h = M.h
        rows.insert(1, acceptance.Row(3, "copy distances, sup error / grid spacing",
                                      ev.distances.sup_error / h, "< 3", ev.distances.sup_error < 3 * h))
        pi = pipeline.projection_identity(M, data, cfg.forward, rec, cfg.pushforward_patch or "left",
                                          cfg.s_values)
        rows += [acceptance.Row(2, f"pushed-forward projection vs cutoff at s={s}", e, "< 0.1", e < 0.1)
                 for s, e in pi["errors"].items()]
    else:
        I = ev.interior
        unit = float(np.mean(np.nan_to_num(ev.unit_diagonal[I], nan=np.inf) <= 0.1)) if I.any() else 0.0
        rel = np.abs(ev.conformal / ev.conformal_true - 1.0)
        conf = float(np.mean(np.nan_to_num(rel[I], nan=np.inf) <= 0.15)) if I.any() else 0.0
        flat = geometry._is_flat(M) is not None
        if flat:
            rows.append(acceptance.Row(4, "interior anchors with |g^ii - 1| <= 0.1", unit, ">= 0.9", unit >= 0.9))
        else:
            rows.append(acceptance.Row(4, "interior anchors with factor within 15%", conf, ">= 0.8", conf >= 0.8))
    man = report.manifest(cfg.text, {"response.blob": blob}, {"stage": "reconstruct"})
    diag = {"rank": rec.model.rank, "asymmetry": rec.connecting.asymmetry, "clipped_mass": rec.model.clipped_mass,
            "commutation_defect": rec.commutation, "jd_residual": rec.jd.residual, "jd_sweeps": rec.jd.sweeps,
            "cloud_points": len(pts), "accepted": int(rec.field.accepted.sum()),
            "non_pd": int(rec.field.non_pd.sum()), "components": rec.copy.n_components,
            "sup_error": ev.distances.sup_error, "median_relative_error": ev.distances.median_relative,
            "diameter_ratio": ev.diameter_ratio, "timings": rec.timings}
    report.write_bundle(out, man, diag, rows)
    report.emit_plots(out)
    return rows


def cmd_solenoidal(args) -> list:
    cfg = load(args.config)
    if cfg.pipeline != "solenoidal":
        raise ConfigError(f"[run] pipeline: solenoidal needs a solenoidal config, got {cfg.pipeline!r}")
    out = _out(args, cfg)
    sp = cfg.solenoidal
    f = geometry.parse_field(sp.f)
    series = []
    for n in sp.sizes:
        print(f"box {n}^3", file=sys.stderr)
        series.append(solenoidal.run_box(n, sp.face_a, sp.face_b, sp.ds_factor, sp.tol_rank, sp.calkin_k, f))
    svals = {}
    summary = []
    for b in series:
        for rep in (b.lemma, b.eff, b.commutator):
            svals[f"{rep.label} n={b.n}"] = rep.singular_values
        summary.append({"n": b.n, "curl_dim": b.curl_dim, "eps_norm": b.eps_norm, "tau_max": b.tau_max,
                        "eps_spectrum": list(b.eps_spectrum), "lemma_norm": b.lemma.norm,
                        "lemma_tails": b.lemma.tail_ratios, "eff_norm": b.eff.norm, "eff_tails": b.eff.tail_ratios,
                        "commutator_relative": b.commutator_rel, "commutator_tails": b.commutator.tail_ratios,
                        "calkin": list(b.calkin)})
    report.singular_values_csv(out / "singular_values.csv", svals)
    io.write_csv(out / "series.csv",
                 ["n", "curl_dim", "eps_norm", "tau_max", "lemma_half", "eff_half", "commutator_rel",
                  "commutator_half", "sup_f", "calkin_estimate"],
                 [[b.n, b.curl_dim, b.eps_norm, b.tau_max, b.lemma.half_ratio, b.eff.half_ratio, b.commutator_rel,
                   b.commutator.half_ratio, b.calkin[0], b.calkin[1]] for b in series])
    lem = [b.lemma.half_ratio for b in series]
    eff = [b.eff.half_ratio for b in series]
    com = [b.commutator.half_ratio for b in series]
    est = [b.calkin[1] for b in series]
    rows = [acceptance.Row(6, "eps - tau tail ratio strictly decreasing", lem[-1], "strictly decreasing",
                           solenoidal.strictly_decreasing(lem)),
            acceptance.Row(6, "f - Y[f] tail ratio strictly decreasing", eff[-1], "strictly decreasing",
                           solenoidal.strictly_decreasing(eff)),
            acceptance.Row(7, "commutator relative norm (min over series)", min(b.commutator_rel for b in series),
                           "> 0.01", min(b.commutator_rel for b in series) > 0.01),
            acceptance.Row(7, "commutator tail ratio strictly decreasing", com[-1], "strictly decreasing",
                           solenoidal.strictly_decreasing(com)),
            acceptance.Row(7, "Calkin estimate <= sup|f| and increasing", est[-1], "<= sup|f|, increasing",
                           all(e <= b.calkin[0] + 1e-8 for e, b in zip(est, series))
                           and solenoidal.strictly_decreasing(est[::-1]))]
    for b in series:
        if b.n == 12:
            gap = abs(b.eps_norm - b.tau_max) / b.tau_max
            rows.insert(0, acceptance.Row(5, "12^3 box: relative gap ||eps|| vs max tau", gap, "< 0.05", gap < 0.05))
    man = report.manifest(cfg.text, {}, {"stage": "solenoidal"})
    report.write_bundle(out, man, {"series": summary}, rows)
    report.emit_plots(out)
    return rows


def cmd_report(args) -> list:
    out = _out(args, None)
    if not (out / "report.json").exists():
        raise ConfigError(f"--out: no report.json in {out}")
    for note in report.emit_plots(out):
        print(note, file=sys.stderr)
    bundle = io.read_json(out / "report.json")
    return [acceptance.Row(**r) for r in bundle.get("acceptance", [])]


def cmd_verify(args) -> list:
    selected = None
    if args.stage:
        try:
            selected = sorted({int(s) for s in args.stage.split(",")})
        except ValueError:
            raise ConfigError(f"--stage: expected criterion numbers like 1,2,8, got {args.stage!r}") from None
        bad = [s for s in selected if s not in acceptance.CRITERIA]
        if bad:
            raise ConfigError(f"--stage: unknown criteria {bad}")
    rows = acceptance.run(selected)
    if args.out:
        out = _out(args, None)
        report.write_bundle(out, report.manifest("", {}, {"stage": "verify"}), {}, rows)
    args.verify = True
    return rows


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bcml", description="Boundary control method laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (("forward", cmd_forward, True), ("reconstruct", cmd_reconstruct, True),
                                   ("solenoidal", cmd_solenoidal, True), ("report", cmd_report, False),
                                   ("verify", cmd_verify, False)):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        if needs_config:
            p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--stage", metavar="NAME", help="verify: comma separated criterion numbers")
        p.add_argument("--verify", action="store_true", help="exit status follows the acceptance rows")
        if name == "reconstruct":
            p.add_argument("--data", metavar="DIR", help="directory holding response.blob (default: --out)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        _limit_threads()
        rows = args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (pipeline.PipelineError, io.BlobError, geometry.GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if args.command != "verify":
        for r in rows:
            print(r.line())
    if args.verify and not all(r.passed for r in rows):
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
