"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, closedform, factorization, kernel, montecarlo, spectral
from .operators import SpecError, load_spec

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4


class VerificationFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


class RunManifest:
    """Record of one invocation; ``digest`` covers everything but wall-clock."""

    def __init__(self, command: str, args: argparse.Namespace, spec_json=None):
        self.command = command
        self.parameters = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "out", "workers")}
        self.spec = spec_json
        self.seed = getattr(args, "seed", None)
        self.version = __version__
        self.tolerances: dict = {}
        self.outputs: list[str] = []
        self._t0 = time.time()

    def core(self) -> dict:
        return {
            "command": self.command,
            "spec": self.spec,
            "parameters": self.parameters,
            "seed": self.seed,
            "version": self.version,
            "tolerances": self.tolerances,
        }

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.core(), sort_keys=True).encode()).hexdigest()[:16]

    def write(self, out: Path) -> Path:
        d = self.core()
        d["outputs"] = self.outputs
        d["hash"] = self.digest
        d["wall_clock_s"] = round(time.time() - self._t0, 3)
        path = out / f"manifest-{self.command}.json"
        path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
        return path


def _write_json(man: RunManifest, out: Path, name: str, payload: dict) -> Path:
    payload = dict(payload)
    payload["manifest"] = man.digest
    p = out / name
    p.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n")
    man.outputs.append(str(p))
    return p


def _default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def _load(args):
    spec = load_spec(args.spec)
    try:
        sj = spec.to_json()
    except SpecError:
        sj = None
    return spec, sj


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


@contextlib.contextmanager
def fault_injection(enabled: bool, size: float = 1e-3):
    """Perturb every bounded solution by a factor ``1 + size * sin(xi)``."""
    if not enabled:
        yield
        return
    original = spectral.bounded_values

    def corrupted(mesh, xi, nodes=None):
        bv = original(mesh, xi, nodes)
        f = 1.0 + size * np.sin(bv.xi.real)
        bv.phi = bv.phi * f
        bv.psi = bv.psi * f
        return bv

    spectral.bounded_values = corrupted
    try:
        yield
    finally:
        spectral.bounded_values = original


# ---------------------------------------------------------------------------
# subcommands


def cmd_kernel(args) -> int:
    spec, sj = _load(args)
    man = RunManifest("kernel", args, sj)
    out = _outdir(args)
    n_max = args.bellshape or 0
    t0 = args.t
    est = kernel.build_kernel(spec, args.y, smoothing_t=t0, n_max=n_max, tail_tol=args.tail_tol)
    man.tolerances = {"tail_tol": args.tail_tol, "sign_rel_tol": args.sign_tol}
    csv = out / f"kernel-y{args.y:g}.csv"
    est.to_csv(csv, spec_id=man.digest)
    man.outputs.append(str(csv))
    status = EXIT_OK
    if args.bellshape is not None:
        t_list = args.smooth or [est.smoothing_t]
        refined = kernel.build_kernel(spec, args.y, smoothing_t=t0, n_max=n_max, tail_tol=args.tail_tol, refine=2)
        rep = analysis.check_bell_shape(est, n_max, t_list, refined=refined, rel_tol=args.sign_tol)
        _write_json(man, out, f"shape-y{args.y:g}.json", json.loads(rep.to_json()))
        print(f"counts {rep.counts} verdict {rep.verdict}")
        if not rep.passed:
            status = EXIT_VERIFY
    print(f"y={args.y} mass={est.mass:.10g} t={est.smoothing_t:g} -> {csv}")
    man.write(out)
    return status


def cmd_verify_factorization(args) -> int:
    spec, sj = _load(args)
    man = RunManifest("verify-factorization", args, sj)
    man.tolerances = {"residual": args.tol}
    out = _outdir(args)
    xi = np.geomspace(args.xi_min, args.xi_max, args.n_xi)
    ok = True
    reports = []
    for rc in args.split:
        rep = factorization.verify_factorization(spec, rc, xi, tol=args.tol)
        reports.append(json.loads(rep.to_json()))
        ok &= rep.passed
        print(f"split {rc:g}: residual {rep.residual:.2e}  fact0 {rep.fact0_residual_boundary:.2e}/"
              f"{rep.fact0_residual_interior:.2e}  psi_check(0) {rep.psi_check_zero:.10g}  {'pass' if rep.passed else 'FAIL'}")
    _write_json(man, out, "factorization.json", {"reports": reports, "passed": ok})
    man.write(out)
    return EXIT_OK if ok else EXIT_VERIFY


def _bellshape(spec, ys, n_max, t_list, tail_tol, sign_tol):
    results = []
    for y in ys:
        est = kernel.build_kernel(spec, y, smoothing_t=min(t_list), n_max=n_max, tail_tol=tail_tol)
        ref = kernel.build_kernel(spec, y, smoothing_t=min(t_list), n_max=n_max, tail_tol=tail_tol, refine=2)
        rep = analysis.check_bell_shape(est, n_max, t_list, refined=ref, rel_tol=sign_tol)
        results.append((y, rep))
    return results


def cmd_verify_bellshape(args) -> int:
    spec, sj = _load(args)
    man = RunManifest("verify-bellshape", args, sj)
    man.tolerances = {"sign_rel_tol": args.sign_tol, "tail_tol": args.tail_tol}
    out = _outdir(args)
    res = _bellshape(spec, args.y, args.n_max, args.smooth, args.tail_tol, args.sign_tol)
    ok = all(r.passed for _, r in res)
    for y, r in res:
        print(f"y={y:g}: counts {r.counts} verdict {r.verdict}")
    _write_json(man, out, "bellshape.json", {"results": [{"y": y, **json.loads(r.to_json())} for y, r in res], "passed": ok})
    man.write(out)
    return EXIT_OK if ok else EXIT_VERIFY


def _params(text: str) -> dict:
    d = {}
    for part in filter(None, (text or "").split(",")):
        k, _, v = part.partition("=")
        try:
            d[k.strip()] = float(v)
        except ValueError as exc:
            raise SpecError(f"bad parameter {part!r}") from exc
    return d


def cmd_closed_form(args) -> int:
    man = RunManifest("closed-form", args)
    out = _outdir(args)
    p = _params(args.params)
    x = np.linspace(args.x_min, args.x_max, args.n)
    y = p.get("y", 1.0)
    try:
        if args.family == "classical":
            vals = closedform.classical_kernel(1, x, y)
        elif args.family == "cs":
            vals = closedform.cs_kernel(1, p["alpha"], x, y)
        else:
            pr = closedform.HomogeneousKernelParams(p.get("p", 1.0), p.get("q", 0.0), p["mu"])
            vals = closedform.scale_kernel(closedform.HomogeneousProfile(pr), y, pr.mu)(x)
    except KeyError as exc:
        raise SpecError(f"missing parameter {exc}") from exc
    path = out / f"closed-{args.family}.csv"
    with open(path, "w") as fh:
        fh.write(f"# family={args.family}, params={args.params}, manifest={man.digest}\n")
        fh.write("x,value\n")
        for xv, v in zip(x, vals):
            fh.write(f"{xv:.12g},{v:.12g}\n")
    man.outputs.append(str(path))
    man.write(out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.paths <= 0:
        raise SpecError("--paths must be positive")
    spec, sj = _load(args)
    man = RunManifest("simulate", args, sj)
    man.tolerances = {"sigma": 3.0, "ks": args.ks_tol}
    out = _outdir(args)
    cfg = montecarlo.PathConfig(spec, args.y0, dt=args.dt, max_time=args.max_time, seed=args.seed)
    batch = montecarlo.run_simulation(cfg, args.paths, workers=args.workers)
    samples = out / "samples.csv"
    with open(samples, "w") as fh:
        fh.write(f"# manifest={man.digest}\noutcome,x,t\n")
        for o, xv, tv in zip(batch.outcome, batch.x, batch.t):
            fh.write(f"{montecarlo.OUTCOME_NAMES[int(o)]},{xv:.12g},{tv:.12g}\n")
    man.outputs.append(str(samples))

    summ = montecarlo.summary(batch)
    ok = True
    if len(batch) >= 1000:
        xi = np.asarray(args.xi, dtype=float)
        m = spectral.solve_bounded(spec, float(np.min(xi[xi > 0], initial=1.0)), points=[args.y0]).mesh \
            if not spec.finite else spectral.default_mesh(spec, points=[args.y0])
        node = m.index(args.y0)
        allxi = np.concatenate([[0.0], xi])
        oracle = spectral.bounded_values(m, allxi, nodes=[node]).phi[0]
        est, se = montecarlo.estimate_charfn(batch, allxi)
        z = np.abs(est - oracle) / se
        summ["charfn"] = [
            {"xi": float(a), "estimate": [e.real, e.imag], "se": float(s), "oracle": [o.real, o.imag], "z": float(zz)}
            for a, e, s, o, zz in zip(allxi, est, se, oracle, z)
        ]
        ok &= bool(np.all(z <= 3.0))
        if batch.hits.size >= 10:
            kest = kernel.build_kernel(spec, args.y0, smoothing_t=None)
            ks = montecarlo.ks_test(batch.hits, kernel.cdf(kest, hitting=True))
            summ["ks"] = ks
            ok &= ks <= args.ks_tol
    summ["passed"] = ok
    _write_json(man, out, "summary.json", summ)
    man.write(out)
    print(json.dumps({k: summ[k] for k in ("paths", "hit_probability", "passed")} | ({"ks": summ["ks"]} if "ks" in summ else {})))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_rogers(args) -> int:
    spec, sj = _load(args)
    man = RunManifest("rogers", args, sj)
    man.tolerances = {"rogers": args.tol}
    out = _outdir(args)
    psi = analysis.psi_function(spec)
    xi = np.geomspace(args.xi_min, args.xi_max, args.n_xi)
    vals = psi(xi)
    v = analysis.check_rogers(xi, vals, tol=args.tol)
    payload = {"xi": xi, "psi": [[z.real, z.imag] for z in vals], "min_re": v.min_re, "min_re_dual": v.min_re_dual, "passed": v.ok}
    ok = v.ok
    if args.resolvent:
        r = analysis.check_resolvent_amcm(psi, max_order=args.order)
        payload["resolvent"] = {"precondition": r.precondition, "psi0": r.psi0, "atom": r.atom, "passed": r.ok,
                                "worst": None if r.amcm is None else r.amcm.worst}
        ok &= r.ok
    _write_json(man, out, "rogers.json", payload)
    man.write(out)
    print(f"min Re(psi/xi) = {v.min_re:.3e}, dual {v.min_re_dual:.3e}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_verify(args) -> int:
    spec, sj = _load(args)
    man = RunManifest("verify", args, sj)
    man.tolerances = {"factorization": 1e-8, "rogers": 1e-9, "sign_rel_tol": 1e-7}
    out = _outdir(args)
    results = {}
    with fault_injection(args.inject_fault):
        splits = args.split or _default_splits(spec)
        fac = [factorization.verify_factorization(spec, rc) for rc in splits]
        results["factorization"] = all(r.passed for r in fac)
        psi = analysis.psi_function(spec)
        xi = np.geomspace(0.05, 50.0, 60)
        results["rogers"] = analysis.check_rogers(xi, psi(xi)).ok
        shape = _bellshape(spec, args.y, args.n_max, args.smooth, 1e-10, 1e-7)
        results["bellshape"] = all(r.passed for _, r in shape)
    ok = all(results.values())
    for k, v in results.items():
        print(f"{k:14s} {'pass' if v else 'FAIL'}")
    _write_json(man, out, "verify.json", {"results": results, "passed": ok, "fault_injected": args.inject_fault})
    man.write(out)
    return EXIT_OK if ok else EXIT_VERIFY


def _default_splits(spec):
    atoms = {y for y, w in spec.atoms if w > 0}
    base = [0.25 * spec.R, 0.5 * spec.R, 0.75 * spec.R] if spec.finite else [0.3, 1.0, 3.0]
    return [r if r not in atoms else r * 1.1 for r in base]


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poissonbell", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, spec=True):
        if spec:
            p.add_argument("--spec", required=True, help="operator spec JSON file")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("kernel", help="Poisson kernel at one height")
    common(p)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--t", type=float, default=None, help="smoothing time (default: automatic)")
    p.add_argument("--bellshape", type=int, default=None, metavar="N", help="count sign changes up to order N")
    p.add_argument("--smooth", type=float, nargs="*", default=None, help="smoothing times for the shape check")
    p.add_argument("--tail-tol", type=float, default=1e-10)
    p.add_argument("--sign-tol", type=float, default=1e-7)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("verify-factorization", help="check the split identity")
    common(p)
    p.add_argument("--split", type=float, nargs="+", required=True)
    p.add_argument("--xi-min", type=float, default=0.05)
    p.add_argument("--xi-max", type=float, default=20.0)
    p.add_argument("--n-xi", type=int, default=60)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify_factorization)

    p = sub.add_parser("verify-bellshape", help="sign-change counts of smoothed kernels")
    common(p)
    p.add_argument("--y", type=float, nargs="+", default=[0.1, 0.5, 0.9])
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--smooth", type=float, nargs="+", default=[1e-3, 1e-2])
    p.add_argument("--tail-tol", type=float, default=1e-10)
    p.add_argument("--sign-tol", type=float, default=1e-7)
    p.set_defaults(func=cmd_verify_bellshape)

    p = sub.add_parser("closed-form", help="tabulate an explicit kernel")
    common(p, spec=False)
    p.add_argument("--family", choices=["cs", "classical", "homogeneous"], required=True)
    p.add_argument("--params", default="", help="comma-separated k=v, e.g. p=1,q=0,mu=0.5,y=1")
    p.add_argument("--x-min", type=float, default=-10.0)
    p.add_argument("--x-max", type=float, default=10.0)
    p.add_argument("--n", type=int, default=2001)
    p.set_defaults(func=cmd_closed_form)

    p = sub.add_parser("simulate", help="Monte Carlo exit positions")
    common(p)
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--max-time", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--xi", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    p.add_argument("--ks-tol", type=float, default=0.01)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rogers", help="Rogers property of psi")
    common(p)
    p.add_argument("--xi-min", type=float, default=0.05)
    p.add_argument("--xi-max", type=float, default=50.0)
    p.add_argument("--n-xi", type=int, default=60)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--resolvent", action="store_true", help="also test 1/psi for AM-CM")
    p.add_argument("--order", type=int, default=4)
    p.set_defaults(func=cmd_rogers)

    p = sub.add_parser("verify", help="factorisation, Rogers and bell-shape suites")
    common(p)
    p.add_argument("--split", type=float, nargs="*", default=None)
    p.add_argument("--y", type=float, nargs="+", default=[0.5])
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--smooth", type=float, nargs="+", default=[1e-2])
    p.add_argument("--inject-fault", action="store_true", help="corrupt phi to exercise the detectors")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpecError, FileNotFoundError, json.JSONDecodeError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (spectral.SolverError, kernel.KernelError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
