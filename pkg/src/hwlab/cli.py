"""Command-line experiment runner.

Exit codes: 0 success, 2 input error, 3 convergence or tuning failure,
4 failed ``--check``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from hwlab import artifacts, cltlab, stein, volumetry
from hwlab.bodies import load_body
from hwlab.errors import ConvergenceError, HWLabError, InputError
from hwlab.intrinsic import (
    IntrinsicProfile,
    is_ultra_log_concave,
    moments,
    profile_ball,
    profile_box,
    profile_of,
    surface_law,
    vk_law,
)
from hwlab.rng import SeedSpec, set_threads
from hwlab.sampling import (
    batch_to_binary,
    batch_to_csv,
    h_from_points,
    sample_box_h,
    sample_exact,
    sample_hk_mixture,
    sample_mala,
)

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


# ----------------------------------------------------------- arg parsing


def parse_count(text: str) -> int:
    """Accepts ``100000``, ``1e5`` or ``10**5``."""
    try:
        if "**" in text:
            base, exp = text.split("**")
            value = int(base) ** int(exp)
        else:
            f = float(text)
            if not f.is_integer():
                raise ValueError
            value = int(f)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer count: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("count must be positive")
    return value


def parse_dgrid(text: str) -> list[int]:
    """``16:16384:x4`` (geometric), ``16:64:+16`` (arithmetic) or ``16,64,256``."""
    try:
        if ":" in text:
            lo, hi, step = text.split(":")
            lo, hi = int(lo), int(hi)
            out = []
            if step.startswith("x"):
                factor = int(step[1:])
                if factor < 2:
                    raise ValueError
                d = lo
                while d <= hi:
                    out.append(d)
                    d *= factor
            else:
                inc = int(step.lstrip("+"))
                if inc < 1:
                    raise ValueError
                out = list(range(lo, hi + 1, inc))
        else:
            out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad d grid: {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"bad d grid: {text!r}")
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--stream", type=int, default=0, help="base stream index")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", type=Path, default=Path("."))
    common.add_argument("--format", choices=("csv", "json"), default="json")
    common.add_argument("--check", action="store_true", help="exit 4 when the built-in acceptance check fails")

    p = argparse.ArgumentParser(prog="hwlab", description="Hadwiger-Wills information-content experiments")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("volumes", parents=[common], help="intrinsic volumes of a body")
    s.add_argument("--body", required=True)
    s.add_argument("--fit-steiner", action="store_true")
    s.add_argument("--fit-wills", action="store_true")
    s.add_argument("--n", type=parse_count, default=10**6)
    s.add_argument("--radii", type=_floats)
    s.add_argument("--lambdas", type=_floats)

    s = sub.add_parser("sample", parents=[common], help="draw X_K or H_K")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--body")
    src.add_argument("--profile", help="profile JSON (inline or file), or ball:D[:R] / cube:D[:T]")
    s.add_argument("--route", choices=("exact", "mixture", "mala"), default=None)
    s.add_argument("--what", choices=("points", "h"), default="h")
    s.add_argument("--n", type=parse_count, default=10**4)
    s.add_argument("--step", type=float, default=0.5)
    s.add_argument("--burn-in", type=int, default=500)
    s.add_argument("--thin", type=int, default=5)
    s.add_argument("--no-auto-tune", action="store_true")
    s.add_argument("--binary", action="store_true", help="write the raw batch in the binary layout")

    s = sub.add_parser("stein", parents=[common], help="A + B Stein bound against the empirical distance")
    s.add_argument("--body", required=True)
    s.add_argument("--n", type=parse_count, default=10**5)

    s = sub.add_parser("clt", parents=[common], help="distance-to-Gaussian rate experiment over a d grid")
    s.add_argument("--family", choices=("cube", "ball", "polytope"), required=True)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--c", type=float, default=None)
    s.add_argument("--dgrid", type=parse_dgrid, default=parse_dgrid("16:16384:x4"))
    s.add_argument("--bodies", help="JSON list of bodies (polytope family)")
    s.add_argument("--n", type=parse_count, default=10**6)

    s = sub.add_parser("surface-law", parents=[common], help="face-dimension law on parallel surfaces")
    s.add_argument("--body", required=True)
    s.add_argument("--r", type=_floats, default=[1.0])
    s.add_argument("--n", type=parse_count, default=None, help="also estimate the law by sampling")

    s = sub.add_parser("ibp-check", parents=[common], help="integration-by-parts residuals")
    s.add_argument("--body", required=True)
    s.add_argument("--test-fn", choices=stein.TEST_FUNCTIONS + ("all",), default="all")
    s.add_argument("--n", type=parse_count, default=10**5)

    s = sub.add_parser("bl-check", parents=[common], help="Brascamp-Lieb variance bound")
    s.add_argument("--body", required=True)
    s.add_argument("--epsilon", type=float, default=0.5)
    s.add_argument("--test-fn", choices=stein.BL_TEST_FUNCTIONS + ("all",), default="all")
    s.add_argument("--n", type=parse_count, default=10**5)
    return p


def config_echo(args: argparse.Namespace) -> dict:
    """Everything that determines the result; ``threads`` and ``out`` are excluded by design."""
    skip = {"threads", "out"}
    echo = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        echo[k] = str(v) if isinstance(v, Path) else v
    return echo


# ------------------------------------------------------------- helpers


def _table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


class Run:
    def __init__(self, args):
        self.args = args
        self.seed = SeedSpec(args.seed, args.stream)
        self.streams = [args.stream]
        self.written: list[Path] = []

    def json(self, name: str, payload: dict):
        doc = artifacts.with_metadata(payload, config_echo(self.args), self.args.seed, self.streams)
        self.written.append(artifacts.write_text(self.args.out, name, artifacts.dumps(doc)))

    def text(self, name: str, text: str):
        self.written.append(artifacts.write_text(self.args.out, name, text))

    def table(self, stem: str, header, rows, payload: dict):
        """Main result in the requested ``--format``; the JSON form carries the metadata."""
        if self.args.format == "csv":
            meta = f"# {artifacts.VERSION_STRING} seed={self.args.seed} streams={self.streams}\n"
            self.text(stem + ".csv", meta + _table_csv(header, rows))
        else:
            self.json(stem + ".json", payload)


def _profile_arg(text: str) -> IntrinsicProfile:
    if text.startswith(("ball:", "cube:")):
        parts = text.split(":")
        try:
            d = int(parts[1])
            size = float(parts[2]) if len(parts) > 2 else None
        except (IndexError, ValueError):
            raise InputError(f"bad profile shorthand {text!r}") from None
        if parts[0] == "ball":
            return profile_ball(d, 1.0 if size is None else size)
        return profile_box(np.full(d, 1.0 if size is None else 2 * size))
    raw = text.strip()
    if not raw.startswith("{"):
        try:
            raw = Path(text).read_text()
        except OSError as exc:
            raise InputError(f"cannot read profile {text}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"profile JSON parse error: {exc}") from exc
    return IntrinsicProfile.from_json(doc.get("profile", doc))


def _check(cond: bool, message: str):
    if not cond:
        raise CheckFailed(message)


# ------------------------------------------------------------- commands


def cmd_volumes(run: Run):
    a = run.args
    body = load_body(a.body)
    exact = profile_of(body)
    payload = {"body": body.to_json(), "tag": body.tag}
    rows = []
    fitted = None
    if a.fit_steiner or a.fit_wills or exact is None:
        if a.fit_wills or (exact is None and not a.fit_steiner and body.dim > volumetry.MAX_HIT_OR_MISS_DIM):
            lams = a.lambdas or list(np.linspace(0.5, 2.0, body.dim + 3))
            ests = volumetry.estimate_wills_scaled(body, lams, a.n, run.seed)
            fitted = volumetry.recover_from_wills(ests, body.dim)
            rows = [(e.lam, e.value, e.stderr, e.ess) for e in ests]
            header = ["lambda", "wills", "stderr", "ess"]
            method = "wills"
        else:
            fitted = volumetry.fit_steiner(body, a.radii, a.n, run.seed)
            rows = [(r, e.value, e.stderr, e.n) for r, e in zip(fitted.abscissae, fitted.estimates)]
            header = ["r", "parallel_volume", "stderr", "n"]
            method = "steiner"
        payload["fit"] = {"method": method, "v": fitted.v, "stderr": fitted.stderr, "cov": fitted.cov}
        run.text("fit_diagnostics.csv", _table_csv(header, rows))
    profile = exact if exact is not None else fitted.profile()
    payload["profile"] = profile.to_json()
    payload["v"] = profile.v
    payload["ultra_log_concave"] = bool(is_ultra_log_concave(profile.log_v, log=True))
    payload["moments"] = moments(profile).to_json()
    run.table("profile", ["k", "v_k"], list(enumerate(profile.v)), payload)
    if a.check and fitted is not None and exact is not None:
        z = np.abs(fitted.v - exact.v) / np.maximum(fitted.stderr, 1e-300)
        _check(bool(np.all(z <= 3.0)), f"fitted volumes off by {z.max():.2f} stderr")


def cmd_sample(run: Run):
    a = run.args
    mala_kw = {"step": a.step, "burn_in": a.burn_in, "thin": a.thin, "auto_tune": not a.no_auto_tune}
    if a.profile:
        profile = _profile_arg(a.profile)
        if a.route not in (None, "mixture") or a.what != "h":
            raise InputError("a bare profile supports only the mixture route for H")
        batch = sample_hk_mixture(vk_law(profile), profile.d, a.n, run.seed)
    else:
        body = load_body(a.body)
        profile = profile_of(body)
        route = a.route or ("exact" if body.kind in ("box", "ball") else "mala")
        if route == "mixture":
            if profile is None or a.what != "h":
                raise InputError("mixture route needs a box or ball body and --what h")
            batch = sample_hk_mixture(vk_law(profile), body.dim, a.n, run.seed, body=body.tag)
        elif route == "exact":
            if body.kind == "box" and a.what == "h":
                batch = sample_box_h(body, a.n, run.seed)
            else:
                batch = sample_exact(body, a.n, run.seed)
                if a.what == "h":
                    batch = h_from_points(body, batch)
        else:
            batch = sample_mala(body, a.n, seed=run.seed, **mala_kw)
            if a.what == "h":
                batch = h_from_points(body, batch)
    summary = {"n": batch.n, "kind": batch.kind, "sampler": batch.sampler, "diagnostics": batch.diagnostics}
    if batch.kind == "h_values":
        h = batch.values
        summary.update(mean_h=float(h.mean()), var_h=float(h.var(ddof=1)), mean_h_stderr=float(h.std(ddof=1) / math.sqrt(h.size)))
        if profile is not None:
            summary["moments"] = moments(profile).to_json()
    if a.binary:
        run.written.append(artifacts.write_bytes(a.out, "samples.bin", batch_to_binary(batch)))
    elif a.format == "csv":
        run.text("samples.csv", batch_to_csv(batch))
    else:
        summary["values"] = batch.values
    run.json("sample_meta.json" if (a.binary or a.format == "csv") else "samples.json", summary)
    if a.check and batch.kind == "h_values" and profile is not None:
        delta = moments(profile).delta
        _check(abs(summary["mean_h"] - delta) <= 4 * summary["mean_h_stderr"], "mean H is off the moment identity")


def cmd_stein(run: Run):
    body = load_body(run.args.body)
    rep = stein.stein_bound(body, None, run.args.n, run.seed)
    doc = rep.to_json()
    row = (rep.d, rep.A.value, rep.A.stderr, rep.B.value, rep.B.stderr, rep.bound, rep.empirical_distance, rep.combined_stderr)
    run.table("stein", ["d", "A", "A_stderr", "B", "B_stderr", "bound", "empirical", "combined_stderr"], [row], doc)
    if run.args.check:
        _check(rep.accepted, "bound below the empirical distance")


def cmd_clt(run: Run):
    a = run.args
    bodies = ()
    if a.family == "polytope":
        if not a.bodies:
            raise InputError("--family polytope needs --bodies")
        raw = a.bodies if a.bodies.strip().startswith("[") else Path(a.bodies).read_text()
        try:
            docs = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"bodies JSON parse error: {exc}") from exc
        bodies = tuple(load_body(json.dumps(doc)) for doc in docs)
        grid = [b.dim for b in bodies]
    else:
        grid = a.dgrid
    fam = cltlab.FamilySpec(a.family, a.alpha, a.c, bodies)
    rep = cltlab.run_family_experiment(fam, grid, a.n, run.seed)
    doc = rep.to_json()
    run.table("clt", ["d", "ks", "ks_band", "tv_proxy", "w1", "n"],
              [(r.d, r.ks, r.ks_band, r.tv_proxy, r.w1, r.n) for r in rep.rows], doc)
    run.text("clt_rows.csv", rep.to_csv())
    fit = rep.fit
    run.text(
        "clt.svg",
        artifacts.rate_plot_svg(
            rep.ds, rep.ks, [r.ks_band for r in rep.rows],
            None if fit is None else fit.slope, None if fit is None else fit.intercept,
            title=f"KS distance to N(0,1): {rep.family}", ylabel="KS",
        ),
    )
    if a.check:
        if a.family == "cube" and a.alpha == 0:
            _check(fit is not None and -0.65 <= fit.slope <= -0.35, f"slope {fit.slope if fit else None} outside [-0.65, -0.35]")
        else:
            scaled = np.array([r.scaled(0.5 - a.alpha) for r in rep.rows])
            _check(bool(np.all(np.isfinite(scaled))), "scaled distance not finite")


def cmd_surface_law(run: Run):
    a = run.args
    body = load_body(a.body)
    profile = profile_of(body)
    if profile is None:
        profile = volumetry.fit_steiner(body, None, 10**5, run.seed.child(99)).profile()
    out = []
    rows = []
    for j, r in enumerate(a.r):
        if not r > 0:
            raise InputError("r must be positive")
        law = surface_law(profile, 1.0 / r)
        entry = {"r": r, "theory": law.probs, "e_p": law.e_p, "var_p": law.var_p}
        if a.n:
            est = volumetry.estimate_surface_slice(body, r, a.n, run.seed.child(j), profile=profile)
            entry.update(empirical=est.probs, stderr=est.stderr, tv=est.tv, width=est.width, ess=est.ess,
                         binning_bias=est.binning_bias, sampler=est.sampler)
        out.append(entry)
        for i, p in enumerate(law.probs):
            rows.append((r, i, p, entry["empirical"][i] if "empirical" in entry else ""))
    run.table("surface_law", ["r", "face_dim", "theory", "empirical"], rows, {"body": body.tag, "slices": out})
    if a.check and a.n:
        worst = max(e["tv"] for e in out)
        _check(worst < 0.02, f"surface-law TV {worst:.4f} >= 0.02")


def cmd_ibp_check(run: Run):
    a = run.args
    body = load_body(a.body)
    fns = stein.TEST_FUNCTIONS if a.test_fn == "all" else (a.test_fn,)
    results = [stein.check_ibp(body, f, a.n, run.seed.child(j)) for j, f in enumerate(fns)]
    rows = [(r.test_fn, r.lhs, r.rhs, r.residual, r.stderr) for r in results]
    payload = {"body": body.tag, "results": [dict(zip(("test_fn", "lhs", "rhs", "residual", "stderr"), row)) for row in rows]}
    run.table("ibp", ["test_fn", "lhs", "rhs", "residual", "stderr"], rows, payload)
    if a.check:
        _check(all(abs(r.z) <= 4 for r in results), "IBP residual beyond 4 stderr")


def cmd_bl_check(run: Run):
    a = run.args
    body = load_body(a.body)
    fns = stein.BL_TEST_FUNCTIONS if a.test_fn == "all" else (a.test_fn,)
    results = [stein.brascamp_lieb_check(body, a.epsilon, f, a.n, run.seed.child(j)) for j, f in enumerate(fns)]
    keys = ("test_fn", "epsilon", "variance", "variance_stderr", "bound", "bound_stderr", "passed")
    rows = [tuple(getattr(r, k) for k in keys) for r in results]
    run.table("bl", list(keys), rows, {"body": body.tag, "results": [dict(zip(keys, row)) for row in rows]})
    if a.check:
        _check(all(r.passed for r in results), "variance exceeds the Brascamp-Lieb bound")


COMMANDS = {
    "volumes": cmd_volumes,
    "sample": cmd_sample,
    "stein": cmd_stein,
    "clt": cmd_clt,
    "surface-law": cmd_surface_law,
    "ibp-check": cmd_ibp_check,
    "bl-check": cmd_bl_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    set_threads(args.threads)
    run = Run(args)
    try:
        COMMANDS[args.command](run)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HWLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        set_threads(1)
    for path in run.written:
        print(path)
    return EXIT_OK



def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
