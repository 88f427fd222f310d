"""Command-line front end: ``zernprove {find,prove,morse,render,cg-dump,selftest}``.

Settings come from an optional flat ``key = value`` file (``--config``) and
are overridden by flags.  Exit codes: 0 certified (or done), 1 failure,
2 inconclusive, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import approx, gmap, prove, regge, spectral
from .ball import PRECISION_BITS, Ball
from .zernike import (
    EVEN,
    ODD,
    eval_point,
    norm_upper,
    product_tensor,
    read_zernike,
    write_zernike,
)

log = logging.getLogger("zernprove")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2
EXIT_USAGE = 64


class UsageError(Exception):
    """Bad configuration or missing inputs (exit code 64)."""


@dataclass
class RunConfig:
    """Settings shared by the subcommands; ``None`` means unset."""

    size: int = 70
    rho: Fraction = Fraction(65, 64)
    precision_bits: int = PRECISION_BITS
    n_trunc: int | None = None
    theta: float = 0.981
    a: float = 3.0
    k: int = 8
    alpha: int | None = None
    weight: Path | None = None
    ubar: Path | None = None
    M: Path | None = None
    eigen_even: Path | None = None
    eigen_odd: Path | None = None
    certificate: Path | None = None
    n_even: int | None = None
    n_odd: int | None = None
    m_even: int | None = None
    symmetry: int | None = None
    seed: str = "offcenter_bump"
    tol: float = 1e-13
    eigen_count: int = 3
    cache_dir: Path | None = None

    _conv = {
        "size": int, "precision_bits": int, "n_trunc": int, "k": int, "alpha": int,
        "n_even": int, "n_odd": int, "m_even": int, "symmetry": int, "eigen_count": int,
        "theta": float, "a": float, "tol": float, "seed": str,
    }

    def set(self, key: str, value) -> None:
        names = {f.name for f in fields(self)}
        key = key.replace("-", "_")
        if key not in names:
            raise UsageError(f"unknown setting {key!r}")
        if isinstance(value, str):
            if key == "rho":
                value = _parse_rho(value)
            elif key in self._conv:
                try:
                    value = self._conv[key](value)
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {value!r}") from exc
            else:
                value = Path(value)
        setattr(self, key, value)

    def validate(self) -> None:
        if self.rho <= 1:
            raise UsageError("rho must exceed 1")
        if self.size < 0 or self.size > 140:
            raise UsageError("size must lie in 0..140")
        if self.precision_bits != PRECISION_BITS:
            raise UsageError(f"only precision_bits = {PRECISION_BITS} is supported")
        if self.n_trunc is not None and not 1 <= self.n_trunc <= self.size + 1:
            raise UsageError("n_trunc must lie in 1..size+1")
        if self.k < 0:
            raise UsageError("k must be nonnegative")


def _parse_rho(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad rho {text!r}") from exc


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _need(cfg: RunConfig, *keys: str) -> None:
    for k in keys:
        v = getattr(cfg, k)
        if v is None:
            raise UsageError(f"missing setting {k!r}")
        if isinstance(v, Path) and not v.exists():
            raise UsageError(f"{k}: {v} does not exist")


def _weight(cfg: RunConfig) -> gmap.Weight:
    if cfg.weight is not None:
        _need(cfg, "weight")
        w = read_zernike(cfg.weight)
        if w.size != cfg.size or w.rho != cfg.rho:
            raise UsageError("weight file does not match size/rho")
        return gmap.Weight(w, label=cfg.weight.name)
    if cfg.alpha is None:
        raise UsageError("set either alpha or weight")
    try:
        return gmap.weight_radial_power(cfg.alpha, cfg.rho, cfg.size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _tensor(cfg: RunConfig):
    return product_tensor(cfg.size, cache_dir=cfg.cache_dir)


def _config_record(cfg: RunConfig) -> dict:
    return {
        "config.size": cfg.size,
        "config.rho": str(cfg.rho),
        "config.precision_bits": cfg.precision_bits,
        "config.n_trunc": cfg.n_trunc if cfg.n_trunc is not None else cfg.size + 1,
    }


# -- subcommands -------------------------------------------------------------------------

def cmd_find(cfg: RunConfig, out: Path) -> int:
    """Approximate solution, Newton operator and eigendata written to ``out``."""
    w = _weight(cfg)
    try:
        seed = approx.SeedSpec.parse(cfg.seed)
    except ValueError as exc:
        raise UsageError(f"bad seed: {exc}") from exc
    n_trunc = cfg.n_trunc or cfg.size + 1
    try:
        st = approx.find_fix(w, seed, n_trunc, cfg.tol, symmetry=cfg.symmetry)
    except approx.ConvergenceError as exc:
        print(f"find: {exc}", file=sys.stderr)
        return EXIT_FAIL
    sym = cfg.symmetry or (seed.n if seed.kind == "symmetrized" else None)
    M = approx.build_newton_operator(w, st, symmetry=sym)
    out.mkdir(parents=True, exist_ok=True)
    write_zernike(w.w, out / "weight.zern")
    write_zernike(st.to_zernike(cfg.rho, cfg.size), out / "ubar.zern")
    M.save(out / "M.npz")
    lines = [f"size = {cfg.size}", f"rho = {cfg.rho}", f"n_trunc = {n_trunc}",
             "weight = weight.zern", "ubar = ubar.zern", "M = M.npz"]
    if sym:
        lines.append(f"symmetry = {sym}")
    if st.coefficients.any() and cfg.eigen_count > 0:
        for parity, tag in ((EVEN, "even"), (ODD, "odd")):
            eig = approx.find_eigen(w, st, parity, cfg.eigen_count, rho=cfg.rho, size=cfg.size)
            eig.save(out / f"eigen_{tag}")
            lines.append(f"eigen_{tag} = eigen_{tag}")
            vals = " ".join(f"{v.center:.9g}" for v in eig.values)
            print(f"{tag} eigenvalues: {vals}")
    (out / "bundle.conf").write_text("\n".join(lines) + "\n")
    print(f"residual {st.residual:.3e}; norm {norm_upper(st.to_zernike(cfg.rho, cfg.size)):.9g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_prove(cfg: RunConfig, out: Path | None) -> int:
    """Existence certificate for ``u = G(u)`` near ``ubar``."""
    _need(cfg, "ubar", "M")
    w = _weight(cfg)
    try:
        ubar = read_zernike(cfg.ubar)
        M = prove.NewtonOperator.load(cfg.M)
    except (OSError, ValueError, KeyError) as exc:
        print(f"prove: cannot parse inputs: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if ubar.size != cfg.size or ubar.rho != cfg.rho:
        raise UsageError("ubar file does not match size/rho")
    extra = _config_record(cfg)
    extra["input.ubar.sha256"] = prove.digest(cfg.ubar)
    extra["input.M.sha256"] = prove.digest(cfg.M)
    if cfg.weight is not None:
        extra["input.weight.sha256"] = prove.digest(cfg.weight)
    else:
        extra["input.weight"] = w.label
    T = _tensor(cfg)
    try:
        cert = prove.contr_fix(w, ubar, M, T)
    except prove.ProofFailure as exc:
        print(f"prove: FAILED check '{exc.check}': {exc.detail}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"prove: {exc}", file=sys.stderr)
        return EXIT_FAIL
    ustar = ubar.widen_band(0, cert.A_norm_delta)
    if ubar.center.any():
        extra["symmetry.min"] = str(prove.min_symm_check(ustar, T))
    if cfg.symmetry:
        extra["symmetry.has"] = str(prove.has_symm_check(ubar, M, cfg.symmetry))
    text = cert.to_text(extra)
    if out is not None:
        out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _read_certificate(path: Path) -> dict:
    vals = {}
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "certificate v1":
        raise UsageError(f"{path}: not a certificate")
    for line in lines[1:]:
        k, _, v = line.partition(" = ")
        vals[k.strip()] = v.split("#", 1)[0].strip()
    if vals.get("status") != "certified":
        raise UsageError(f"{path}: certificate does not certify existence")
    return vals


def cmd_morse(cfg: RunConfig, out: Path | None) -> int:
    """Morse index bounds at the certified solution."""
    _need(cfg, "ubar", "certificate", "eigen_even")
    if cfg.eigen_odd is not None:
        _need(cfg, "eigen_odd")
    w = _weight(cfg)
    cert = _read_certificate(cfg.certificate)
    want = cert.get("input.ubar.sha256")
    if want is not None and want != prove.digest(cfg.ubar):
        raise UsageError("ubar does not match the certificate digest")
    ubar = read_zernike(cfg.ubar)
    ustar = ubar.widen_band(0, float.fromhex(cert["A_norm_delta"]))
    eig_even = spectral.EigenData.load(cfg.eigen_even)
    eig_odd = spectral.EigenData.load(cfg.eigen_odd) if cfg.eigen_odd is not None else None
    if cfg.n_even is not None:
        eig_even = eig_even.subset(cfg.n_even)
    if eig_odd is not None and cfg.n_odd is not None:
        eig_odd = eig_odd.subset(cfg.n_odd)
    if cfg.m_even is not None and cfg.m_even > len(eig_even):
        raise UsageError("m_even must not exceed the even eigenpairs in use")
    T = _tensor(cfg)
    mc = spectral.morse_index(w, ustar, eig_even, eig_odd, cfg.theta, cfg.a, T,
                              k=cfg.k, at_least_even=cfg.m_even, nonzero=bool(ubar.center.any()))
    lines = ["morse v1"]
    lines.append(f"input.ubar.sha256 = {prove.digest(cfg.ubar)}")
    lines.append(f"input.certificate.sha256 = {prove.digest(cfg.certificate)}")
    lines.append(mc.to_text())
    if mc.index is not None:
        lines.append(f"index = {mc.index}")
    else:
        hi = "inf" if mc.upper >= 10 ** 9 else mc.upper
        lines.append(f"index in [{mc.lower}, {hi}]")
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if mc.index is not None else EXIT_INCONCLUSIVE


def cmd_render(cfg: RunConfig, out: Path | None, nr: int, ntheta: int) -> int:
    """Samples ``x y u`` over a polar grid, one header line."""
    _need(cfg, "ubar")
    if nr < 1 or ntheta < 1:
        raise UsageError("grid sizes must be positive")
    u = read_zernike(cfg.ubar)
    rows = ["x y u"]
    for i in range(nr):
        r = i / (nr - 1) if nr > 1 else 0.0
        for k in range(ntheta if r > 0 else 1):
            t = 2 * np.pi * k / ntheta
            v = eval_point(u, Ball(r), Ball(t)).center
            rows.append(f"{r * np.cos(t):.17g} {r * np.sin(t):.17g} {v:.17g}")
    text = "\n".join(rows) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
    return EXIT_OK


def cmd_cg_dump(n1: int, m1: int, n2: int, m2: int, n3: int) -> int:
    """Print one squared coefficient with its Regge symbol and canonical index."""
    r = regge.regge_matrix(n1, m1, n2, m2, n3)
    val = regge.cg_squared(n1, m1, n2, m2, n3)
    print(f"cg_squared({n1},{m1},{n2},{m2},{n3}) = {val}")
    if r is not None:
        c, sign = regge.normal_form(r)
        print("regge = " + " ".join(str(int(x)) for x in np.asarray(r).ravel()))
        print(f"canonical = {c.astuple()} sign = {sign} index = {regge.index(c)}")
    return EXIT_OK


def cmd_selftest() -> int:
    """Quick internal consistency checks on small sizes."""
    from .zernike import Zernike, inv_neg_lap, multiply

    ok = True

    def check(name, cond):
        nonlocal ok
        ok &= bool(cond)
        print(f"{'ok  ' if cond else 'FAIL'} {name}")

    check("cg sum rule n<=6", all(
        sum(regge.cg_squared(n1, m1, n2, m2, n3) for n3 in range(n1 + n2 + 1)) == 1
        for n1 in range(7) for n2 in range(7)
        for m1 in range(-n1, n1 + 1, 2) for m2 in range(-n2, n2 + 1, 2)))
    rng = np.random.default_rng(0)
    T = product_tensor(10)
    u = Zernike.zero(Fraction(65, 64), EVEN, 10)
    v = Zernike.zero(Fraction(65, 64), EVEN, 10)
    act = u.layout.active & (u.layout.deg <= 4)
    u.center[act] = rng.standard_normal(act.sum())
    v.center[act] = rng.standard_normal(act.sum())
    p = multiply(u, v, T)
    r, t = 0.37, 1.1
    exact = eval_point(u, Ball(r), Ball(t)) * eval_point(v, Ball(r), Ball(t))
    check("product encloses pointwise value", eval_point(p, Ball(r), Ball(t)).contains_ball(
        Ball(exact.center)))
    check("Banach algebra", norm_upper(p) <= norm_upper(u) * norm_upper(v) * (1 + 1e-10))
    q = inv_neg_lap(u)
    check("inv_neg_lap vanishes on the boundary",
          all(eval_point(q, Ball(1.0), Ball(tt)).contains(0.0) for tt in (0.0, 0.5, 2.0)))
    return EXIT_OK if ok else EXIT_FAIL


# -- argument handling ----------------------------------------------------------------------

_SETTINGS = [f.name for f in fields(RunConfig)]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zernprove", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True)

    def settings(sp):
        sp.add_argument("--config", type=Path, help="key = value file; flags override it")
        for name in _SETTINGS:
            sp.add_argument("--" + name.replace("_", "-"), dest=name, default=None)
        return sp

    s = settings(sub.add_parser("find", help="approximate solution bundle"))
    s.add_argument("-o", "--out", type=Path, required=True, help="bundle directory")
    s = settings(sub.add_parser("prove", help="existence certificate"))
    s.add_argument("-o", "--out", type=Path, help="certificate file")
    s = settings(sub.add_parser("morse", help="Morse index bounds"))
    s.add_argument("-o", "--out", type=Path, help="index certificate file")
    s = settings(sub.add_parser("render", help="grid samples of a solution"))
    s.add_argument("-o", "--out", type=Path, help="data file (default stdout)")
    s.add_argument("--nr", type=int, default=33)
    s.add_argument("--ntheta", type=int, default=64)
    s = sub.add_parser("cg-dump", help="print one squared Clebsch-Gordan value")
    for k in ("n1", "m1", "n2", "m2", "n3"):
        s.add_argument(k, type=int)
    sub.add_parser("selftest", help="quick consistency checks")
    return p


def build_config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    base = None
    if getattr(ns, "config", None) is not None:
        if not ns.config.exists():
            raise UsageError(f"config {ns.config} does not exist")
        base = ns.config.parent
        for k, v in read_config(ns.config).items():
            cfg.set(k, v)
            # paths in a config file are relative to it
            val = getattr(cfg, k.replace("-", "_"))
            if isinstance(val, Path) and not val.is_absolute():
                setattr(cfg, k.replace("-", "_"), base / val)
    for k in _SETTINGS:
        v = getattr(ns, k, None)
        if v is not None:
            cfg.set(k, v)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    p = _parser()
    try:
        ns = p.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.cmd == "cg-dump":
            try:
                return cmd_cg_dump(ns.n1, ns.m1, ns.n2, ns.m2, ns.n3)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
        if ns.cmd == "selftest":
            return cmd_selftest()
        cfg = build_config(ns)
        if ns.cmd == "find":
            return cmd_find(cfg, ns.out)
        if ns.cmd == "prove":
            return cmd_prove(cfg, ns.out)
        if ns.cmd == "morse":
            return cmd_morse(cfg, ns.out)
        return cmd_render(cfg, ns.out, ns.nr, ns.ntheta)
    except UsageError as exc:
        print(f"zernprove: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
