"""Batch front-end: config-driven scans writing CSV/JSON plus a manifest.

Every command reads one JSON config (``--config``), writes its artifacts
under ``--out``, and finishes by writing ``manifest.json`` listing every
artifact with a SHA-256 checksum, timings and the config echo.  Outputs are
deterministic given the config and seed: floats are printed with 17
significant digits and iteration orders are sorted.

Flag defaults can be overridden through environment variables with the
``WGSCAT_`` prefix (``WGSCAT_OUT``, ``WGSCAT_THREADS``, ``WGSCAT_SEED``).

Config schema::

    {"schema_version": 1,
     "model": { ... see waveguide.model_from_config ... },
     "tasks": {
        "invert_demo": {"families": "path.json", "z_values": [[re,im], ...]},
        "modes": {},
        "smatrix": {"energies": [..], "tail_tol": 1e-4},
        "threshold_scan": {"lam": 4.0, "pairs": [[[n,s],[n',s']], ...],
                            "eps": 1e-2, "halvings": 10, "tail_tol": 1e-3},
        "expansion": {"lam": 4.0, "eps": 1e-2, "tail_tol": 1e-3,
                       "kappa_lo": 1e-4, "kappa_hi": 1e-2},
        "eigenvalues": {"window": [lo, hi], "resolutions": [48, 96],
                         "tail_tol": 1e-3},
        "verify": {"lam": 4.0, "eps": 1e-2, "tail_tol": 1e-3}
     }}
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, birman, expansion, inversion, linalg, scattering, waveguide
from .errors import WgscatError

ENV_PREFIX = "WGSCAT_"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class ArtifactWriter:
    """Tracks written artifacts; removes partial output on failure."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.files.append(p)
        return p

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                cells = [
                    _fmt(c) if isinstance(c, float) else str(c) for c in row
                ]
                fh.write(",".join(cells) + "\n")
        return p

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True, default=_json_default)
            fh.write("\n")
        return p

    def cleanup(self):
        for p in self.files:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass

    def manifest(self, config_echo: dict, seed: int) -> Path:
        entries = []
        for p in sorted(self.files):
            if not p.exists():
                continue
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            entries.append({"file": p.name, "sha256": digest, "bytes": p.stat().st_size})
        doc = {
            "version": __version__,
            "seed": seed,
            "config": config_echo,
            "timings_s": {k: round(v, 3) for k, v in sorted(self.timings.items())},
            "artifacts": entries,
        }
        p = self.out_dir / "manifest.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True, default=_json_default)
            fh.write("\n")
        return p


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_invert_demo(cfg, writer: ArtifactWriter, args) -> int:
    """Drive the inversion engine on file-loaded families vs a dense oracle."""
    task = cfg["tasks"]["invert_demo"]
    fam_path = Path(task["families"])
    if not fam_path.is_absolute():
        fam_path = Path(args.config).parent / fam_path
    with open(fam_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    docs = doc if isinstance(doc, list) else [doc]
    z_values = [complex(re, im) for re, im in task["z_values"]]
    rows = []
    worst = 0.0
    for i, d in enumerate(docs):
        fam = inversion.family_from_dict(d)
        s = linalg.kernel_projector(fam.base)
        for z in z_values:
            x = inversion.jn_invert(fam, s, z, verify_series=bool(args.verify))
            direct = linalg.inverse(fam.a(z))
            rel = float(
                np.linalg.norm(x - direct) / max(np.linalg.norm(direct), 1e-300)
            )
            worst = max(worst, rel)
            rows.append([i, z.real, z.imag, s.rank, rel])
    writer.write_csv(
        "invert_demo.csv", ["family", "re_z", "im_z", "kernel_dim", "rel_error"], rows
    )
    return 0 if worst <= 1e-9 else 1


def cmd_modes(cfg, writer: ArtifactWriter, args) -> int:
    model = waveguide.model_from_config(cfg["model"])
    rows = [[m.index, float(m.eigenvalue)] for m in model.modes]
    writer.write_csv("modes.csv", ["n", "lambda_n"], rows)
    groups = [
        {"value": g.value, "members": list(g.members)} for g in model.groups
    ]
    writer.write_json("threshold_groups.json", groups)
    return 0


def cmd_smatrix(cfg, writer: ArtifactWriter, args) -> int:
    model = waveguide.model_from_config(cfg["model"])
    task = cfg["tasks"]["smatrix"]
    tail_tol = float(task.get("tail_tol", 1e-4))
    energies = sorted(float(e) for e in task["energies"])

    def one(lam):
        return scattering.channel_smatrix(lam, model, tail_tol)

    mats = _parallel_map(one, energies, args.threads)
    rows = []
    for smat in mats:
        for i, (n, s) in enumerate(smat.channels):
            for j, (np_, sp) in enumerate(smat.channels):
                e = smat.matrix[i, j]
                rows.append(
                    [smat.lam, n, s, np_, sp, float(e.real), float(e.imag),
                     float(smat.unitarity_defect)]
                )
    writer.write_csv(
        "smatrix.csv",
        ["lam", "n", "sigma", "n_prime", "sigma_prime", "re", "im", "unitarity_defect"],
        rows,
    )
    return 0


def cmd_threshold_scan(cfg, writer: ArtifactWriter, args) -> int:
    model = waveguide.model_from_config(cfg["model"])
    task = cfg["tasks"]["threshold_scan"]
    lam = float(task["lam"])
    eps = float(task.get("eps", 1e-2))
    tail_tol = float(task.get("tail_tol", 1e-3))
    halvings = int(task.get("halvings", 10))
    hs = [eps / 2.0 ** (k + 1) for k in range(halvings)]
    ladder = expansion.build_threshold_ladder(model, lam, eps=eps, tail_tol=tail_tol)
    reports = []
    for pair in task["pairs"]:
        chan = (int(pair[0][0]), int(pair[0][1]))
        chan_p = (int(pair[1][0]), int(pair[1][1]))
        rep = scattering.threshold_continuity_probe(
            lam, chan, chan_p, hs, model, ladder=ladder
        )
        reports.append(rep.to_dict())
    writer.write_json("threshold_scan.json", reports)
    rows = []
    for rep in reports:
        for h, c in zip(rep["h_values"][1:], rep["right_cauchy"]):
            rows.append(
                [lam, rep["chan"][0], rep["chan"][1], rep["chan_p"][0],
                 rep["chan_p"][1], float(h), float(c)]
            )
    writer.write_csv(
        "threshold_scan.csv",
        ["lam", "n", "sigma", "n_prime", "sigma_prime", "h", "right_cauchy"],
        rows,
    )
    return 0


def cmd_expansion(cfg, writer: ArtifactWriter, args) -> int:
    model = waveguide.model_from_config(cfg["model"])
    task = cfg["tasks"]["expansion"]
    lam = float(task["lam"])
    eps = float(task.get("eps", 1e-2))
    tail_tol = float(task.get("tail_tol", 1e-3))
    ladder = expansion.build_threshold_ladder(model, lam, eps=eps, tail_tol=tail_tol)
    report = expansion.ladder_report(ladder)
    if args.verify:
        # oracle cross-check on a diagonal kappa sample
        diag = (1.0 - 1.0j) / np.sqrt(2.0)
        errs = []
        for t in np.geomspace(eps / 100, eps / 2, 6):
            k = diag * t
            m = expansion.m_function(ladder, k)
            direct = expansion.direct_inverse(model, lam, k, ladder.n_used)
            errs.append(
                float(np.linalg.norm(m - direct) / np.linalg.norm(direct))
            )
        report["oracle_rel_errors"] = errs
    struct = expansion.verify_structural_lemmas(
        ladder,
        kappa_lo=float(task.get("kappa_lo", 1e-4)),
        kappa_hi=float(task.get("kappa_hi", 1e-2)),
    )
    report["structural"] = struct.to_dict()
    writer.write_json("expansion.json", report)
    return 0 if struct.ok else 1


def cmd_eigenvalues(cfg, writer: ArtifactWriter, args) -> int:
    base = cfg["model"]
    task = cfg["tasks"]["eigenvalues"]
    window = (float(task["window"][0]), float(task["window"][1]))
    tail_tol = float(task.get("tail_tol", 1e-3))
    rows = []
    counts = []
    for res in task.get("resolutions", [48]):
        model_doc = json.loads(json.dumps(base))
        model = waveguide.model_from_config(model_doc)
        cands = birman.eigenvalue_search(
            window, model, resolution=int(res), tail_tol=tail_tol
        )
        counts.append(len(cands))
        for c in cands:
            rows.append([int(res), c.lam, c.sigma_min, c.rel_dip])
    writer.write_csv(
        "eigenvalues.csv", ["resolution", "lam", "sigma_min", "rel_dip"], rows
    )
    writer.write_json(
        "eigenvalue_counts.json",
        {"window": list(window), "counts": counts, "stable": len(set(counts)) <= 1},
    )
    return 0


def cmd_verify(cfg, writer: ArtifactWriter, args) -> int:
    """Structural lemma suite plus module invariant spot checks."""
    model = waveguide.model_from_config(cfg["model"])
    task = cfg["tasks"].get("verify", {})
    lam = float(task.get("lam", model.thresholds()[min(1, len(model.groups) - 1)]))
    eps = float(task.get("eps", 1e-2))
    tail_tol = float(task.get("tail_tol", 1e-3))
    report: dict = {"model_dim": model.dim}

    ladder = expansion.build_threshold_ladder(model, lam, eps=eps, tail_tol=tail_tol)
    struct = expansion.verify_structural_lemmas(ladder)
    report["structural"] = struct.to_dict()

    # optical identity at a regular energy between the first two thresholds
    lam_reg = 0.5 * (model.eigenvalue(1) + model.eigenvalue(2))
    bn = scattering.b_rows(lam_reg, 1, model)
    im_block = linalg.imaginary_part(
        np.diag(model.u_diag()) + birman.mode_sum_matrix(model, complex(lam_reg), [1])
    )
    optical = float(linalg.opnorm(bn.conj().T @ bn - im_block))
    report["optical_identity_defect"] = optical

    smat = scattering.channel_smatrix(lam_reg, model, tail_tol=tail_tol)
    report["unitarity_defect"] = float(smat.unitarity_defect)

    ok = struct.ok and optical <= 1e-12
    report["ok"] = ok
    writer.write_json("verify.json", report)
    return 0 if ok else 1


COMMANDS = {
    "invert-demo": cmd_invert_demo,
    "modes": cmd_modes,
    "smatrix": cmd_smatrix,
    "threshold-scan": cmd_threshold_scan,
    "expansion": cmd_expansion,
    "eigenvalues": cmd_eigenvalues,
    "verify": cmd_verify,
}


def _env_default(name: str, fallback):
    return os.environ.get(ENV_PREFIX + name, fallback)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="wgscat",
        description="Waveguide resolvent expansions and channel scattering, batch mode.",
    )
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=_env_default("OUT", "out"), help="output directory")
    ap.add_argument(
        "--threads", type=int, default=int(_env_default("THREADS", "1")),
        help="parallel map width over spectral points",
    )
    ap.add_argument(
        "--seed", type=int, default=int(_env_default("SEED", "0")),
        help="seed for randomized corpora",
    )
    ap.add_argument(
        "--verify", action="store_true",
        help="enable internal oracle cross-checks (slower)",
    )
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    writer = ArtifactWriter(Path(args.out))
    t0 = time.time()
    try:
        rc = COMMANDS[args.command](cfg, writer, args)
    except WgscatError as exc:
        writer.cleanup()
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 3
    except (KeyError, OSError) as exc:
        writer.cleanup()
        print(f"error [{args.command}]: bad config or io: {exc!r}", file=sys.stderr)
        return 2
    writer.timings[args.command] = time.time() - t0
    writer.manifest(cfg, args.seed)
    return rc


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
