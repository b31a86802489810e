"""Command-line orchestration of the retrieval pipeline.

Every stage is its own subcommand; ``run-all`` chains
preprocess -> extract -> embed -> distmat -> evaluate, optionally in both
PCA fit modes, and writes a side-by-side report. A flat key=value config
file captures a reproducible run; command-line flags override it.

Exit codes: 0 success, 2 usage/config error, 3 input data error, 4 internal.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import __version__, corpus, descriptor, embed, evaluate, preprocess, retrieval
from .corpus import ManifestError
from .descriptor import DescriptorStoreError, LbpConfig
from .embed import PcaModelError
from .preprocess import ImageError
from .retrieval import MatrixFormatError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parameters of a full pipeline run; defaults follow the baseline setup."""

    manifest: str = ""
    train_manifest: str = ""  # external PCA source for classification mode
    out_dir: str = "out"
    crop_margin: int = 42
    resize_target: int = 2000
    radii: tuple = tuple(range(1, 13))
    use_mask: bool = False
    deskew: bool = False
    pca_dim: int = 200
    pca_modes: tuple = ("retrieval",)
    metric: str = "manhattan"
    tile: int = 256
    workers: int = 0  # 0 = auto
    seed: int = 0

    _INT_FIELDS = ("crop_margin", "resize_target", "pca_dim", "tile", "workers", "seed")
    _BOOL_FIELDS = ("use_mask", "deskew")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, raw in enumerate(lines, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    def set(self, key: str, value: str) -> None:
        if not hasattr(self, key) or key.startswith("_"):
            raise ConfigError(f"unknown config key {key!r}")
        if key in self._INT_FIELDS:
            try:
                setattr(self, key, int(value))
            except ValueError:
                raise ConfigError(f"config key {key} needs an integer, got {value!r}") from None
        elif key in self._BOOL_FIELDS:
            if value.lower() not in ("true", "false", "0", "1"):
                raise ConfigError(f"config key {key} needs a boolean, got {value!r}")
            setattr(self, key, value.lower() in ("true", "1"))
        elif key == "radii":
            setattr(self, key, parse_radii(value))
        elif key == "pca_modes":
            setattr(self, key, parse_pca_modes(value))
        else:
            setattr(self, key, value)

    def validate(self) -> None:
        if self.metric not in retrieval.METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        for mode in self.pca_modes:
            if mode not in embed.FIT_MODES:
                raise ConfigError(f"unknown PCA mode {mode!r}")
        if "classification" in self.pca_modes and not self.train_manifest:
            raise ConfigError("classification mode requires train_manifest")

    def effective_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        env = os.environ.get("WR_WORKERS")
        if env and env.isdigit() and int(env) > 0:
            return int(env)
        return os.cpu_count() or 1

    def to_text(self) -> str:
        pairs = []
        for key, value in asdict(self).items():
            if key == "radii":
                value = ",".join(str(r) for r in value)
            elif key == "pca_modes":
                value = ",".join(value)
            pairs.append(f"{key} = {value}")
        return "\n".join(pairs) + "\n"


def parse_radii(text: str) -> tuple:
    """Parse radii like "1-12" or "1,2,4"."""
    text = text.strip()
    try:
        if "-" in text and "," not in text:
            lo, hi = text.split("-")
            radii = tuple(range(int(lo), int(hi) + 1))
        else:
            radii = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse radii {text!r}") from None
    if not radii or any(r < 1 for r in radii) or list(radii) != sorted(set(radii)):
        raise ConfigError(f"radii must be strictly increasing and >= 1, got {text!r}")
    return radii


def parse_pca_modes(text: str) -> tuple:
    modes = tuple(m.strip() for m in text.split(",") if m.strip())
    if text.strip() == "both":
        return ("classification", "retrieval")
    for mode in modes:
        if mode not in embed.FIT_MODES:
            raise ConfigError(f"unknown PCA mode {mode!r}")
    if not modes:
        raise ConfigError("pca_modes must not be empty")
    return modes


def parse_subset_defs(text: str) -> dict:
    """Parse subset definitions like "mss=manuscripts,mss_chars=manuscripts+charters"."""
    defs = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad subset definition {part!r}, expected name=tag[+tag...]")
        name, tags = part.split("=", 1)
        defs[name.strip()] = {t.strip() for t in tags.split("+")}
    if not defs:
        raise ConfigError("no subset definitions given")
    return defs


# ---------------------------------------------------------------------------
# Pipeline stages (shared by subcommands and run-all)
# ---------------------------------------------------------------------------


def preprocess_image(path, cfg: RunConfig) -> np.ndarray:
    img = preprocess.load_gray(path)
    if cfg.crop_margin > 0:
        img = preprocess.crop_border(img, cfg.crop_margin)
    img = preprocess.resize_max_dim(img, cfg.resize_target)
    if cfg.deskew:
        _, img = preprocess.deskew_projection(img)
    return img


def extract_corpus_descriptors(manifest: corpus.CorpusManifest, cfg: RunConfig) -> np.ndarray:
    """Preprocess and extract the LBP descriptor of every manifest image."""
    lbp = LbpConfig(radii=cfg.radii, use_mask=cfg.use_mask)

    def one(entry):
        img = preprocess_image(entry.path, cfg)
        mask = preprocess.otsu_binarize(img).foreground if cfg.use_mask else None
        return descriptor.extract_descriptor(img, lbp, mask=mask, image_id=entry.image_id)

    workers = cfg.effective_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            descs = list(pool.map(one, manifest.entries))
    else:
        descs = [one(e) for e in manifest.entries]
    return np.stack([d.values for d in descs])


def run_pipeline(cfg: RunConfig) -> dict:
    """Full baseline run; returns {pca_mode: EvalReport} and writes artifacts."""
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = corpus.load_manifest(cfg.manifest)
    X = extract_corpus_descriptors(manifest, cfg)
    descriptor.save_descriptors(out_dir / "descriptors.bin", manifest.image_ids, X)

    X_train = None
    if "classification" in cfg.pca_modes:
        train_manifest = corpus.load_manifest(cfg.train_manifest)
        X_train = extract_corpus_descriptors(train_manifest, cfg)
        descriptor.save_descriptors(
            out_dir / "train_descriptors.bin", train_manifest.image_ids, X_train
        )

    reports = {}
    for mode in cfg.pca_modes:
        mode_dir = out_dir / mode
        mode_dir.mkdir(exist_ok=True)
        source = X_train if mode == "classification" else None
        emb = embed.embed_corpus(
            X, manifest.image_ids, dim=cfg.pca_dim, pca_source=source, fit_corpus_id=mode
        )
        emb.model.save(mode_dir / "pca_model.bin")
        descriptor.save_descriptors(mode_dir / "embeddings.bin", emb.image_ids, emb.values)
        mtx = retrieval.compute_distance_matrix(
            emb.values,
            metric=cfg.metric,
            tile=cfg.tile,
            workers=cfg.effective_workers(),
            image_ids=emb.image_ids,
        )
        retrieval.write_matrix(mtx, mode_dir / "distances.bin")
        report = evaluate.evaluate_matrix(mtx, manifest)
        (mode_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
        reports[mode] = report

    summary = "\n\n".join(
        evaluate.format_report(rep, title=f"PCA mode: {mode}") for mode, rep in reports.items()
    )
    (out_dir / "report.txt").write_text(summary + "\n", encoding="utf-8")
    _write_run_log(cfg, out_dir)
    return reports


def _write_run_log(cfg: RunConfig, out_dir: Path) -> None:
    lines = [f"writer-retrieval {__version__}", f"numpy {np.__version__}", "", cfg.to_text()]
    for label in ("manifest", "train_manifest"):
        path = getattr(cfg, label)
        if path and Path(path).exists():
            digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
            lines.append(f"sha256 {label}: {digest}")
    (out_dir / "run_log.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "manifest": getattr(args, "manifest", None),
        "train_manifest": getattr(args, "train_manifest", None),
        "out_dir": getattr(args, "out", None),
        "crop_margin": getattr(args, "crop", None),
        "resize_target": getattr(args, "resize", None),
        "pca_dim": getattr(args, "dim", None),
        "metric": getattr(args, "metric", None),
        "tile": getattr(args, "tile", None),
        "workers": getattr(args, "workers", None),
        "seed": getattr(args, "seed", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "radii", None):
        cfg.radii = parse_radii(args.radii)
    if getattr(args, "pca_modes", None):
        cfg.pca_modes = parse_pca_modes(args.pca_modes)
    if getattr(args, "use_mask", False):
        cfg.use_mask = True
    if getattr(args, "deskew", False):
        cfg.deskew = True
    return cfg


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    manifest = corpus.synth_corpus(
        args.writers, args.pages, args.distractors, args.seed, args.out
    )
    print(f"wrote {len(manifest)} images + manifest to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config_from_args(args)
    manifest = corpus.load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest:
        img = preprocess_image(entry.path, cfg)
        from PIL import Image

        rel = f"{entry.image_id}.png"
        Image.fromarray(img, mode="L").save(out_dir / rel)
        entries.append(
            corpus.ManifestEntry(entry.image_id, str(out_dir / rel), entry.writer_id, entry.subset)
        )
    out_manifest = corpus.CorpusManifest(entries)
    corpus.save_manifest(out_manifest, out_dir / "manifest.csv")
    print(f"preprocessed {len(out_manifest)} images to {out_dir}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _config_from_args(args)
    manifest = corpus.load_manifest(args.manifest)
    X = extract_corpus_descriptors(manifest, cfg)
    descriptor.save_descriptors(args.out, manifest.image_ids, X)
    print(f"extracted {X.shape[0]} descriptors of dim {X.shape[1]} to {args.out}")
    return EXIT_OK


def cmd_fit_pca(args) -> int:
    _, X = descriptor.load_descriptors(args.descriptors)
    model = embed.fit_pca(X, dim=args.dim, mode=args.mode)
    model.save(args.out)
    print(f"fit PCA ({args.mode}) with k={model.k} to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    ids, X = descriptor.load_descriptors(args.descriptors)
    model = None
    source = None
    if args.model:
        model = embed.PcaModel.load(args.model)
    elif args.mode == "classification":
        if not args.train_descriptors:
            print(
                "error: classification mode requires --train-descriptors or --model",
                file=sys.stderr,
            )
            return EXIT_USAGE
        _, source = descriptor.load_descriptors(args.train_descriptors)
    emb = embed.embed_corpus(X, ids, dim=args.dim, pca_source=source, model=model)
    descriptor.save_descriptors(args.out, emb.image_ids, emb.values)
    if args.save_model:
        emb.model.save(args.save_model)
    degenerate = int(emb.degenerate.sum())
    print(f"embedded {X.shape[0]} descriptors to k={emb.values.shape[1]} ({degenerate} degenerate)")
    return EXIT_OK


def cmd_distmat(args) -> int:
    ids, X = descriptor.load_descriptors(args.embeddings)
    mtx = retrieval.compute_distance_matrix(
        X, metric=args.metric, tile=args.tile, workers=args.workers or (os.cpu_count() or 1),
        image_ids=ids,
    )
    retrieval.write_matrix(mtx, args.out, fmt=args.format)
    print(f"wrote {mtx.n}x{mtx.n} {args.metric} distance matrix to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    mtx = retrieval.read_matrix(args.matrix)
    manifest = corpus.load_manifest(args.manifest)
    report = evaluate.evaluate_matrix(mtx, manifest)
    if args.subsets:
        report.subsets = evaluate.evaluate_subsets(mtx, manifest, parse_subset_defs(args.subsets))
    print(evaluate.format_report(report))
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _config_from_args(args)
    reports = run_pipeline(cfg)
    for mode, report in reports.items():
        print(evaluate.format_report(report, title=f"PCA mode: {mode}"))
        print()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="writer-retrieval",
        description="Writer retrieval engine and benchmark harness for document images",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--writers", type=int, required=True)
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="crop/resize (optionally deskew) corpus images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--crop", type=int)
    p.add_argument("--resize", type=int)
    p.add_argument("--deskew", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("extract", help="extract LBP descriptors for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--crop", type=int)
    p.add_argument("--resize", type=int)
    p.add_argument("--radii")
    p.add_argument("--use-mask", action="store_true", dest="use_mask")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit-pca", help="fit a PCA model on a descriptor store")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=embed.DEFAULT_PCA_DIM)
    p.add_argument("--mode", choices=embed.FIT_MODES, default="retrieval")
    p.set_defaults(func=cmd_fit_pca)

    p = sub.add_parser("embed", help="PCA-project + Hellinger/l2-normalize descriptors")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=embed.DEFAULT_PCA_DIM)
    p.add_argument("--mode", choices=embed.FIT_MODES, default="retrieval")
    p.add_argument("--train-descriptors", dest="train_descriptors")
    p.add_argument("--model")
    p.add_argument("--save-model", dest="save_model")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("distmat", help="compute the all-pairs distance matrix")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=retrieval.METRICS, default="manhattan")
    p.add_argument("--tile", type=int, default=retrieval.DEFAULT_TILE)
    p.add_argument("--workers", type=int)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_distmat)

    p = sub.add_parser("evaluate", help="leave-one-image-out mAP / Top-1 evaluation")
    p.add_argument("--matrix", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--subsets", help='e.g. "mss=manuscripts,mss_chars=manuscripts+charters"')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-all", help="full pipeline, optionally both PCA modes")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--train-manifest", dest="train_manifest")
    p.add_argument("--out")
    p.add_argument("--crop", type=int)
    p.add_argument("--resize", type=int)
    p.add_argument("--radii")
    p.add_argument("--use-mask", action="store_true", dest="use_mask")
    p.add_argument("--deskew", action="store_true")
    p.add_argument("--dim", type=int)
    p.add_argument("--pca-modes", dest="pca_modes", help='"retrieval", "classification" or "both"')
    p.add_argument("--metric", choices=retrieval.METRICS)
    p.add_argument("--tile", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        ManifestError,
        ImageError,
        MatrixFormatError,
        DescriptorStoreError,
        PcaModelError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
