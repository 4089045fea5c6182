"""
Command implementations behind main.py

Each command takes the parsed argparse namespace and returns an exit code:
0 ok, 1 usage / I-O / configuration error, 2 verification failure.
"""
import argparse
import functools
import json
from pathlib import Path
from typing import Callable, List

from loguru import logger

from app.config import RunConfig, SynthConfig, settings
from app.labelmap.io import read_image, read_labels, write_labels
from app.labelmap.ops import instance_count
from app.metrics import evaluate_dataset, pair_predictions
from app.model import ModelFormatError, build_model, load_model, load_model_with_metadata, save_model
from app.pipeline.inference import NetworkPredictor, segment
from app.pipeline.training import train
from app.synthdata import gen_dataset, load_split
from app.tensor.gradcheck import failures, run_suite
from app.tiling import PngProvider, infer_tiled
from app.utils.stop_watch import Stopwatch

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFY = 2

RUN_CONFIG_NAME = "run_config.json"


def guarded(fn: Callable[[argparse.Namespace], int]) -> Callable[[argparse.Namespace], int]:
    """Map errors escaping a command onto exit code 1"""

    @functools.wraps(fn)
    def wrapper(args: argparse.Namespace) -> int:
        try:
            return fn(args)
        except (OSError, ValueError, KeyError, ModelFormatError) as e:
            logger.error(f"{fn.__name__[4:]} failed: {str(e)}")
            return EXIT_ERROR

    return wrapper


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """--config file (partial JSON allowed) or defaults; precision falls back to INSTANSEG_PRECISION"""
    raw = {}
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    raw.setdefault("pipeline", {}).setdefault("precision", settings.PRECISION)
    return RunConfig.model_validate(raw)


def _png_files(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(directory.glob("*.png"))


def _match_by_stem(preds: List[Path], gts: List[Path]) -> List[Path]:
    """Predictions reordered to follow gts; every stem must appear on both sides"""
    by_stem = {p.stem: p for p in preds}
    gt_stems = {g.stem for g in gts}
    missing = sorted(gt_stems - by_stem.keys())
    extra = sorted(by_stem.keys() - gt_stems)
    if missing or extra:
        raise ValueError(f"prediction and ground-truth names differ: missing {missing}, unexpected {extra}")
    return [by_stem[g.stem] for g in gts]


@guarded
def cmd_gen(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    overrides = {k: v for k, v in {"seed": args.seed, "image_size": args.image_size}.items() if v is not None}
    if args.preset:
        synth = SynthConfig.from_preset(args.preset, **overrides)
    else:
        synth = SynthConfig.model_validate({**cfg.synth.model_dump(), **overrides})
    cfg = cfg.model_copy(update={"synth": synth})

    out = Path(args.out)
    gen_dataset(synth, args.n_train, args.n_val, args.n_test, out)
    cfg.save(out / RUN_CONFIG_NAME)
    return EXIT_OK


@guarded
def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cfg = cfg.updated(
        "train",
        epochs=args.epochs,
        pretrain_epochs=args.pretrain_epochs,
        lr=args.lr,
        batch_size=args.batch,
        crop=args.crop,
        batches_per_epoch=args.batches_per_epoch,
        seed=args.seed,
    )
    train_set = load_split(args.data, "train")
    val_set = load_split(args.data, "val")
    if not train_set:
        raise ValueError(f"no training images in {args.data}")
    cfg = cfg.updated("architecture", in_channels=train_set[0].image.shape[0], seed=args.seed)

    out_model = Path(args.out_model)
    start_epoch, best = 0, {}
    # 断点续训：配置摘要必须一致
    if args.resume:
        params, metadata = load_model_with_metadata(args.resume)
        if metadata.get("digest") != cfg.digest():
            raise ValueError(
                f"{args.resume} was trained under a different configuration "
                f"(digest {metadata.get('digest')!r}, current {cfg.digest()!r})"
            )
        start_epoch = int(metadata.get("epochs_completed", 0))
        best = {
            "best_f1_mu": float(metadata.get("best_f1_mu", -1.0)),
            "best_epoch": int(metadata.get("best_epoch", -1)),
        }
        logger.info(f"resuming from {args.resume} at epoch {start_epoch}")
    else:
        params = build_model(cfg.architecture)
    logger.info(f"model has {params.n_parameters} parameters; {len(train_set)} train / {len(val_set)} val images")

    metrics_path = out_model.with_suffix(".metrics.jsonl")
    result = train(
        train_set, val_set, params, cfg.train,
        pipeline=cfg.pipeline, metrics_path=metrics_path, start_epoch=start_epoch,
        progress=not args.no_progress, **best,
    )
    save_model(result.params, out_model, metadata={
        "digest": cfg.digest(),
        "epochs_completed": cfg.train.pretrain_epochs + cfg.train.epochs,
        "best_epoch": result.best_epoch,
        "best_f1_mu": result.best_f1_mu,
    })
    cfg.save(out_model.parent / RUN_CONFIG_NAME)
    return EXIT_OK


def _infer_one(image_path: Path, out_path: Path, model, cfg: RunConfig) -> int:
    if cfg.tiling.tile_size == 0:
        labels = segment(read_image(image_path), model, cfg.pipeline)
    else:
        labels = infer_tiled(PngProvider(image_path), model, cfg.pipeline, cfg.tiling)
    write_labels(out_path, labels)
    return instance_count(labels)


@guarded
def cmd_infer(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cfg = cfg.updated("pipeline", tta=True if args.tta else None)
    cfg = cfg.updated("tiling", tile_size=args.tile_size, overlap=args.overlap)
    params = load_model(args.model)
    predictor = NetworkPredictor(params, cfg.pipeline.precision)

    source, out = Path(args.input), Path(args.out)
    if source.is_dir():
        images = _png_files(source)
        if not images:
            raise FileNotFoundError(f"no PNG images in {source}")
        jobs = [(image, out / image.name) for image in images]
        config_dir = out
    else:
        jobs = [(source, out)]
        config_dir = out.parent

    total = 0
    for image_path, out_path in jobs:
        count = _infer_one(image_path, out_path, predictor, cfg)
        total += count
        print(f"{image_path.name}: {count} instances" if len(jobs) > 1 else count)
    if len(jobs) > 1:
        print(f"total: {total} instances")
    cfg.save(config_dir / RUN_CONFIG_NAME)
    return EXIT_OK


@guarded
def cmd_eval(args: argparse.Namespace) -> int:
    gt_files = _png_files(args.gt_dir)
    if not gt_files:
        raise FileNotFoundError(f"no label maps in {args.gt_dir}")
    # 按文件名配对预测与标注
    pred_files = _match_by_stem(_png_files(args.pred_dir), gt_files)
    pairs = pair_predictions([read_labels(p) for p in pred_files], [read_labels(g) for g in gt_files])
    report = evaluate_dataset(pairs)
    for entry, path in zip(report["per_image"], pred_files):
        entry["file"] = path.name
    pooled = report["pooled"]
    print(f"F1@0.5 {pooled['f1_05']:.4f}  F1^mu {pooled['f1_mu']:.4f}  ({len(pairs)} images)")

    if args.report:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(report, indent=2), encoding="utf-8")
        resolve_config(args).save(report_path.parent / RUN_CONFIG_NAME)
        logger.info(f"wrote report to {report_path}")
    return EXIT_OK


@guarded
def cmd_gradcheck(args: argparse.Namespace) -> int:
    stopwatch = Stopwatch()
    with stopwatch:
        report = run_suite(trials=args.trials, seed=args.seed)
    for name, error in report.items():
        print(f"{name:<24} {error:.3e}")
    failed = failures(report, args.tolerance)
    logger.info(f"gradcheck: {len(report)} ops in {stopwatch.seconds():.1f} s")
    if failed:
        for name in failed:
            logger.error(f"gradient check failed for {name}: relative error {report[name]:.3e} >= {args.tolerance:g}")
        return EXIT_VERIFY
    return EXIT_OK


def _benchmark(samples, predictor, pipeline) -> dict:
    stopwatch = Stopwatch()
    preds = []
    for sample in samples:
        with stopwatch:
            preds.append(segment(sample.image, predictor, pipeline))
    pooled = evaluate_dataset(pair_predictions(preds, [s.labels for s in samples]))["pooled"]
    seconds = stopwatch.seconds()
    instances = sum(instance_count(p) for p in preds)
    return {
        "images": len(samples),
        "instances": instances,
        "seconds": round(seconds, 3),
        "median_ms_per_image": round(stopwatch.median_lap(), 1),
        "instances_per_second": round(instances / seconds, 2) if seconds > 0 else None,
        "f1_05": pooled["f1_05"],
        "f1_mu": pooled["f1_mu"],
    }


@guarded
def cmd_bench(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    samples = load_split(args.data, args.split)
    if args.limit:
        samples = samples[:args.limit]
    if not samples:
        raise ValueError(f"split {args.split!r} of {args.data} is empty")
    predictor = NetworkPredictor(load_model(args.model), cfg.pipeline.precision)

    results = {"plain": _benchmark(samples, predictor, cfg.pipeline.model_copy(update={"tta": False}))}
    if args.tta:
        results["tta"] = _benchmark(samples, predictor, cfg.pipeline.model_copy(update={"tta": True}))
        delta = results["tta"]["f1_mu"] - results["plain"]["f1_mu"]
        logger.info(f"TTA changes pooled F1^mu by {delta:+.4f}")
    for name, r in results.items():
        print(
            f"{name}: {r['images']} images, {r['instances']} instances, {r['seconds']:.2f} s ({r['median_ms_per_image']} ms/image), "
            f"{r['instances_per_second']} inst/s, F1@0.5 {r['f1_05']:.4f}, F1^mu {r['f1_mu']:.4f}"
        )
    if args.report:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(results, indent=2), encoding="utf-8")
        cfg.save(report_path.parent / RUN_CONFIG_NAME)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="instanseg", description="Embedding-based instance segmentation")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (default INSTANSEG_THREADS)")
    parser.add_argument("--verbose", action="store_true", help="DEBUG logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="partial RunConfig JSON")
        p.set_defaults(handler=handler)
        return p

    p = add("gen", cmd_gen, "generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-val", type=int, default=40)
    p.add_argument("--n-test", type=int, default=40)
    p.add_argument("--preset", choices=["default", "crowded"], default=None)
    p.add_argument("--image-size", type=int, default=None)

    p = add("train", cmd_train, "train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--pretrain-epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--batches-per-epoch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="model container to continue from")
    p.add_argument("--no-progress", action="store_true")

    p = add("infer", cmd_infer, "segment an image or a directory of images")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tta", action="store_true")
    p.add_argument("--tile-size", type=int, default=None, help="0 disables tiling")
    p.add_argument("--overlap", type=int, default=None)

    p = add("eval", cmd_eval, "score predicted label maps against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--report", default=None)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every differentiable op")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = add("bench", cmd_bench, "time inference over a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--tta", action="store_true", help="also run with TTA and log the F1^mu delta")
    p.add_argument("--report", default=None)
    return parser

