"""
lesiontag command-line interface.
One binary, one subcommand per pipeline stage: merge, ingest, split, synth, train,
calibrate, eval, crossval and retrieve. Failures print a single `error: <class>: <message>` line.
"""

import json
import logging
import os
import sys
from functools import wraps
from typing import Callable, List, Optional, Tuple

import typer

current_dir = os.path.dirname(os.path.abspath(__file__))
root_dir = os.path.dirname(os.path.dirname(current_dir))
if root_dir not in sys.path:
    sys.path.insert(0, root_dir)

import config
from src.agents.crossval_agent import CrossValidationAgent, save_summary
from src.agents.evaluation_agent import EvaluationAgent, network_confidences
from src.agents.retrieval_agent import FeatureIndex, RetrievalAgent, write_retrieval_report
from src.agents.training_agent import TrainingAgent, save_loss_trace
from src.cli.configs import (
    CalibrateConfig,
    CrossValConfig,
    EvalConfig,
    FoldSelection,
    IngestConfig,
    MergeConfig,
    RetrieveConfig,
    SplitConfig,
    SynthConfig,
    TrainRunConfig,
    parse_list,
    resolve_config,
)
from src.cli.run_context import RunContext
from src.data.data_manager import DataManager, Dataset, FoldSpec, kfold_split, load_bundle, save_bundle, split_by_atlas
from src.data.synthetic import synth_dataset
from src.exceptions import BadArgumentError, DataError, LesionTagError
from src.numerics.checkpoint import Checkpoint, load_checkpoint, save_checkpoint, write_checkpoint
from src.processors.heads import MULTI_CLASS, MULTI_LABEL
from src.processors.taxonomy_processor import TaxonomyProcessor, load_label_entries, write_merge_report
from src.processors.thresholds import (
    ThresholdModel,
    apply_threshold,
    calibrate_threshold,
    multilabel_accuracy,
)

logger = logging.getLogger(__name__)

app = typer.Typer(help="Skin lesion diagnosis and lesion-tag classification toolkit.", add_completion=False)

ConfigOption = typer.Option(None, "--config", help="JSON file with option values")
SeedOption = typer.Option(None, "--seed", help="Random seed recorded in the run manifest")
OutOption = typer.Option(None, "--out", help="Write artifacts here instead of a timestamped run directory")


def _reports_errors(command: Callable) -> Callable:
    """Turn toolkit errors into the single-line diagnostic and the matching exit code."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except LesionTagError as e:
            typer.echo(f"error: {e.error_class}: {e}", err=True)
            raise typer.Exit(code=e.exit_code)
        except (ValueError, OSError) as e:
            # unparseable or unreadable input that slipped past the loaders
            logger.debug("Unclassified input failure", exc_info=True)
            typer.echo(f"error: {DataError.error_class}: {e}", err=True)
            raise typer.Exit(code=DataError.exit_code)
    return wrapper


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level")):
    """Configure logging once per invocation."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _context(name: str, cfg) -> RunContext:
    return RunContext(name, cfg.seed, cfg.model_dump(mode="json"), cfg.runs_dir, cfg.out_dir)


def _read_lines(path: Optional[str]) -> Optional[List[str]]:
    if path is None:
        return None
    if not os.path.exists(path):
        raise DataError(f"File '{path}' not found")
    with open(path) as f:
        return [line.strip() for line in f if line.strip() and not line.startswith("#")]


def _write_lines(path: str, lines: List[str]):
    with open(path, "w") as f:
        f.write("".join(f"{line}\n" for line in lines))


def _select(cfg: FoldSelection, dataset: Dataset, part: str) -> Dataset:
    """The training or test side of the chosen fold, or the whole bundle without a fold file."""
    if cfg.folds is None:
        return dataset
    train, test = FoldSpec.load(cfg.folds).train_test(dataset.records, cfg.fold)
    chosen = train if part == "train" else test
    if not chosen:
        raise DataError(f"Fold {cfg.fold} leaves the {part} side empty")
    return Dataset(chosen, dataset.classes, dataset.vocabulary)


def _head_of(checkpoint: Checkpoint) -> Tuple[str, List[str]]:
    head = checkpoint.metadata.get("head")
    if head not in (MULTI_CLASS, MULTI_LABEL):
        raise DataError("Checkpoint metadata does not name a classification head")
    return head, list(checkpoint.metadata.get("label_names", []))


def _check_labels(dataset: Dataset, head: str, label_names: List[str]):
    if dataset.label_names(head) != label_names:
        raise BadArgumentError(f"Bundle {head} labels {dataset.label_names(head)} differ from the checkpoint's {label_names}")


@app.command()
@_reports_errors
def merge(
    entries: Optional[str] = typer.Option(None, "--entries", help="Diagnosis label entries: atlas, name, count"),
    tags: Optional[str] = typer.Option(None, "--tags", help="Lesion tag entries: atlas, tag, count"),
    threshold: Optional[float] = typer.Option(None, "--threshold"),
    min_count: Optional[int] = typer.Option(None, "--min-count"),
    tag_min_count: Optional[int] = typer.Option(None, "--tag-min-count"),
    canonical_atlas: Optional[str] = typer.Option(None, "--canonical-atlas"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Reconcile diagnosis labels across atlases and deduplicate lesion tags."""
    cfg = resolve_config(MergeConfig, config_file, dict(
        entries=entries, tags=tags, threshold=threshold, min_count=min_count, tag_min_count=tag_min_count,
        canonical_atlas=canonical_atlas, seed=seed, out_dir=out))
    processor = TaxonomyProcessor(cfg.threshold, cfg.canonical_atlas, cfg.min_count)
    label_entries = load_label_entries(cfg.entries)
    run = _context("merge", cfg)
    table, _, retained = processor.merge_and_filter(label_entries)
    table.save(run.path("merge_table.tsv"))
    write_merge_report(run.path("merge_report.txt"), label_entries, table, retained)
    _write_lines(run.path("classes.txt"), retained)
    run.record(run.path("merge_table.tsv"), run.path("merge_report.txt"), run.path("classes.txt"))

    if cfg.tags:
        counts = {}
        for entry in load_label_entries(cfg.tags):
            counts[entry.raw_name] = counts.get(entry.raw_name, 0) + entry.image_count
        result = processor.dedupe_lesion_tags(counts, min_count=cfg.tag_min_count)
        result.table.save(run.path("tag_table.tsv"))
        _write_lines(run.path("vocabulary.txt"), result.tags)
        run.record(run.path("tag_table.tsv"), run.path("vocabulary.txt"))
    run.finish()
    typer.echo(run.directory)


@app.command()
@_reports_errors
def ingest(
    manifest: Optional[str] = typer.Option(None, "--manifest", help="Tab-separated manifest"),
    base_dir: Optional[str] = typer.Option(None, "--base-dir", help="Directory image paths are relative to"),
    classes: Optional[str] = typer.Option(None, "--classes", help="Allowed diagnoses, one per line"),
    vocabulary: Optional[str] = typer.Option(None, "--vocabulary", help="Canonical lesion tags, one per line"),
    merge_table: Optional[str] = typer.Option(None, "--merge-table", help="raw -> canonical names applied to labels"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Validate a manifest and store it as a dataset bundle."""
    cfg = resolve_config(IngestConfig, config_file, dict(
        manifest=manifest, base_dir=base_dir, classes=classes, vocabulary=vocabulary,
        merge_table=merge_table, seed=seed, out_dir=out))
    label_map = {}
    for line in _read_lines(cfg.merge_table) or []:
        raw, _, canonical = line.partition("\t")
        if not canonical:
            raise DataError(f"Merge table line '{line}' needs two tab-separated columns")
        label_map[raw] = canonical
    manager = DataManager(cfg.base_dir or os.path.dirname(os.path.abspath(cfg.manifest)),
                          _read_lines(cfg.classes), _read_lines(cfg.vocabulary), label_map)
    dataset = manager.load_manifest(cfg.manifest)
    run = _context("ingest", cfg)
    run.record(*save_bundle(run.path("dataset"), dataset))
    run.finish()
    typer.echo(run.directory)


@app.command()
@_reports_errors
def split(
    bundle: Optional[str] = typer.Option(None, "--bundle"),
    mode: Optional[str] = typer.Option(None, "--mode", help="atlas or kfold"),
    train_atlases: Optional[str] = typer.Option(None, "--train-atlases", help="Comma-separated"),
    test_atlases: Optional[str] = typer.Option(None, "--test-atlases", help="Comma-separated"),
    k: Optional[int] = typer.Option(None, "--k", help="Number of folds"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Partition a bundle by atlas or into K cross-validation folds."""
    cfg = resolve_config(SplitConfig, config_file, dict(
        bundle=bundle, mode=mode, train_atlases=parse_list(train_atlases), test_atlases=parse_list(test_atlases),
        k=k, seed=seed, out_dir=out))
    dataset = load_bundle(cfg.bundle)
    run = _context("split", cfg)
    if cfg.mode == "kfold":
        folds = kfold_split(dataset.records, cfg.k, cfg.seed)
        folds.save(run.path("folds.tsv"))
        run.record(run.path("folds.tsv"))
    else:
        result = split_by_atlas(dataset.records, cfg.train_atlases, cfg.test_atlases)
        for name, records in (("train", result.train), ("test", result.test)):
            if records:
                run.record(*save_bundle(run.path(name), Dataset(records, dataset.classes, dataset.vocabulary)))
        lines = [f"train: {len(result.train)}", f"test: {len(result.test)}", f"excluded: {result.excluded_count}"]
        lines += [f"excluded\t{atlas}\t{count}" for atlas, count in result.excluded.items()]
        _write_lines(run.path("split_report.txt"), lines)
        run.record(run.path("split_report.txt"))
    run.finish()
    typer.echo(run.directory)


@app.command()
@_reports_errors
def synth(
    num_labels: Optional[int] = typer.Option(None, "--num-labels"),
    images_per_label: Optional[int] = typer.Option(None, "--images-per-label"),
    multi_label: Optional[bool] = typer.Option(None, "--multi-label/--multi-class"),
    pattern_offset: Optional[int] = typer.Option(None, "--pattern-offset"),
    num_images: Optional[int] = typer.Option(None, "--num-images", help="Exact record count (multi-label)"),
    image_shape: Optional[str] = typer.Option(None, "--image-shape", help="C,H,W"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Generate a synthetic dataset bundle."""
    cfg = resolve_config(SynthConfig, config_file, dict(
        num_labels=num_labels, images_per_label=images_per_label, multi_label=multi_label,
        pattern_offset=pattern_offset, num_images=num_images, image_shape=parse_list(image_shape, int),
        seed=seed, out_dir=out))
    dataset = synth_dataset(cfg.num_labels, cfg.images_per_label, multi_label=cfg.multi_label,
                            pattern_offset=cfg.pattern_offset, image_shape=cfg.image_shape, seed=cfg.seed,
                            atlas=cfg.atlas, num_images=cfg.num_images)
    run = _context("synth", cfg)
    run.record(*save_bundle(run.path("dataset"), dataset))
    run.finish()
    typer.echo(run.directory)


@app.command()
@_reports_errors
def train(
    bundle: Optional[str] = typer.Option(None, "--bundle"),
    head: Optional[str] = typer.Option(None, "--head", help="multi-class or multi-label"),
    folds: Optional[str] = typer.Option(None, "--folds", help="Fold file from `split --mode kfold`"),
    fold: Optional[int] = typer.Option(None, "--fold", help="Fold held out for testing"),
    init_checkpoint: Optional[str] = typer.Option(None, "--init", help="Pretrained checkpoint to fine-tune"),
    head_lr_multiplier: Optional[float] = typer.Option(None, "--head-lr-mult"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    momentum: Optional[float] = typer.Option(None, "--momentum"),
    weight_decay: Optional[float] = typer.Option(None, "--weight-decay"),
    learning_rate: Optional[float] = typer.Option(None, "--lr"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Train either head from scratch or by fine-tuning a checkpoint."""
    cfg = resolve_config(TrainRunConfig, config_file, dict(
        bundle=bundle, head=head, folds=folds, fold=fold, init_checkpoint=init_checkpoint,
        head_lr_multiplier=head_lr_multiplier, batch_size=batch_size, momentum=momentum,
        weight_decay=weight_decay, learning_rate=learning_rate, epochs=epochs, seed=seed, out_dir=out))
    train_cfg = cfg.train_config()
    dataset = _select(cfg, load_bundle(cfg.bundle), "train")
    targets = dataset.targets(train_cfg.head)
    num_outputs = dataset.num_labels(train_cfg.head)

    agent = TrainingAgent(train_cfg, dataset.image_shape)
    if cfg.init_checkpoint:
        net = agent.fine_tune_network(cfg.init_checkpoint, num_outputs, cfg.head_lr_multiplier)
    else:
        net = agent.scratch_network(num_outputs)
    run = _context("train", cfg)
    result = agent.run(net, dataset.images(), targets)

    metadata = {
        "head": train_cfg.head,
        "label_names": dataset.label_names(train_cfg.head),
        "learning_type": "fine-tune" if cfg.init_checkpoint else "scratch",
        "train_config": train_cfg.model_dump(mode="json"),
    }
    save_checkpoint(run.path("model.ckpt"), result.net, metadata=metadata)
    save_loss_trace(run.path("loss_trace.tsv"), result.losses)
    run.record(run.path("model.ckpt"), run.path("loss_trace.tsv"))
    run.finish()
    typer.echo(run.directory)


@app.command()
@_reports_errors
def calibrate(
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint"),
    bundle: Optional[str] = typer.Option(None, "--bundle", help="Training bundle"),
    folds: Optional[str] = typer.Option(None, "--folds"),
    fold: Optional[int] = typer.Option(None, "--fold"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Fit the multi-label threshold function on training confidences."""
    cfg = resolve_config(CalibrateConfig, config_file, dict(
        checkpoint=checkpoint, bundle=bundle, folds=folds, fold=fold, seed=seed, out_dir=out))
    stored = load_checkpoint(cfg.checkpoint)
    head, label_names = _head_of(stored)
    if head != MULTI_LABEL:
        raise BadArgumentError("Threshold calibration applies to multi-label checkpoints only")
    dataset = _select(cfg, load_bundle(cfg.bundle), "train")
    _check_labels(dataset, head, label_names)

    labels = dataset.targets(head)
    confs = network_confidences(stored.to_network(), dataset.images(), head)
    model = calibrate_threshold(confs, labels)
    calibrated_accuracy = multilabel_accuracy(apply_threshold(confs, model), labels)
    fixed_accuracy = multilabel_accuracy(apply_threshold(confs, ThresholdModel.constant(0.5, len(label_names))), labels)
    logger.info(f"Training label accuracy: calibrated {calibrated_accuracy:.4f}, fixed 0.5 {fixed_accuracy:.4f}")

    run = _context("calibrate", cfg)
    metadata = dict(stored.metadata, threshold_method=model.method)
    write_checkpoint(run.path("model.ckpt"), Checkpoint(
        stored.specs, stored.input_shape, stored.seed, stored.parameters,
        dict(stored.extras, **model.to_arrays()), metadata))
    with open(run.path("threshold.json"), "w") as f:
        json.dump({"method": model.method, "weights": model.weights.tolist(), "bias": model.bias,
                   "train_label_accuracy": calibrated_accuracy, "fixed_half_label_accuracy": fixed_accuracy},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    run.record(run.path("model.ckpt"), run.path("threshold.json"))
    run.finish()
    typer.echo(run.directory)


@app.command(name="eval")
@_reports_errors
def evaluate(
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint"),
    bundle: Optional[str] = typer.Option(None, "--bundle", help="Test bundle"),
    folds: Optional[str] = typer.Option(None, "--folds"),
    fold: Optional[int] = typer.Option(None, "--fold"),
    top_k: Optional[str] = typer.Option(None, "--top-k", help="Comma-separated k values"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Evaluate a checkpoint on a test bundle and write the metrics report."""
    cfg = resolve_config(EvalConfig, config_file, dict(
        checkpoint=checkpoint, bundle=bundle, folds=folds, fold=fold, top_k=parse_list(top_k, int),
        seed=seed, out_dir=out))
    stored = load_checkpoint(cfg.checkpoint)
    head, label_names = _head_of(stored)
    dataset = _select(cfg, load_bundle(cfg.bundle), "test")
    _check_labels(dataset, head, label_names)
    labels = dataset.targets(head)
    confs = network_confidences(stored.to_network(), dataset.images(), head)

    if head == MULTI_CLASS:
        ks = cfg.top_k if cfg.top_k is not None else [k for k in config.TOP_K if k <= len(label_names)]
        report = EvaluationAgent(label_names, ks).evaluate_multiclass(confs, labels, dataset.ids)
    else:
        if "threshold.weights" in stored.extras:
            threshold = ThresholdModel.from_arrays(stored.extras, stored.metadata.get("threshold_method", "linear"))
        else:
            logger.warning("Checkpoint carries no calibrated threshold; using the constant 0.5")
            threshold = ThresholdModel.constant(0.5, len(label_names))
        report = EvaluationAgent(label_names, ()).evaluate_multilabel(confs, labels, threshold, dataset.ids)

    run = _context("eval", cfg)
    report.save(run.path("metrics.txt"))
    with open(run.path("metrics.json"), "w") as f:
        f.write(report.to_json() + "\n")
    run.record(run.path("metrics.txt"), run.path("metrics.json"))
    if report.confusion is not None:
        report.export_confusion_grid(run.path("confusion.csv"))
        run.record(run.path("confusion.csv"))
    run.finish()
    typer.echo(run.directory)


@app.command()
@_reports_errors
def crossval(
    bundle: Optional[str] = typer.Option(None, "--bundle"),
    folds: Optional[str] = typer.Option(None, "--folds", help="Fold file; drawn with --k and --seed when omitted"),
    k: Optional[int] = typer.Option(None, "--k", help="Number of folds"),
    head: Optional[str] = typer.Option(None, "--head", help="multi-class or multi-label"),
    init_checkpoint: Optional[str] = typer.Option(None, "--init", help="Pretrained checkpoint to fine-tune"),
    head_lr_multiplier: Optional[float] = typer.Option(None, "--head-lr-mult"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    momentum: Optional[float] = typer.Option(None, "--momentum"),
    weight_decay: Optional[float] = typer.Option(None, "--weight-decay"),
    learning_rate: Optional[float] = typer.Option(None, "--lr"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    top_k: Optional[str] = typer.Option(None, "--top-k", help="Comma-separated k values"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Train, calibrate and evaluate once per fold, then summarize across folds."""
    cfg = resolve_config(CrossValConfig, config_file, dict(
        bundle=bundle, folds=folds, k=k, head=head, init_checkpoint=init_checkpoint,
        head_lr_multiplier=head_lr_multiplier, batch_size=batch_size, momentum=momentum,
        weight_decay=weight_decay, learning_rate=learning_rate, epochs=epochs,
        top_k=parse_list(top_k, int), seed=seed, out_dir=out))
    dataset = load_bundle(cfg.bundle)
    assignment = FoldSpec.load(cfg.folds) if cfg.folds else kfold_split(dataset.records, cfg.k, cfg.seed)
    pretrained = load_checkpoint(cfg.init_checkpoint) if cfg.init_checkpoint else None
    agent = CrossValidationAgent(cfg.train_config(), cfg.top_k, pretrained, cfg.head_lr_multiplier)
    result = agent.run(dataset, assignment)

    run = _context("crossval", cfg)
    if not cfg.folds:
        assignment.save(run.path("folds.tsv"))
        run.record(run.path("folds.tsv"))
    for outcome in result.outcomes:
        fold_dir = run.path(f"fold{outcome.fold}")
        os.makedirs(fold_dir, exist_ok=True)
        outcome.report.save(os.path.join(fold_dir, "metrics.txt"))
        with open(os.path.join(fold_dir, "metrics.json"), "w") as f:
            f.write(outcome.report.to_json() + "\n")
        save_loss_trace(os.path.join(fold_dir, "loss_trace.tsv"), outcome.losses)
        run.record(*(os.path.join(fold_dir, name) for name in ("metrics.txt", "metrics.json", "loss_trace.tsv")))
    save_summary(run.path("crossval.tsv"), result.summary())
    with open(run.path("crossval.json"), "w") as f:
        f.write(result.to_json() + "\n")
    run.record(run.path("crossval.tsv"), run.path("crossval.json"))
    run.finish()
    typer.echo(run.directory)


@app.command()
@_reports_errors
def retrieve(
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint"),
    index_bundle: Optional[str] = typer.Option(None, "--index-bundle", help="Images to index (training set)"),
    query_bundle: Optional[str] = typer.Option(None, "--query-bundle", help="Query images (test set)"),
    k: Optional[int] = typer.Option(None, "--k"),
    normalize: Optional[bool] = typer.Option(None, "--normalize/--no-normalize", help="L2-normalize features"),
    seed: Optional[int] = SeedOption,
    out: Optional[str] = OutOption,
    config_file: Optional[str] = ConfigOption,
):
    """Index training images by penultimate features and retrieve neighbors for queries."""
    cfg = resolve_config(RetrieveConfig, config_file, dict(
        checkpoint=checkpoint, index_bundle=index_bundle, query_bundle=query_bundle, k=k,
        normalize=normalize, seed=seed, out_dir=out))
    net = load_checkpoint(cfg.checkpoint).to_network()
    indexed = load_bundle(cfg.index_bundle)
    queries = load_bundle(cfg.query_bundle)

    index = FeatureIndex.build(net, indexed.images(), indexed.ids, cfg.normalize)
    agent = RetrievalAgent(net, index, indexed.tag_sets())
    hits = agent.query(queries.images(), queries.ids, queries.tag_sets(), cfg.k)

    run = _context("retrieve", cfg)
    index.save(run.path("index.bin"))
    write_retrieval_report(run.path("retrieval.tsv"), hits)
    run.record(run.path("index.bin"), run.path("retrieval.tsv"))
    run.finish()
    typer.echo(run.directory)


if __name__ == "__main__":
    app()
