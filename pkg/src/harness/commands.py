"""
Harness Commands

One function per CLI verb. Each takes a validated RunConfig, writes its
artifacts under `output_dir` and returns what it wrote. Units of work
(one architecture, one source × attack variant) fan out over a thread pool
sized by `threads`; results are collected in submission order so output
files do not depend on scheduling.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from tqdm import tqdm

from ..analysis import cka_crossmodel, cka_layerwise, collect_activations, save_activations
from ..attacks import AdversarialBatch, run_attack
from ..config import RunConfig, settings
from ..core.container import atomic_write_bytes
from ..core.exceptions import ConfigError, DatasetError
from ..core.models import (
    AttackConfig,
    CKAReport,
    CKAVariant,
    ImageRecord,
    ResultRow,
    SweepAxis,
    SweepPoint,
    TrainingMetrics,
)
from ..nn import LayerGraph, build_model, load_checkpoint, save_checkpoint, train
from ..nn.models import BLOCK_NAMES
from ..spectral import eigencam_map, to_gray8, upsample_nearest
from .artifacts import load_adversarial_batch, plot_sweep, save_adversarial_batch, write_pgm
from .dataset import Dataset, generate_dataset, load_dataset, save_dataset
from .results import ResultsTable, cka_report_to_csv, success_rate, write_image_records

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def fan_out(fn: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    """Apply fn to every item, in parallel when threads > 1, keeping order"""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


# =============================================================================
# Loading
# =============================================================================

def _load_split(config: RunConfig, split: str) -> Dataset:
    return load_dataset(config.images_path(split), split=split)


def _attack_images(config: RunConfig) -> Dataset:
    test_set = _load_split(config, "test")
    if config.n_images > len(test_set):
        logger.warning(f"n_images={config.n_images} exceeds the {len(test_set)} test images, using all")
    return test_set.subset(min(config.n_images, len(test_set)))


def load_model(config: RunConfig, model_id: str) -> LayerGraph:
    path = config.checkpoint_path(model_id)
    if not path.exists():
        raise DatasetError(f"checkpoint for '{model_id}' not found at {path}; run `train` first")
    model = load_checkpoint(path)
    model.metadata["model_id"] = model_id
    if settings.dtype != "float32":
        model = model.astype(np.dtype(settings.dtype))
    return model


def _load_models(config: RunConfig, model_ids: Iterable[str]) -> Dict[str, LayerGraph]:
    return {model_id: load_model(config, model_id) for model_id in dict.fromkeys(model_ids)}


# =============================================================================
# gen-data / train
# =============================================================================

def cmd_gen_data(config: RunConfig) -> Dict[str, Tuple[Path, Path]]:
    written = {}
    for split, n in (("train", config.n_train), ("test", config.n_test)):
        dataset = generate_dataset(config.seed, n, split)
        written[split] = save_dataset(dataset, config.data_dir)
    return written


def cmd_train(config: RunConfig) -> Dict[str, Path]:
    train_set = _load_split(config, "train")
    test_set = _load_split(config, "test")

    def train_one(arch_id: str) -> TrainingMetrics:
        model = build_model(arch_id, train_set.num_classes, seed=config.seed, input_spec=train_set.image_shape)
        result = train(
            model, train_set, config.epochs, config.lr, config.seed,
            batch_size=config.batch_size, test_set=test_set, progress=config.threads <= 1,
        )
        result.checkpoint.metadata["model_id"] = arch_id
        save_checkpoint(result.checkpoint, config.checkpoint_path(arch_id))
        logger.info(f"{arch_id}: final test accuracy {result.metrics.final_test_acc:.3f}")
        return result.metrics

    metrics = fan_out(train_one, config.models, config.threads)
    record = {m.arch_id: m.model_dump(mode="json") for m in metrics}
    metrics_path = atomic_write_bytes(
        config.output_path / "metrics.json",
        json.dumps(record, indent=2, sort_keys=True).encode("utf-8"),
    )
    written = {arch_id: config.checkpoint_path(arch_id) for arch_id in config.models}
    written["metrics"] = metrics_path
    return written


# =============================================================================
# attack
# =============================================================================

def describe_attack(config: AttackConfig) -> str:
    """One-line echo of every attack parameter"""
    hook = config.svd_hook
    parts = [
        f"name={config.name}",
        f"method={config.method.value}",
        f"epsilon={config.epsilon:g}",
        f"steps={config.steps}",
        f"alpha={config.alpha:g}",
        f"mu={config.momentum_mu:g}",
        f"transforms=[{', '.join(t.kind for t in config.transforms)}]",
    ]
    if hook is not None:
        parts += [
            f"svd=on layer={hook.layer_name}",
            f"k={hook.k}",
            f"beta={hook.beta_fusion:g}",
            f"grad_mode={hook.grad_mode.value}",
        ]
    else:
        parts.append("svd=off")
    return " ".join(parts)


def craft(model: LayerGraph, dataset: Dataset, attack: AttackConfig, batch_size: int) -> AdversarialBatch:
    """Run `attack` over the dataset in chunks and stitch the results"""
    chunks = []
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        chunks.append(run_attack(
            model,
            dataset.images[start:stop],
            dataset.labels[start:stop],
            attack,
            sample_ids=np.arange(start, stop),
        ))
    return AdversarialBatch(
        clean=np.concatenate([c.clean for c in chunks]),
        adv=np.concatenate([c.adv for c in chunks]),
        labels=np.concatenate([c.labels for c in chunks]),
        source_model_id=model.model_id,
        attack_name=attack.name,
        sample_ids=np.concatenate([c.sample_ids for c in chunks]),
        errors=[e for c in chunks for e in c.errors],
        config=chunks[0].config,
    )


def image_records(model: LayerGraph, batch: AdversarialBatch) -> List[ImageRecord]:
    before = model.predict(batch.clean)
    after = model.predict(batch.adv)
    linf = batch.linf_per_image
    return [
        ImageRecord(
            index=int(batch.sample_ids[i]),
            label=int(batch.labels[i]),
            linf=float(linf[i]),
            source_pred_before=int(before[i]),
            source_pred_after=int(after[i]),
            error=batch.errors[i],
        )
        for i in range(len(batch))
    ]


def batch_path(config: RunConfig, source: str, attack: AttackConfig) -> Path:
    """attacks/<source>__<name>__{svd,plain}.adv"""
    svd = "svd" if attack.svd_hook is not None else "plain"
    return config.output_path / "attacks" / f"{source}__{attack.name}__{svd}.adv"


def recipe_attack(config: RunConfig) -> AttackConfig:
    """The flat-key attack crafted by `attack`, named after its method and transforms"""
    return config.attack_config(name="+".join([config.method.value] + list(config.transforms)))


def _matches(batch: AdversarialBatch, source: str, attack: AttackConfig, dataset: Dataset) -> bool:
    n = len(dataset)
    return (
        batch.source_model_id == source
        and batch.config == attack.model_dump(mode="json")
        and len(batch) >= n
        and np.array_equal(batch.sample_ids[:n], np.arange(n))
        and np.array_equal(batch.labels[:n], dataset.labels)
        and np.array_equal(batch.clean[:n], dataset.images)
    )


def stored_or_crafted(config: RunConfig, model: LayerGraph, source: str, attack: AttackConfig,
                      dataset: Dataset, save: bool = True) -> AdversarialBatch:
    """
    The batch for (source, attack) on `dataset`, read from its `.adv` file
    when that file was crafted with the same recipe on the same leading
    images, otherwise crafted (and saved when `save`).
    """
    path = batch_path(config, source, attack)
    if path.exists():
        batch = load_adversarial_batch(path)
        if _matches(batch, source, attack, dataset):
            logger.info(f"Using stored batch {path.name}")
            return batch.subset(len(dataset)) if len(batch) > len(dataset) else batch
        logger.warning(f"{path.name} was crafted with another recipe or image set, crafting again")
    batch = craft(model, dataset, attack, config.attack_batch_size)
    if save:
        save_adversarial_batch(batch, path)
    return batch


def cmd_attack(config: RunConfig) -> List[Path]:
    attack = recipe_attack(config)
    logger.info(f"Attack config: {describe_attack(attack)}")
    dataset = _attack_images(config)
    models = _load_models(config, config.source_models)

    def attack_one(source: str) -> List[Path]:
        model = models[source]
        batch = craft(model, dataset, attack, config.attack_batch_size)
        stem = batch_path(config, source, attack).stem
        records = image_records(model, batch)
        white_box = success_rate([r.source_pred_after for r in records], batch.labels)
        logger.info(
            f"{source}: white-box success {white_box:.3f} over {len(batch)} images, "
            f"max linf {batch.linf_per_image.max(initial=0):.3f}, {batch.n_failed} failed"
        )
        return [
            save_adversarial_batch(batch, config.output_path / "attacks" / f"{stem}.adv"),
            write_image_records(records, config.output_path / "attacks" / f"{stem}.jsonl"),
        ]

    return [path for paths in fan_out(attack_one, config.source_models, config.threads) for path in paths]


# =============================================================================
# eval / sweep
# =============================================================================

def evaluate_batch(target: LayerGraph, images: np.ndarray, labels: np.ndarray) -> float:
    return success_rate(target.predict(np.asarray(images).astype(target.dtype)), labels)


def _result_rows(batch: AdversarialBatch, attack: AttackConfig, targets: Dict[str, LayerGraph],
                 seed: int) -> List[ResultRow]:
    hook = attack.svd_hook
    return [
        ResultRow(
            source=batch.source_model_id,
            target=target_id,
            attack=attack.name,
            svd=hook is not None,
            k=hook.k if hook else None,
            beta=hook.beta_fusion if hook else None,
            layer=hook.layer_name if hook else None,
            success_rate=evaluate_batch(target, batch.adv, batch.labels),
            n=len(batch),
            seed=seed,
        )
        for target_id, target in targets.items()
    ]


def _run_units(config: RunConfig, units: List[Tuple[str, AttackConfig]], dataset: Dataset,
               models: Dict[str, LayerGraph], targets: Dict[str, LayerGraph],
               stored: bool) -> List[ResultRow]:
    def run_unit(unit: Tuple[str, AttackConfig]) -> List[ResultRow]:
        source, attack = unit
        if stored:
            batch = stored_or_crafted(config, models[source], source, attack, dataset)
        else:
            batch = craft(models[source], dataset, attack, config.attack_batch_size)
        return _result_rows(batch, attack, targets, config.seed)

    rows: List[ResultRow] = []
    with tqdm(total=len(units), desc="attack units", disable=config.threads > 1) as bar:
        for unit_rows in fan_out(run_unit, units, config.threads):
            rows.extend(unit_rows)
            bar.update(1)
    return rows


def clean_rows(config: RunConfig, targets: Dict[str, LayerGraph]) -> List[ResultRow]:
    """Success rate of the unperturbed test split, i.e. each target's test error"""
    test_set = _load_split(config, "test")
    return [
        ResultRow(
            source="clean",
            target=target_id,
            attack="clean",
            svd=False,
            success_rate=evaluate_batch(target, test_set.images, test_set.labels),
            n=len(test_set),
            seed=config.seed,
        )
        for target_id, target in targets.items()
    ]


def cmd_eval(config: RunConfig) -> Dict[str, Path]:
    """
    Transfer table for every preset in `attacks`, with and without the SVD
    hook, plus the batches `attack` left in attacks/. Stored batches are
    read back instead of crafted again when their recipe and images match.
    """
    dataset = _attack_images(config)
    models = _load_models(config, list(config.source_models) + list(config.target_models))
    targets = {t: models[t] for t in config.target_models}

    units = [
        (source, config.preset_config(attack_name, svd))
        for source in config.source_models
        for attack_name in config.attacks
        for svd in (False, True)
    ]
    recipe = recipe_attack(config)
    units += [(source, recipe) for source in config.source_models if batch_path(config, source, recipe).exists()]
    for _, attack in units[:2]:
        logger.info(f"Attack config: {describe_attack(attack)}")
    table = ResultsTable(_run_units(config, units, dataset, models, targets, stored=True))
    paths = table.write(config.output_path)
    clean = ResultsTable(clean_rows(config, targets))
    paths.update({f"clean_{name}": path for name, path in clean.write(config.output_path, stem="clean").items()})
    for entry in table.summary():
        logger.info(
            f"{entry['source']} {entry['attack']}: black-box avg w/o={entry['avg_black_box_without_svd']} "
            f"w/={entry['avg_black_box_with_svd']} improvement={entry['improvement']}"
        )
    return paths


def sweep_grid(config: RunConfig, axis: SweepAxis) -> List[Tuple[str, dict]]:
    """(label, svd-hook overrides) per grid point, validated"""
    if axis == SweepAxis.BETA:
        grid = config.beta_grid
        bad = [v for v in grid if not 0.0 <= v <= 1.0]
        points = [(f"{v:g}", {"beta_fusion": v}) for v in grid]
    elif axis == SweepAxis.TOPK:
        grid = config.topk_grid
        bad = [v for v in grid if v < 1]
        points = [(str(v), {"k": v}) for v in grid]
    else:
        grid = config.layer_grid
        bad = [v for v in grid if v not in BLOCK_NAMES]
        points = [(v, {"layer_name": v}) for v in grid]
    if not grid:
        raise ConfigError(f"{axis.value} sweep grid is empty")
    if bad:
        raise ConfigError(f"{axis.value} sweep value {bad[0]!r} is out of range")
    return points


def cmd_sweep(config: RunConfig, axis: SweepAxis) -> Dict[str, Path]:
    axis = SweepAxis(axis)
    grid = sweep_grid(config, axis)
    dataset = _attack_images(config)
    models = _load_models(config, list(config.source_models) + list(config.target_models))
    targets = {t: models[t] for t in config.target_models}

    labelled: List[Tuple[str, str, AttackConfig]] = []
    for source in config.source_models:
        for attack_name in config.attacks:
            labelled.append(("baseline", source, config.preset_config(attack_name, svd=False)))
            for label, overrides in grid:
                labelled.append((label, source, config.preset_config(attack_name, svd=True, **overrides)))

    rows = _run_units(config, [(s, a) for _, s, a in labelled], dataset, models, targets, stored=False)
    per_unit = len(targets)
    table = ResultsTable(rows)

    points: List[SweepPoint] = []
    for label in ["baseline"] + [g[0] for g in grid]:
        point_rows = [
            row
            for i, (unit_label, _, _) in enumerate(labelled) if unit_label == label
            for row in rows[i * per_unit:(i + 1) * per_unit]
        ]
        black = [r.success_rate for r in point_rows if not r.white_box]
        white = [r.success_rate for r in point_rows if r.white_box]
        points.append(SweepPoint(
            axis=axis,
            value=label,
            mean_black_box=float(np.mean(black)) if black else 0.0,
            mean_white_box=float(np.mean(white)) if white else 0.0,
            rows=point_rows,
        ))
        logger.info(f"sweep {axis.value}={label}: black-box {points[-1].mean_black_box:.3f}")

    stem = f"sweep_{axis.value}"
    paths = table.write(config.output_path, stem=stem)
    paths["points"] = atomic_write_bytes(
        config.output_path / f"{stem}_points.json",
        json.dumps([p.model_dump(mode="json", exclude={"rows"}) for p in points], indent=2).encode("utf-8"),
    )
    paths["plot"] = plot_sweep(points, config.output_path / f"{stem}.png", title=f"{axis.value} sweep")
    return paths


# =============================================================================
# cka / cam
# =============================================================================

def cmd_cka(config: RunConfig) -> Dict[str, Path]:
    dataset = _attack_images(config)
    models = _load_models(config, list(config.source_models) + list(config.target_models))
    attack_name = config.attacks[0]

    def analyse(source: str) -> Tuple[CKAReport, CKAReport]:
        model = models[source]
        plain = stored_or_crafted(config, model, source, config.preset_config(attack_name, svd=False), dataset)
        fused = stored_or_crafted(config, model, source, config.preset_config(attack_name, svd=True), dataset)

        layerwise = CKAReport()
        for batch, variant in ((plain, CKAVariant.CLEAN_VS_ADV_NO_SVD), (fused, CKAVariant.CLEAN_VS_ADV_SVD)):
            report = cka_layerwise(
                model, batch.clean, batch.adv, config.cka_layers, variant,
                clean_ids=batch.sample_ids, adv_ids=batch.sample_ids, center=config.cka_center,
            )
            layerwise.rows.extend(report.rows)

        crossmodel = CKAReport()
        for target_id in config.target_models:
            if target_id == source:
                continue
            report = cka_crossmodel(model, models[target_id], plain.clean, plain.adv, fused.adv,
                                    center=config.cka_center)
            crossmodel.rows.extend(report.rows)

        save_activations(
            collect_activations(model, plain.clean, config.cka_layers, plain.sample_ids),
            config.output_path / "activations" / f"{source}_clean.act",
        )
        return layerwise, crossmodel

    reports = fan_out(analyse, config.source_models, config.threads)
    paths: Dict[str, Path] = {}
    cross_all = CKAReport()
    for source, (layerwise, crossmodel) in zip(config.source_models, reports):
        paths[f"layerwise_{source}"] = atomic_write_bytes(
            config.output_path / "cka" / f"layerwise_{source}.csv",
            cka_report_to_csv(layerwise).encode("utf-8"),
        )
        cross_all.rows.extend(crossmodel.rows)
    paths["crossmodel"] = atomic_write_bytes(
        config.output_path / "cka" / "crossmodel.csv",
        cka_report_to_csv(cross_all).encode("utf-8"),
    )
    logger.info(f"Wrote CKA reports for {len(config.source_models)} source models")
    return paths


def cam_maps(model: LayerGraph, images: np.ndarray, layer_name: str) -> np.ndarray:
    """uint8 N×H×W saliency at input resolution"""
    images = np.asarray(images).astype(model.dtype)
    features = model.forward_to_layer(images, layer_name).data
    _, _, height, width = images.shape
    return np.stack([
        to_gray8(upsample_nearest(eigencam_map(feature), height, width))
        for feature in features
    ])


def cmd_cam(config: RunConfig, attack: Optional[AttackConfig] = None) -> List[Path]:
    dataset = _attack_images(config).subset(min(config.cam_images, config.n_images))
    models = _load_models(config, list(config.source_models) + list(config.target_models))
    attack = attack or recipe_attack(config)

    written: List[Path] = []
    for source in config.source_models:
        batch = stored_or_crafted(config, models[source], source, attack, dataset, save=False)
        for model_id in dict.fromkeys(config.target_models):
            for kind, images in (("clean", batch.clean), ("adv", batch.adv)):
                maps = cam_maps(models[model_id], images, config.cam_layer)
                for sample_id, gray in zip(batch.sample_ids, maps):
                    path = config.output_path / "cam" / source / f"{int(sample_id):04d}_{model_id}_{kind}.pgm"
                    written.append(write_pgm(gray, path))
    logger.info(f"Wrote {len(written)} saliency maps")
    return written
