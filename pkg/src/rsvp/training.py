"""Two-stage training pipeline: response retrieval, response generation,
then intent-detection fine-tuning, plus the baseline, ablation grid,
hyperparameter sweeps, seed averaging and checkpoint wiring.

Each training seed owns isolated named random substreams (weight init,
dropout, shuffling, decoder init, classifier init), so pipeline variants
that skip a stage leave every other stage's randomness untouched.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _expit

from . import autodiff as ad
from .checkpoint import Checkpoint, load_checkpoint, restore_component, save_checkpoint
from .config import StageConfig
from .losses import (
    classification_loss,
    combined_finetune_loss,
    generation_loss,
    multilabel_loss,
    retrieval_loss,
    unsup_contrastive_loss,
)
from .metrics import Prediction, accuracy, in_batch_recall_at_1, mrr_at_k, multilabel_metrics
from .model import ConversationalEncoder, IntentClassifier, init_decoder_from_encoder
from .optim import adamw_step, zero_grad
from .rng import SeedHub
from .text import EncodedExample, Vocab, build_vocab, flatten_dialogue, label_set, split
from .text import encode as encode_record

logger = logging.getLogger("rsvp.training")

PAD_ID = 0
BOS_ID = 4
EOS_ID = 5

_STAGE_RANK = {"retrieval": 1, "generation": 2, "finetuned": 3}


@dataclass
class PreparedData:
    """Encoded splits plus the vocabulary and label set they were built with."""

    train: list
    valid: list
    test: list
    vocab: Vocab
    label_names: list


def prepare(records, cfg: StageConfig, vocab: Vocab | None = None) -> PreparedData:
    """Split records, build the vocabulary from the training split only
    (unless one is supplied), and encode every split."""
    label_names = label_set(records)
    mode = "multi" if cfg.multi_label else "single"
    train_recs, valid_recs, test_recs = split(records, cfg.split_ratios, cfg.split_seed)
    if vocab is None:
        corpus = []
        for rec in train_recs:
            u_text, r_text = flatten_dialogue(rec)
            corpus.append(u_text)
            if r_text:
                corpus.append(r_text)
        vocab = build_vocab(corpus, min_freq=cfg.min_freq, char_fallback=cfg.char_fallback)

    def enc(recs):
        return [
            encode_record(
                rec,
                vocab,
                label_names,
                h_max=cfg.max_len,
                t_max=cfg.max_len,
                mode=mode,
                char_fallback=cfg.char_fallback,
            )
            for rec in recs
        ]

    return PreparedData(enc(train_recs), enc(valid_recs), enc(test_recs), vocab, label_names)


def _usable_pairs(examples):
    """Pairs whose response carries content beyond the BOS/EOS bracket."""
    usable = [ex for ex in examples if len(ex.response_ids) > 2]
    skipped = len(examples) - len(usable)
    if skipped:
        logger.info("excluded %d pairs with empty responses from pre-training", skipped)
    return usable


def _epoch_batches(n: int, batch_size: int, rng, min_last: int = 1):
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < min_last:
        logger.info("dropping a %d-pair trailing batch", len(batches[-1]))
        batches.pop()
    return batches


def pretrain_retrieval(encoder, examples, cfg: StageConfig, hub: SeedHub, epoch_offset: int = 0):
    """Contrastive utterance-to-response training; returns per-epoch stats.

    Random streams are derived per absolute epoch index, so training in
    chunks (``epoch_offset`` advancing) matches one monolithic run exactly.
    """
    usable = _usable_pairs(examples)
    if cfg.retrieval_epochs > 0 and len(usable) < 2:
        raise ValueError("retrieval pre-training needs at least two usable pairs")
    params = encoder.parameters()
    history = []
    for local_epoch in range(cfg.retrieval_epochs):
        epoch = epoch_offset + local_epoch
        shuffle_rng = hub.stream("shuffle_retrieval", epoch)
        drop_rng = hub.stream("dropout_retrieval", epoch)
        # a single-pair batch has no negatives and a zero gradient; drop it
        batches = _epoch_batches(len(usable), cfg.pretrain_batch, shuffle_rng, min_last=2)
        loss_sum = recall_sum = count = 0
        for idx in batches:
            batch = [usable[i] for i in idx]
            bs = len(idx)
            # both sides run through the one shared encoder in a single pass
            both = encoder.encode_batch(
                [ex.utterance_ids for ex in batch] + [ex.response_ids for ex in batch],
                training=True,
                rng=drop_rng,
                dropout_p=cfg.dropout_p,
            )
            q = ad.narrow0(both, 0, bs)
            p = ad.narrow0(both, bs, 2 * bs)
            loss = retrieval_loss(q, p, cfg.tau)
            ad.backward(loss)
            adamw_step(params, lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
            zero_grad(params)
            loss_sum += loss.item() * bs
            recall_sum += in_batch_recall_at_1(q.data, p.data) * bs
            count += bs
        history.append(
            {"epoch": epoch, "loss": loss_sum / count, "recall_at_1": recall_sum / count}
        )
        logger.debug("retrieval epoch %d: loss %.4f recall@1 %.3f", epoch, history[-1]["loss"], history[-1]["recall_at_1"])
    return history


def pretrain_generation(encoder, examples, cfg: StageConfig, hub: SeedHub, decoder=None,
                        epoch_offset: int = 0):
    """Teacher-forced response generation; encoder and decoder update jointly.

    Returns (decoder, per-epoch stats). The decoder starts as a value copy
    of the encoder blocks with fresh cross-attention and LM head.
    """
    if decoder is None:
        decoder = init_decoder_from_encoder(
            encoder, hub.stream("decoder_init"), bos_id=BOS_ID, eos_id=EOS_ID
        )
    usable = _usable_pairs(examples)
    if cfg.generation_epochs > 0 and not usable:
        raise ValueError("generation pre-training needs at least one usable pair")
    # the pooling head sees no gradient from teacher forcing; update only
    # the parameters this objective reaches
    params = encoder.backbone_parameters() + decoder.parameters()
    history = []
    for local_epoch in range(cfg.generation_epochs):
        epoch = epoch_offset + local_epoch
        shuffle_rng = hub.stream("shuffle_generation", epoch)
        drop_rng = hub.stream("dropout_generation", epoch)
        batches = _epoch_batches(len(usable), cfg.pretrain_batch, shuffle_rng)
        loss_sum = token_count = 0
        for idx in batches:
            batch = [usable[i] for i in idx]
            enc_hidden, enc_mask = encoder.forward_hidden(
                [ex.utterance_ids for ex in batch], training=True, rng=drop_rng,
                dropout_p=cfg.dropout_p,
            )
            in_seqs = [ex.response_ids[:-1] for ex in batch]
            max_t = max(len(s) for s in in_seqs)
            targets = np.full((len(batch), max_t), PAD_ID, dtype=np.int64)
            for i, ex in enumerate(batch):
                targets[i, : len(ex.response_ids) - 1] = ex.response_ids[1:]
            logits, _ = decoder.forward_teacher_forced(
                enc_hidden, enc_mask, in_seqs, training=True, rng=drop_rng,
                dropout_p=cfg.dropout_p,
            )
            loss = generation_loss(
                logits, targets, pad_id=PAD_ID, reduction=cfg.gen_loss_reduction
            )
            ad.backward(loss)
            adamw_step(params, lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
            zero_grad(params)
            n_tok = int((targets != PAD_ID).sum())
            per_token = loss.item() if cfg.gen_loss_reduction == "token_mean" else (
                loss.item() * len(batch) / n_tok
            )
            loss_sum += per_token * n_tok
            token_count += n_tok
        history.append({"epoch": epoch, "loss": loss_sum / token_count})
        logger.debug("generation epoch %d: per-token loss %.4f", epoch, history[-1]["loss"])
    return decoder, history


def _eval_scores(encoder, classifier, utterance_seqs, multi_label: bool, batch: int = 64):
    scores = []
    for i in range(0, len(utterance_seqs), batch):
        chunk = utterance_seqs[i : i + batch]
        q = encoder.encode_batch(chunk)
        logits = classifier(q).data.astype(np.float64)
        if multi_label:
            scores.append(_expit(logits))
        else:
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            scores.append(e / e.sum(axis=1, keepdims=True))
    return np.concatenate(scores, axis=0)


def predict_examples(encoder, classifier, examples, multi_label: bool = False):
    """Eval-mode predictions; never reads response tokens."""
    seqs = [ex.utterance_ids for ex in examples]
    golds = [ex.label for ex in examples]
    if not examples:
        return []
    scores = _eval_scores(encoder, classifier, seqs, multi_label)
    return [Prediction(scores=scores[i], gold=golds[i]) for i in range(len(examples))]


def compute_metrics(preds, multi_label: bool = False) -> dict:
    if multi_label:
        return multilabel_metrics(preds)
    out = {
        "accuracy": accuracy(preds),
        "mrr3": mrr_at_k(preds, 3),
        "mrr5": mrr_at_k(preds, 5),
    }
    # rank-1 hits contribute fully to all three, deeper ranks only to MRR
    assert out["accuracy"] <= out["mrr3"] <= out["mrr5"] <= 1.0
    return out


def finetune(encoder, train_examples, valid_examples, cfg: StageConfig, hub: SeedHub,
             n_classes: int, classifier=None, epoch_offset: int = 0):
    """Intent fine-tuning with cross-entropy plus the lambda-weighted
    dropout-consistency term; responses are never read here.

    Returns (classifier, per-epoch stats). With checkpoint_selection
    'best_valid', the weights revert to the epoch with the highest
    validation score at the end.
    """
    # project once: only utterances and labels flow through this stage
    train_feats = [(ex.utterance_ids, ex.label) for ex in train_examples]
    valid_feats = [(ex.utterance_ids, ex.label) for ex in valid_examples]
    if classifier is None:
        classifier = IntentClassifier(cfg.pooled_dim, n_classes, hub.stream("classifier_init"))
    params = encoder.parameters() + classifier.parameters()
    history = []
    best_score = -np.inf
    best_snapshot = None

    def _valid_score():
        if not valid_feats:
            return None
        scores = _eval_scores(encoder, classifier, [u for u, _ in valid_feats], cfg.multi_label)
        preds = [Prediction(scores=scores[i], gold=y) for i, (_, y) in enumerate(valid_feats)]
        if cfg.multi_label:
            return multilabel_metrics(preds)["subset_accuracy"]
        return accuracy(preds)

    for local_epoch in range(cfg.finetune_epochs):
        epoch = epoch_offset + local_epoch
        shuffle_rng = hub.stream("shuffle_finetune", epoch)
        drop_rng = hub.stream("dropout_finetune", epoch)
        batches = _epoch_batches(len(train_feats), cfg.finetune_batch, shuffle_rng)
        loss_sum = count = 0
        for idx in batches:
            batch = [train_feats[i] for i in idx]
            seqs = [u for u, _ in batch]
            b = len(seqs)
            if cfg.lam > 0:
                # one forward over three stacked copies: the classification
                # view plus the two dropout views, each with its own masks
                q_all = encoder.encode_batch(seqs * 3, training=True, rng=drop_rng, dropout_p=cfg.dropout_p)
                q = ad.narrow0(q_all, 0, b)
                q_hat = ad.narrow0(q_all, b, 2 * b)
                q_bar = ad.narrow0(q_all, 2 * b, 3 * b)
            else:
                q = encoder.encode_batch(seqs, training=True, rng=drop_rng, dropout_p=cfg.dropout_p)
                q_hat = q_bar = None
            logits = classifier(q)
            if cfg.multi_label:
                y = np.stack([lab for _, lab in batch])
                ce = multilabel_loss(logits, y)
            else:
                y = np.asarray([lab for _, lab in batch], dtype=np.int64)
                ce = classification_loss(ad.softmax(logits, axis=-1), y)
            if cfg.lam > 0:
                loss = combined_finetune_loss(
                    ce, unsup_contrastive_loss(q_hat, q_bar, cfg.tau), cfg.lam
                )
            else:
                loss = ce
            ad.backward(loss)
            adamw_step(params, lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
            zero_grad(params)
            loss_sum += loss.item() * len(batch)
            count += len(batch)
        score = _valid_score()
        history.append(
            {
                "epoch": epoch,
                "loss": loss_sum / max(count, 1),
                "valid_score": score if score is not None else float("nan"),
            }
        )
        logger.debug("finetune epoch %d: loss %.4f valid %.3f", epoch, history[-1]["loss"], history[-1]["valid_score"])
        if cfg.checkpoint_selection == "best_valid" and score is not None and score > best_score:
            best_score = score
            best_snapshot = [p.data.copy() for p in params]
    if best_snapshot is not None:
        for p, arr in zip(params, best_snapshot):
            p.tensor.data = arr
    return classifier, history


# ---------------------------------------------------------------------------
# full pipelines


@dataclass
class RunReport:
    """Per-seed metrics, their arithmetic mean, loss curves and the config."""

    variant: str
    per_seed: list
    mean: dict
    curves: dict
    config: dict
    wall_clock: float | None = None

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "variant": self.variant,
            "per_seed": self.per_seed,
            "mean": self.mean,
            "curves": self.curves,
            "config": self.config,
        }
        if include_timing and self.wall_clock is not None:
            out["wall_clock_seconds"] = self.wall_clock
        return out

    def save(self, out_dir, name: str = "report") -> dict:
        """Write <name>.json plus a long-format <name>_curves.csv; returns paths."""
        os.makedirs(out_dir, exist_ok=True)
        json_path = os.path.join(out_dir, f"{name}.json")
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        csv_path = os.path.join(out_dir, f"{name}_curves.csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["seed", "stage", "epoch", "metric", "value"])
            for seed_key in sorted(self.curves, key=int):
                stages = self.curves[seed_key]
                for stage_name, rows in stages.items():
                    for row in rows:
                        for metric, value in row.items():
                            if metric == "epoch":
                                continue
                            writer.writerow([seed_key, stage_name, row["epoch"], metric, repr(float(value))])
        return {"report": json_path, "curves": csv_path}


def load_report(path) -> RunReport:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    return RunReport(
        variant=raw["variant"],
        per_seed=raw["per_seed"],
        mean=raw["mean"],
        curves=raw["curves"],
        config=raw["config"],
        wall_clock=raw.get("wall_clock_seconds"),
    )


def _mean_metrics(per_seed: list) -> dict:
    keys = [k for k in per_seed[0] if k != "seed"]
    return {k: float(np.mean([row[k] for row in per_seed])) for k in keys}


def _seed_pipeline(prepared: PreparedData, cfg: StageConfig, seed: int, pretraining: bool):
    hub = SeedHub(seed)
    encoder = ConversationalEncoder(
        cfg.encoder_config(len(prepared.vocab)), hub.stream("encoder_init")
    )
    stage_curves = {}
    if pretraining:
        stages = (
            ("retrieval", "generation")
            if cfg.task_order == "retrieval_first"
            else ("generation", "retrieval")
        )
        for stage in stages:
            if stage == "retrieval":
                stage_curves["retrieval"] = pretrain_retrieval(encoder, prepared.train, cfg, hub)
            else:
                _, hist = pretrain_generation(encoder, prepared.train, cfg, hub)
                stage_curves["generation"] = hist
    classifier, ft_hist = finetune(
        encoder, prepared.train, prepared.valid, cfg, hub, len(prepared.label_names)
    )
    stage_curves["finetune"] = ft_hist
    preds = predict_examples(encoder, classifier, prepared.test, cfg.multi_label)
    metrics = compute_metrics(preds, cfg.multi_label) if preds else {}
    return metrics, stage_curves, encoder, classifier


def run_rsvp(
    prepared: PreparedData,
    cfg: StageConfig,
    variant: str = "full",
    checkpoint_dir=None,
) -> RunReport:
    """Full two-stage pipeline, repeated over cfg.seeds and averaged.

    With ``checkpoint_dir`` set, the fine-tuned model for each seed is
    saved as finetuned_seed<seed>.ckpt.
    """
    ad.set_default_dtype(cfg.precision)
    t0 = time.perf_counter()
    per_seed, curves = [], {}
    for seed in cfg.seeds:
        metrics, stage_curves, encoder, classifier = _seed_pipeline(
            prepared, cfg, seed, pretraining=True
        )
        per_seed.append({"seed": seed, **metrics})
        curves[str(seed)] = stage_curves
        if checkpoint_dir is not None:
            os.makedirs(checkpoint_dir, exist_ok=True)
            save_stage_checkpoint(
                os.path.join(checkpoint_dir, f"finetuned_seed{seed}.ckpt"),
                "finetuned",
                cfg,
                len(prepared.vocab),
                encoder,
                classifier=classifier,
                labels=prepared.label_names,
            )
    report = RunReport(
        variant=variant,
        per_seed=per_seed,
        mean=_mean_metrics(per_seed),
        curves=curves,
        config=cfg.to_dict(),
        wall_clock=time.perf_counter() - t0,
    )
    return report


def run_baseline_classifier(
    prepared: PreparedData, cfg: StageConfig, with_uns_cl: bool = False
) -> RunReport:
    """Fine-tuning only, skipping both pre-training stages entirely."""
    eff = cfg if with_uns_cl else cfg.replace(lam=0.0)
    ad.set_default_dtype(eff.precision)
    t0 = time.perf_counter()
    per_seed, curves = [], {}
    for seed in eff.seeds:
        metrics, stage_curves, _, _ = _seed_pipeline(prepared, eff, seed, pretraining=False)
        per_seed.append({"seed": seed, **metrics})
        curves[str(seed)] = stage_curves
    return RunReport(
        variant="baseline_uns_cl" if with_uns_cl else "baseline",
        per_seed=per_seed,
        mean=_mean_metrics(per_seed),
        curves=curves,
        config=eff.to_dict(),
        wall_clock=time.perf_counter() - t0,
    )


def ablation_variants(cfg: StageConfig) -> dict:
    """The ablation grid: full model, one pre-training task removed at a
    time, reversed task order, and no consistency term."""
    return {
        "full": cfg,
        "no_retrieval": cfg.replace(retrieval_epochs=0),
        "no_generation": cfg.replace(generation_epochs=0),
        "reversed_order": cfg.replace(task_order="generation_first"),
        "no_uns_cl": cfg.replace(lam=0.0),
    }


def run_ablation_grid(prepared: PreparedData, cfg: StageConfig) -> dict:
    reports = {}
    for name, variant_cfg in ablation_variants(cfg).items():
        logger.info("ablation variant: %s", name)
        reports[name] = run_rsvp(prepared, variant_cfg, variant=name)
    return reports


SWEEP_VALUES = {"batch_n": (4, 8, 12, 16), "lambda": (0.2, 0.4, 0.6, 0.8)}


def run_sweep(prepared: PreparedData, cfg: StageConfig, axis: str) -> list:
    """Grid over retrieval batch size or lambda; each cell is a full run
    sharing the same seeds."""
    if axis not in SWEEP_VALUES:
        raise ValueError(f"unknown sweep axis {axis!r}, expected one of {sorted(SWEEP_VALUES)}")
    rows = []
    for value in SWEEP_VALUES[axis]:
        cell_cfg = (
            cfg.replace(pretrain_batch=int(value))
            if axis == "batch_n"
            else cfg.replace(lam=float(value))
        )
        logger.info("sweep %s = %s", axis, value)
        rows.append((value, run_rsvp(prepared, cell_cfg, variant=f"{axis}={value}")))
    return rows


def sweep_to_csv(axis: str, rows: list, path) -> None:
    metric_keys = [k for k in rows[0][1].mean]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["axis", "value"] + [f"{k}_mean" for k in metric_keys])
        for value, report in rows:
            writer.writerow([axis, value] + [repr(report.mean[k]) for k in metric_keys])


def load_sweep_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = []
        axis = None
        for line in reader:
            axis = line[0]
            entry = {"value": float(line[1])}
            for name, val in zip(header[2:], line[2:]):
                entry[name.removesuffix("_mean")] = float(val)
            rows.append(entry)
    return axis, rows


def ablation_grid_to_csv(reports: dict, path) -> None:
    first = next(iter(reports.values()))
    metric_keys = list(first.mean)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant"] + [f"{k}_mean" for k in metric_keys])
        for name, report in reports.items():
            writer.writerow([name] + [repr(report.mean[k]) for k in metric_keys])


# ---------------------------------------------------------------------------
# checkpoint wiring


def save_stage_checkpoint(path, stage, cfg: StageConfig, vocab_size: int,
                          encoder, decoder=None, classifier=None, labels=None) -> None:
    components = {"encoder": encoder}
    if decoder is not None:
        components["decoder"] = decoder
    if classifier is not None:
        components["classifier"] = classifier
    config = dict(cfg.to_dict())
    config["vocab_size"] = vocab_size
    save_checkpoint(path, stage, components, config, labels=labels)


def load_stage_checkpoint(path):
    """Rebuild (cfg, encoder, decoder?, classifier?) from a checkpoint file."""
    ckpt = load_checkpoint(path)
    conf = dict(ckpt.config)
    vocab_size = conf.pop("vocab_size")
    cfg = StageConfig(**conf)
    ad.set_default_dtype(cfg.precision)
    rng = np.random.default_rng(0)  # weights are overwritten by the restore
    encoder = ConversationalEncoder(cfg.encoder_config(vocab_size), rng)
    restore_component(ckpt, "encoder", encoder)
    decoder = classifier = None
    if any(name.startswith("decoder.") for name in ckpt.arrays):
        decoder = init_decoder_from_encoder(encoder, rng, bos_id=BOS_ID, eos_id=EOS_ID)
        restore_component(ckpt, "decoder", decoder)
    if any(name.startswith("classifier.") for name in ckpt.arrays):
        n_classes = ckpt.arrays["classifier.clf.lin2.b"].shape[0]
        classifier = IntentClassifier(cfg.pooled_dim, n_classes, rng)
        restore_component(ckpt, "classifier", classifier)
    return ckpt, cfg, encoder, decoder, classifier


def check_stage_transition(ckpt_stage: str, next_stage: str) -> None:
    """Warn when a checkpoint from a later stage seeds an earlier one."""
    if _STAGE_RANK[ckpt_stage] >= _STAGE_RANK[next_stage]:
        logger.warning(
            "loading a %s-stage checkpoint into the %s stage; this rewinds the pipeline",
            ckpt_stage,
            next_stage,
        )
