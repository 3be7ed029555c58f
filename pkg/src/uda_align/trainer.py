"""Two-stage adaptation loop: stage 1 adaptation, pseudo-labelling, stage 2 retraining."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import IGNORE_INDEX
from .config import Config
from .data import stack_images
from .errors import ConfigError, NumericError
from .eval import evaluate_predictions
from .instances import (AdaptationWeights, FeatureBank, aim_loss, compute_adaptation_weights,
                        rescale_eta, update_bank)
from .losses import (adv_discriminator_loss, adv_generator_loss, extract_class_signatures,
                     isia_loss, seg_cross_entropy, signature_backward, total_loss_full,
                     total_loss_init)
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.layers import softmax, softmax_backward
from .model.networks import Discriminator, Generator
from .optim import SGD, Adam, poly_lr
from .style import fit_target_statistics, transfer

log = logging.getLogger(__name__)

COMPONENT_KEYS = {"seg_s": "L_seg_S", "seg_t": "L_seg_T", "adv": "L_adv", "d": "L_D",
                  "isia": "L_ISIA", "aim": "L_AIM"}
MIN_TAU = 1e-9


@dataclass
class PseudoLabelSet:
    labels: dict
    coverage: float
    per_sample: dict = field(default_factory=dict)


def predict_probs(gen: Generator, images, batch=32):
    return gen.predict(images, domain="target", batch=batch)


def generate_pseudo_labels(gen: Generator, target, tau, batch=32) -> PseudoLabelSet:
    """Argmax class where the max softmax probability reaches ``tau``, else ignore."""
    tau = max(float(tau), MIN_TAU)
    labels, per_sample = {}, {}
    covered = total = 0
    images = stack_images(target)
    for start in range(0, len(target), batch):
        probs = predict_probs(gen, images[start:start + batch], batch)
        conf = probs.max(axis=1)
        arg = probs.argmax(axis=1).astype(np.uint8)
        for s, c, a in zip(target[start:start + batch], conf, arg):
            lab = np.where(c >= tau, a, IGNORE_INDEX).astype(np.uint8)
            labels[s.id] = lab
            n = int((lab != IGNORE_INDEX).sum())
            per_sample[s.id] = n / lab.size
            covered += n
            total += lab.size
    return PseudoLabelSet(labels, covered / total if total else 0.0, per_sample)


def pseudo_label_precision(pseudo: PseudoLabelSet, held_out: dict):
    """Fraction of non-ignored pseudo-labelled pixels that match the held-out labels."""
    hit = n = 0
    for sid, lab in pseudo.labels.items():
        keep = lab != IGNORE_INDEX
        hit += int((lab[keep] == held_out[sid][keep]).sum())
        n += int(keep.sum())
    return hit / n if n else float("nan")


def evaluate(gen: Generator, samples, batch=32):
    """Confusion matrix of target-branch predictions against sample labels."""
    images = stack_images(samples)
    preds = []
    for start in range(0, len(samples), batch):
        preds.extend(predict_probs(gen, images[start:start + batch], batch).argmax(axis=1))
    return evaluate_predictions(preds, [s.label for s in samples], gen.num_classes)


class Trainer:
    """Owns generator, discriminator, optimizers, feature bank and adaptation weights."""

    def __init__(self, cfg: Config, source, target):
        cfg.validate()
        if not source or not target:
            raise ConfigError("source and target sets must be non-empty")
        if any(hasattr(s, "label") for s in target):
            raise ConfigError("target samples handed to the trainer must not carry labels")
        self.cfg = cfg
        self.tc = cfg.train
        self.weights_cfg = cfg.loss
        spec = cfg.data
        self.num_classes = spec.num_classes
        self.foreground = tuple(spec.foreground_ids)
        h, w = source[0].image.shape[:2]
        self.gen = Generator(cfg.model, self.num_classes, h, w, seed=self.tc.seed)
        self.disc = Discriminator(cfg.model, self.num_classes, seed=self.tc.seed)
        self.gen_params = dict(self.gen.named_parameters())
        self.disc_params = dict(self.disc.named_parameters())
        self.opt_g = SGD(self.gen_params, self.tc.lr_g, self.tc.momentum, self.tc.weight_decay)
        self.opt_d = Adam(self.disc_params, self.tc.lr_d, tuple(self.tc.adam_betas),
                          weight_decay=self.tc.weight_decay)
        self.bank = FeatureBank(self.foreground, self.tc.bank_capacity)
        self.adapt = AdaptationWeights({k: 1.0 for k in self.foreground},
                                       {k: 1.0 for k in self.foreground},
                                       {k: -1 for k in self.foreground})
        self.iteration = 0
        self.stage_done = 0
        self.stage = 1
        self.metrics: list[dict] = []
        self.audit_violations: list[str] = []
        self.metrics_path: Path | None = None
        self.target = target
        self.target_ids = [s.id for s in target]
        self.tgt_x = stack_images(target)
        raw_src = stack_images(source)
        if self.tc.ima:
            s_stats = fit_target_statistics(s.image for s in source)
            t_stats = fit_target_statistics(s.image for s in target)
            raw_src = np.stack([transfer(s.image, s_stats, t_stats) for s in source])
            raw_src = raw_src.transpose(0, 3, 1, 2).astype(np.float32)
        self.src_x = raw_src
        self.src_y = np.stack([s.label for s in source])
        self.pseudo: np.ndarray | None = None

    # ------------------------------------------------------------ state

    def state_arrays(self):
        arrays = {f"gen/{k}": v for k, v in self.gen_params.items()}
        arrays.update({f"disc/{k}": v for k, v in self.disc_params.items()})
        arrays.update(self.opt_g.state())
        arrays.update(self.opt_d.state())
        arrays.update(self.bank.state())
        ks = sorted(self.adapt.eta)
        arrays["adapt/table"] = np.array(
            [[k, self.adapt.zeta[k], self.adapt.eta[k], self.adapt.updated_at[k]] for k in ks],
            dtype=np.float64).reshape(len(ks), 4)
        return arrays

    def save(self, path):
        meta = {"iteration": self.iteration, "stage": self.stage_done,
                "config": self.cfg.to_dict()}
        return save_checkpoint(path, self.state_arrays(), self.cfg.hash(), meta)

    def load(self, path, force=False):
        header, arrays = load_checkpoint(path, self.cfg.hash(), force=force)
        self.gen.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
        self.disc.load_state_dict({k[5:]: v for k, v in arrays.items() if k.startswith("disc/")})
        self.opt_g.load_state(arrays)
        self.opt_d.load_state(arrays)
        self.bank.load_state(arrays)
        for k, zeta, eta, at in arrays["adapt/table"]:
            k = int(k)
            self.adapt.zeta[k], self.adapt.eta[k], self.adapt.updated_at[k] = zeta, eta, int(at)
        self.iteration = int(header["iteration"])
        self.stage_done = int(header["stage"])
        return header

    def set_pseudo_labels(self, pseudo: PseudoLabelSet):
        if pseudo.coverage <= 0:
            raise ConfigError("pseudo-labels cover no pixels; lower train.tau")
        self.pseudo = np.stack([pseudo.labels[i] for i in self.target_ids])

    # ------------------------------------------------------------ loop

    def _log_row(self, stage, comps, total, lr):
        row = {"iter": self.iteration, "stage": stage}
        row.update({COMPONENT_KEYS[k]: comps[k] for k in COMPONENT_KEYS})
        row["total"] = total
        row["lr_G"] = lr
        for k in self.foreground:
            row[f"eta_{k}"] = self.adapt.eta[k]
        self.metrics.append(row)
        if self.metrics_path is not None:
            with open(self.metrics_path, "a") as fh:
                fh.write(json.dumps(row) + "\n")

    def _check_finite(self, comps, grads=None, who="generator"):
        """Raise before an update that would write NaN/inf into the parameters."""
        bad = [COMPONENT_KEYS[k] for k, v in comps.items() if not np.isfinite(v)]
        if not bad and grads is not None:
            sq = sum(float(np.vdot(g, g)) for g in grads.values())
            if not np.isfinite(sq):
                bad = [f"{who} gradient"]
        if bad:
            raise NumericError(f"non-finite {bad[0]} at iteration {self.iteration}",
                               component=bad[0],
                               diagnostics={"iteration": self.iteration, "stage": self.stage,
                                            **{COMPONENT_KEYS[k]: repr(v)
                                               for k, v in comps.items()}})

    def step(self, rng, stage):
        """One generator update followed by one discriminator update."""
        self.stage = stage
        tc, lw = self.tc, self.weights_cfg
        b = tc.batch_size
        idx_s = rng.integers(len(self.src_x), size=b)
        idx_t = rng.integers(len(self.tgt_x), size=b)
        ys = self.src_y[idx_s]
        gen, disc = self.gen, self.disc
        dec_s, dec_t = gen.decoder("source"), gen.decoder("target")

        enc = gen.encoder.forward(np.concatenate([self.src_x[idx_s], self.tgt_x[idx_t]]))
        f_s, logit_s = dec_s.forward(enc[:b])
        f_t, logit_t = dec_t.forward(enc)
        p_s, p_t = softmax(logit_s), softmax(logit_t)
        p_tt = p_t[b:]

        comps = dict.fromkeys(COMPONENT_KEYS, 0.0)
        ce_a = seg_cross_entropy(p_s, ys)
        ce_b = seg_cross_entropy(p_t[:b], ys)
        comps["seg_s"] = 0.5 * (ce_a.loss + ce_b.loss)
        g_logit_s = (0.5 * lw.seg) * ce_a.grad
        g_logit_t = np.zeros_like(logit_t)
        g_logit_t[:b] = (0.5 * lw.seg) * ce_b.grad
        g_p_tt = np.zeros_like(p_tt)
        g_f_t = None

        if stage == 2:
            t_mask = self.pseudo[idx_t]
            ce_t = seg_cross_entropy(p_tt, t_mask)
            comps["seg_t"] = ce_t.loss
            g_logit_t[b:] += lw.seg * ce_t.grad
        else:
            t_mask = p_tt.argmax(axis=1).astype(np.uint8)

        if tc.gfa:
            scores = disc.forward(p_tt)
            adv = adv_generator_loss(scores, tc.adv_label_convention)
            comps["adv"] = adv.loss
            g_p_tt += lw.adv * disc.backward(adv.grad, param_grads=False)

        if tc.isia or tc.aim:
            sig_s = extract_class_signatures(p_s, ys)
            sig_t = extract_class_signatures(p_tt, t_mask)
        if tc.isia:
            isia = isia_loss(sig_s, sig_t, lw.beta)
            comps["isia"] = isia.loss
            g_p_s = signature_backward(lw.isia * isia.grad_source, p_s.shape, ys, dtype=p_s.dtype)
            g_logit_s += softmax_backward(p_s, g_p_s)
            g_p_tt += signature_backward(lw.isia * isia.grad_target, p_tt.shape, t_mask,
                                         dtype=p_tt.dtype)
        if tc.aim:
            weights = compute_adaptation_weights(sig_s, sig_t, self.foreground)
            if tc.eta_scale == "unit_mean":
                weights = rescale_eta(weights)
            self.adapt.merge(weights, self.iteration)
            for i in range(b):
                update_bank(self.bank, ys[i], f_s[i], tc.connectivity, tc.min_instance_px,
                            tc.pool_eps)
            if stage == 2 or self.iteration >= tc.warmup_iters:
                g_f_t = np.zeros_like(f_t)
                for i in range(b):
                    out = aim_loss(t_mask[i], f_t[b + i], self.bank, self.adapt.eta,
                                   tc.connectivity, tc.min_instance_px, tc.pool_eps)
                    comps["aim"] += out.loss
                    g_f_t[b + i] = lw.aim * out.grad

        g_logit_t[b:] += softmax_backward(p_tt, g_p_tt)

        # generator update
        d_hash = self.disc.param_hash() if tc.audit else None
        gen.zero_grad()
        g_enc = dec_t.backward(g_f_t, g_logit_t)
        g_enc[:b] += dec_s.backward(None, g_logit_s)
        gen.encoder.backward(g_enc, input_grad=False)
        lr = poly_lr(tc.lr_g, self.iteration, tc.total_iters, tc.poly_power)
        self.opt_g.lr = lr
        g_grads = dict(gen.named_gradients())
        self._check_finite(comps, g_grads, "generator")
        self.opt_g.step(g_grads)
        if tc.audit and self.disc.param_hash() != d_hash:
            self.audit_violations.append(f"iter {self.iteration}: generator step changed D")

        # discriminator update on the detached maps from this iteration
        if tc.gfa:
            g_hash = self.gen.param_hash() if tc.audit else None
            scores = disc.forward(np.concatenate([p_tt, p_s]))
            dl = adv_discriminator_loss(scores[:b], scores[b:], tc.adv_label_convention)
            comps["d"] = dl.loss
            disc.zero_grad()
            disc.backward(lw.d * np.concatenate([dl.grad_target, dl.grad_source]),
                          input_grad=False)
            d_grads = dict(disc.named_gradients())
            self._check_finite(comps, d_grads, "discriminator")
            self.opt_d.step(d_grads)
            if tc.audit and self.gen.param_hash() != g_hash:
                self.audit_violations.append(f"iter {self.iteration}: D step changed generator")

        total = total_loss_full(comps, lw) if stage == 2 else total_loss_init(comps, lw)
        return comps, total, lr

    def _run(self, stage, stop):
        rng = np.random.default_rng([self.tc.seed, 1000 + stage])
        last = stop - 1
        while self.iteration < stop:
            comps, total, lr = self.step(rng, stage)
            if self.iteration % self.tc.log_interval == 0 or self.iteration == last:
                self._log_row(stage, comps, total, lr)
            self.iteration += 1
        self.gen.clear()
        self.disc.clear()
        self.stage_done = stage

    def train_stage1(self):
        """Adaptation stage; runs the whole budget when self-training is disabled."""
        self._run(1, self.tc.stage1_iters)
        return self

    def train_stage2(self, pseudo: PseudoLabelSet | None = None):
        if pseudo is not None:
            self.set_pseudo_labels(pseudo)
        if self.pseudo is None:
            raise ConfigError("stage 2 needs pseudo-labels")
        if self.stage_done < 1:
            raise ConfigError("stage 2 must start from a stage-1 model")
        self._run(2, self.tc.total_iters)
        return self

    def pseudo_labels(self, tau=None) -> PseudoLabelSet:
        return generate_pseudo_labels(self.gen, self.target, self.tc.tau if tau is None else tau)

    def evaluate(self, samples):
        return evaluate(self.gen, samples)
