"""Seeded synthetic cohorts with a known generating process, plus their oracle.

Each participant follows an AR(1) latent severity z on the 0-800 scale. The
eight items are z/8 plus item noise, so the PHQ total tracks z. Carrier
features are ``loc + scale * (s * c_j * u + noise)`` with u = (z - 400) / 200;
every other feature is ``loc + scale * noise``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from . import registry
from .annotations import BACKGROUND, VOCABULARY, CharacteristicAnnotation, write_annotation_file
from .errors import ConfigError
from .ingest import (GENDERS, RACES, Demographics, EmaRecord, FeatureTable, attention_filter, join_dataset,
                     write_demographics_file, write_ema_file, write_feature_file)
from .psychometrics import PHQ_THRESHOLD

LATENT_CENTER = 400.0
LATENT_SCALE = 200.0
DEFAULT_GENDER_MIX = {"female": 0.864, "male": 0.096, "nonbinary": 0.028, "other": 0.012}
DEFAULT_RACE_MIX = {"white": 0.836, "asian": 0.028, "black": 0.045, "amer_indian_ak_native": 0.005,
                    "multiple": 0.067, "other": 0.019}
BACKGROUND_OBJECTS = ("wall", "ceiling", "lamp", "window", "door", "bed", "shelf", "plant", "car", "tree")
_NORMAL = NormalDist()


@dataclass
class SynthConfig:
    seed: int
    n_participants: int = 177
    emas_mean: float = 180.0
    emas_std: float = 20.0
    images_per_ema: tuple = (1, 5)
    signal_strength: float = 1.0
    signal_carrier: str = "Landmarks3D"
    n_carriers: int = 30
    noise_std: float = 1.0
    item_noise_std: float = 5.0
    identity_std: float = 0.0
    latent_mean: float = 400.0
    between_sd: float = 100.0
    ar_coef: float = 0.7
    innovation_sd: float = 70.0
    gender_mix: dict = field(default_factory=lambda: dict(DEFAULT_GENDER_MIX))
    race_mix: dict = field(default_factory=lambda: dict(DEFAULT_RACE_MIX))
    noise_by_gender: dict = field(default_factory=dict)
    attention_failure_rate: float = 0.0
    attention_jitter: int = 10
    n_annotated_images: int = 200
    annotator_agreement: float = 0.8
    study_days: float = 90.0

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("synth seed is mandatory")
        self.images_per_ema = tuple(int(v) for v in self.images_per_ema)
        lo, hi = self.images_per_ema
        checks = [
            (self.n_participants >= 1, "n_participants must be >= 1"),
            (self.emas_mean >= 1 and self.emas_std >= 0, "EMA count mean must be >= 1 and std >= 0"),
            (1 <= lo <= hi <= 5, "images_per_ema must satisfy 1 <= lo <= hi <= 5"),
            (self.signal_strength >= 0, "signal_strength must be >= 0"),
            (self.signal_carrier in registry.GROUPS, f"unknown carrier group {self.signal_carrier!r}"),
            (self.noise_std >= 0 and self.item_noise_std >= 0 and self.identity_std >= 0, "noise must be >= 0"),
            (0.0 <= self.attention_failure_rate <= 1.0, "attention_failure_rate must be in [0, 1]"),
            (0 <= self.attention_jitter < 40, "attention_jitter must be in [0, 40)"),
            (-1.0 < self.ar_coef < 1.0, "ar_coef must be in (-1, 1)"),
            (0.0 <= self.annotator_agreement <= 1.0, "annotator_agreement must be in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        size = registry.EXPECTED_SIZES[self.signal_carrier]
        if not 0 <= self.n_carriers <= size:
            raise ConfigError(f"n_carriers must be in [0, {size}]")
        for name, mix, allowed in (("gender_mix", self.gender_mix, GENDERS), ("race_mix", self.race_mix, RACES)):
            if set(mix) - set(allowed) or any(v < 0 for v in mix.values()) or not sum(mix.values()) > 0:
                raise ConfigError(f"{name} must map {allowed} to nonnegative weights")
        if set(self.noise_by_gender) - set(GENDERS) or any(v < 0 for v in self.noise_by_gender.values()):
            raise ConfigError("noise_by_gender keys must be genders with nonnegative multipliers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["images_per_ema"] = list(self.images_per_ema)
        return d

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth settings: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class Cohort:
    config: SynthConfig
    emas: list
    features: FeatureTable
    demographics: list
    annotations: list
    truth: dict

    def dataset(self, tolerance: float = 25.0, threshold: float = PHQ_THRESHOLD):
        """Attention-filter and join exactly as real files would be."""
        filt = attention_filter(self.emas, tolerance)
        ds, drops = join_dataset(filt.kept, self.features, self.demographics, filt.excluded, threshold)
        return ds, drops, filt


def _mix_choice(rng, mix, n):
    keys = list(mix)
    p = np.array([mix[k] for k in keys], dtype=float)
    return [keys[i] for i in rng.choice(len(keys), size=n, p=p / p.sum())]


def _latent_path(rng, cfg: SynthConfig, n: int) -> np.ndarray:
    mu = rng.normal(cfg.latent_mean, cfg.between_sd)
    # Stationary AR(1) around the participant mean.
    sd0 = cfg.innovation_sd / math.sqrt(1.0 - cfg.ar_coef ** 2)
    z = np.empty(n)
    dev = rng.normal(0.0, sd0)
    for t in range(n):
        if t:
            dev = cfg.ar_coef * dev + rng.normal(0.0, cfg.innovation_sd)
        z[t] = mu + dev
    return np.clip(z, 0.0, 800.0)


def _attention(rng, items: np.ndarray, fail: bool, jitter: int):
    idx = int(rng.integers(0, 8))
    item = items[idx]
    if not fail:
        j = float(rng.integers(-jitter, jitter + 1)) if jitter else 0.0
        return idx, float(np.clip(100.0 - item + j, 0.0, 100.0))
    room_up, room_down = 100.0 - item, item
    top = max(room_up, room_down)
    d = float(rng.uniform(40.0, top)) if top > 40.0 else top
    reflected = item + d if room_up >= room_down else item - d
    return idx, float(100.0 - reflected)


def _annotations(rng, image_ids, cfg: SynthConfig) -> list:
    out = []
    if cfg.n_annotated_images <= 0 or len(image_ids) == 0:
        return out
    k = min(cfg.n_annotated_images, len(image_ids))
    chosen = sorted(rng.choice(len(image_ids), size=k, replace=False).tolist())
    for i in chosen:
        img = str(image_ids[i])
        for char, vocab in VOCABULARY.items():
            truth = vocab[int(rng.integers(0, len(vocab)))]
            out.append(CharacteristicAnnotation(img, char, "vqa", truth))
            for src in ("annotator_a", "annotator_b"):
                lab = truth if rng.random() < cfg.annotator_agreement else vocab[int(rng.integers(0, len(vocab)))]
                out.append(CharacteristicAnnotation(img, char, src, lab))
        objs = rng.choice(len(BACKGROUND_OBJECTS), size=int(rng.integers(1, 4)), replace=False)
        out.append(CharacteristicAnnotation(img, BACKGROUND, "vqa", ";".join(BACKGROUND_OBJECTS[j] for j in sorted(objs))))
    return out


def generate_cohort(cfg: SynthConfig) -> Cohort:
    """Build every study file in memory; same config and seed give identical output."""
    root = np.random.SeedSequence(cfg.seed)
    s_global, s_people, s_annot = root.spawn(3)
    g = np.random.default_rng(s_global)
    p = registry.N_FEATURES
    loc = g.uniform(-10.0, 10.0, p)
    scale = g.uniform(0.5, 2.0, p)
    group_cols = registry.group_columns(cfg.signal_carrier)
    carrier_names = sorted(g.choice(len(group_cols), size=cfg.n_carriers, replace=False).tolist())
    carrier_idx = np.array([registry.FEATURE_INDEX[group_cols[i]] for i in carrier_names], dtype=np.int64)
    coef = g.uniform(0.5, 1.5, cfg.n_carriers)

    genders = _mix_choice(g, cfg.gender_mix, cfg.n_participants)
    races = _mix_choice(g, cfg.race_mix, cfg.n_participants)
    ages = g.integers(18, 66, cfg.n_participants)

    emas, demographics, truth_emas, participants = [], [], [], []
    pid_col, sid_col, img_col, blocks = [], [], [], []
    lo, hi = cfg.images_per_ema
    for k, seq in enumerate(s_people.spawn(cfg.n_participants)):
        rng = np.random.default_rng(seq)
        pid = f"P{k + 1:03d}"
        demographics.append(Demographics(pid, genders[k], races[k], float(ages[k])))
        n_emas = max(2, int(round(rng.normal(cfg.emas_mean, cfg.emas_std))))
        z = _latent_path(rng, cfg, n_emas)
        sigma = cfg.noise_std * cfg.noise_by_gender.get(genders[k], 1.0)
        identity = rng.normal(0.0, cfg.identity_std, p) if cfg.identity_std > 0 else np.zeros(p)
        participants.append({"participant_id": pid, "noise_std": sigma, "gender": genders[k]})
        step = cfg.study_days * 86400.0 / n_emas
        start = 1.6e9 + k * 3600.0
        fails = rng.random(n_emas) < cfg.attention_failure_rate
        n_img = rng.integers(lo, hi + 1, n_emas)
        for t in range(n_emas):
            sid = f"S{t + 1:03d}"
            items = np.clip(z[t] / 8.0 + rng.normal(0.0, cfg.item_noise_std, 8), 0.0, 100.0)
            idx, rev = _attention(rng, items, bool(fails[t]), cfg.attention_jitter)
            duration = float(np.round(rng.lognormal(math.log(60.0), 0.4), 3))
            ts = float(np.round(start + t * step + rng.uniform(0.0, step / 2), 3))
            rec = EmaRecord(pid, sid, ts, tuple(float(v) for v in items), idx, rev, duration)
            emas.append(rec)
            truth_emas.append({"participant_id": pid, "session_id": sid, "latent": float(z[t]),
                               "total": rec.total, "attention_failure": bool(fails[t]), "n_images": int(n_img[t])})
            u = (z[t] - LATENT_CENTER) / LATENT_SCALE
            noise = rng.normal(0.0, 1.0, (n_img[t], p)) * sigma + identity
            if cfg.n_carriers:
                noise[:, carrier_idx] += cfg.signal_strength * coef * u
            blocks.append(loc + scale * noise)
            for m in range(n_img[t]):
                pid_col.append(pid)
                sid_col.append(sid)
                img_col.append(f"{pid}_{sid}_{m + 1}")
    values = np.vstack(blocks)
    n = values.shape[0]
    conf = np.round(np.random.default_rng(s_annot.spawn(1)[0]).uniform(0.8, 1.0, n), 3)
    table = FeatureTable(np.array(pid_col), np.array(sid_col), np.array(img_col), values, conf,
                         np.ones(n, dtype=bool))
    annotations = _annotations(np.random.default_rng(s_annot), table.image_id, cfg)
    truth = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "latent_center": LATENT_CENTER,
        "latent_scale": LATENT_SCALE,
        "carrier_features": [registry.FEATURE_NAMES[i] for i in carrier_idx],
        "carrier_coefficients": coef.tolist(),
        "feature_loc": loc.tolist(),
        "feature_scale": scale.tolist(),
        "participants": participants,
        "emas": truth_emas,
    }
    return Cohort(cfg, emas, table, demographics, annotations, truth)


COHORT_FILES = ("ema.csv", "features.csv", "demographics.csv", "annotations.csv", "truth.json")


def write_cohort(cohort: Cohort, directory) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ema_file(cohort.emas, d / "ema.csv")
    write_feature_file(cohort.features, d / "features.csv")
    write_demographics_file(cohort.demographics, d / "demographics.csv")
    write_annotation_file(cohort.annotations, d / "annotations.csv")
    (d / "truth.json").write_text(json.dumps(cohort.truth, sort_keys=True) + "\n")
    return {name: str(d / name) for name in COHORT_FILES}


def _expected_abs(mean, sd):
    """E|X| for X ~ N(mean, sd^2), elementwise."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    out = np.abs(mean).astype(float)
    pos = sd > 0
    if np.any(pos):
        m, s = mean[pos], sd[pos]
        cdf = np.array([_NORMAL.cdf(v) for v in (-m / s)])
        out[pos] = s * math.sqrt(2 / math.pi) * np.exp(-0.5 * (m / s) ** 2) + m * (1 - 2 * cdf)
    return out


def oracle_metrics(truth: dict, cfg: SynthConfig, threshold: float = PHQ_THRESHOLD) -> dict:
    """Expected BA and MAE of the best per-image predictor, evaluated on the truth file.

    The predictor sees each image's carrier features, so it observes the
    latent u with Gaussian error of variance (sigma^2 + identity^2) /
    (s^2 ||c||^2). It forms the posterior mean of z under a Gaussian prior
    fitted to the latent states and calls an image depressed when the
    posterior probability of a positive total reaches the positive rate,
    which is the balanced-accuracy optimal rule. Expectations over feature
    noise are taken in closed form against the recorded latent states.
    """
    if truth.get("config_digest") != cfg.digest():
        raise ConfigError("truth file was generated from a different configuration")
    rows = [e for e in truth["emas"] if not e["attention_failure"]]
    if not rows:
        raise ConfigError("truth file has no attention-passing EMAs")
    sigma_of = {p["participant_id"]: p["noise_std"] for p in truth["participants"]}
    w = np.array([e["n_images"] for e in rows], dtype=float)
    z = np.array([e["latent"] for e in rows])
    total = np.array([e["total"] for e in rows])
    label = total >= threshold
    sigma = np.array([sigma_of[e["participant_id"]] for e in rows])
    c2 = float(np.sum(np.square(truth["carrier_coefficients"])))
    signal2 = cfg.signal_strength ** 2 * c2

    mu = float(np.average(z, weights=w))
    var_z = float(np.average((z - mu) ** 2, weights=w))
    noise_var = (sigma ** 2 + cfg.identity_std ** 2) * LATENT_SCALE ** 2
    if signal2 == 0.0:
        kappa = np.zeros_like(z)
        tau = np.zeros_like(z)
    else:
        tau2 = noise_var / signal2
        kappa = np.where(tau2 > 0, var_z / (var_z + tau2), 1.0)
        tau = np.sqrt(tau2)
    post_mean_center = mu + kappa * (z - mu)       # E[m | z]
    post_mean_sd = kappa * tau                      # sd of m given z
    post_var = kappa * tau ** 2 if signal2 else np.full_like(z, var_z)  # Var[z | observation]
    pred_sd = np.sqrt(post_var + 8.0 * cfg.item_noise_std ** 2)
    prevalence = float(np.average(label, weights=w))

    # Cutoff on m: P(total >= threshold | m) >= prevalence.
    if 0.0 < prevalence < 1.0:
        q = _NORMAL.inv_cdf(1.0 - prevalence)
        cut = threshold + pred_sd * q
    else:
        cut = np.full_like(z, threshold)
    p_pos = np.empty_like(z)
    for i in range(len(z)):
        if post_mean_sd[i] > 0:
            p_pos[i] = 1.0 - _NORMAL.cdf((cut[i] - post_mean_center[i]) / post_mean_sd[i])
        else:
            p_pos[i] = 1.0 if post_mean_center[i] >= cut[i] else 0.0
    pos_w, neg_w = w[label].sum(), w[~label].sum()
    if pos_w == 0 or neg_w == 0:
        ba = None
    else:
        ba = float(0.5 * ((w * p_pos)[label].sum() / pos_w + (w * (1 - p_pos))[~label].sum() / neg_w))
    mae = float(np.sum(w * _expected_abs(total - post_mean_center, post_mean_sd)) / w.sum())
    return {
        "balanced_accuracy": ba,
        "mae": mae,
        "prevalence": prevalence,
        "n_images": int(w.sum()),
        "observation_sd_latent": None if signal2 == 0.0 else float(np.mean(tau)),
    }
