"""Target classifiers and adversarial generative models (AdvWGAN, AdvTVAE).

The generator objective combines the backbone loss with an adversarial and a
perturbation term::

    total = L_DGM - alpha * L_adv + beta * L_pert

``mode`` selects where the repair layer sits: ``"none"`` never repairs, ``"P"``
repairs only at sampling time, ``"C"`` also repairs inside the training graph
(generator -> f^-1 -> repair -> f -> critic, and -> g -> target classifier).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .constraints import ConstraintSet, FeatureSchema, violation_mask
from .data import Dataset, TransformPipeline, fit
from .nn import ACTIVATIONS, Adam, DenseNet, weight_clip
from .repair import RepairOrdering, RepairPlan, compile_plan, random_ordering, repair_batch, repair_node

BACKBONES = ("wgan", "tvae")
MODES = ("none", "P", "C")
CATEGORY_KEEP = 4.0  # logit bonus for the original category in generator softmax blocks


class CheckpointError(ValueError):
    pass


class SchemaMismatchError(CheckpointError):
    pass


def _forward(net: DenseNet, x: Tensor, track: bool) -> Tensor:
    if track:
        return net(x)
    # inference: wrap raw parameter arrays so no graph is recorded
    h = ad.as_tensor(x)
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = ACTIVATIONS[act](ad.add(ad.matmul(h, Tensor(w.data)), Tensor(b.data)))
    return h


# --- target classifier -----------------------------------------------------------

@dataclass
class TargetArch:
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    epochs: int = 40
    lr: float = 0.01
    batch_size: int = 64
    seed: int = 0


class TargetClassifier:
    """MLP over classifier space ``g``; its parameters are frozen after training."""

    def __init__(self, net: DenseNet, pipeline: TransformPipeline, classes: Sequence[str], clean_error: float | None = None):
        if net.sizes[-1] != len(classes):
            raise ValueError("classifier output width must equal the number of classes")
        self.net = net
        self.pipeline = pipeline
        self.classes = tuple(classes)
        self.clean_error = clean_error
        for p in net.parameters():
            p.requires_grad = False
            p.grad = None

    def logits_from_raw(self, raw: Tensor) -> Tensor:
        """Logits for records given in raw encoded space (unscaled continuous, one-hot)."""
        return self.net(self.pipeline.forward_tensor(raw))

    def predict_raw(self, raw: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits_from_raw(Tensor(raw)).data, axis=1)

    def predict(self, data) -> np.ndarray:
        return self.predict_raw(self.pipeline.encode_raw(data))

    def error_rate(self, dataset: Dataset) -> float:
        return float(np.mean(self.predict(dataset) != dataset.y))

    def to_dict(self) -> dict:
        return {"net": self.net.state_dict(), "pipeline": self.pipeline.to_dict(), "classes": list(self.classes), "clean_error": self.clean_error}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TargetClassifier":
        return cls(DenseNet.from_state_dict(doc["net"]), TransformPipeline.from_dict(doc["pipeline"]), doc["classes"], doc["clean_error"])


def train_target(train: Dataset, val: Dataset, arch: TargetArch | None = None, test: Dataset | None = None) -> TargetClassifier:
    """Train an MLP target on ``train``; keeps the epoch with the best validation error."""
    arch = arch or TargetArch()
    if len(np.unique(train.y)) < 2:
        raise ValueError("training data holds a single class; cannot train a classifier")
    rng = np.random.default_rng(arch.seed)
    g = fit("classifier", train)
    x = g.transform(train)
    x_val = g.transform(val)
    k = len(train.classes)
    sizes = (g.width, *arch.hidden, k)
    net = DenseNet(sizes, (arch.activation,) * len(arch.hidden) + ("linear",), rng)
    opt = Adam(net.parameters(), arch.lr)
    best = None
    for _ in range(arch.epochs):
        perm = rng.permutation(len(x))
        for start in range(0, len(x), arch.batch_size):
            idx = perm[start : start + arch.batch_size]
            loss = ad.cross_entropy(net(Tensor(x[idx])), train.y[idx])
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
        val_err = float(np.mean(np.argmax(_forward(net, Tensor(x_val), False).data, axis=1) != val.y))
        if best is None or val_err < best[0]:
            best = (val_err, [p.data.copy() for p in net.parameters()])
    for p, saved in zip(net.parameters(), best[1]):
        p.data = saved
    clf = TargetClassifier(net, g, train.classes)
    clf.clean_error = clf.error_rate(test if test is not None else val)
    return clf


# --- losses ----------------------------------------------------------------------

def adv_loss(target: TargetClassifier, x_tilde_g: Tensor, y) -> Tensor:
    """Mean cross-entropy of the target on classifier-space inputs."""
    return ad.cross_entropy(target.net(ad.as_tensor(x_tilde_g)), y)


def pert_loss(delta) -> Tensor:
    """Mean L2 norm of the per-row perturbations."""
    delta = ad.as_tensor(delta)
    if delta.ndim == 1:
        return ad.l2_norm(delta)
    return ad.mean(ad.l2_norm(delta, axis=1))


def total_loss(l_dgm, l_adv, l_pert, alpha: float, beta: float):
    """``L_DGM - alpha * L_adv + beta * L_pert``; works on floats and tensors."""
    if isinstance(l_dgm, Tensor) or isinstance(l_adv, Tensor) or isinstance(l_pert, Tensor):
        return ad.add(ad.sub(l_dgm, ad.mul(alpha, l_adv)), ad.mul(beta, l_pert))
    return l_dgm - alpha * l_adv + beta * l_pert


def wgan_losses(critic: DenseNet, real: Tensor, fake: Tensor) -> tuple[Tensor, Tensor]:
    """Return ``(critic_loss, generator_loss)``.

    The critic minimises ``mean D(fake) - mean D(real)``; the generator
    minimises ``-mean D(fake)``.
    """
    real, fake = ad.as_tensor(real), ad.as_tensor(fake)
    if real.ndim != 2 or fake.ndim != 2 or real.shape[1] != fake.shape[1]:
        raise ValueError(f"shape mismatch between real {real.shape} and fake {fake.shape}")
    d_real = ad.mean(critic(real))
    d_fake = ad.mean(critic(fake))
    return ad.sub(d_fake, d_real), ad.neg(d_fake)


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latents, averaged over rows."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    per = ad.sub(ad.sub(ad.add(ad.square(mu), ad.exp(logvar)), 1.0), logvar)
    return ad.mean(ad.mul(0.5, ad.sum(per, axis=1)))


def reconstruction_loss(pipeline: TransformPipeline, cont_out: Tensor, cat_logits: list[Tensor], target: Tensor) -> Tensor:
    """Squared error on continuous columns plus cross-entropy on one-hot blocks.

    ``cont_out`` holds the continuous columns (encoded space) in schema order;
    ``cat_logits`` one logit block per categorical feature.
    """
    target = ad.as_tensor(target)
    n = target.shape[0]
    cont_idx = pipeline.continuous_columns()
    total = Tensor(0.0)
    if cont_idx:
        diff = ad.sub(cont_out, ad.take_columns(target, cont_idx))
        total = ad.add(total, ad.div(ad.sum(ad.square(diff)), n))
    for logits, (_, start, stop) in zip(cat_logits, pipeline.categorical_blocks()):
        onehot = ad.take_columns(target, list(range(start, stop)))
        ce = ad.neg(ad.sum(ad.mul(onehot, ad.log_softmax(logits))))
        total = ad.add(total, ad.div(ce, n))
    return total


def tvae_elbo(encoder: DenseNet, decoder: DenseNet, batch, pipeline: TransformPipeline, noise: np.ndarray | None = None) -> Tensor:
    """Negative ELBO of a batch in generator space (reconstruction + KL)."""
    batch = ad.as_tensor(batch)
    mu, logvar = _split_stats(encoder(batch))
    z = mu if noise is None else ad.add(mu, ad.mul(ad.exp(ad.mul(0.5, logvar)), noise))
    cont_out, cat_logits = _split_decoder(pipeline, decoder(z))
    return ad.add(reconstruction_loss(pipeline, cont_out, cat_logits, batch), kl_divergence(mu, logvar))


def _split_stats(stats: Tensor) -> tuple[Tensor, Tensor]:
    latent = stats.shape[1] // 2
    return ad.take_columns(stats, list(range(latent))), ad.take_columns(stats, list(range(latent, 2 * latent)))


def _split_decoder(pipeline: TransformPipeline, out: Tensor) -> tuple[Tensor, list[Tensor]]:
    cont = ad.sigmoid(ad.take_columns(out, pipeline.continuous_columns()))
    blocks = [ad.take_columns(out, list(range(s, e))) for _, s, e in pipeline.categorical_blocks()]
    return cont, blocks


# --- adversarial generator ---------------------------------------------------------

@dataclass
class AdvConfig:
    backbone: str = "wgan"
    alpha: float = 10.0
    beta: float = 1.0
    mode: str = "none"
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 50
    clip: float = 0.01
    critic_steps: int = 5
    latent: int = 8
    hidden: tuple[int, ...] = (64, 64)
    eps_eval: float = 0.5
    max_step: float = 1.0
    ordering_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.critic_steps < 1:
            raise ValueError("batch_size and critic_steps must be >= 1, epochs >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AdvConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown AdvConfig field(s): {sorted(unknown)}")
        return cls(**doc)

    @property
    def label(self) -> str:
        base = "AdvWGAN" if self.backbone == "wgan" else "AdvTVAE"
        return base if self.mode == "none" else f"{self.mode}-{base}"


@dataclass
class AdvGenerator:
    config: AdvConfig
    pipeline: TransformPipeline
    nets: dict[str, DenseNet]
    plan: RepairPlan | None = None
    constraints: ConstraintSet | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def schema(self) -> FeatureSchema:
        return self.pipeline.schema

    def mutable_mask(self) -> np.ndarray:
        mask = np.ones(self.pipeline.width, dtype=bool)
        for (name, s, e), f in zip(self.pipeline.layout, self.schema.features):
            if not f.mutable:
                mask[s:e] = False
        return mask

    def parameters(self) -> list[Tensor]:
        keys = ("generator",) if self.config.backbone == "wgan" else ("encoder", "decoder")
        return [p for k in keys for p in self.nets[k].parameters()]


def _assemble(pipeline: TransformPipeline, pieces: dict[int, Tensor]) -> Tensor:
    return ad.concat([pieces[start] for _, start, _ in pipeline.layout], axis=1)


def _generator_output(model: AdvGenerator, enc: Tensor, track: bool = True) -> Tensor:
    """Map encoded originals to encoded candidates (before any repair)."""
    p = model.pipeline
    pieces: dict[int, Tensor] = {}
    if model.config.backbone == "wgan":
        head = _forward(model.nets["generator"], enc, track)
        for (name, s, e), f in zip(p.layout, model.schema.features):
            cols = list(range(s, e))
            if f.is_continuous:
                step = ad.tanh(ad.take_columns(head, cols))
                if model.config.max_step != 1.0:
                    step = ad.mul(model.config.max_step, step)
                pieces[s] = ad.add(ad.take_columns(enc, cols), step)
            else:
                logits = ad.add(ad.take_columns(head, cols), ad.mul(CATEGORY_KEEP, ad.take_columns(enc, cols)))
                pieces[s] = ad.softmax(logits)
    else:
        mu, _ = _split_stats(_forward(model.nets["encoder"], enc, track))
        pieces = _decode_pieces(model, _forward(model.nets["decoder"], mu, track))
    out = _assemble(p, pieces)
    return _keep_immutable(model, out, enc)


def _decode_pieces(model: AdvGenerator, dec: Tensor) -> dict[int, Tensor]:
    pieces = {}
    for (name, s, e), f in zip(model.pipeline.layout, model.schema.features):
        block = ad.take_columns(dec, list(range(s, e)))
        # continuous reconstructions live in the fitted [0, 1] range
        pieces[s] = ad.sigmoid(block) if f.is_continuous else ad.softmax(block)
    return pieces


def _keep_immutable(model: AdvGenerator, out: Tensor, enc: Tensor) -> Tensor:
    mask = model.mutable_mask()
    if mask.all():
        return out
    return ad.where(np.broadcast_to(mask, out.shape), out, enc)


def _repair_encoded(model: AdvGenerator, enc_out: Tensor) -> Tensor:
    """Encoded candidates -> original space -> repair -> back to encoded space."""
    p = model.pipeline
    raw = p.inverse_tensor(enc_out)
    cont_pos = p.continuous_columns()
    repaired = repair_node(model.plan, ad.take_columns(raw, cont_pos))
    pieces = {}
    k = 0
    for (name, s, e), f in zip(p.layout, model.schema.features):
        if f.is_continuous:
            pieces[s] = ad.take_columns(repaired, [k])
            k += 1
        else:
            pieces[s] = ad.take_columns(raw, list(range(s, e)))
    return p.forward_tensor(_assemble(p, pieces))


def _build_nets(config: AdvConfig, width: int, rng: np.random.Generator) -> dict[str, DenseNet]:
    hidden = config.hidden
    acts = ("relu",) * len(hidden)
    if config.backbone == "wgan":
        return {
            "generator": DenseNet((width, *hidden, width), acts + ("linear",), rng),
            "critic": DenseNet((width, *hidden, 1), acts + ("linear",), rng),
        }
    return {
        "encoder": DenseNet((width, *hidden, 2 * config.latent), acts + ("linear",), rng),
        "decoder": DenseNet((config.latent, *tuple(reversed(hidden)), width), acts + ("linear",), rng),
    }


class _Step:
    """One generator pass: candidate, DGM loss and the encoded output fed downstream."""

    def __init__(self, l_dgm: Tensor, out: Tensor):
        self.l_dgm = l_dgm
        self.out = out


def _wgan_generator_step(model: AdvGenerator, x: Tensor, repair_in_graph: bool) -> _Step:
    out = _generator_output(model, x)
    if repair_in_graph:
        out = _repair_encoded(model, out)
    _, l_gen = wgan_losses(model.nets["critic"], out, out)
    return _Step(l_gen, out)


def _tvae_step(model: AdvGenerator, x: Tensor, noise: np.ndarray, repair_in_graph: bool) -> _Step:
    p = model.pipeline
    mu, logvar = _split_stats(model.nets["encoder"](x))
    z = ad.add(mu, ad.mul(ad.exp(ad.mul(0.5, logvar)), noise))
    dec = model.nets["decoder"](z)
    out = _keep_immutable(model, _assemble(p, _decode_pieces(model, dec)), x)
    if repair_in_graph:
        out = _repair_encoded(model, out)
    cont_out = ad.take_columns(out, p.continuous_columns())
    _, cat_logits = _split_decoder(p, dec)
    recon = reconstruction_loss(p, cont_out, cat_logits, x)
    return _Step(ad.add(recon, kl_divergence(mu, logvar)), out)


def _adversarial_terms(model: AdvGenerator, target: TargetClassifier, out: Tensor, x: Tensor, y: np.ndarray) -> tuple[Tensor, Tensor]:
    raw = model.pipeline.inverse_tensor(out)
    l_adv = ad.cross_entropy(target.logits_from_raw(raw), y)
    l_pert = ad.mean(ad.l2_norm(ad.sub(out, x), axis=1))
    return l_adv, l_pert


def generator_loss(model: AdvGenerator, target: TargetClassifier | None, x: np.ndarray, y: np.ndarray, noise: np.ndarray | None = None) -> tuple[Tensor, dict]:
    """Total generator objective on one encoded batch (used by training and gradient checks)."""
    cfg = model.config
    xt = Tensor(np.asarray(x, dtype=np.float64))
    repair_in_graph = cfg.mode == "C"
    if cfg.backbone == "wgan":
        step = _wgan_generator_step(model, xt, repair_in_graph)
    else:
        if noise is None:
            noise = np.zeros((len(x), cfg.latent))
        step = _tvae_step(model, xt, noise, repair_in_graph)
    parts = {"dgm": step.l_dgm, "out": step.out}
    if target is None:
        return step.l_dgm, parts
    # with both weights zero the terms are only logged, so keep them off the graph
    out = step.out if (cfg.alpha or cfg.beta) else Tensor(step.out.data)
    l_adv, l_pert = _adversarial_terms(model, target, out, xt, y)
    parts.update(adv=l_adv, pert=l_pert)
    return total_loss(step.l_dgm, l_adv, l_pert, cfg.alpha, cfg.beta), parts


def _check_compatible(dataset: Dataset, target: TargetClassifier | None, cset: ConstraintSet | None) -> None:
    fp = dataset.schema.fingerprint()
    if target is not None and target.pipeline.schema.fingerprint() != fp:
        raise SchemaMismatchError("target classifier was trained on a different schema")
    if cset is not None and cset.schema.fingerprint() != fp:
        raise SchemaMismatchError("constraint set was parsed against a different schema")


def _fit_loop(model: AdvGenerator, dataset: Dataset, target: TargetClassifier | None) -> AdvGenerator:
    cfg = model.config
    rng = np.random.default_rng(cfg.seed + 1)
    enc = model.pipeline.transform(dataset)
    y = dataset.y
    n, m = len(enc), cfg.batch_size
    gen_opt = Adam(model.parameters(), cfg.lr)
    critic = model.nets.get("critic")
    critic_opt = Adam(critic.parameters(), cfg.lr) if critic is not None else None
    check_cols = model.schema.continuous
    cont_pos = model.pipeline.continuous_columns()

    for epoch in range(cfg.epochs):
        sums = {"dgm": 0.0, "adv": 0.0, "pert": 0.0, "critic": 0.0}
        batches = 0
        violations = 0
        perm = rng.permutation(n)
        for start in range(0, n, m):
            idx = perm[start : start + m]
            if critic is not None:
                for _ in range(cfg.critic_steps):
                    real = enc[rng.integers(0, n, size=len(idx))]
                    src = enc[rng.integers(0, n, size=len(idx))]
                    fake = _generator_output(model, Tensor(src), track=False)
                    if cfg.mode == "C":
                        fake = _repair_encoded(model, fake)
                    c_loss, _ = wgan_losses(critic, Tensor(real), Tensor(fake.data))
                    critic_opt.zero_grad()
                    ad.backward(c_loss)
                    critic_opt.step()
                    weight_clip([p.data for p in critic.parameters()], cfg.clip)
                    sums["critic"] += c_loss.item() / cfg.critic_steps
            noise = rng.standard_normal((len(idx), cfg.latent)) if cfg.backbone == "tvae" else None
            loss, parts = generator_loss(model, target, enc[idx], y[idx], noise)
            gen_opt.zero_grad()
            if critic is not None:
                critic_opt.zero_grad()
            ad.backward(loss)
            gen_opt.step()
            sums["dgm"] += parts["dgm"].item()
            if target is not None:
                sums["adv"] += parts["adv"].item()
                sums["pert"] += parts["pert"].item()
            if cfg.mode == "C" and model.constraints is not None:
                raw = model.pipeline.inverse_tensor(Tensor(parts["out"].data)).data
                cols = {name: raw[:, pos] for name, pos in zip(check_cols, cont_pos)}
                violations += int(violation_mask(model.constraints, cols).sum())
            batches += 1
        entry = {"epoch": epoch, "dgm": sums["dgm"] / batches}
        if critic is not None:
            entry["critic"] = sums["critic"] / batches
        if target is not None:
            entry["adv"] = sums["adv"] / batches
            entry["pert"] = sums["pert"] / batches
        if cfg.mode == "C":
            entry["train_violations"] = violations
        model.history.append(entry)
    return model


def _new_model(dataset: Dataset, config: AdvConfig, cset: ConstraintSet | None) -> AdvGenerator:
    rng = np.random.default_rng(config.seed)
    f = fit("generator", dataset)
    nets = _build_nets(config, f.width, rng)
    plan = None
    if config.mode in ("P", "C"):
        if cset is None:
            raise ValueError(f"mode {config.mode} needs a constraint set")
        plan = compile_plan(cset, random_ordering(cset, config.ordering_seed))
    return AdvGenerator(config, f, nets, plan, cset)


def train_backbone(dataset: Dataset, config: AdvConfig) -> AdvGenerator:
    """Plain backbone training: only the DGM loss, no target, no repair."""
    if config.mode != "none":
        raise ValueError("plain backbone training has no constraint mode")
    return _fit_loop(_new_model(dataset, config, None), dataset, None)


def train_advdgm(dataset: Dataset, target: TargetClassifier, cset: ConstraintSet | None, config: AdvConfig) -> AdvGenerator:
    _check_compatible(dataset, target, cset)
    if len(dataset) == 0:
        raise ValueError("empty training data")
    return _fit_loop(_new_model(dataset, config, cset), dataset, target)


# --- generation ----------------------------------------------------------------------

@dataclass
class AttackExample:
    original: dict
    adversarial: dict
    delta: np.ndarray
    label: int
    pred_before: int
    pred_after: int

    @property
    def flipped(self) -> bool:
        """The target misclassifies the adversarial example."""
        return self.pred_after != self.label

    @property
    def delta_norm(self) -> float:
        return float(np.linalg.norm(self.delta))


@dataclass
class AttackSet(Sequence):
    """Array-backed list of :class:`AttackExample`."""

    originals: Dataset
    adversarial: Dataset
    delta: np.ndarray
    pred_before: np.ndarray
    pred_after: np.ndarray

    def __len__(self) -> int:
        return len(self.originals)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        names = self.originals.schema.names
        return AttackExample(
            {n: _py(self.originals.columns[n][i]) for n in names},
            {n: _py(self.adversarial.columns[n][i]) for n in names},
            self.delta[i],
            int(self.originals.y[i]),
            int(self.pred_before[i]),
            int(self.pred_after[i]),
        )

    def __iter__(self) -> Iterator[AttackExample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def labels(self) -> np.ndarray:
        return self.originals.y

    @property
    def delta_norms(self) -> np.ndarray:
        return np.linalg.norm(self.delta, axis=1)


def _py(v):
    return float(v) if isinstance(v, (float, np.floating)) else v


def generate(model: AdvGenerator, target: TargetClassifier, originals: Dataset) -> AttackSet:
    """Adversarial counterparts of ``originals``; repaired at sampling in modes P and C."""
    if originals.schema.fingerprint() != model.schema.fingerprint():
        raise SchemaMismatchError("originals do not match the generator's schema")
    p = model.pipeline
    enc = p.transform(originals)
    out = _generator_output(model, Tensor(enc), track=False).data.copy()
    for _, s, e in p.categorical_blocks():
        hot = np.argmax(out[:, s:e], axis=1)
        out[:, s:e] = 0.0
        out[np.arange(len(out)), s + hot] = 1.0
    scale, shift = p.scale_shift()
    raw = p.inverse_tensor(Tensor(out)).data
    if model.config.mode in ("P", "C"):
        cont_pos = p.continuous_columns()
        repaired, _ = repair_batch(model.plan, raw[:, cont_pos])
        raw[:, cont_pos] = repaired
    cols = p.decode_raw(raw)
    adversarial = Dataset(originals.schema, cols, originals.y, originals.classes, originals.name)
    delta = raw * scale + shift - enc
    return AttackSet(originals, adversarial, delta, target.predict_raw(p.encode_raw(originals)), target.predict_raw(raw))


# --- checkpoints -----------------------------------------------------------------------

FORMAT = "tabadv-checkpoint/1"


def _checksum(doc: Mapping) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _write(doc: dict, path) -> None:
    doc = dict(doc, format=FORMAT)
    doc["checksum"] = _checksum(doc)
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def _read(path, kind: str | None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} is not a checkpoint: {exc}") from None
    if doc.get("format") != FORMAT or (kind is not None and doc.get("kind") != kind):
        raise CheckpointError(f"{path} is not a {kind} checkpoint")
    if doc.get("checksum") != _checksum(doc):
        raise CheckpointError(f"checksum mismatch in {path}")
    return doc


def checkpoint_meta(path) -> dict:
    """The free-form ``meta`` block of a checkpoint (checksum verified)."""
    return _read(path, None)["meta"]


def save_target(target: TargetClassifier, path, meta: Mapping | None = None) -> None:
    _write({"kind": "target", "schema_hash": target.pipeline.schema.fingerprint(), "meta": dict(meta or {}), **target.to_dict()}, path)


def load_target(path, schema: FeatureSchema | None = None) -> TargetClassifier:
    doc = _read(path, "target")
    if schema is not None and doc["schema_hash"] != schema.fingerprint():
        raise SchemaMismatchError(f"{path} was trained on a different schema")
    return TargetClassifier.from_dict(doc)


def save_generator(model: AdvGenerator, path, meta: Mapping | None = None) -> None:
    doc = {
        "kind": "generator",
        "config": model.config.to_dict(),
        "pipeline": model.pipeline.to_dict(),
        "schema_hash": model.schema.fingerprint(),
        "constraint_hash": model.constraints.fingerprint() if model.constraints is not None else None,
        "ordering": list(model.plan.ordering.order) if model.plan is not None else None,
        "meta": dict(meta or {}),
        "nets": {k: v.state_dict() for k, v in sorted(model.nets.items())},
        "history": model.history,
    }
    _write(doc, path)


def load_generator(path, schema: FeatureSchema | None = None, cset: ConstraintSet | None = None) -> AdvGenerator:
    doc = _read(path, "generator")
    if schema is not None and doc["schema_hash"] != schema.fingerprint():
        raise SchemaMismatchError(f"{path} was trained on a different schema")
    config = AdvConfig.from_dict(doc["config"])
    plan = None
    if doc["constraint_hash"] is not None:
        if cset is None:
            raise CheckpointError(f"{path} needs its constraint set to be loaded")
        if cset.fingerprint() != doc["constraint_hash"]:
            raise SchemaMismatchError(f"{path} was trained with a different constraint set")
    if doc["ordering"] is not None:
        plan = compile_plan(cset, RepairOrdering(tuple(doc["ordering"]), config.ordering_seed))
    nets = {k: DenseNet.from_state_dict(v) for k, v in doc["nets"].items()}
    return AdvGenerator(config, TransformPipeline.from_dict(doc["pipeline"]), nets, plan, cset, doc["history"])
