"""Federated DP GAN orchestration.

One round executes, in order: (1) sample clients without replacement,
(2) broadcast the discriminator snapshot plus freshly generated fakes
(denoised when the stage is active for broadcasts), (3) collect local
discriminator deltas, clip each, aggregate with noisy_mean, (4) apply the
averaged delta to the server discriminator, (5) take the server
generator steps against the updated discriminator, (6) count the round
in the privacy accounting. Clients train only the discriminator; the
generator never leaves the server.

Randomness contract (what a replay or an external re-implementation must
follow): all draws come from PCG64 generators seeded through
rng.derive_seed. With root = run seed and round_key =
derive_seed(root, 6, round) (rounds are 1-based; round 0 keys the
initial sample grid):

    root-level: partition (root,1), model init (root,2), denoiser
    training (root,3), extractor training (root,4)+(root,4,1) for the
    train/val split, FID real subset (root,5)
    round-level: client sampling (round_key,1), broadcast latents and
    labels for slot i (round_key,2,i), client-local batch order for
    slot i (round_key,3,i), aggregation noise (round_key,4), server
    generator latents for step j (round_key,5,j), FID fake batch
    (round_key,6), accuracy sampling (round_key,7), sample grid
    (round_key,8)

Client-local training consumes one permutation of the shard; batch k
takes permutation slots (k*b+j) % n, and the broadcast fake batch is
cycled the same way. Deltas are summed in ascending client-index order,
so arrival order cannot change the aggregate.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator

from .classifier import ConvNetClassifier
from .config import ExperimentConfig
from .data import (
    ClientShard,
    LabeledImageSet,
    fixture_paths,
    load_labeled_set,
    partition_clients,
)
from .denoiser import Autoencoder, denoise, load_autoencoder, train_autoencoder
from .gan import GanModels, disc_loss_and_grads, gen_loss_and_grads, generate, init_gan
from .metrics import RoundRecord, classifier_accuracy, fid
from .optim import Adam, AdamState, adam_step
from .privacy import PrivacySpec, RdpAccountant, clip_l2, noisy_mean
from .rng import derive_seed, make_rng
from .tensor import ParamSet, Tensor
from .validation import check_images, check_labels

__all__ = [
    "RoundError",
    "FedState",
    "ExperimentData",
    "RunHooks",
    "client_update",
    "run_round",
    "run_experiment",
    "load_experiment_data",
    "FederatedGan",
]

# root-level rng streams
_S_PARTITION = 1
_S_MODEL_INIT = 2
_S_DENOISER = 3
_S_EXTRACTOR = 4
_S_FID_REAL = 5
_S_ROUND = 6

# round-level rng streams
_R_SAMPLE = 1
_R_FAKES = 2
_R_CLIENT = 3
_R_NOISE = 4
_R_GEN = 5
_R_EVAL_FAKES = 6
_R_EVAL_ACC = 7
_R_GRID = 8

LOCAL_EPOCH_BATCH_CAP = 4


class RoundError(RuntimeError):
    """A training round failed; carries the 1-based round index."""

    def __init__(self, round_index: int, message: str):
        super().__init__(f"round {round_index}: {message}")
        self.round_index = round_index


@dataclass(frozen=True)
class FedState:
    """Server-side training state; replays bit-identically from
    (config, rng_root) because every draw is derived from the root."""

    round: int
    models: GanModels
    gen_opt_state: AdamState
    gen_opt_steps: int
    rng_root: int
    last_gen_loss: float = float("nan")


@dataclass(frozen=True)
class ExperimentData:
    train: LabeledImageSet
    heldout: LabeledImageSet


@dataclass
class RunHooks:
    """Optional streaming callbacks invoked as the run produces output."""

    on_record: Callable[[RoundRecord], None] | None = None
    on_samples: Callable[[int, Tensor], None] | None = None
    on_finish: Callable[["FedState", Autoencoder | None, ConvNetClassifier], None] | None = None


def load_experiment_data(cfg: ExperimentConfig) -> ExperimentData:
    """Load the configured IDX files, falling back to the bundled fixture."""
    defaults = fixture_paths()
    train = load_labeled_set(
        cfg.train_images or defaults["train_images"],
        cfg.train_labels or defaults["train_labels"],
    )
    heldout = load_labeled_set(
        cfg.heldout_images or defaults["heldout_images"],
        cfg.heldout_labels or defaults["heldout_labels"],
    )
    return ExperimentData(train=train, heldout=heldout)


def client_update(
    models: GanModels,
    fakes: Tensor,
    fake_labels,
    shard: ClientShard | None,
    local_steps: int,
    batch: int,
    lr: float,
    beta1: float,
    beta2: float,
    adam_eps: float,
    seed: int,
) -> ParamSet | None:
    """Local discriminator training; returns trained - snapshot.

    `models.discriminator` is the broadcast snapshot. A missing/empty
    shard returns None (skip signal, not an error); local_steps=0
    returns an all-zero delta. Pure given its arguments: the local Adam
    state starts fresh and nothing leaks between invocations.
    """
    if shard is None or shard.data.n == 0:
        return None
    if local_steps < 0:
        raise ValueError("local_steps must be non-negative")
    snapshot = models.discriminator
    local = snapshot
    opt = Adam(local, lr=lr, beta1=beta1, beta2=beta2, eps=adam_eps)
    n = shard.data.n
    n_fakes = fakes.shape[0]
    perm = make_rng(seed).permutation(n)
    for k in range(local_steps):
        ridx = perm[(k * batch + np.arange(batch)) % n]
        fidx = (k * batch + np.arange(batch)) % n_fakes
        real_batch = Tensor(shard.data.images.data[ridx])
        fake_batch = Tensor(fakes.data[fidx])
        if models.conditional:
            real_labels = shard.data.labels[ridx]
            fake_batch_labels = np.asarray(fake_labels)[fidx]
        else:
            real_labels = None
            fake_batch_labels = None
        _, grads = disc_loss_and_grads(
            models.with_discriminator(local),
            real_batch,
            fake_batch,
            real_labels,
            fake_batch_labels,
        )
        local = opt.step(local, grads)
    return local.sub(snapshot)


def _privacy_spec(cfg: ExperimentConfig) -> PrivacySpec:
    return PrivacySpec(
        clip_norm=cfg.clip_norm,
        noise_multiplier=cfg.noise_multiplier,
        clients_per_round=cfg.clients_per_round,
        population=cfg.n_clients,
        delta=cfg.delta,
    )


def _local_steps_for(cfg: ExperimentConfig, shard: ClientShard) -> int:
    if cfg.local_steps >= 0:
        return cfg.local_steps
    # one epoch over the shard, capped
    return min(-(-shard.data.n // cfg.client_batch), LOCAL_EPOCH_BATCH_CAP)


def run_round(
    state: FedState,
    shards: list[ClientShard],
    cfg: ExperimentConfig,
    denoiser: Autoencoder | None = None,
) -> FedState:
    """Execute one federated round; see the module docstring for the steps."""
    r = state.round + 1
    try:
        return _run_round_inner(state, shards, cfg, denoiser, r)
    except RoundError:
        raise
    except Exception as exc:
        raise RoundError(r, str(exc)) from exc


def _run_round_inner(
    state: FedState,
    shards: list[ClientShard],
    cfg: ExperimentConfig,
    denoiser: Autoencoder | None,
    r: int,
) -> FedState:
    round_key = derive_seed(state.rng_root, _S_ROUND, r)
    sample_rng = make_rng(derive_seed(round_key, _R_SAMPLE))
    selected = np.sort(
        sample_rng.choice(len(shards), size=cfg.clients_per_round, replace=False)
    )

    def slot_delta(slot: int) -> ParamSet:
        client_index = int(selected[slot])
        fake_rng = make_rng(derive_seed(round_key, _R_FAKES, slot))
        n_fakes = cfg.broadcast_fakes or cfg.client_batch
        latents = Tensor(fake_rng.standard_normal((n_fakes, cfg.z_dim)))
        fake_labels = (
            fake_rng.integers(0, cfg.num_classes, size=n_fakes)
            if cfg.conditional
            else None
        )
        fakes = generate(state.models, latents, fake_labels)
        if denoiser is not None and cfg.denoise_apply_to_broadcast:
            fakes = denoise(denoiser, fakes)
        shard = shards[client_index]
        delta = client_update(
            state.models,
            fakes,
            fake_labels,
            shard,
            _local_steps_for(cfg, shard),
            cfg.client_batch,
            cfg.lr_disc,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            derive_seed(round_key, _R_CLIENT, slot),
        )
        if delta is None:  # skipped client contributes nothing
            return state.models.discriminator.zeros_like()
        return delta

    slots = range(cfg.clients_per_round)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            deltas = list(pool.map(slot_delta, slots))
    else:
        deltas = [slot_delta(s) for s in slots]

    clipped = [clip_l2(d, cfg.clip_norm) for d in deltas]
    mean_delta = noisy_mean(
        clipped, _privacy_spec(cfg), derive_seed(round_key, _R_NOISE)
    )
    models = state.models.with_discriminator(
        state.models.discriminator.add(mean_delta)
    )

    gen_state = state.gen_opt_state
    t = state.gen_opt_steps
    gen_losses = []
    for j in range(cfg.gen_steps):
        gen_rng = make_rng(derive_seed(round_key, _R_GEN, j))
        latents = Tensor(gen_rng.standard_normal((cfg.gen_batch, cfg.z_dim)))
        labels = (
            gen_rng.integers(0, cfg.num_classes, size=cfg.gen_batch)
            if cfg.conditional
            else None
        )
        loss, grads = gen_loss_and_grads(models, latents, labels)
        t += 1
        new_gen, gen_state = adam_step(
            models.generator,
            grads,
            gen_state,
            lr=cfg.lr_gen,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.adam_eps,
            t=t,
        )
        models = models.with_generator(new_gen)
        gen_losses.append(loss)

    return FedState(
        round=r,
        models=models,
        gen_opt_state=gen_state,
        gen_opt_steps=t,
        rng_root=state.rng_root,
        last_gen_loss=float(np.mean(gen_losses)) if gen_losses else state.last_gen_loss,
    )


def _eval_samples(
    state: FedState,
    cfg: ExperimentConfig,
    denoiser: Autoencoder | None,
    stream: int,
    count: int,
):
    """Generated (and possibly denoised) eval batch for the current round."""
    round_key = derive_seed(state.rng_root, _S_ROUND, state.round)
    rng = make_rng(derive_seed(round_key, stream))
    latents = Tensor(rng.standard_normal((count, cfg.z_dim)))
    labels = (
        rng.integers(0, cfg.num_classes, size=count) if cfg.conditional else None
    )
    images = generate(state.models, latents, labels)
    if denoiser is not None and cfg.denoise_apply_to_eval:
        images = denoise(denoiser, images)
    return images


def _train_support_models(cfg: ExperimentConfig, data: ExperimentData):
    """Denoiser (optional) and frozen feature extractor, trained offline
    on the held-out set before any federated round runs."""
    denoiser = None
    if cfg.denoise_enabled:
        if cfg.denoise_model_path:
            denoiser = load_autoencoder(cfg.denoise_model_path)
        else:
            denoiser = train_autoencoder(
                data.heldout,
                noise_level=cfg.denoise_level,
                epochs=cfg.denoise_epochs,
                batch=cfg.denoise_batch,
                seed=derive_seed(cfg.seed, _S_DENOISER),
                lr=cfg.denoise_lr,
            )

    split_rng = make_rng(derive_seed(cfg.seed, _S_EXTRACTOR, 1))
    perm = split_rng.permutation(data.heldout.n)
    n_train = max(1, (data.heldout.n * 3) // 4)
    train_part = data.heldout.subset(perm[:n_train])
    val_part = data.heldout.subset(perm[n_train:]) if n_train < data.heldout.n else None
    extractor = ConvNetClassifier(
        num_classes=cfg.num_classes,
        epochs=cfg.extractor_epochs,
        batch_size=cfg.extractor_batch,
        lr=cfg.extractor_lr,
        seed=derive_seed(cfg.seed, _S_EXTRACTOR),
    )
    extractor.fit(train_part.images.data, train_part.labels)
    holdout_acc = (
        float(np.mean(extractor.predict(val_part.images.data) == val_part.labels))
        if val_part is not None
        else extractor.train_accuracy_
    )
    return denoiser, extractor, holdout_acc


def run_experiment(
    cfg: ExperimentConfig,
    data: ExperimentData | None = None,
    hooks: RunHooks | None = None,
) -> list[RoundRecord]:
    """Run cfg.rounds federated rounds, evaluating every cfg.metric_every.

    Streams each RoundRecord (and a PGM-able sample grid tensor) through
    the hooks as it is produced; returns the full record list. Fully
    deterministic given the configuration.
    """
    cfg.validate()
    if data is None:
        data = load_experiment_data(cfg)
    if cfg.n_clients > data.train.n:
        raise ValueError(
            f"data.n_clients={cfg.n_clients} exceeds training set size {data.train.n}"
        )
    hooks = hooks or RunHooks()

    shards = partition_clients(
        data.train,
        cfg.n_clients,
        scheme=cfg.partition,
        seed=derive_seed(cfg.seed, _S_PARTITION),
        alpha=cfg.skew_alpha,
    )
    denoiser, extractor, _ = _train_support_models(cfg, data)

    fid_rng = make_rng(derive_seed(cfg.seed, _S_FID_REAL))
    n_real = min(cfg.fid_real_samples, data.train.n)
    real_idx = fid_rng.choice(data.train.n, size=n_real, replace=False)
    real_feats = extractor.features(data.train.images.data[real_idx])

    accountant = RdpAccountant(_privacy_spec(cfg))

    models = init_gan(
        derive_seed(cfg.seed, _S_MODEL_INIT),
        z_dim=cfg.z_dim,
        conditional=cfg.conditional,
        num_classes=cfg.num_classes,
    )
    state = FedState(
        round=0,
        models=models,
        gen_opt_state=AdamState.zeros(models.generator),
        gen_opt_steps=0,
        rng_root=cfg.seed,
    )

    if hooks.on_samples is not None:
        hooks.on_samples(0, _eval_samples(state, cfg, denoiser, _R_GRID, 64))

    records: list[RoundRecord] = []
    for _ in range(cfg.rounds):
        state = run_round(state, shards, cfg, denoiser)
        accountant.advance()
        if state.round % cfg.metric_every == 0:
            try:
                record = _evaluate_round(
                    state, cfg, denoiser, extractor, real_feats, accountant
                )
            except RoundError:
                raise
            except Exception as exc:
                raise RoundError(state.round, f"metric evaluation: {exc}") from exc
            records.append(record)
            if hooks.on_record is not None:
                hooks.on_record(record)
            if hooks.on_samples is not None:
                hooks.on_samples(
                    state.round, _eval_samples(state, cfg, denoiser, _R_GRID, 64)
                )
    if hooks.on_finish is not None:
        hooks.on_finish(state, denoiser, extractor)
    return records


def _evaluate_round(
    state: FedState,
    cfg: ExperimentConfig,
    denoiser: Autoencoder | None,
    extractor: ConvNetClassifier,
    real_feats: np.ndarray,
    accountant: RdpAccountant,
) -> RoundRecord:
    fakes = _eval_samples(state, cfg, denoiser, _R_EVAL_FAKES, cfg.fid_fake_samples)
    fid_value = fid(real_feats, extractor.features(fakes.data))
    round_key = derive_seed(state.rng_root, _S_ROUND, state.round)
    transform = None
    if denoiser is not None and cfg.denoise_apply_to_eval:
        transform = lambda images: denoise(denoiser, images)  # noqa: E731
    acc = classifier_accuracy(
        state.models,
        extractor,
        cfg.acc_samples,
        seed=derive_seed(round_key, _R_EVAL_ACC),
        transform=transform,
    )
    eps, _ = accountant.epsilon()
    return RoundRecord(
        round=state.round,
        fid_proxy=fid_value,
        gen_loss=state.last_gen_loss,
        classifier_acc=acc,
        epsilon=eps,
    )


class FederatedGan(BaseEstimator):
    """Scikit-learn style front end over the federated training engine.

    fit(X, y) partitions the images into simulated users and runs the
    whole experiment in memory; sample() draws from the trained
    generator. Heavy lifting and artifact emission belong to the CLI;
    this wrapper exists so the trained generator composes with the
    wider ecosystem.
    """

    def __init__(
        self,
        rounds: int = 50,
        n_clients: int = 32,
        clients_per_round: int = 10,
        clip_norm: float = 0.5,
        noise_multiplier: float = 0.0,
        denoise: bool = False,
        denoise_level: float = 0.2,
        heldout_fraction: float = 0.25,
        seed: int = 0,
    ):
        self.rounds = rounds
        self.n_clients = n_clients
        self.clients_per_round = clients_per_round
        self.clip_norm = clip_norm
        self.noise_multiplier = noise_multiplier
        self.denoise = denoise
        self.denoise_level = denoise_level
        self.heldout_fraction = heldout_fraction
        self.seed = seed

    def fit(self, X, y):
        images = check_images(X)
        labels = check_labels(y, images.shape[0])
        num_classes = int(labels.max()) + 1 if labels.size else 2
        cfg = ExperimentConfig(
            n_clients=self.n_clients,
            clients_per_round=self.clients_per_round,
            clip_norm=self.clip_norm,
            noise_multiplier=self.noise_multiplier,
            denoise_enabled=self.denoise,
            denoise_level=self.denoise_level,
            rounds=self.rounds,
            num_classes=max(num_classes, 2),
            metric_every=max(1, self.rounds // 10),
            fid_real_samples=min(256, images.shape[0]),
            fid_fake_samples=256,
            seed=self.seed,
        )
        split = make_rng(derive_seed(self.seed, 99)).permutation(images.shape[0])
        n_held = max(2, int(images.shape[0] * self.heldout_fraction))
        pool = LabeledImageSet(
            images=Tensor(images[split[n_held:]]), labels=labels[split[n_held:]]
        )
        held = LabeledImageSet(
            images=Tensor(images[split[:n_held]]), labels=labels[split[:n_held]]
        )
        if cfg.n_clients > pool.n:
            raise ValueError(
                f"n_clients={cfg.n_clients} exceeds the {pool.n} training images "
                "left after the held-out split"
            )
        captured = {}

        def on_finish(state, denoiser, extractor):
            captured["state"] = state
            captured["denoiser"] = denoiser
            captured["extractor"] = extractor

        self.history_ = run_experiment(
            cfg,
            data=ExperimentData(train=pool, heldout=held),
            hooks=RunHooks(on_finish=on_finish),
        )
        self.config_ = cfg
        self.models_ = captured["state"].models
        self.denoiser_ = captured["denoiser"]
        self.extractor_ = captured["extractor"]
        self.epsilon_ = self.history_[-1].epsilon if self.history_ else 0.0
        return self

    def sample(self, n_samples: int = 64, seed: int = 0) -> np.ndarray:
        """Images from the trained generator, with the run's evaluation
        post-processing (the denoise stage, when enabled) applied."""
        if not hasattr(self, "models_"):
            raise RuntimeError("estimator is not fitted; call fit() first")
        rng = make_rng(seed)
        latents = Tensor(rng.standard_normal((n_samples, self.config_.z_dim)))
        labels = (
            rng.integers(0, self.config_.num_classes, size=n_samples)
            if self.config_.conditional
            else None
        )
        images = generate(self.models_, latents, labels)
        if self.denoiser_ is not None and self.config_.denoise_apply_to_eval:
            images = denoise(self.denoiser_, images)
        return images.numpy()
