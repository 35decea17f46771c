"""
The GRID network: a backbone producing image descriptors, a discriminative
task head, and a supervised VAE branched out from the descriptor (encoder,
reparameterized latent, feature decoder and a generative task head that
duplicates the discriminative head's architecture).
"""

import json
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.layers import LayerStack
from src.core.tensor import ParameterGroup, Tensor, as_tensor, exp, no_grad, slice_, zero_grads
from src.models.models import ForwardOutputs, ParameterCount
from src.utils.config import CHECKPOINT_FORMAT_VERSION
from src.utils.exceptions import DataLoadError, ShapeError
from src.utils.file_utils import atomic_write

logger = logging.getLogger(__name__)

GROUP_NAMES = ("theta", "gamma", "beta_e", "beta_r", "beta_t")
VAE_GROUPS = ("beta_e", "beta_r", "beta_t")


def reparameterize(mu: Tensor, log_var: Tensor, eps: np.ndarray) -> Tensor:
    """
    z = mu + sigma * eps with sigma = exp(log_var / 2).

    ``eps`` is constant data, so gradients reach mu and log_var only.

    Raises:
        ShapeError: If the three inputs disagree in shape.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != log_var.shape or mu.shape != eps.shape:
        raise ShapeError(f"reparameterize: mu {mu.shape}, log_var {log_var.shape} and eps {eps.shape} must match")
    return mu + exp(0.5 * log_var) * as_tensor(eps)


class GridModel:
    """
    Backbone, discriminative head and supervised VAE with five disjoint
    parameter groups: theta (backbone), gamma (discriminative head),
    beta_e (VAE encoder), beta_r (feature decoder), beta_t (generative head).

    Args:
        input_dim: Flattened per-sample input width.
        output_shape: Per-sample head output shape, (C,) or (H, W, C).
        scenario: "scene" (sigmoid probabilities) or "pixel" (logit grid).
        descriptor_dim: Backbone output width D.
        backbone_hidden: Hidden widths of the backbone.
        latent_dim: Latent size J.
        vae_hidden: Hidden width of the VAE encoder.
        head_hidden: Hidden widths shared by both task heads.
        seed: Initialization seed; also seeds the latent noise stream.
    """

    def __init__(
        self,
        input_dim: int,
        output_shape: Sequence[int],
        scenario: str = "scene",
        descriptor_dim: int = 64,
        backbone_hidden: Sequence[int] = (128,),
        latent_dim: int = 128,
        vae_hidden: int = 128,
        head_hidden: Sequence[int] = (),
        seed: int = 0,
    ) -> None:
        self.input_dim = int(input_dim)
        self.output_shape = tuple(int(d) for d in output_shape)
        self.scenario = scenario
        self.descriptor_dim = int(descriptor_dim)
        self.backbone_hidden = [int(w) for w in backbone_hidden]
        self.latent_dim = int(latent_dim)
        self.vae_hidden = int(vae_hidden)
        self.head_hidden = [int(w) for w in head_hidden]
        self.seed = int(seed)

        rng = np.random.default_rng(self.seed)
        self.rng = np.random.default_rng([self.seed, 1])

        backbone_widths = [self.input_dim, *self.backbone_hidden, self.descriptor_dim]
        self.backbone = LayerStack(backbone_widths, ["relu"] * (len(backbone_widths) - 1), rng, "backbone")

        head_out = int(np.prod(self.output_shape))
        head_activations = ["relu"] * len(self.head_hidden) + ["sigmoid" if scenario == "scene" else "identity"]
        head_reshape = self.output_shape if len(self.output_shape) > 1 else None
        self.disc_head = LayerStack(
            [self.descriptor_dim, *self.head_hidden, head_out], head_activations, rng, "disc_head", head_reshape
        )
        self.vae_encoder = LayerStack(
            [self.descriptor_dim, self.vae_hidden, 2 * self.latent_dim], ["relu", "identity"], rng, "vae_encoder"
        )
        self.feature_decoder = LayerStack([self.latent_dim, self.descriptor_dim], ["identity"], rng, "feature_decoder")
        # maps z onto the descriptor width so gen_head repeats disc_head layer for layer
        self.gen_projection = (
            LayerStack([self.latent_dim, self.descriptor_dim], ["identity"], rng, "gen_projection")
            if self.latent_dim != self.descriptor_dim else None
        )
        self.gen_head = LayerStack(
            [self.descriptor_dim, *self.head_hidden, head_out], head_activations, rng, "gen_head", head_reshape
        )
        gen_parameters = self.gen_head.parameters()
        if self.gen_projection is not None:
            gen_parameters = self.gen_projection.parameters() + gen_parameters

        self.groups: Dict[str, ParameterGroup] = {
            "theta": ParameterGroup("theta", self.backbone.parameters()),
            "gamma": ParameterGroup("gamma", self.disc_head.parameters()),
            "beta_e": ParameterGroup("beta_e", self.vae_encoder.parameters()),
            "beta_r": ParameterGroup("beta_r", self.feature_decoder.parameters()),
            "beta_t": ParameterGroup("beta_t", gen_parameters),
        }

    @classmethod
    def from_config(cls, config, input_shape: Sequence[int], output_shape: Sequence[int]) -> "GridModel":
        """Build the model an ExperimentConfig describes for data of the given shapes."""
        return cls(
            input_dim=int(np.prod(input_shape)),
            output_shape=output_shape,
            scenario=config.scenario,
            descriptor_dim=config.descriptor_dim,
            backbone_hidden=config.backbone_hidden,
            latent_dim=config.latent_dim,
            vae_hidden=config.vae_hidden,
            seed=config.seed,
        )

    def architecture(self) -> Dict:
        return {
            "input_dim": self.input_dim,
            "output_shape": list(self.output_shape),
            "scenario": self.scenario,
            "descriptor_dim": self.descriptor_dim,
            "backbone_hidden": self.backbone_hidden,
            "latent_dim": self.latent_dim,
            "vae_hidden": self.vae_hidden,
            "head_hidden": self.head_hidden,
            "seed": self.seed,
        }

    def group_list(self, names: Sequence[str]) -> List[ParameterGroup]:
        return [self.groups[name] for name in names]

    def parameters(self) -> List[Tensor]:
        return [t for name in GROUP_NAMES for t in self.groups[name].tensors]

    def zero_grads(self) -> None:
        zero_grads(self.groups.values())

    def _flatten(self, x: np.ndarray) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(len(x), -1)
        if flat.shape[1] != self.input_dim:
            raise ShapeError(f"model input shape {x.shape} does not flatten to width {self.input_dim}")
        return Tensor(flat)

    def forward(self, x: np.ndarray, eps: Optional[np.ndarray] = None) -> ForwardOutputs:
        """
        Run every branch on a batch.

        Args:
            x: Batch of inputs, (B, ...) flattening to (B, input_dim).
            eps: Optional (B, J) standard-normal draws; drawn from the
                model's noise stream when omitted.

        Returns:
            ForwardOutputs for the batch.
        """
        x_t = self._flatten(x)
        f = self.backbone(x_t)
        disc = self.disc_head(f)
        encoded = self.vae_encoder(f)
        mu = slice_(encoded, (slice(None), slice(0, self.latent_dim)))
        log_var = slice_(encoded, (slice(None), slice(self.latent_dim, 2 * self.latent_dim)))
        if eps is None:
            eps = self.rng.standard_normal((len(x_t.data), self.latent_dim))
        z = reparameterize(mu, log_var, eps)
        return ForwardOutputs(
            descriptor=f,
            disc_prediction=disc,
            mu=mu,
            log_var=log_var,
            latent=z,
            reconstruction=self.feature_decoder(z),
            gen_prediction=self.gen_head(z if self.gen_projection is None else self.gen_projection(z)),
            eps=np.asarray(eps, dtype=np.float64),
        )

    def describe(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Backbone descriptors only, without recording a tape."""
        x = np.asarray(x)
        chunks = []
        with no_grad():
            for start in range(0, len(x), batch_size):
                chunks.append(self.backbone(self._flatten(x[start:start + batch_size])).data)
        if not chunks:
            return np.zeros((0, self.descriptor_dim))
        return np.concatenate(chunks, axis=0)

    def state(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter keyed "group/index"."""
        return {
            f"{name}/{i}": t.data.copy()
            for name in GROUP_NAMES
            for i, t in enumerate(self.groups[name].tensors)
        }

    def save_checkpoint(self, path: str) -> None:
        """
        Write all parameter groups to ``path`` (.npz), atomically.

        The archive holds the format version, the architecture (JSON) and one
        array per parameter; loading reproduces every value bit for bit.
        """
        with atomic_write(path) as f:
            np.savez(
                f,
                format_version=np.array(CHECKPOINT_FORMAT_VERSION),
                architecture=np.array(json.dumps(self.architecture(), sort_keys=True)),
                **self.state(),
            )
        logger.info("Checkpoint written to %s", path)

    def load_checkpoint(self, path: str) -> None:
        """
        Replace every parameter value with the one stored in ``path``.

        Raises:
            DataLoadError: If the file is missing, of another format version,
                or does not match this model's parameter shapes.
        """
        try:
            with np.load(path, allow_pickle=False) as archive:
                stored = {key: archive[key] for key in archive.files}
        except FileNotFoundError as e:
            raise DataLoadError(f"Checkpoint not found: {path}") from e
        except Exception as e:
            raise DataLoadError(f"Error reading checkpoint {path}: {str(e)}") from e
        version = int(stored.get("format_version", -1))
        if version != CHECKPOINT_FORMAT_VERSION:
            raise DataLoadError(f"Unsupported checkpoint format version {version} in {path}")
        for key, current in self.state().items():
            if key not in stored:
                raise DataLoadError(f"Checkpoint {path} lacks parameter {key}")
            if stored[key].shape != current.shape:
                raise DataLoadError(f"Checkpoint {path}: {key} has shape {stored[key].shape}, expected {current.shape}")
        for name in GROUP_NAMES:
            for i, t in enumerate(self.groups[name].tensors):
                t.data = np.array(stored[f"{name}/{i}"], dtype=np.float64)

    @classmethod
    def from_checkpoint(cls, path: str) -> "GridModel":
        """Rebuild a model from the architecture stored in a checkpoint, then load its values."""
        try:
            with np.load(path, allow_pickle=False) as archive:
                architecture = json.loads(str(archive["architecture"]))
        except FileNotFoundError as e:
            raise DataLoadError(f"Checkpoint not found: {path}") from e
        except Exception as e:
            raise DataLoadError(f"Error reading checkpoint {path}: {str(e)}") from e
        model = cls(**architecture)
        model.load_checkpoint(path)
        return model


def count_parameters(model: GridModel) -> ParameterCount:
    """
    Trainable parameter counts per group and for the three training modes.

    Returns:
        ParameterCount with disc-only (theta + gamma), gen-only
        (theta + beta) and hybrid (all groups) totals and the backbone share
        of the hybrid total in percent.
    """
    per_group = {name: model.groups[name].num_parameters for name in GROUP_NAMES}
    beta = sum(per_group[name] for name in VAE_GROUPS)
    disc_only = per_group["theta"] + per_group["gamma"]
    gen_only = per_group["theta"] + beta
    hybrid = disc_only + beta
    share = 100.0 * per_group["theta"] / hybrid if hybrid else 0.0
    return ParameterCount(per_group=per_group, disc_only=disc_only, gen_only=gen_only, hybrid=hybrid,
                          backbone_share=share)
