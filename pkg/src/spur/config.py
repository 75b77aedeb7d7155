"""Declarative pipeline configuration: one TOML file, strict unknown-key
rejection, and a stable hash recorded into every output container."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ValidationError
from .spectral import StftConfig, Window
from .sscv import ExtractionConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_TOP_KEYS = {"n_fft", "win_length", "hop", "window", "n_mel_bands", "alpha", "epsilon", "seed", "encoder"}
_ENCODER_KEYS = {
    "conv_blocks",
    "conv_channels",
    "pool",
    "patch_size",
    "embed_dim",
    "n_layers",
    "n_heads",
    "ffn_mult",
    "adapter_out_dim",
    "max_patches",
}


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftConfig = StftConfig()
    n_mel_bands: int = 64
    alpha: float = 0.8
    epsilon: float = 1e-10
    encoder: EncoderConfig = EncoderConfig()
    seed: int = 0

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(
            stft=self.stft, n_mel_bands=self.n_mel_bands, alpha=self.alpha, epsilon=self.epsilon
        )

    def to_mapping(self) -> dict:
        return {
            "n_fft": self.stft.n_fft,
            "win_length": self.stft.win_length,
            "hop": self.stft.hop,
            "window": self.stft.window.value,
            "n_mel_bands": self.n_mel_bands,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "encoder": {
                "conv_blocks": self.encoder.conv_blocks,
                "conv_channels": list(self.encoder.conv_channels),
                "pool": list(self.encoder.pool),
                "patch_size": list(self.encoder.patch_size),
                "embed_dim": self.encoder.embed_dim,
                "n_layers": self.encoder.n_layers,
                "n_heads": self.encoder.n_heads,
                "ffn_mult": self.encoder.ffn_mult,
                "adapter_out_dim": self.encoder.adapter_out_dim,
                "max_patches": self.encoder.max_patches,
            },
        }


def pipeline_config_from_mapping(data: dict, source: str = "config") -> PipelineConfig:
    """Build a config from a parsed mapping, rejecting unknown keys."""
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"{source}: unknown keys {sorted(unknown)}")
    enc_data = dict(data.get("encoder", {}))
    unknown = set(enc_data) - _ENCODER_KEYS
    if unknown:
        raise ValidationError(f"{source}: unknown encoder keys {sorted(unknown)}")

    defaults = PipelineConfig()
    window_name = data.get("window", defaults.stft.window.value)
    try:
        window = Window(window_name)
    except ValueError:
        raise ValidationError(
            f"{source}: window must be one of {[w.value for w in Window]}, got {window_name!r}"
        )
    stft_cfg = StftConfig(
        n_fft=int(data.get("n_fft", defaults.stft.n_fft)),
        win_length=int(data.get("win_length", defaults.stft.win_length)),
        hop=int(data.get("hop", defaults.stft.hop)),
        window=window,
    )
    enc_defaults = defaults.encoder
    encoder_cfg = EncoderConfig(
        conv_blocks=int(enc_data.get("conv_blocks", enc_defaults.conv_blocks)),
        conv_channels=tuple(enc_data.get("conv_channels", enc_defaults.conv_channels)),
        pool=tuple(enc_data.get("pool", enc_defaults.pool)),
        patch_size=tuple(enc_data.get("patch_size", enc_defaults.patch_size)),
        embed_dim=int(enc_data.get("embed_dim", enc_defaults.embed_dim)),
        n_layers=int(enc_data.get("n_layers", enc_defaults.n_layers)),
        n_heads=int(enc_data.get("n_heads", enc_defaults.n_heads)),
        ffn_mult=int(enc_data.get("ffn_mult", enc_defaults.ffn_mult)),
        adapter_out_dim=int(enc_data.get("adapter_out_dim", enc_defaults.adapter_out_dim)),
        max_patches=int(enc_data.get("max_patches", enc_defaults.max_patches)),
    )
    cfg = PipelineConfig(
        stft=stft_cfg,
        n_mel_bands=int(data.get("n_mel_bands", defaults.n_mel_bands)),
        alpha=float(data.get("alpha", defaults.alpha)),
        epsilon=float(data.get("epsilon", defaults.epsilon)),
        encoder=encoder_cfg,
        seed=int(data.get("seed", defaults.seed)),
    )
    cfg.extraction()  # validates alpha/epsilon ranges eagerly
    return cfg


def load_pipeline_config(path=None) -> PipelineConfig:
    """Load a TOML config file; None gives the documented defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}")
    return pipeline_config_from_mapping(data, source=str(path))


def config_hash(cfg: PipelineConfig) -> str:
    """sha256 over the canonical JSON form; fits the 64-byte provenance field."""
    canon = json.dumps(cfg.to_mapping(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
