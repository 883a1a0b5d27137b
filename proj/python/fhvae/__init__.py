"""Two-scale factorized VAE toolkit: losses, evaluation protocols and CLI."""

from fhvae._core import (
    ConfigError,
    FhvaeError,
    disc_loss,
    disentangle_loss,
    gen_loss,
    infer_seq_mean,
    kl_diag_gauss,
    micro_f1,
    reference_loss,
    run_cli,
    split_in_domain,
    split_out_of_domain,
    synth_generate,
    z2_disc_loss,
)

__all__ = [
    "ConfigError",
    "FhvaeError",
    "disc_loss",
    "disentangle_loss",
    "gen_loss",
    "infer_seq_mean",
    "kl_diag_gauss",
    "micro_f1",
    "reference_loss",
    "run_cli",
    "split_in_domain",
    "split_out_of_domain",
    "synth_generate",
    "z2_disc_loss",
]
