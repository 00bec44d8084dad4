from .checkpoint import checkpoint_load, checkpoint_save
from .distill import (MAX_TOKENS, DistillConfig, distill, gaussian_kl,
                      head_loss, pad_tokens)
from .gradcheck import grad_check
from .nets import (DIFFUSION_STEPS, HEAD_KINDS, LATENT_DIM, STUDENT_OBS_DIM,
                   AttnBlock, StudentPolicy, TrackerPolicy,
                   build_from_descriptor, cosine_alpha_bar, cvae_act,
                   ddpm_sample, init_params, mlp, student_act)
from .ppo import PpoConfig, gae, ppo_update
from .train import (TrainConfig, apply_residual, evaluate_tracker,
                    rollout_episode, train_tracker)

__all__ = [
    "AttnBlock", "DIFFUSION_STEPS", "DistillConfig", "HEAD_KINDS",
    "LATENT_DIM", "MAX_TOKENS", "PpoConfig", "STUDENT_OBS_DIM",
    "StudentPolicy", "TrackerPolicy", "TrainConfig", "apply_residual",
    "build_from_descriptor", "checkpoint_load", "checkpoint_save",
    "cosine_alpha_bar", "cvae_act", "ddpm_sample", "distill",
    "evaluate_tracker", "gae", "gaussian_kl", "grad_check", "head_loss",
    "init_params", "mlp", "pad_tokens", "ppo_update", "rollout_episode",
    "student_act", "train_tracker",
]
