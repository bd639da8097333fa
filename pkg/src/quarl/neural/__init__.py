"""Neural soft Q-learning: network, optimiser, replay buffer and training loop."""

from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, load_model, read_header, save_checkpoint, write_training_log
from .network import QNetwork, conv_gather_index, qnet_forward, qnet_gradients
from .replay import Experience, ReplayBuffer
from .soft_q import (
    ExactEnergyValidator,
    LossResult,
    MonteCarloEnergyValidator,
    NeuralWavefunction,
    TrainConfig,
    TrainResult,
    bellman_residual_loss,
    full_q,
    q_trivial_action,
    train_soft_q,
    trivial_action_q,
)
