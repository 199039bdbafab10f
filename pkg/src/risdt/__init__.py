"""QoE-aware resource allocation for RIS-assisted digital-twin interaction.

Scene simulation, zero-forcing beamforming with water-filled powers, a QoE
reward model, a per-scene interaction MDP, and a prompt-guided decision
transformer trained offline on search-generated behaviour data.
"""

from .beamforming import (BeamformingSolution, InfeasiblePowerFloorsError,
                          LinkRates, RankDeficientChannelError, min_power,
                          rate, water_fill, zf_receive, zf_transmit)
from .channel import (ChannelSet, PhaseShiftMatrix, draw_cn, effective_channel,
                      path_gain, rician_channel, sample_channel_set,
                      ula_steering)
from .config import (SceneSpec, SystemConfig, db_to_linear, dbm_to_watts,
                     desk_profile, load_config, make_scenes, save_config,
                     table1_profile, validate_scene)
from .env import (Decision, Episode, State, decode_action, reset_state,
                  rollout, rtg_init, step)
from .model import (ModelDims, ModelParams, TokenInputs, TrainConfig,
                    adam_step, backward, forward, init_params, load_checkpoint,
                    mse_loss, save_checkpoint)
from .qoe import (LatencyBreakdown, QoEResult, latency_breakdown,
                  perception_quality, qoe_score, reward)
from .training import (Dataset, baseline_rom, evaluate, expert_action,
                       generate_dataset, load_dataset, sample_minibatch,
                       save_dataset, train)

__version__ = "0.1.0"
