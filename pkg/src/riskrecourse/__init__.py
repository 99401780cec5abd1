"""Risk-averse recourse policies for discrete finite-horizon MDPs."""
from .config import ConfigError, ExperimentConfig, load_config
from .mdp import ActionSpec, ContractError, Effect, RecourseMdp, applicable_actions, is_goal, transitions
from .models import Outcome, RuleModel, TreeEnsembleModel, load_model, save_model, train_tree_ensemble
from .schema import FeatureSchema, FeatureSpec, SchemaError, decode_state, encode_state, feature_distance
from .solvers import EpisodicConfig, PolicyTable, SolverConfig, g_rsevi, g_rsvi, q_value

__version__ = "0.1.0"
